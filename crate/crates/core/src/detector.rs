//! Interchangeable detectors behind one trait, looked up by name.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use crate::baselines::{zero_forcing, ExhaustiveSearch};
use crate::model::RealInstance;
use crate::solver::{solve_gobmd, solve_incremental, SolveReport, SolveStatus, SolverOptions};
use crate::special::LossContext;
use crate::{Error, Result};

pub trait Detector: Send + Sync {
    fn name(&self) -> &str;
    fn detect(&self, inst: &RealInstance, opts: &SolverOptions) -> Result<SolveReport>;
}

pub struct Gobmd;

impl Detector for Gobmd {
    fn name(&self) -> &str {
        "gobmd"
    }

    fn detect(&self, inst: &RealInstance, opts: &SolverOptions) -> Result<SolveReport> {
        solve_gobmd(inst, opts)
    }
}

pub struct Incremental;

impl Detector for Incremental {
    fn name(&self) -> &str {
        "incremental"
    }

    fn detect(&self, inst: &RealInstance, opts: &SolverOptions) -> Result<SolveReport> {
        solve_incremental(inst, opts)
    }
}

#[derive(Default)]
pub struct Exhaustive(pub ExhaustiveSearch);

impl Detector for Exhaustive {
    fn name(&self) -> &str {
        "exhaustive"
    }

    fn detect(&self, inst: &RealInstance, opts: &SolverOptions) -> Result<SolveReport> {
        let start = Instant::now();
        let res = self.0.run(inst)?;
        let mut rep = SolveReport::new(self.name(), opts);
        rep.lower_bound = res.objective;
        rep.objective = Some(res.objective);
        rep.x_star = Some(res.x_opt);
        rep.oracle_ties = Some(res.ties as u64);
        rep.n_evaluated = Some(res.n_evaluated);
        rep.wall_time = start.elapsed().as_secs_f64();
        Ok(rep)
    }
}

pub struct ZeroForcing;

impl Detector for ZeroForcing {
    fn name(&self) -> &str {
        "zf"
    }

    fn detect(&self, inst: &RealInstance, opts: &SolverOptions) -> Result<SolveReport> {
        let start = Instant::now();
        let x = zero_forcing(inst)?;
        let mut rep = SolveReport::new(self.name(), opts);
        rep.status = SolveStatus::Heuristic;
        rep.objective = Some(LossContext::new(inst).f_obj_signs(&x));
        rep.x_star = Some(x);
        rep.wall_time = start.elapsed().as_secs_f64();
        Ok(rep)
    }
}

#[derive(Clone)]
pub struct DetectorRegistry {
    map: BTreeMap<String, Arc<dyn Detector>>,
}

impl DetectorRegistry {
    pub fn empty() -> Self {
        DetectorRegistry { map: BTreeMap::new() }
    }

    /// `gobmd`, `incremental`, `exhaustive` and `zf`.
    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register(Arc::new(Gobmd));
        reg.register(Arc::new(Incremental));
        reg.register(Arc::new(Exhaustive::default()));
        reg.register(Arc::new(ZeroForcing));
        reg
    }

    /// Adds or replaces the detector under its own name.
    pub fn register(&mut self, det: Arc<dyn Detector>) {
        self.map.insert(det.name().to_string(), det);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Detector>> {
        self.map.get(name).cloned().ok_or_else(|| {
            Error::UnknownDetector(format!("`{name}` (available: {})", self.names().join(", ")))
        })
    }

    pub fn names(&self) -> Vec<&str> {
        self.map.keys().map(String::as_str).collect()
    }
}

impl Default for DetectorRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_instance, GenConfig};

    #[test]
    fn builtin_names() {
        let reg = DetectorRegistry::builtin();
        assert_eq!(reg.names(), vec!["exhaustive", "gobmd", "incremental", "zf"]);
        assert!(matches!(reg.get("sphere"), Err(Error::UnknownDetector(_))));
    }

    #[test]
    fn detectors_report_consistent_objectives() {
        let inst = generate_instance(&GenConfig { n_antennas: 6, n_users: 3, snr_db: 5.0, seed: 4 }).unwrap();
        let reg = DetectorRegistry::builtin();
        let opts = SolverOptions::default();
        let exact = reg.get("exhaustive").unwrap().detect(&inst, &opts).unwrap();
        assert_eq!(exact.n_evaluated, Some(64));
        for name in ["gobmd", "incremental"] {
            let rep = reg.get(name).unwrap().detect(&inst, &opts).unwrap();
            assert_eq!(rep.detector, name);
            assert!((rep.objective.unwrap() - exact.objective.unwrap()).abs() <= 1e-6);
        }
        let zf = reg.get("zf").unwrap().detect(&inst, &opts).unwrap();
        assert_eq!(zf.status, SolveStatus::Heuristic);
        assert!(zf.objective.unwrap() >= exact.objective.unwrap() - 1e-12);
    }

    struct Constant;

    impl Detector for Constant {
        fn name(&self) -> &str {
            "all-ones"
        }

        fn detect(&self, inst: &RealInstance, opts: &SolverOptions) -> Result<SolveReport> {
            let mut rep = SolveReport::new(self.name(), opts);
            rep.x_star = Some(vec![1; inst.k()]);
            Ok(rep)
        }
    }

    #[test]
    fn custom_registration() {
        let mut reg = DetectorRegistry::empty();
        reg.register(Arc::new(Constant));
        assert_eq!(reg.names(), vec!["all-ones"]);
        assert!(reg.get("gobmd").is_err());
    }
}
