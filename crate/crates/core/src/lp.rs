//! Dense bounded-variable dual simplex for the node relaxations
//!
//! ```text
//! minimize    Σ_i w_i
//! subject to  w_{row} - aᵀx >= b        for every cut row
//!             x_lower <= x <= x_upper
//!             w >= w_lower
//! ```
//!
//! Every row gets a surplus `s = w_row - aᵀx - b >= 0`. A basis consists of
//! the basic structural columns plus the basic surpluses; the rows whose
//! surplus is nonbasic are *tight*. The basis matrix is then block
//! triangular and only the square kernel `A[tight, basic structural]`
//! needs to be inverted, whose size is bounded by `K + N` no matter how
//! many cuts accumulate.
//!
//! The all-surplus basis with `x` at a bound and `w` at its lower bound is
//! dual feasible (reduced costs are 0 for `x` and 1 for `w`), and both
//! appending rows and tightening bounds preserve dual feasibility of an
//! optimal basis. The dual simplex therefore serves cold starts and warm
//! starts alike.

use std::fmt::Write as _;

use crate::special::Cut;
use crate::{Error, Result};

pub const FEAS_TOL: f64 = 1e-8;
pub const DUAL_TOL: f64 = 1e-9;
/// Dual ratios closer than this are treated as ties.
pub const RATIO_TIE_TOL: f64 = 1e-13;
/// Reduced-cost slack allowed by the Harris ratio test.
const HARRIS_TOL: f64 = 1e-12;
/// Smallest pivot ever accepted; Harris prefers larger ones, so these only
/// enter when no other column fits the step.
const MIN_PIVOT: f64 = 1e-12;
const INTERNAL_FEAS_TOL: f64 = 1e-11;
/// Consecutive degenerate pivots before switching to Bland's rule.
const DEGENERACY_THRESHOLD: usize = 40;

/// `w[w_index] - coeffs·x >= rhs`
#[derive(Debug, Clone, PartialEq)]
pub struct LpRow {
    pub w_index: usize,
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

/// Cut coefficients below this are dropped when a cut becomes a row.
pub const SMALL_COEF: f64 = 1e-9;

impl From<&Cut> for LpRow {
    /// Tangents taken where a loss is nearly flat have coefficients down to
    /// 1e-50; kept as-is they make basis inverses explode. Each dropped
    /// `a_j x_j` is replaced by its minimum `-|a_j|` over the box `[-1, 1]`,
    /// so the row stays a valid relaxation of the cut.
    fn from(cut: &Cut) -> Self {
        let mut rhs = cut.offset;
        let coeffs = cut
            .grad
            .iter()
            .map(|&a| {
                if a.abs() < SMALL_COEF {
                    rhs -= a.abs();
                    0.0
                } else {
                    a
                }
            })
            .collect();
        LpRow { w_index: cut.row, coeffs, rhs }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    n_x: usize,
    n_w: usize,
    rows: Vec<LpRow>,
    x_lower: Vec<f64>,
    x_upper: Vec<f64>,
    w_lower: Vec<f64>,
}

impl LpProblem {
    /// No rows, `x ∈ [-1, 1]^n_x`, `w >= 0`.
    pub fn new(n_x: usize, n_w: usize) -> Self {
        LpProblem {
            n_x,
            n_w,
            rows: Vec::new(),
            x_lower: vec![-1.0; n_x],
            x_upper: vec![1.0; n_x],
            w_lower: vec![0.0; n_w],
        }
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_w(&self) -> usize {
        self.n_w
    }

    pub fn rows(&self) -> &[LpRow] {
        &self.rows
    }

    pub fn x_bounds(&self, j: usize) -> (f64, f64) {
        (self.x_lower[j], self.x_upper[j])
    }

    pub fn w_lower(&self) -> &[f64] {
        &self.w_lower
    }

    pub fn set_x_bounds(&mut self, j: usize, lower: f64, upper: f64) -> Result<()> {
        if j >= self.n_x {
            return Err(Error::IndexOutOfRange { index: j, len: self.n_x });
        }
        if !(lower.is_finite() && upper.is_finite() && lower <= upper) {
            return Err(Error::InvalidConfig(format!("bad bounds [{lower}, {upper}] for x{j}")));
        }
        self.x_lower[j] = lower;
        self.x_upper[j] = upper;
        Ok(())
    }

    pub fn set_w_lower(&mut self, i: usize, lower: f64) -> Result<()> {
        if i >= self.n_w {
            return Err(Error::IndexOutOfRange { index: i, len: self.n_w });
        }
        if !lower.is_finite() {
            return Err(Error::NonFinite(format!("lower bound of w{i}")));
        }
        self.w_lower[i] = lower;
        Ok(())
    }

    pub fn push_row(&mut self, row: LpRow) -> Result<()> {
        if row.w_index >= self.n_w {
            return Err(Error::IndexOutOfRange { index: row.w_index, len: self.n_w });
        }
        if row.coeffs.len() != self.n_x {
            return Err(Error::Dimension(format!(
                "row has {} coefficients, expected {}",
                row.coeffs.len(),
                self.n_x
            )));
        }
        if !row.rhs.is_finite() || row.coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("LP row".into()));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Copy of the problem with `new_rows` appended.
    pub fn add_rows<I: IntoIterator<Item = LpRow>>(&self, new_rows: I) -> Result<Self> {
        let mut p = self.clone();
        for row in new_rows {
            p.push_row(row)?;
        }
        Ok(p)
    }

    pub fn fix_in_place(&mut self, j: usize, value: i8) -> Result<()> {
        if j >= self.n_x {
            return Err(Error::IndexOutOfRange { index: j, len: self.n_x });
        }
        if value != 1 && value != -1 {
            return Err(Error::InvalidConfig(format!("fixing value must be +1 or -1, got {value}")));
        }
        let v = f64::from(value);
        if !(self.x_lower[j] <= v && v <= self.x_upper[j]) {
            return Err(Error::ContradictoryFixing(j));
        }
        self.x_lower[j] = v;
        self.x_upper[j] = v;
        Ok(())
    }

    /// Copy of the problem with `x_j` pinned to `value`.
    pub fn fix_variable(&self, j: usize, value: i8) -> Result<Self> {
        let mut p = self.clone();
        p.fix_in_place(j, value)?;
        Ok(p)
    }

    /// Plain-text dump of rows and bounds, for cross-checking with other solvers.
    pub fn to_debug_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "minimize sum(w0..w{})", self.n_w.saturating_sub(1));
        for (r, row) in self.rows.iter().enumerate() {
            let _ = write!(out, "r{r}: w{}", row.w_index);
            for (j, a) in row.coeffs.iter().enumerate() {
                let _ = write!(out, " {:+.17e} x{j}", -a);
            }
            let _ = writeln!(out, " >= {:.17e}", row.rhs);
        }
        for j in 0..self.n_x {
            let _ = writeln!(out, "{:.17e} <= x{j} <= {:.17e}", self.x_lower[j], self.x_upper[j]);
        }
        for i in 0..self.n_w {
            let _ = writeln!(out, "w{i} >= {:.17e}", self.w_lower[i]);
        }
        out
    }

    /// Coefficient of structural column `col` (x first, then w) in row `r`
    /// of the equality form `w - aᵀx - s = b`.
    #[inline]
    fn coef(&self, r: usize, col: usize) -> f64 {
        let row = &self.rows[r];
        if col < self.n_x {
            -row.coeffs[col]
        } else if col - self.n_x == row.w_index {
            1.0
        } else {
            0.0
        }
    }

    #[inline]
    fn lower(&self, col: usize) -> f64 {
        if col < self.n_x {
            self.x_lower[col]
        } else {
            self.w_lower[col - self.n_x]
        }
    }

    #[inline]
    fn upper(&self, col: usize) -> f64 {
        if col < self.n_x {
            self.x_upper[col]
        } else {
            f64::INFINITY
        }
    }

    #[inline]
    fn cost(&self, col: usize) -> f64 {
        if col < self.n_x {
            0.0
        } else {
            1.0
        }
    }

    fn validate(&self) -> Result<()> {
        for j in 0..self.n_x {
            if self.x_lower[j] > self.x_upper[j] {
                return Err(Error::ContradictoryFixing(j));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ColStatus {
    Basic,
    AtLower,
    AtUpper,
}

/// Warm-start token: the tight rows, the basic structural columns and the
/// bound side of each nonbasic structural column.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    n_x: usize,
    n_w: usize,
    n_rows: usize,
    tight: Vec<usize>,
    basic: Vec<usize>,
    at_upper: Vec<bool>,
}

impl Basis {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    fn compatible_with(&self, p: &LpProblem) -> bool {
        self.n_x == p.n_x
            && self.n_w == p.n_w
            && self.n_rows <= p.rows.len()
            && self.tight.len() == self.basic.len()
            && self.at_upper.len() == p.n_x + p.n_w
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    pub objective: f64,
    /// Row multipliers, nonnegative at an optimum.
    pub duals: Vec<f64>,
    pub iterations: usize,
    pub warm_started: bool,
    pub basis: Option<Basis>,
}

/// Residuals of the optimality conditions of a claimed solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpCertificate {
    /// Largest row or bound violation.
    pub primal_residual: f64,
    /// Largest violation of dual feasibility or of the reduced-cost sign
    /// conditions at the reported point.
    pub dual_residual: f64,
    /// `|primal - dual|` with the Lagrangian dual bound of the multipliers.
    pub gap: f64,
}

impl LpCertificate {
    pub fn passes(&self) -> bool {
        self.primal_residual <= FEAS_TOL && self.dual_residual <= DUAL_TOL && self.gap <= 1e-8
    }
}

impl LpSolution {
    /// Checks the returned point and multipliers against `p` only; nothing
    /// from the simplex internals is reused.
    ///
    /// Multipliers `y >= 0` with `Σ_{r in rows(i)} y_r <= 1` give the
    /// Lagrangian lower bound `Σ y_r b_r + Σ_j min(d_j l_j, d_j u_j) + Σ_i d_i l_i`
    /// with `d_j = Σ_r y_r a_rj` and `d_i = 1 - Σ_{r in rows(i)} y_r`.
    pub fn certify(&self, p: &LpProblem) -> LpCertificate {
        let (k, n) = (p.n_x, p.n_w);
        let mut primal: f64 = 0.0;
        for j in 0..k {
            primal = primal.max(p.x_lower[j] - self.x[j]).max(self.x[j] - p.x_upper[j]);
        }
        for i in 0..n {
            primal = primal.max(p.w_lower[i] - self.w[i]);
        }
        let mut dual: f64 = 0.0;
        let mut x_red = vec![0.0; k];
        let mut w_red = vec![1.0; n];
        let mut bound = 0.0;
        for (r, row) in p.rows.iter().enumerate() {
            let y = self.duals[r];
            let surplus = self.w[row.w_index] - crate::special::dot(&row.coeffs, &self.x) - row.rhs;
            primal = primal.max(-surplus);
            dual = dual.max(-y);
            w_red[row.w_index] -= y;
            for (xr, a) in x_red.iter_mut().zip(&row.coeffs) {
                *xr += y * a;
            }
            bound += y * row.rhs;
        }
        for (j, &d) in x_red.iter().enumerate() {
            bound += (d * p.x_lower[j]).min(d * p.x_upper[j]);
            // a positive reduced cost pins x_j to its lower bound, a negative one to its upper
            if d > DUAL_TOL {
                dual = dual.max((self.x[j] - p.x_lower[j]) * d);
            } else if d < -DUAL_TOL {
                dual = dual.max((p.x_upper[j] - self.x[j]) * -d);
            }
        }
        for (i, &d) in w_red.iter().enumerate() {
            dual = dual.max(-d);
            bound += d * p.w_lower[i];
            if d > DUAL_TOL {
                dual = dual.max((self.w[i] - p.w_lower[i]) * d);
            }
        }
        let gap = (self.objective - bound).abs() / (1.0 + self.objective.abs());
        LpCertificate { primal_residual: primal, dual_residual: dual, gap }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LpOptions {
    /// Pivot cap; `None` means `50 * (n_x + n_w + rows)`.
    pub max_iterations: Option<usize>,
}

pub fn solve_lp(p: &LpProblem, warm: Option<&Basis>) -> Result<LpSolution> {
    solve_lp_with(p, warm, &LpOptions::default())
}

pub fn solve_lp_with(p: &LpProblem, warm: Option<&Basis>, opts: &LpOptions) -> Result<LpSolution> {
    p.validate()?;
    let cap = opts
        .max_iterations
        .unwrap_or(50 * (p.n_x + p.n_w + p.rows.len()).max(1));
    if let Some(basis) = warm.filter(|b| b.compatible_with(p)) {
        if let Some(mut work) = Simplex::from_basis(p, basis) {
            let sol = work.run(cap, true, false);
            if sol.status != LpStatus::Optimal || sol.certify(p).passes() {
                return Ok(sol);
            }
            log::debug!("warm-started LP failed its certificate, re-solving cold");
        }
    }
    let mut sol = Simplex::cold(p).run(cap, false, false);
    if sol.status == LpStatus::Optimal && !sol.certify(p).passes() {
        // Bland's rule from the start takes a different pivot path
        log::debug!("LP failed its certificate, re-solving with Bland's rule");
        let iterations = sol.iterations;
        sol = Simplex::cold(p).run(cap, false, true);
        sol.iterations += iterations;
    }
    if sol.status == LpStatus::Optimal && !sol.certify(p).passes() {
        log::warn!("LP solution failed its optimality certificate: {:?}", sol.certify(p));
        sol.status = LpStatus::IterationLimit;
        sol.basis = None;
    }
    Ok(sol)
}

struct Simplex<'a> {
    p: &'a LpProblem,
    n_struct: usize,
    status: Vec<ColStatus>,
    tight: Vec<usize>,
    basic: Vec<usize>,
    is_tight: Vec<bool>,
    kinv: Vec<f64>,
    values: Vec<f64>,
    surplus: Vec<f64>,
    y_tight: Vec<f64>,
    reduced: Vec<f64>,
}

enum Leaving {
    Structural { pos: usize, to_upper: bool },
    Surplus { row: usize },
}

#[derive(Clone, Copy)]
enum Entering {
    Structural(usize),
    Surplus { pos: usize },
}

impl<'a> Simplex<'a> {
    fn cold(p: &'a LpProblem) -> Self {
        let n_struct = p.n_x + p.n_w;
        let mut s = Simplex {
            p,
            n_struct,
            status: vec![ColStatus::AtLower; n_struct],
            tight: Vec::new(),
            basic: Vec::new(),
            is_tight: vec![false; p.rows.len()],
            kinv: Vec::new(),
            values: vec![0.0; n_struct],
            surplus: vec![0.0; p.rows.len()],
            y_tight: Vec::new(),
            reduced: vec![0.0; n_struct],
        };
        s.refresh().expect("empty kernel is invertible");
        s
    }

    fn from_basis(p: &'a LpProblem, b: &Basis) -> Option<Self> {
        let n_struct = p.n_x + p.n_w;
        let mut status: Vec<ColStatus> = b
            .at_upper
            .iter()
            .map(|&u| if u { ColStatus::AtUpper } else { ColStatus::AtLower })
            .collect();
        let mut is_tight = vec![false; p.rows.len()];
        for &c in &b.basic {
            if c >= n_struct || status[c] == ColStatus::Basic {
                return None;
            }
            status[c] = ColStatus::Basic;
        }
        for &r in &b.tight {
            if r >= p.rows.len() || is_tight[r] {
                return None;
            }
            is_tight[r] = true;
        }
        for (c, st) in status.iter_mut().enumerate().take(n_struct) {
            if *st == ColStatus::AtUpper && !p.upper(c).is_finite() {
                *st = ColStatus::AtLower;
            }
        }
        let mut s = Simplex {
            p,
            n_struct,
            status,
            tight: b.tight.clone(),
            basic: b.basic.clone(),
            is_tight,
            kinv: Vec::new(),
            values: vec![0.0; n_struct],
            surplus: vec![0.0; p.rows.len()],
            y_tight: Vec::new(),
            reduced: vec![0.0; n_struct],
        };
        s.refresh().ok()?;
        // Reduced costs depend only on the basis; restore the matching bound side.
        let mut flipped = false;
        for c in 0..n_struct {
            let d = s.reduced[c];
            match s.status[c] {
                ColStatus::AtLower if d < -DUAL_TOL => {
                    if !p.upper(c).is_finite() {
                        return None;
                    }
                    s.status[c] = ColStatus::AtUpper;
                    flipped = true;
                }
                ColStatus::AtUpper if d > DUAL_TOL => {
                    s.status[c] = ColStatus::AtLower;
                    flipped = true;
                }
                _ => {}
            }
        }
        if s.y_tight.iter().any(|&y| y < -DUAL_TOL) {
            return None;
        }
        if flipped {
            s.refresh().ok()?;
        }
        Some(s)
    }

    #[inline]
    fn k(&self) -> usize {
        self.tight.len()
    }

    fn bound_value(&self, c: usize) -> f64 {
        match self.status[c] {
            ColStatus::AtUpper => self.p.upper(c),
            _ => self.p.lower(c),
        }
    }

    /// Refactors the kernel and recomputes primal values, surpluses, duals
    /// and reduced costs from the current basis.
    fn refresh(&mut self) -> std::result::Result<(), ()> {
        let p = self.p;
        let k = self.k();
        let mut kernel = vec![0.0; k * k];
        for (a, &r) in self.tight.iter().enumerate() {
            for (b, &c) in self.basic.iter().enumerate() {
                kernel[a * k + b] = p.coef(r, c);
            }
        }
        self.kinv = invert(kernel, k).ok_or(())?;

        for c in 0..self.n_struct {
            if self.status[c] != ColStatus::Basic {
                self.values[c] = self.bound_value(c);
            }
        }
        let rhs: Vec<f64> = self
            .tight
            .iter()
            .map(|&r| {
                let mut v = p.rows[r].rhs;
                for c in 0..self.n_struct {
                    if self.status[c] != ColStatus::Basic {
                        v -= p.coef(r, c) * self.values[c];
                    }
                }
                v
            })
            .collect();
        let kernel_at = |a: usize, b: usize| p.coef(self.tight[a], self.basic[b]);
        // one round of iterative refinement on both solves; the explicit
        // inverse loses digits when the kernel is poorly conditioned
        let mut xb: Vec<f64> = (0..k).map(|b| (0..k).map(|a| self.kinv[b * k + a] * rhs[a]).sum()).collect();
        let res: Vec<f64> = (0..k).map(|a| rhs[a] - (0..k).map(|b| kernel_at(a, b) * xb[b]).sum::<f64>()).collect();
        for (b, v) in xb.iter_mut().enumerate() {
            *v += (0..k).map(|a| self.kinv[b * k + a] * res[a]).sum::<f64>();
        }
        for (b, &c) in self.basic.iter().enumerate() {
            self.values[c] = xb[b];
        }
        for (r, row) in p.rows.iter().enumerate() {
            self.surplus[r] = if self.is_tight[r] {
                0.0
            } else {
                let ax: f64 = row.coeffs.iter().zip(&self.values[..p.n_x]).map(|(a, x)| a * x).sum();
                self.values[p.n_x + row.w_index] - ax - row.rhs
            };
        }
        let cb: Vec<f64> = self.basic.iter().map(|&c| p.cost(c)).collect();
        let mut y: Vec<f64> = (0..k).map(|a| (0..k).map(|b| cb[b] * self.kinv[b * k + a]).sum()).collect();
        let res: Vec<f64> = (0..k).map(|b| cb[b] - (0..k).map(|a| y[a] * kernel_at(a, b)).sum::<f64>()).collect();
        for (a, v) in y.iter_mut().enumerate() {
            *v += (0..k).map(|b| res[b] * self.kinv[b * k + a]).sum::<f64>();
        }
        self.y_tight = y;
        for c in 0..self.n_struct {
            self.reduced[c] = if self.status[c] == ColStatus::Basic {
                0.0
            } else {
                p.cost(c)
                    - self
                        .tight
                        .iter()
                        .zip(&self.y_tight)
                        .map(|(&r, y)| y * p.coef(r, c))
                        .sum::<f64>()
            };
        }
        Ok(())
    }

    fn choose_leaving(&self, bland: bool) -> Option<Leaving> {
        let p = self.p;
        // (global index, infeasibility, candidate); structural columns come first
        let mut best: Option<(usize, f64, Leaving)> = None;
        let mut consider = |idx: usize, infeas: f64, cand: Leaving| {
            if infeas <= INTERNAL_FEAS_TOL {
                return;
            }
            let better = match &best {
                None => true,
                Some((bi, binf, _)) => {
                    if bland {
                        idx < *bi
                    } else {
                        infeas > *binf || (infeas == *binf && idx < *bi)
                    }
                }
            };
            if better {
                best = Some((idx, infeas, cand));
            }
        };
        for (pos, &c) in self.basic.iter().enumerate() {
            let v = self.values[c];
            let lo = p.lower(c) - v;
            let hi = v - p.upper(c);
            if lo > 0.0 {
                consider(c, lo, Leaving::Structural { pos, to_upper: false });
            } else if hi > 0.0 {
                consider(c, hi, Leaving::Structural { pos, to_upper: true });
            }
        }
        for (r, &s) in self.surplus.iter().enumerate() {
            if !self.is_tight[r] && s < 0.0 {
                // surpluses carry rounding proportional to the row's magnitude
                let scale = 1.0 + p.rows[r].rhs.abs();
                consider(self.n_struct + r, -s / scale, Leaving::Surplus { row: r });
            }
        }
        best.map(|(_, _, c)| c)
    }

    /// Row of `B⁻¹` for the leaving variable restricted to tight rows, plus
    /// the row index whose surplus leaves (if any).
    fn pivot_row(&self, leaving: &Leaving) -> (Vec<f64>, Option<usize>) {
        let k = self.k();
        match *leaving {
            Leaving::Structural { pos, .. } => (self.kinv[pos * k..(pos + 1) * k].to_vec(), None),
            Leaving::Surplus { row } => {
                let coefs: Vec<f64> = self.basic.iter().map(|&c| self.p.coef(row, c)).collect();
                let rho = (0..k)
                    .map(|a| (0..k).map(|b| coefs[b] * self.kinv[b * k + a]).sum())
                    .collect();
                (rho, Some(row))
            }
        }
    }

    /// Distance of the leaving variable outside its bounds.
    fn leaving_infeasibility(&self, leaving: &Leaving) -> f64 {
        match *leaving {
            Leaving::Structural { pos, to_upper } => {
                let c = self.basic[pos];
                if to_upper {
                    self.values[c] - self.p.upper(c)
                } else {
                    self.p.lower(c) - self.values[c]
                }
            }
            Leaving::Surplus { row } => -self.surplus[row],
        }
    }

    fn run(&mut self, cap: usize, warm_started: bool, mut bland: bool) -> LpSolution {
        let mut iterations = 0;
        let mut degenerate_run = 0;
        let mut rejected: Vec<usize> = Vec::new();
        loop {
            let Some(leaving) = self.choose_leaving(bland) else {
                return self.finish(LpStatus::Optimal, iterations, warm_started);
            };
            if iterations >= cap {
                return self.finish(LpStatus::IterationLimit, iterations, warm_started);
            }
            let (rho, surplus_row) = self.pivot_row(&leaving);
            // need the leaving variable to increase when it sits below its lower bound
            let increase = match leaving {
                Leaving::Structural { to_upper, .. } => !to_upper,
                Leaving::Surplus { .. } => true,
            };

            let mut cands: Vec<Candidate> = Vec::new();
            // (signed reduced cost, |alpha|) of columns the step moves the wrong way
            let mut against: Vec<(f64, f64)> = Vec::new();
            for c in 0..self.n_struct {
                let st = self.status[c];
                if st == ColStatus::Basic || self.p.lower(c) == self.p.upper(c) {
                    continue;
                }
                let mut alpha: f64 = self
                    .tight
                    .iter()
                    .zip(&rho)
                    .map(|(&r, w)| w * self.p.coef(r, c))
                    .sum();
                if let Some(r) = surplus_row {
                    alpha -= self.p.coef(r, c);
                }
                let range = self.p.upper(c) - self.p.lower(c);
                if alpha == 0.0 || (alpha.abs() <= MIN_PIVOT && !range.is_finite()) {
                    continue;
                }
                let at_lower = st == ColStatus::AtLower;
                let eligible = if increase { (alpha < 0.0) == at_lower } else { (alpha > 0.0) == at_lower };
                let d = if at_lower { self.reduced[c] } else { -self.reduced[c] };
                if eligible {
                    cands.push(Candidate::new(d, alpha.abs(), c, Entering::Structural(c), range));
                } else {
                    against.push((d, alpha.abs()));
                }
            }
            for (pos, &r) in self.tight.iter().enumerate() {
                // surplus column is -e_r, nonbasic at its lower bound 0
                let alpha = -rho[pos];
                if alpha.abs() <= MIN_PIVOT {
                    continue;
                }
                let d = self.y_tight[pos];
                if increase == (alpha < 0.0) {
                    cands.push(Candidate::new(d, alpha.abs(), self.n_struct + r, Entering::Surplus { pos }, f64::INFINITY));
                } else {
                    against.push((d, alpha.abs()));
                }
            }

            // Bound flipping: walking the breakpoints in order, a boxed column
            // can jump to its other bound instead of entering as long as the
            // leaving variable stays infeasible. Tiny pivots on boxed columns
            // are never needed this way.
            cands.sort_by(|a, b| a.ratio.total_cmp(&b.ratio).then(a.index.cmp(&b.index)));
            let mut slope = self.leaving_infeasibility(&leaving);
            let mut n_flip = 0;
            for c in &cands {
                let drop = c.alpha * c.range;
                if slope - drop <= 0.0 {
                    break;
                }
                slope -= drop;
                n_flip += 1;
            }
            let (flippable, rest) = cands.split_at(n_flip);
            let rest: Vec<&Candidate> = rest.iter().filter(|c| c.alpha > MIN_PIVOT).collect();
            if rest.is_empty() {
                return self.finish(LpStatus::Infeasible, iterations, warm_started);
            }

            // An entering column with a slightly negative reduced cost takes a
            // small backward step, which the refresh applies exactly. Columns
            // moved the wrong way with a huge |alpha| (rows with tiny
            // coefficients) would then turn dual infeasible.
            let safe = |c: &Candidate| {
                c.d >= 0.0 || {
                    let back = -c.d / c.alpha;
                    against.iter().all(|&(d, a)| d - back * a >= d.min(0.0) - HARRIS_TOL)
                }
            };
            let pick = |guarded: bool| {
                let pool = || rest.iter().copied().filter(move |c| !guarded || safe(c));
                // step bound over every candidate, including ones rejected
                // below, so a retry never takes a longer dual step
                if bland {
                    let min_ratio = pool().map(|c| c.ratio).fold(f64::INFINITY, f64::min);
                    pool()
                        .filter(|c| c.ratio <= min_ratio + RATIO_TIE_TOL && !rejected.contains(&c.index))
                        .min_by_key(|c| c.index)
                } else {
                    // Harris: widest step keeping every reduced cost above
                    // -HARRIS_TOL, then the largest pivot within it
                    let theta = pool().map(|c| c.ratio + HARRIS_TOL / c.alpha).fold(f64::INFINITY, f64::min);
                    pool()
                        .filter(|c| c.ratio <= theta && !rejected.contains(&c.index))
                        .max_by(|a, b| a.alpha.total_cmp(&b.alpha).then(b.index.cmp(&a.index)))
                }
            };
            let Some(chosen) = pick(true).or_else(|| pick(false)) else {
                // every admissible candidate gives a singular basis
                return self.finish(LpStatus::IterationLimit, iterations, warm_started);
            };
            let (ratio, entering) = (chosen.ratio, chosen.entering);
            // columns passed over on the way to the step flip bounds; so do
            // later boxed ones the step would leave dual infeasible
            let flips: Vec<usize> = flippable
                .iter()
                .chain(rest.iter().copied())
                .filter(|c| c.index != chosen.index && c.range.is_finite())
                .filter(|c| c.d - ratio * c.alpha < -HARRIS_TOL)
                .map(|c| c.index)
                .collect();
            if ratio <= RATIO_TIE_TOL {
                degenerate_run += 1;
                if degenerate_run > DEGENERACY_THRESHOLD {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
            }

            let saved = (self.status.clone(), self.tight.clone(), self.basic.clone(), self.is_tight.clone());
            for &c in &flips {
                self.status[c] = match self.status[c] {
                    ColStatus::AtLower => ColStatus::AtUpper,
                    _ => ColStatus::AtLower,
                };
            }
            self.apply_pivot(&leaving, entering);
            iterations += 1;
            if self.refresh().is_err() {
                // numerically singular kernel: undo and try the next entering candidate
                (self.status, self.tight, self.basic, self.is_tight) = saved;
                self.refresh().expect("previous basis was factorizable");
                rejected.push(entering_index(entering, &self.tight, self.n_struct));
                continue;
            }
            rejected.clear();
        }
    }

    fn apply_pivot(&mut self, leaving: &Leaving, entering: Entering) {
        // A structural column entering takes the leaving slot; a surplus
        // entering removes its tight row.
        match (leaving, entering) {
            (Leaving::Structural { pos, to_upper }, Entering::Structural(c)) => {
                let old = self.basic[*pos];
                self.status[old] = if *to_upper { ColStatus::AtUpper } else { ColStatus::AtLower };
                self.basic[*pos] = c;
                self.status[c] = ColStatus::Basic;
            }
            (Leaving::Structural { pos, to_upper }, Entering::Surplus { pos: tpos }) => {
                let old = self.basic.remove(*pos);
                self.status[old] = if *to_upper { ColStatus::AtUpper } else { ColStatus::AtLower };
                let r = self.tight.remove(tpos);
                self.is_tight[r] = false;
            }
            (Leaving::Surplus { row }, Entering::Structural(c)) => {
                self.tight.push(*row);
                self.is_tight[*row] = true;
                self.basic.push(c);
                self.status[c] = ColStatus::Basic;
            }
            (Leaving::Surplus { row }, Entering::Surplus { pos: tpos }) => {
                let r = self.tight[tpos];
                self.is_tight[r] = false;
                self.tight[tpos] = *row;
                self.is_tight[*row] = true;
            }
        }
    }

    fn finish(&self, status: LpStatus, iterations: usize, warm_started: bool) -> LpSolution {
        let p = self.p;
        let x: Vec<f64> = self.values[..p.n_x].to_vec();
        let w: Vec<f64> = self.values[p.n_x..].to_vec();
        let mut duals = vec![0.0; p.rows.len()];
        for (&r, &y) in self.tight.iter().zip(&self.y_tight) {
            duals[r] = y;
        }
        let basis = (status == LpStatus::Optimal).then(|| Basis {
            n_x: p.n_x,
            n_w: p.n_w,
            n_rows: p.rows.len(),
            tight: self.tight.clone(),
            basic: self.basic.clone(),
            at_upper: self.status.iter().map(|&s| s == ColStatus::AtUpper).collect(),
        });
        LpSolution {
            status,
            objective: w.iter().sum(),
            x,
            w,
            duals,
            iterations,
            warm_started,
            basis,
        }
    }
}

/// Gauss-Jordan inverse with partial pivoting of a row-major `k × k` matrix.
/// Entering candidate in the dual ratio test.
#[derive(Clone, Copy)]
struct Candidate {
    /// `max(d, 0) / alpha`
    ratio: f64,
    alpha: f64,
    index: usize,
    entering: Entering,
    /// reduced cost, signed so that dual feasibility means `d >= 0`
    d: f64,
    /// distance between the column's bounds
    range: f64,
}

impl Candidate {
    fn new(d: f64, alpha: f64, index: usize, entering: Entering, range: f64) -> Self {
        Candidate { ratio: d.max(0.0) / alpha, alpha, index, entering, d, range }
    }
}

fn entering_index(e: Entering, tight: &[usize], n_struct: usize) -> usize {
    match e {
        Entering::Structural(c) => c,
        Entering::Surplus { pos } => n_struct + tight[pos],
    }
}

fn invert(mut a: Vec<f64>, k: usize) -> Option<Vec<f64>> {
    // Equilibrate rows first: tangent rows at flat points have coefficients
    // many orders below the others, and a global singularity threshold would
    // reject them. inv(A) = inv(D A) D.
    let mut row_scale = vec![1.0; k];
    for i in 0..k {
        let m = a[i * k..(i + 1) * k].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if m == 0.0 {
            return None;
        }
        row_scale[i] = 1.0 / m;
        for v in &mut a[i * k..(i + 1) * k] {
            *v *= row_scale[i];
        }
    }
    let mut inv = vec![0.0; k * k];
    for i in 0..k {
        inv[i * k + i] = row_scale[i];
    }
    for col in 0..k {
        let piv = (col..k)
            .max_by(|&i, &j| a[i * k + col].abs().total_cmp(&a[j * k + col].abs()).then(j.cmp(&i)))?;
        let pv = a[piv * k + col];
        if pv.abs() <= 1e-12 {
            return None;
        }
        if piv != col {
            for j in 0..k {
                a.swap(piv * k + j, col * k + j);
                inv.swap(piv * k + j, col * k + j);
            }
        }
        let inv_p = 1.0 / pv;
        for j in 0..k {
            a[col * k + j] *= inv_p;
            inv[col * k + j] *= inv_p;
        }
        for i in 0..k {
            if i == col {
                continue;
            }
            let f = a[i * k + col];
            if f == 0.0 {
                continue;
            }
            for j in 0..k {
                a[i * k + j] -= f * a[col * k + j];
                inv[i * k + j] -= f * inv[col * k + j];
            }
        }
    }
    Some(inv)
}
