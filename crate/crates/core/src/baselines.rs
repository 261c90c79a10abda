//! Reference detectors: exhaustive search (the ground truth for small K),
//! zero forcing, and the minimum-norm least-squares solve behind it.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::model::{quantize_one_bit, RealInstance};
use crate::special::{log_ncdf, LossContext};
use crate::{Error, Result};

pub const DEFAULT_ORACLE_CAP: usize = 24;

/// Objectives closer than this count as ties.
pub const TIE_TOL: f64 = 1e-9;

/// Minimum-norm minimizer of `‖Hx − r‖₂` through the SVD; singular values
/// below `1e-10 · σ_max` are treated as zero.
pub fn least_squares(h: &DMatrix<f64>, r: &[f64]) -> Result<Vec<f64>> {
    if h.nrows() != r.len() {
        return Err(Error::Dimension(format!("H has {} rows but r has {} entries", h.nrows(), r.len())));
    }
    if h.iter().chain(r).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("least-squares input".into()));
    }
    if h.ncols() == 0 {
        return Ok(Vec::new());
    }
    let svd = h.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = (1e-10 * smax).max(f64::MIN_POSITIVE);
    let rhs = DVector::from_column_slice(r);
    let x = svd
        .solve(&rhs, eps)
        .map_err(|e| Error::NonFinite(format!("least squares: {e}")))?;
    Ok(x.iter().copied().collect())
}

/// `sgn(H⁺ r)`
pub fn zero_forcing(inst: &RealInstance) -> Result<Vec<i8>> {
    let r: Vec<f64> = inst.r.iter().map(|&s| f64::from(s)).collect();
    Ok(quantize_one_bit(&least_squares(&inst.h, &r)?))
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct OracleResult {
    pub x_opt: Vec<i8>,
    pub objective: f64,
    pub n_evaluated: u64,
    /// Number of distinct points within [`TIE_TOL`] of the minimum.
    pub ties: usize,
}

/// `+1` sorts before `-1` at the first differing index.
fn lex_cmp(a: &[i8], b: &[i8]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        if x != y {
            return if *x > *y { Ordering::Less } else { Ordering::Greater };
        }
    }
    Ordering::Equal
}

#[derive(Debug, Clone, Copy)]
pub struct ExhaustiveSearch {
    pub cap: usize,
    /// Number of leading coordinates fixed per work item; `2^split` items
    /// are enumerated independently (and in parallel) and merged.
    pub split: usize,
}

impl Default for ExhaustiveSearch {
    fn default() -> Self {
        ExhaustiveSearch { cap: DEFAULT_ORACLE_CAP, split: 0 }
    }
}

pub fn exhaustive_search(inst: &RealInstance) -> Result<OracleResult> {
    ExhaustiveSearch::default().run(inst)
}

impl ExhaustiveSearch {
    pub fn run(&self, inst: &RealInstance) -> Result<OracleResult> {
        let k = inst.k();
        if k > self.cap {
            return Err(Error::OracleCap { k, cap: self.cap });
        }
        let ctx = LossContext::new(inst);
        let split = self.split.min(k);
        let free = k - split;

        let near: Vec<Vec<i8>> = if split == 0 {
            enumerate_block(&ctx, &[], free)
        } else {
            (0u64..1 << split)
                .into_par_iter()
                .map(|prefix| {
                    let head: Vec<i8> = (0..split).map(|j| if prefix >> (split - 1 - j) & 1 == 1 { -1 } else { 1 }).collect();
                    enumerate_block(&ctx, &head, free)
                })
                .collect::<Vec<_>>()
                .into_iter()
                .flatten()
                .collect()
        };

        // exact re-evaluation of the surviving candidates decides the winner
        let mut scored: Vec<(f64, Vec<i8>)> = near.into_iter().map(|x| (ctx.f_obj_signs(&x), x)).collect();
        let best = scored.iter().map(|(f, _)| *f).fold(f64::INFINITY, f64::min);
        scored.retain(|(f, _)| *f <= best + TIE_TOL);
        scored.sort_by(|a, b| lex_cmp(&a.1, &b.1));
        scored.dedup_by(|a, b| a.1 == b.1);
        let ties = scored.len();
        let (objective, x_opt) = scored.into_iter().next().expect("at least one candidate");
        Ok(OracleResult { x_opt, objective, n_evaluated: 1u64 << k, ties })
    }
}

/// Gray-code walk over the last `free` coordinates with `head` fixed.
/// Returns every point whose running objective came within a small
/// margin of the running minimum.
fn enumerate_block(ctx: &LossContext, head: &[i8], free: usize) -> Vec<Vec<i8>> {
    let (n, k) = (ctx.n(), ctx.k());
    let split = head.len();
    let mut x: Vec<i8> = head.iter().copied().chain(std::iter::repeat_n(1, free)).collect();
    let xr = |x: &[i8]| -> Vec<f64> { x.iter().map(|&s| f64::from(s)).collect() };
    let mut u: Vec<f64> = (0..n).map(|i| crate::special::dot(ctx.row(i), &xr(&x))).collect();
    // incremental objectives drift slightly; keep a margin and re-score exactly afterwards
    let margin = 4.0 * TIE_TOL;
    let mut best = f64::INFINITY;
    let mut near: Vec<(f64, Vec<i8>)> = Vec::new();
    let consider = |f: f64, x: &[i8], best: &mut f64, near: &mut Vec<(f64, Vec<i8>)>| {
        if f <= *best + margin {
            if f < *best {
                *best = f;
                near.retain(|(g, _)| *g <= f + margin);
            }
            near.push((f, x.to_vec()));
        }
    };
    let f0: f64 = u.iter().map(|&v| -log_ncdf(v)).sum();
    consider(f0, &x, &mut best, &mut near);
    for step in 1u64..(1u64 << free) {
        let bit = step.trailing_zeros() as usize;
        // last coordinate flips fastest
        let j = k - 1 - bit;
        debug_assert!(j >= split);
        x[j] = -x[j];
        let delta = 2.0 * f64::from(x[j]);
        if step % 4096 == 0 {
            let xf = xr(&x);
            for (i, ui) in u.iter_mut().enumerate() {
                *ui = crate::special::dot(ctx.row(i), &xf);
            }
        } else {
            for (i, ui) in u.iter_mut().enumerate() {
                *ui += delta * ctx.row(i)[j];
            }
        }
        let f: f64 = u.iter().map(|&v| -log_ncdf(v)).sum();
        consider(f, &x, &mut best, &mut near);
    }
    near.into_iter().map(|(_, x)| x).collect()
}
