//! Signal model: complex QPSK uplink, one-bit quantization, and its
//! real-valued expansion.

use std::path::Path;

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Name of the generator behind every seeded draw, recorded in result metadata.
pub const RNG_NAME: &str = "ChaCha8Rng";

/// How the noise level is tied to the requested SNR.
pub const SNR_CALIBRATION: &str = "expected: complex noise variance 2K/SNR, no per-trial rescaling";

pub type C64 = Complex<f64>;

/// One realization of the complex baseband model `r = Q(Hx + v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexScene {
    pub h: DMatrix<C64>,
    pub x: DVector<C64>,
    pub v: DVector<C64>,
    pub r: DVector<C64>,
}

/// Real-valued detection problem `r = sgn(Hx + v)`, `v ~ N(0, σ²I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealInstance {
    pub h: DMatrix<f64>,
    pub r: Vec<i8>,
    pub sigma: f64,
    pub x_true: Option<Vec<i8>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_antennas: usize,
    pub n_users: usize,
    pub snr_db: f64,
    pub seed: u64,
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_antennas < self.n_users {
            return Err(Error::InvalidConfig(format!(
                "need n_antennas >= n_users >= 1, got {} antennas and {} users",
                self.n_antennas, self.n_users
            )));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::InvalidConfig(format!("snr_db must be finite, got {}", self.snr_db)));
        }
        Ok(())
    }

    pub fn snr_linear(&self) -> f64 {
        10f64.powf(self.snr_db / 10.0)
    }

    /// Per-component standard deviation of the real-domain noise, `sqrt(K̃ / SNR)`.
    pub fn real_sigma(&self) -> f64 {
        (self.n_users as f64 / self.snr_linear()).sqrt()
    }
}

impl RealInstance {
    pub fn new(h: DMatrix<f64>, r: Vec<i8>, sigma: f64, x_true: Option<Vec<i8>>) -> Result<Self> {
        let inst = RealInstance { h, r, sigma, x_true };
        inst.validate()?;
        Ok(inst)
    }

    pub fn n(&self) -> usize {
        self.h.nrows()
    }

    pub fn k(&self) -> usize {
        self.h.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, k) = self.h.shape();
        if n == 0 || k == 0 {
            return Err(Error::Dimension(format!("channel must be non-empty, got {n}x{k}")));
        }
        if self.r.len() != n {
            return Err(Error::Dimension(format!("r has length {}, expected {n}", self.r.len())));
        }
        if !self.r.iter().all(|&s| s == 1 || s == -1) {
            return Err(Error::InvalidConfig("r must contain only +1/-1".into()));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidConfig(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("channel matrix".into()));
        }
        if let Some(x) = &self.x_true {
            if x.len() != k {
                return Err(Error::Dimension(format!("x_true has length {}, expected {k}", x.len())));
            }
            if !x.iter().all(|&s| s == 1 || s == -1) {
                return Err(Error::InvalidConfig("x_true must contain only +1/-1".into()));
            }
        }
        Ok(())
    }
}

/// `[Re H, -Im H; Im H, Re H]`.
pub fn real_expand_channel(h: &DMatrix<C64>) -> DMatrix<f64> {
    let (n, k) = h.shape();
    DMatrix::from_fn(2 * n, 2 * k, |i, j| {
        let z = h[(i % n, j % k)];
        match (i < n, j < k) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

/// Stacks real parts over imaginary parts.
pub fn stack_complex(z: &DVector<C64>) -> DVector<f64> {
    let n = z.len();
    DVector::from_fn(2 * n, |i, _| if i < n { z[i].re } else { z[i - n].im })
}

#[inline]
pub fn sgn(v: f64) -> i8 {
    if v >= 0.0 {
        1
    } else {
        -1
    }
}

/// Elementwise one-bit quantizer with `sgn(0) = +1`.
pub fn quantize_one_bit(y: &[f64]) -> Vec<i8> {
    y.iter().map(|&v| sgn(v)).collect()
}

pub fn signs_to_real(s: &[i8]) -> Vec<f64> {
    s.iter().map(|&v| f64::from(v)).collect()
}

pub fn bit_error_rate(x_true: &[i8], x_est: &[i8]) -> Result<f64> {
    if x_true.len() != x_est.len() {
        return Err(Error::Dimension(format!(
            "bit_error_rate: lengths {} and {} differ",
            x_true.len(),
            x_est.len()
        )));
    }
    if x_true.is_empty() {
        return Ok(0.0);
    }
    let errors = x_true.iter().zip(x_est).filter(|(a, b)| a != b).count();
    Ok(errors as f64 / x_true.len() as f64)
}

/// Seed of the independent substream used by trial `index` of a run seeded with `seed`.
pub fn substream_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws channel, symbols and noise for one trial. Returns the scene and the
/// real-domain noise standard deviation.
pub fn generate_scene(cfg: &GenConfig) -> Result<(ComplexScene, f64)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n, k) = (cfg.n_antennas, cfg.n_users);
    let half = std::f64::consts::FRAC_1_SQRT_2;
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

    let mut h = DMatrix::<C64>::zeros(n, k);
    for i in 0..n {
        for j in 0..k {
            let re = gauss(&mut rng) * half;
            let im = gauss(&mut rng) * half;
            h[(i, j)] = C64::new(re, im);
        }
    }
    let x = DVector::from_fn(k, |_, _| {
        let re = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let im = if rng.random::<bool>() { 1.0 } else { -1.0 };
        C64::new(re, im)
    });
    let sigma = cfg.real_sigma();
    let v = DVector::from_fn(n, |_, _| {
        let re = gauss(&mut rng) * sigma;
        let im = gauss(&mut rng) * sigma;
        C64::new(re, im)
    });
    let y = &h * &x + &v;
    let r = y.map(|z| C64::new(f64::from(sgn(z.re)), f64::from(sgn(z.im))));
    Ok((ComplexScene { h, x, v, r }, sigma))
}

/// Seeded random instance at the configured SNR, expanded to the real domain.
pub fn generate_instance(cfg: &GenConfig) -> Result<RealInstance> {
    let (scene, sigma) = generate_scene(cfg)?;
    Ok(scene.to_real(sigma))
}

impl ComplexScene {
    /// Real expansion. `r` is recomputed as `sgn(H x + v)` in the real
    /// domain, which agrees with the complex quantizer entry by entry.
    pub fn to_real(&self, sigma: f64) -> RealInstance {
        let h = real_expand_channel(&self.h);
        let x = stack_complex(&self.x);
        let v = stack_complex(&self.v);
        let y = &h * &x + v;
        RealInstance {
            h,
            r: quantize_one_bit(y.as_slice()),
            sigma,
            x_true: Some(x.iter().map(|&s| sgn(s)).collect()),
        }
    }

    /// Realized `‖H̃x̃‖² / ‖ṽ‖²`.
    pub fn realized_snr(&self) -> f64 {
        (&self.h * &self.x).norm_squared() / self.v.norm_squared()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct InstanceFile {
    n: usize,
    k: usize,
    sigma: f64,
    #[serde(rename = "H")]
    h: Vec<f64>,
    r: Vec<i8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x_true: Option<Vec<i8>>,
}

impl RealInstance {
    /// JSON with `H` stored row-major. Floats use shortest round-trip
    /// formatting, so reading back reproduces every bit.
    pub fn to_json(&self) -> String {
        let (n, k) = self.h.shape();
        let file = InstanceFile {
            n,
            k,
            sigma: self.sigma,
            h: (0..n).flat_map(|i| (0..k).map(move |j| (i, j))).map(|(i, j)| self.h[(i, j)]).collect(),
            r: self.r.clone(),
            x_true: self.x_true.clone(),
        };
        serde_json::to_string_pretty(&file).expect("instance serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if file.h.len() != file.n * file.k {
            return Err(Error::Parse(format!(
                "field `H`: expected n*k = {} entries, found {}",
                file.n * file.k,
                file.h.len()
            )));
        }
        if file.r.len() != file.n {
            return Err(Error::Parse(format!(
                "field `r`: expected {} entries, found {}",
                file.n,
                file.r.len()
            )));
        }
        if let Some(pos) = file.r.iter().position(|&s| s != 1 && s != -1) {
            return Err(Error::Parse(format!("field `r`: entry {pos} is {}, expected +1 or -1", file.r[pos])));
        }
        let h = DMatrix::from_row_slice(file.n, file.k, &file.h);
        RealInstance::new(h, file.r, file.sigma, file.x_true).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::harness::write_atomic(path, self.to_json().as_bytes())
    }
}
