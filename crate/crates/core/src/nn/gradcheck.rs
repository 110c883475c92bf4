//! Central finite-difference verification of analytic gradients.
//!
//! For a sampled coordinate `θ_i` the numeric estimate is
//! `(f(θ + h e_i) − f(θ − h e_i)) / 2h`. The relative error against the
//! analytic value `g` is `|g − n| / max(|g|, |n|, floor)`; the floor keeps
//! coordinates whose true gradient is zero from being judged on round-off.

use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::params::NamedTensors;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Tensors with more elements than this are checked on a random sample
    /// of this many coordinates.
    pub max_coords_per_tensor: usize,
    pub denominator_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            max_coords_per_tensor: 512,
            denominator_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub numel: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
    pub passed: bool,
}

impl GradCheckReport {
    /// The tensor with the largest relative error.
    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.tensors {
            writeln!(
                f,
                "{:<8} {:>6}/{:<6} max_rel_err={:.3e} at {} (analytic {:.6e}, numeric {:.6e}) {}",
                t.name,
                t.checked,
                t.numel,
                t.max_rel_error,
                t.worst_index,
                t.analytic,
                t.numeric,
                if t.passed { "ok" } else { "FAIL" }
            )?;
        }
        writeln!(
            f,
            "tolerance {:e}: {}",
            self.tolerance,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

/// Compares `analytic` against central differences of `probe` around
/// `params`. A tensor passes when its max relative error is strictly below
/// the tolerance.
pub fn grad_check<P, Probe>(
    probe: Probe,
    params: &P,
    analytic: &P,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    P: NamedTensors<f64> + Clone,
    Probe: Fn(&P) -> Result<f64>,
{
    let first = probe(params)?;
    let second = probe(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministicProbe { first, second });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work = params.clone();
    let analytic = analytic.tensors();
    let mut tensors = Vec::with_capacity(analytic.len());
    for (k, (name, grad)) in analytic.iter().enumerate() {
        let numel = grad.numel();
        let coords: Vec<usize> = if numel <= cfg.max_coords_per_tensor {
            (0..numel).collect()
        } else {
            let mut c = sample(&mut rng, numel, cfg.max_coords_per_tensor).into_vec();
            c.sort_unstable();
            c
        };
        let mut check = TensorCheck {
            name: name.to_string(),
            checked: coords.len(),
            numel,
            max_rel_error: f64::NEG_INFINITY,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            passed: true,
        };
        for &i in &coords {
            let orig = work.tensors()[k].1.data()[i];
            work.tensors_mut()[k].1.data_mut()[i] = orig + cfg.step;
            let plus = probe(&work)?;
            work.tensors_mut()[k].1.data_mut()[i] = orig - cfg.step;
            let minus = probe(&work)?;
            work.tensors_mut()[k].1.data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = grad.data()[i];
            let denom = a.abs().max(numeric.abs()).max(cfg.denominator_floor);
            let rel = (a - numeric).abs() / denom;
            if !rel.is_finite() {
                return Err(Error::NonFinite(format!("gradient check of {name}[{i}]")));
            }
            if rel > check.max_rel_error {
                check.max_rel_error = rel;
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        check.max_rel_error = check.max_rel_error.max(0.0);
        check.passed = check.max_rel_error < cfg.tolerance;
        tensors.push(check);
    }
    let passed = tensors.iter().all(|t| t.passed);
    Ok(GradCheckReport {
        tolerance: cfg.tolerance,
        tensors,
        passed,
    })
}
