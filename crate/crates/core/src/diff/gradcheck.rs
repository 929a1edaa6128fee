//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Grads, ParamId, ParamSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Per-tensor cap on checked coordinates; `None` checks all.
    pub max_coords_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            max_coords_per_tensor: Some(24),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

/// Compares the analytic gradient from `f` against central differences.
///
/// `f` returns the scalar value and its gradient. Frozen parameters are not
/// perturbed; their analytic slot must be empty. The relative error for each
/// coordinate is `|a − n| / max(1e-8, |a| + |n|)`.
pub fn grad_check<F>(params: &ParamSet, opts: GradCheckOptions, f: F) -> Result<GradCheckReport>
where
    F: Fn(&ParamSet) -> Result<(f64, Grads)>,
{
    if opts.eps <= 0.0 || !opts.eps.is_finite() {
        return Err(Error::invalid("eps must be positive"));
    }
    let (_, analytic) = f(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        coords_checked: 0,
    };
    for (i, p) in params.iter().enumerate() {
        let id = ParamId(i);
        if !p.trainable {
            if analytic.get(id).is_some() {
                return Err(Error::invalid(format!("frozen parameter `{}` received a gradient", p.name)));
            }
            continue;
        }
        let n = p.value.len();
        let coords: Vec<usize> = match opts.max_coords_per_tensor {
            Some(m) if m < n => {
                let mut v = sample(&mut rng, n, m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        for c in coords {
            let orig = p.value.data()[c];
            let (up, down) = (orig + opts.eps, orig - opts.eps);
            work.get_mut(id).value.data_mut()[c] = up;
            let (fp, _) = f(&work)?;
            work.get_mut(id).value.data_mut()[c] = down;
            let (fm, _) = f(&work)?;
            work.get_mut(id).value.data_mut()[c] = orig;
            // divide by the step actually taken, not the nominal 2·eps
            let numeric = (fp - fm) / (up - down);
            let a = analytic.get(id).map_or(0.0, |t| t.data()[c]);
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            report.coords_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((p.name.clone(), c));
            }
        }
    }
    Ok(report)
}
