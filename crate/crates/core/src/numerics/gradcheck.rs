use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{NumericsError, Result, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (tensor index, flat coordinate) of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub coordinates_checked: usize,
}

/// `(f(x+h) - f(x-h)) / 2h` for a scalar function.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Compares `analytic` gradients of `f` at `params` with central finite
/// differences. Tensors larger than `max_coords` are checked on a seeded
/// random subset of `max_coords` coordinates (at least 64 are required).
pub fn finite_diff_check(
    mut f: impl FnMut(&[Tensor<f64>]) -> Result<f64>,
    params: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    h: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if h <= 0.0 {
        return Err(NumericsError::Invalid(format!("step h must be positive, got {h}")));
    }
    if max_coords < 64 {
        return Err(NumericsError::Invalid("at least 64 coordinates per tensor".into()));
    }
    if params.len() != analytic.len() {
        return Err(NumericsError::Invalid("one analytic gradient per parameter".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut report = GradCheckReport { max_rel_err: 0.0, worst: None, coordinates_checked: 0 };
    for (t, grad) in analytic.iter().enumerate() {
        if grad.shape() != params[t].shape() {
            return Err(NumericsError::Shape {
                op: "finite_diff_check",
                detail: format!("gradient {:?} for parameter {:?}", grad.shape(), params[t].shape()),
            });
        }
        let n = params[t].numel();
        let mut coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            sample(&mut rng, n, max_coords).into_vec()
        };
        coords.sort_unstable();
        for c in coords {
            let orig = params[t].data()[c];
            work[t].data_mut()[c] = orig + h;
            let up = f(&work)?;
            work[t].data_mut()[c] = orig - h;
            let down = f(&work)?;
            work[t].data_mut()[c] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(NumericsError::NonFinite { op: "finite_diff_check" });
            }
            let numeric = (up - down) / (2.0 * h);
            let err = rel_err(grad.data()[c], numeric);
            report.coordinates_checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = err;
                report.worst = Some((t, c));
            }
        }
    }
    Ok(report)
}
