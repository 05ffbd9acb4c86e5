//! Central finite-difference checks of tape gradients.
//!
//! The numeric side only ever calls the forward closure, so it is independent
//! of the backward implementation it checks.

use rand::seq::index::sample;
use rand::Rng;

use super::{Graph, ParamSet, Var};
use crate::error::{Error, Result};

pub const FD_EPS: f64 = 1e-5;

/// Second, finer step. A kink closer than `FD_EPS` but with a slope jump too
/// small for the one-sided test still biases the wide estimate; the fine one
/// rarely straddles it. A wrong gradient misses at both scales.
pub const FD_EPS_FINE: f64 = 1e-7;

/// Gradients smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-4;

/// Coordinates whose one-sided slopes disagree by more than this (relative)
/// straddle a ReLU/abs kink and are skipped.
const KINK_TOL: f64 = 1e-2;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    /// `(parameter, element, analytic, numeric)` at the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.skipped_kinks += other.skipped_kinks;
        if other.worst.is_some() && (self.worst.is_none() || other.max_rel_error > self.max_rel_error) {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol && self.skipped_kinks * 20 <= self.checked
    }
}

fn eval<F>(params: &ParamSet, f: &mut F) -> Result<f64>
where
    F: FnMut(&mut Graph, &ParamSet) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, params)?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(Error::contract("gradient check objective must be scalar"));
    }
    Ok(v.item())
}

/// Compares backward-pass gradients of the scalar built by `f` against
/// central differences, over at most `per_tensor` random coordinates of each
/// parameter tensor (all coordinates when `None`).
pub fn check_params<F>(
    params: &mut ParamSet,
    per_tensor: Option<usize>,
    rng: &mut impl Rng,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &ParamSet) -> Result<Var>,
{
    params.zero_grad();
    {
        let mut g = Graph::new();
        let out = f(&mut g, params)?;
        let grads = g.backward(out)?;
        grads.accumulate_into(params);
    }
    let base = eval(params, &mut f)?;

    let mut report = GradCheckReport::default();
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        if !params.get(id).requires_grad() {
            continue;
        }
        let len = params.get(id).len();
        let coords: Vec<usize> = match per_tensor {
            Some(k) if k < len => sample(rng, len, k).into_vec(),
            _ => (0..len).collect(),
        };
        for j in coords {
            let analytic = params.get(id).grad().map_or(0.0, |g| g[j]);
            let orig = params.get(id).data()[j];
            params.get_mut(id).data_mut()[j] = orig + FD_EPS;
            let plus = eval(params, &mut f)?;
            params.get_mut(id).data_mut()[j] = orig - FD_EPS;
            let minus = eval(params, &mut f)?;
            params.get_mut(id).data_mut()[j] = orig + FD_EPS_FINE;
            let plus_fine = eval(params, &mut f)?;
            params.get_mut(id).data_mut()[j] = orig - FD_EPS_FINE;
            let minus_fine = eval(params, &mut f)?;
            params.get_mut(id).data_mut()[j] = orig;

            let wide = (plus - minus) / (2.0 * FD_EPS);
            let fine = (plus_fine - minus_fine) / (2.0 * FD_EPS_FINE);
            let right = (plus - base) / FD_EPS;
            let left = (base - minus) / FD_EPS;
            if (right - left).abs() > KINK_TOL * right.abs().max(left.abs()).max(1.0) {
                report.skipped_kinks += 1;
                continue;
            }
            report.checked += 1;
            let (err, numeric) = [wide, fine]
                .into_iter()
                .map(|n| (relative_error(analytic, n), n))
                .fold((f64::INFINITY, wide), |a, b| if b.0 < a.0 { b } else { a });
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((params.name(id).to_string(), j, analytic, numeric));
            }
        }
    }
    params.zero_grad();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn smooth_function_passes() {
        let mut ps = ParamSet::new();
        let id = ps.add("x", Tensor::vector(vec![0.3, -1.2, 2.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rep = check_params(&mut ps, None, &mut rng, |g, p| {
            let x = g.param(p, id);
            let y = g.tanh(x);
            let z = g.mul(y, x)?;
            Ok(g.sum(z))
        })
        .unwrap();
        assert_eq!(rep.checked, 3);
        assert!(rep.max_rel_error < 1e-6, "{rep:?}");
    }

    #[test]
    fn a_wrong_backward_is_caught() {
        // The first (analytic) pass sees a different objective than the
        // numeric passes, which is what a broken backward looks like.
        let mut ps = ParamSet::new();
        let id = ps.add("x", Tensor::vector(vec![1.0, 2.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut calls = 0;
        let rep = check_params(&mut ps, None, &mut rng, |g, p| {
            calls += 1;
            let x = g.param(p, id);
            let s = if calls == 1 { g.scale(x, 2.0) } else { g.scale(x, 1.0) };
            Ok(g.sum(s))
        })
        .unwrap();
        assert!(rep.max_rel_error > 0.4);
    }

    #[test]
    fn kinks_are_skipped_not_failed() {
        let mut ps = ParamSet::new();
        let id = ps.add("x", Tensor::vector(vec![0.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rep = check_params(&mut ps, None, &mut rng, |g, p| {
            let x = g.param(p, id);
            let a = g.abs(x);
            Ok(g.sum(a))
        })
        .unwrap();
        assert_eq!(rep.skipped_kinks, 1);
        assert_eq!(rep.checked, 0);
    }
}
