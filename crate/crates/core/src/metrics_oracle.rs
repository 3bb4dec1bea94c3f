//! Analytic heat-equation solution u(t, x) = e⁻ᵗ ∏ sin(aᵢxᵢ), error
//! metrics against it, and the continuous residual used as a test oracle.

use crate::error::{Error, Result};
use crate::network::batch::{evaluate, BatchConfig};
use crate::network::NetworkParams;
use crate::sampling::SampleSet;

pub fn exact_solution(t: f64, x: &[f64], a: &[u32]) -> f64 {
    debug_assert_eq!(x.len(), a.len());
    (-t).exp() * x.iter().zip(a).map(|(xi, &ai)| (f64::from(ai) * xi).sin()).product::<f64>()
}

/// ∇ₓu(t, x).
pub fn exact_gradient(t: f64, x: &[f64], a: &[u32]) -> Vec<f64> {
    let s: Vec<f64> = x.iter().zip(a).map(|(xi, &ai)| (f64::from(ai) * xi).sin()).collect();
    let decay = (-t).exp();
    (0..x.len())
        .map(|j| {
            let aj = f64::from(a[j]);
            let others: f64 = s.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, v)| v).product();
            decay * aj * (aj * x[j]).cos() * others
        })
        .collect()
}

/// κ = 1 / Σ aᵢ².
pub fn kappa_of(a: &[u32]) -> Result<f64> {
    let s: f64 = a.iter().map(|&ai| f64::from(ai).powi(2)).sum();
    if s == 0.0 {
        return Err(Error::usage("frequency vector a must not be all zero"));
    }
    Ok(1.0 / s)
}

/// Pointwise κ/2 |∇u|² + φ*-density(−u_t) + u_t·u at the exact solution.
///
/// With v = u as the maximizer, φ*(−u_t) = φ*(u) = ‖u‖²/2 (u is a Laplacian
/// eigenfunction with κ Σaᵢ² = 1), whose density is u²/2; u_t·u = −u².
/// Only the integral over Ω vanishes, not the integrand.
pub fn be_residual_integrand(t: f64, x: &[f64], a: &[u32]) -> Result<f64> {
    let kappa = kappa_of(a)?;
    let u = exact_solution(t, x, a);
    let g2: f64 = exact_gradient(t, x, a).iter().map(|g| g * g).sum();
    let u_t = -u;
    Ok(0.5 * kappa * g2 + 0.5 * u * u + u_t * u)
}

/// Error quantities over a point set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mse: f64,
    pub eps_abs_linf: f64,
    /// `None` when the exact solution vanishes at every point, so the
    /// relative error is undefined.
    pub eps_rel_l2: Option<f64>,
}

impl Metrics {
    pub fn from_values(predicted: &[f64], exact: &[f64]) -> Result<Self> {
        if predicted.len() != exact.len() || predicted.is_empty() {
            return Err(Error::usage(format!(
                "metrics need matching non-empty value lists, got {} and {}",
                predicted.len(),
                exact.len()
            )));
        }
        let (mut sq, mut norm, mut linf) = (0.0, 0.0, 0.0f64);
        for (p, e) in predicted.iter().zip(exact) {
            let diff = e - p;
            sq += diff * diff;
            norm += e * e;
            linf = linf.max(diff.abs());
        }
        Ok(Metrics {
            mse: sq / predicted.len() as f64,
            eps_abs_linf: linf,
            eps_rel_l2: (norm > 0.0).then(|| (sq / norm).sqrt()),
        })
    }
}

/// Metrics of û against u(t_n, ·) over all N_s = N_i + N_b points.
pub fn compute_metrics(u: &NetworkParams, t_n: f64, samples: &SampleSet, a: &[u32], batch: BatchConfig) -> Result<Metrics> {
    let d = samples.dim();
    if u.input_dim() != d || a.len() != d {
        return Err(Error::usage(format!(
            "network has d={}, samples d={d}, a has {} entries",
            u.input_dim(),
            a.len()
        )));
    }
    let mut predicted = evaluate(u, samples.interior(), false, batch).values;
    predicted.extend(evaluate(u, samples.boundary(), false, batch).values);
    let exact: Vec<f64> = samples
        .interior()
        .chunks_exact(d)
        .chain(samples.boundary().chunks_exact(d))
        .map(|x| exact_solution(t_n, x, a))
        .collect();
    Metrics::from_values(&predicted, &exact)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::central_difference;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn exact_solution_values() {
        let a = [2, 2];
        let x = [0.3, 1.1];
        assert_relative_eq!(exact_solution(0.0, &x, &a), (0.6f64).sin() * (2.2f64).sin());
        let q = PI / 4.0;
        assert_relative_eq!(exact_solution(0.001, &[q, q], &a), (-0.001f64).exp(), max_relative = 1e-15);
        assert!((exact_solution(0.001, &[q, q], &a) - 0.9990).abs() < 1e-4);
        for x in [[0.0, 1.0], [PI, 0.5], [2.0, 0.0]] {
            assert!(exact_solution(0.2, &x, &a).abs() < 1e-15);
        }
    }

    #[test]
    fn kappa_values() {
        assert_eq!(kappa_of(&[2, 2]).unwrap(), 1.0 / 8.0);
        assert_eq!(kappa_of(&[2, 2, 3]).unwrap(), 1.0 / 17.0);
        assert_eq!(kappa_of(&[2, 2, 1, 2, 3]).unwrap(), 1.0 / 22.0);
        assert!(matches!(kappa_of(&[0, 0]), Err(Error::Usage(_))));
    }

    #[test]
    fn exact_solution_solves_the_heat_equation() {
        let a = [2u32, 2, 3];
        let kappa = kappa_of(&a).unwrap();
        let h = 1e-4;
        for x in [[0.4, 1.3, 2.2], [2.9, 0.1, 1.7], [1.5, 1.5, 1.5]] {
            let t = 0.3;
            let u_t = (exact_solution(t + h, &x, &a) - exact_solution(t - h, &x, &a)) / (2.0 * h);
            let u0 = exact_solution(t, &x, &a);
            let lap: f64 = (0..3)
                .map(|j| {
                    let mut p = x;
                    p[j] += h;
                    let up = exact_solution(t, &p, &a);
                    p[j] -= 2.0 * h;
                    let um = exact_solution(t, &p, &a);
                    (up - 2.0 * u0 + um) / (h * h)
                })
                .sum();
            assert!((u_t - kappa * lap).abs() < 1e-5, "residual {}", u_t - kappa * lap);
        }
    }

    #[test]
    fn exact_gradient_matches_finite_differences() {
        let a = [2u32, 1, 3];
        let x = [0.7, 2.1, 1.2];
        let g = exact_gradient(0.1, &x, &a);
        let fd = central_difference(|y| exact_solution(0.1, y, &a), &x, 1e-6);
        for (p, q) in g.iter().zip(&fd) {
            assert_relative_eq!(p, q, max_relative = 1e-7);
        }
    }

    #[test]
    fn metrics_of_exact_and_zero_predictions() {
        let exact = [0.5, -0.2, 0.1, 0.0];
        let m = Metrics::from_values(&exact, &exact).unwrap();
        assert_eq!((m.mse, m.eps_abs_linf, m.eps_rel_l2), (0.0, 0.0, Some(0.0)));
        let m = Metrics::from_values(&[0.0; 4], &exact).unwrap();
        assert_relative_eq!(m.eps_rel_l2.unwrap(), 1.0);
        assert_relative_eq!(m.eps_abs_linf, 0.5);
        let m = Metrics::from_values(&[0.1; 3], &[0.0; 3]).unwrap();
        assert_eq!(m.eps_rel_l2, None);
        assert!(Metrics::from_values(&[], &[]).is_err());
    }

    #[test]
    fn compute_metrics_for_a_constant_network() {
        let s = SampleSet::generate(2, 50, 10, 3).unwrap();
        let zero = NetworkParams::constant(2, 4, 0.03, 0.0).unwrap();
        let m = compute_metrics(&zero, 0.0, &s, &[2, 2], BatchConfig::default()).unwrap();
        assert_relative_eq!(m.eps_rel_l2.unwrap(), 1.0, max_relative = 1e-14);
        assert!(compute_metrics(&zero, 0.0, &s, &[2, 2, 2], BatchConfig::default()).is_err());
    }

    #[test]
    fn residual_integrand_is_not_pointwise_zero_on_the_boundary() {
        let r = be_residual_integrand(0.0, &[0.0, PI / 4.0], &[2, 2]).unwrap();
        assert!(r.abs() > 1e-3);
    }

    proptest! {
        #[test]
        fn metric_invariants(vals in proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..40), shift in 0usize..40) {
            let (p, e): (Vec<f64>, Vec<f64>) = vals.iter().copied().unzip();
            let m = Metrics::from_values(&p, &e).unwrap();
            prop_assert!(m.mse >= 0.0 && m.eps_abs_linf >= 0.0);
            prop_assert!(m.mse <= m.eps_abs_linf * m.eps_abs_linf * (1.0 + 1e-12));
            if let Some(r) = m.eps_rel_l2 { prop_assert!(r >= 0.0); }
            let k = shift % p.len();
            let mut p2 = p.clone();
            let mut e2 = e.clone();
            p2.rotate_left(k);
            e2.rotate_left(k);
            let m2 = Metrics::from_values(&p2, &e2).unwrap();
            prop_assert!((m.mse - m2.mse).abs() <= 1e-12 * m.mse.max(1e-300));
            prop_assert_eq!(m.eps_abs_linf, m2.eps_abs_linf);
        }
    }
}
