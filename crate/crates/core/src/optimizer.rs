//! Adam and the learning-rate policies of the three training phases.

use crate::error::{Error, Result};
use crate::network::{NetworkParams, ParamGrad};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Moment estimates of one Adam run.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        AdamState {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// Clears the moments and the step counter.
    pub fn reset(&mut self) {
        self.m.fill(0.0);
        self.v.fill(0.0);
        self.t = 0;
    }

    /// One descent step θ ← θ − α m̂/(√v̂ + ε) on the flat parameter slice.
    /// Nothing is modified when the gradient is not finite.
    pub fn step_slice(&mut self, theta: &mut [f64], grad: &[f64], alpha: f64) -> Result<()> {
        if theta.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::usage(format!(
                "Adam state has {} entries, parameters {}, gradient {}",
                self.m.len(),
                theta.len(),
                grad.len()
            )));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::usage(format!("learning rate must be positive, got {alpha}")));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::numerical(format!("gradient entry {i} is {}", grad[i])));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powf(self.t as f64);
        let c2 = 1.0 - self.beta2.powf(self.t as f64);
        for (((th, g), m), v) in theta.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *th -= alpha * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }

    pub fn step(&mut self, params: &mut NetworkParams, grad: &ParamGrad, alpha: f64) -> Result<()> {
        if grad.layout != params.layout() {
            return Err(Error::usage("gradient layout does not match the parameters"));
        }
        self.step_slice(params.as_mut_slice(), &grad.values, alpha)
    }
}

/// Which optimization problem a learning rate is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    InitialFit,
    DualMax,
    PrimalMin,
}

/// 1e-3 for the initial fit, 1e-5 for the dual ascent, and for the primal
/// descent 1e-5 up to k = 5, then 1e-6, 1e-7, 1e-8, 1e-9 up to k = 50, 120,
/// 140, 180, and 1e-10 beyond.
pub fn lr_schedule(phase: Phase, k: usize) -> f64 {
    match phase {
        Phase::InitialFit => 1e-3,
        Phase::DualMax => 1e-5,
        Phase::PrimalMin => match k {
            0..=5 => 1e-5,
            6..=50 => 1e-6,
            51..=120 => 1e-7,
            121..=140 => 1e-8,
            141..=180 => 1e-9,
            _ => 1e-10,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn single_step_by_hand() {
        let alpha = 1e-3;
        let mut s = AdamState::new(1);
        let mut theta = [1.0];
        s.step_slice(&mut theta, &[2.0], alpha).unwrap();
        assert_relative_eq!(theta[0], 1.0 - alpha * 2.0 / (2.0 + 1e-8), max_relative = 1e-12);
        assert_eq!(s.steps(), 1);
        assert_relative_eq!(s.first_moment()[0] / (1.0 - BETA1), 2.0, max_relative = 1e-15);
        assert_relative_eq!(s.second_moment()[0] / (1.0 - BETA2), 4.0, max_relative = 1e-12);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = AdamState::new(3);
        let mut theta = [0.5, -1.0, 2.0];
        s.step_slice(&mut theta, &[0.0; 3], 1e-2).unwrap();
        assert_eq!(theta, [0.5, -1.0, 2.0]);
    }

    #[test]
    fn constant_gradient_decreases_monotonically() {
        let mut s = AdamState::new(1);
        let mut theta = [1.0];
        let mut prev = theta[0];
        for _ in 0..2 {
            s.step_slice(&mut theta, &[2.0], 1e-2).unwrap();
            assert!(theta[0] < prev);
            prev = theta[0];
        }
    }

    #[test]
    fn rejects_bad_input_without_stepping() {
        let mut s = AdamState::new(2);
        let mut theta = [1.0, 1.0];
        assert!(matches!(s.step_slice(&mut theta, &[1.0, f64::NAN], 1e-3), Err(Error::Numerical(_))));
        assert!(s.step_slice(&mut theta, &[1.0, 1.0], 0.0).is_err());
        assert!(s.step_slice(&mut theta, &[1.0], 1e-3).is_err());
        assert_eq!((theta, s.steps()), ([1.0, 1.0], 0));
        assert_eq!(s, AdamState::new(2));
    }

    #[test]
    fn schedule_plateaus() {
        use Phase::*;
        assert_eq!(lr_schedule(InitialFit, 0), 1e-3);
        assert_eq!(lr_schedule(DualMax, 77), 1e-5);
        let expect = [
            (1, 1e-5),
            (3, 1e-5),
            (5, 1e-5),
            (6, 1e-6),
            (50, 1e-6),
            (51, 1e-7),
            (60, 1e-7),
            (100, 1e-7),
            (120, 1e-7),
            (121, 1e-8),
            (140, 1e-8),
            (141, 1e-9),
            (180, 1e-9),
            (181, 1e-10),
            (200, 1e-10),
        ];
        for (k, a) in expect {
            assert_eq!(lr_schedule(PrimalMin, k), a, "k = {k}");
        }
    }

    proptest! {
        #[test]
        fn first_step_is_bounded_and_elementwise(g in proptest::collection::vec(-1e3f64..1e3, 1..20), alpha in 1e-8f64..1e-1, rot in 0usize..20) {
            let n = g.len();
            let theta0: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
            let mut theta = theta0.clone();
            let mut s = AdamState::new(n);
            s.step_slice(&mut theta, &g, alpha).unwrap();
            for (a, b) in theta.iter().zip(&theta0) {
                prop_assert!((a - b).abs() <= alpha * (1.0 + 1e-12));
            }
            prop_assert!(s.second_moment().iter().all(|&v| v >= 0.0));

            let k = rot % n;
            let mut rtheta = theta0.clone();
            let mut rg = g.clone();
            rtheta.rotate_left(k);
            rg.rotate_left(k);
            let mut rs = AdamState::new(n);
            rs.step_slice(&mut rtheta, &rg, alpha).unwrap();
            rtheta.rotate_right(k);
            prop_assert_eq!(rtheta, theta);
        }
    }
}
