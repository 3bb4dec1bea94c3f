//! Uniform Monte Carlo point clouds on Ω = (0, π)ᵈ and its boundary, and
//! the quadrature rules built on them.

use std::f64::consts::PI;
use std::path::Path;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Generator behind every sample cloud; echoed into run configurations.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.9), interior stream 0, boundary stream 1";

const INTERIOR_STREAM: u64 = 0;
const BOUNDARY_STREAM: u64 = 1;

/// |Ω| for the cube (0, π)ᵈ.
pub fn cube_volume(d: usize) -> f64 {
    PI.powi(d as i32)
}

/// |∂Ω| for the cube (0, π)ᵈ: 2d faces of measure πᵈ⁻¹.
pub fn cube_boundary_area(d: usize) -> f64 {
    2.0 * d as f64 * PI.powi(d as i32 - 1)
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn open_coordinate(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.sample(Open01);
        let x = u * PI;
        if x > 0.0 && x < PI {
            return x;
        }
    }
}

/// `n` i.i.d. uniform points in (0, π)ᵈ, row-major `n × d`.
pub fn sample_interior(d: usize, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, INTERIOR_STREAM);
    (0..n * d).map(|_| open_coordinate(&mut rng)).collect()
}

/// `n` uniform points on ∂Ω, row-major `n × d`. Each point picks one of the
/// 2d faces uniformly, fixes that coordinate to 0 or π and draws the rest
/// in (0, π).
pub fn sample_boundary(d: usize, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, BOUNDARY_STREAM);
    let mut out = Vec::with_capacity(n * d);
    for _ in 0..n {
        let face = rng.random_range(0..2 * d);
        let (axis, side) = (face / 2, face % 2);
        for j in 0..d {
            out.push(if j == axis {
                if side == 0 {
                    0.0
                } else {
                    PI
                }
            } else {
                open_coordinate(&mut rng)
            });
        }
    }
    out
}

/// The fixed interior and boundary clouds of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    d: usize,
    seed: u64,
    interior: Vec<f64>,
    boundary: Vec<f64>,
    vol_omega: f64,
    area_boundary: f64,
}

impl SampleSet {
    pub fn generate(d: usize, n_interior: usize, n_boundary: usize, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::usage("dimension must be at least 1"));
        }
        Ok(SampleSet {
            d,
            seed,
            interior: sample_interior(d, n_interior, seed),
            boundary: sample_boundary(d, n_boundary, seed),
            vol_omega: cube_volume(d),
            area_boundary: cube_boundary_area(d),
        })
    }

    /// Builds a set from explicit points (row-major), e.g. for tests.
    pub fn from_points(d: usize, interior: Vec<f64>, boundary: Vec<f64>) -> Result<Self> {
        if d == 0 || !interior.len().is_multiple_of(d) || !boundary.len().is_multiple_of(d) {
            return Err(Error::usage("point buffers must be n × d with d ≥ 1"));
        }
        Ok(SampleSet {
            d,
            seed: 0,
            interior,
            boundary,
            vol_omega: cube_volume(d),
            area_boundary: cube_boundary_area(d),
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn interior(&self) -> &[f64] {
        &self.interior
    }

    pub fn boundary(&self) -> &[f64] {
        &self.boundary
    }

    pub fn interior_point(&self, i: usize) -> &[f64] {
        &self.interior[i * self.d..(i + 1) * self.d]
    }

    pub fn boundary_point(&self, i: usize) -> &[f64] {
        &self.boundary[i * self.d..(i + 1) * self.d]
    }

    pub fn n_interior(&self) -> usize {
        self.interior.len() / self.d
    }

    pub fn n_boundary(&self) -> usize {
        self.boundary.len() / self.d
    }

    /// N_s = N_i + N_b.
    pub fn n_total(&self) -> usize {
        self.n_interior() + self.n_boundary()
    }

    pub fn vol_omega(&self) -> f64 {
        self.vol_omega
    }

    pub fn area_boundary(&self) -> f64 {
        self.area_boundary
    }

    /// Quadrature weight of one interior sample, |Ω| / N_i.
    pub fn interior_weight(&self) -> f64 {
        self.vol_omega / self.n_interior() as f64
    }

    /// Quadrature weight of one boundary sample, |∂Ω| / N_b.
    pub fn boundary_weight(&self) -> f64 {
        self.area_boundary / self.n_boundary() as f64
    }

    /// ∫_Ω f dx ≈ |Ω| · mean(values).
    pub fn mc_mean_interior(&self, values: &[f64]) -> Result<f64> {
        Ok(self.mc_estimate_interior(values)?.value)
    }

    /// ∫_∂Ω f ds ≈ |∂Ω| · mean(values).
    pub fn mc_mean_boundary(&self, values: &[f64]) -> Result<f64> {
        Ok(self.mc_estimate_boundary(values)?.value)
    }

    pub fn mc_estimate_interior(&self, values: &[f64]) -> Result<McEstimate> {
        if values.len() != self.n_interior() {
            return Err(Error::usage(format!(
                "{} values for {} interior points",
                values.len(),
                self.n_interior()
            )));
        }
        McEstimate::new(self.vol_omega, values)
    }

    pub fn mc_estimate_boundary(&self, values: &[f64]) -> Result<McEstimate> {
        if values.len() != self.n_boundary() {
            return Err(Error::usage(format!(
                "{} values for {} boundary points",
                values.len(),
                self.n_boundary()
            )));
        }
        McEstimate::new(self.area_boundary, values)
    }

    /// Writes `kind,x1,…,xd` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["kind".to_string()];
        header.extend((1..=self.d).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for (kind, pts) in [("interior", &self.interior), ("boundary", &self.boundary)] {
            for p in pts.chunks_exact(self.d) {
                let mut row = vec![kind.to_string()];
                row.extend(p.iter().map(|x| format!("{x:e}")));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// A Monte Carlo integral estimate with its estimated standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

impl McEstimate {
    /// measure · mean(values), and measure · s / √n with the unbiased
    /// sample standard deviation s.
    pub fn new(measure: f64, values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::usage("Monte Carlo estimate of an empty sample"));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Ok(McEstimate {
            value: measure * mean,
            std_error: measure * (var / n as f64).sqrt(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn interior_shapes_and_containment() {
        let pts = sample_interior(2, 5, 1);
        assert_eq!(pts.len(), 10);
        assert!(pts.iter().all(|&x| x > 0.0 && x < PI));
        assert_eq!(sample_interior(7, 1, 3).len(), 7);
        assert!(sample_interior(3, 0, 3).is_empty());
        assert_eq!(sample_interior(2, 5, 1), pts);
        assert_ne!(sample_interior(2, 5, 2), pts);
    }

    #[test]
    fn boundary_points_lie_on_a_face() {
        let pts = sample_boundary(2, 4, 9);
        for p in pts.chunks(2) {
            let on_face = p.iter().filter(|&&x| x == 0.0 || x == PI).count();
            assert_eq!(on_face, 1);
            assert!(p.iter().all(|&x| (0.0..=PI).contains(&x)));
        }
        let pts = sample_boundary(1, 2, 9);
        assert!(pts.iter().all(|&x| x == 0.0 || x == PI));
    }

    #[test]
    fn face_frequencies_are_uniform() {
        let d = 3;
        let n = 10_000;
        let pts = sample_boundary(d, n, 42);
        let mut counts = vec![0usize; 2 * d];
        for p in pts.chunks(d) {
            let axis = p.iter().position(|&x| x == 0.0 || x == PI).unwrap();
            counts[2 * axis + usize::from(p[axis] == PI)] += 1;
        }
        let prob = 1.0 / (2 * d) as f64;
        let mean = n as f64 * prob;
        let sigma = (n as f64 * prob * (1.0 - prob)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() < 3.0 * sigma, "count {c} vs {mean} ± {sigma}");
        }
    }

    #[test]
    fn measures_and_constant_integrands() {
        let s = SampleSet::generate(2, 100, 20, 0).unwrap();
        assert_eq!(s.n_total(), 120);
        assert_relative_eq!(s.mc_mean_interior(&[1.0; 100]).unwrap(), PI * PI, max_relative = 1e-15);
        assert_relative_eq!(s.mc_mean_boundary(&[1.0; 20]).unwrap(), 4.0 * PI, max_relative = 1e-15);
        assert_eq!(s.mc_mean_interior(&[0.0; 100]).unwrap(), 0.0);
        assert!(matches!(s.mc_mean_interior(&[]), Err(Error::Usage(_))));
        assert!(McEstimate::new(1.0, &[]).is_err());
        assert_relative_eq!(cube_boundary_area(5), 10.0 * PI.powi(4));
    }

    #[test]
    fn linear_integrand_is_unbiased() {
        // ∫_{(0,π)²} x₁ dx = π³/2
        let exact = PI.powi(3) / 2.0;
        let seeds = 200;
        let mean: f64 = (0..seeds)
            .map(|seed| {
                let s = SampleSet::generate(2, 200, 1, seed).unwrap();
                let vals: Vec<f64> = (0..s.n_interior()).map(|i| s.interior_point(i)[0]).collect();
                s.mc_mean_interior(&vals).unwrap()
            })
            .sum::<f64>()
            / seeds as f64;
        // standard error of the seed average is about 0.05
        assert!((mean - exact).abs() < 0.2, "{mean} vs {exact}");
    }

    #[test]
    fn csv_dump_has_one_row_per_point() {
        let s = SampleSet::generate(3, 4, 2, 5).unwrap();
        let path = std::env::temp_dir().join(format!("gf-samples-{}.csv", std::process::id()));
        s.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::remove_file(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "kind,x1,x2,x3");
        assert_eq!(lines.len(), 7);
        assert!(lines[5].starts_with("boundary,"));
    }

    proptest! {
        #[test]
        fn sample_set_is_determined_by_its_inputs(d in 1usize..6, ni in 0usize..40, nb in 0usize..20, seed in any::<u64>()) {
            let a = SampleSet::generate(d, ni, nb, seed).unwrap();
            let b = SampleSet::generate(d, ni, nb, seed).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.interior().iter().all(|&x| x > 0.0 && x < PI));
            for p in a.boundary().chunks(d) {
                prop_assert!(p.iter().any(|&x| x == 0.0 || x == PI));
                prop_assert!(p.iter().all(|&x| (0.0..=PI).contains(&x)));
            }
        }
    }
}
