//! Seeded random smooth test functions: sums of Gaussian bumps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::energy::{bhn_check, carleman_bound, onofri_check, AnalysisContext, Density};
use crate::error::Result;
use crate::grid::{Grid2D, ScalarField};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub center: (f64, f64),
    pub width: f64,
    pub amplitude: f64,
}

/// `Σ A exp(-|x - c|² / (2 w²))` over at most five bumps.
#[derive(Debug, Clone, PartialEq)]
pub struct BumpSum {
    pub bumps: Vec<Bump>,
}

impl BumpSum {
    /// One to five bumps with centers in `[-L/2, L/2]²`, widths in `[0.2, 2]`
    /// and amplitudes in `[-3, 3]`.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, half_width: f64) -> Self {
        let count = rng.gen_range(1..=5);
        let r = half_width / 2.0;
        let bumps = (0..count)
            .map(|_| Bump {
                center: (rng.gen_range(-r..=r), rng.gen_range(-r..=r)),
                width: rng.gen_range(0.2..=2.0),
                amplitude: rng.gen_range(-3.0..=3.0),
            })
            .collect();
        Self { bumps }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.bumps
            .iter()
            .map(|b| {
                let d2 = (x - b.center.0).powi(2) + (y - b.center.1).powi(2);
                b.amplitude * (-d2 / (2.0 * b.width * b.width)).exp()
            })
            .sum()
    }

    pub fn to_field<T: Real>(&self, grid: Grid2D<T>) -> ScalarField<T> {
        ScalarField::from_fn(grid, |x, y| T::lit(self.eval(x.as_f64(), y.as_f64())))
    }

    /// The square of the bump sum, normalized to unit mass.
    pub fn to_density<T: Real>(&self, grid: Grid2D<T>) -> Result<Density<T>> {
        Density::normalized(self.to_field(grid).map(|v| v * v))
    }
}

/// Pass count and worst `lhs / rhs` of one inequality over a seeded family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SuiteTally {
    pub passed: usize,
    pub total: usize,
    pub worst_ratio: f64,
}

impl SuiteTally {
    fn record(&mut self, holds: bool, lhs: f64, rhs: f64) {
        self.total += 1;
        if holds {
            self.passed += 1;
        }
        self.worst_ratio = self.worst_ratio.max(lhs / rhs);
    }

    pub fn all_pass(&self) -> bool {
        self.passed == self.total
    }
}

impl Default for SuiteTally {
    fn default() -> Self {
        Self { passed: 0, total: 0, worst_ratio: f64::NEG_INFINITY }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub onofri: SuiteTally,
    pub carleman: SuiteTally,
    pub bhn: SuiteTally,
}

impl SuiteReport {
    pub fn all_pass(&self) -> bool {
        self.onofri.all_pass() && self.carleman.all_pass() && self.bhn.all_pass()
    }
}

/// Runs the Onofri, Carleman and BHN checkers on `count` seeded inputs each.
///
/// Onofri gets a raw bump sum as `ψ`; Carleman and BHN get its normalized
/// square as `ρ`, and BHN draws its parameter from `[0.5, 4]`.
pub fn inequality_suites(grid: Grid2D<f64>, seed: u64, count: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ctx = AnalysisContext::new(grid);
    let half_width = grid.half_width();
    let mut report =
        SuiteReport { seed, onofri: SuiteTally::default(), carleman: SuiteTally::default(), bhn: SuiteTally::default() };
    for _ in 0..count {
        let psi = BumpSum::sample(&mut rng, half_width).to_field(grid);
        let r = onofri_check(&psi, &ctx)?;
        report.onofri.record(r.holds, r.lhs, r.rhs);

        let rho = BumpSum::sample(&mut rng, half_width).to_density(grid)?;
        let r = carleman_bound(&rho, &ctx)?;
        report.carleman.record(r.holds, r.lhs, r.rhs);

        let rho = BumpSum::sample(&mut rng, half_width).to_density(grid)?;
        let eps = rng.gen_range(0.5..=4.0);
        let r = bhn_check(&rho, eps)?;
        report.bhn.record(r.holds, r.lhs, r.rhs);
    }
    Ok(report)
}
