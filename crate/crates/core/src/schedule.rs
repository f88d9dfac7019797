//! Geometric noise schedule and the scalars derived from it.
//!
//! Levels are indexed from 0 (largest noise) to `len() - 1` (smallest).

use ndarray::ArrayView2;

use crate::error::{self, Result};

/// Above this many target rows (and for `d > 1`), the pairwise-distance scan
/// for the initial noise level runs on an evenly strided subsample.
pub const MAX_PAIRWISE_ROWS: usize = 10_000;

/// Strictly decreasing geometric noise levels `sigma_i = sigma_first * ratio^i`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    sigmas: Vec<f64>,
    ratio: f64,
}

impl NoiseSchedule {
    /// Geometric schedule from `sigma_first` down to `sigma_last` over `levels` levels.
    ///
    /// The levels are generated from `(sigma_first, ratio, levels)` so that
    /// [`NoiseSchedule::from_ratio`] reproduces them bit for bit; the last level
    /// matches `sigma_last` to rounding.
    pub fn geometric(sigma_first: f64, sigma_last: f64, levels: usize) -> Result<Self> {
        if levels < 2 {
            return error::config(format!("noise schedule needs at least 2 levels, got {levels}"));
        }
        if !(sigma_first.is_finite() && sigma_last.is_finite()) || sigma_last <= 0.0 {
            return error::config("noise levels must be finite and positive");
        }
        if sigma_first <= sigma_last {
            return error::config(format!(
                "first noise level {sigma_first} must exceed last noise level {sigma_last}"
            ));
        }
        let ratio = (sigma_last / sigma_first).powf(1.0 / (levels - 1) as f64);
        Self::from_ratio(sigma_first, ratio, levels)
    }

    pub fn from_ratio(sigma_first: f64, ratio: f64, levels: usize) -> Result<Self> {
        if levels < 2 {
            return error::config(format!("noise schedule needs at least 2 levels, got {levels}"));
        }
        if !(sigma_first.is_finite() && sigma_first > 0.0) {
            return error::config("first noise level must be finite and positive");
        }
        if !(ratio > 0.0 && ratio < 1.0) {
            return error::config(format!("schedule ratio must lie in (0, 1), got {ratio}"));
        }
        let sigmas: Vec<f64> = (0..levels)
            .map(|i| sigma_first * ratio.powi(i as i32))
            .collect();
        if sigmas[levels - 1] <= 0.0 {
            return error::config("schedule underflows to zero");
        }
        Ok(Self { sigmas, ratio })
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn sigma(&self, level: usize) -> f64 {
        self.sigmas[level]
    }

    pub fn first(&self) -> f64 {
        self.sigmas[0]
    }

    pub fn last(&self) -> f64 {
        self.sigmas[self.sigmas.len() - 1]
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn check_level(&self, level: usize) -> Result<()> {
        if level >= self.len() {
            return error::config(format!(
                "noise level {level} out of range for {} levels",
                self.len()
            ));
        }
        Ok(())
    }
}

/// `r_L = epsilon / sigma_last^2`. Values outside `(0, 2)` make the last-level
/// refinement diverge; they are logged but allowed.
pub fn refinement_rate(epsilon: f64, sigma_last: f64) -> f64 {
    let r = epsilon / (sigma_last * sigma_last);
    if !(r > 0.0 && r < 2.0) {
        log::warn!("refinement rate {r} is outside (0, 2); last-level refinement will not converge");
    }
    r
}

/// Step sizes and caps for the refinement sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementParams {
    pub epsilon: f64,
    pub refinement_rate: f64,
    /// `alpha_i = epsilon * sigma_i^2 / sigma_L^2`, so `alpha_L == epsilon`.
    pub alphas: Vec<f64>,
    /// Steps run at the last level.
    pub last_steps: usize,
    /// Hard cap on steps at each non-final level.
    pub step_cap: usize,
}

impl RefinementParams {
    pub fn new(
        schedule: &NoiseSchedule,
        epsilon: f64,
        last_steps: usize,
        step_cap: usize,
    ) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return error::config(format!("step size must be positive, got {epsilon}"));
        }
        if last_steps < 1 || step_cap < 1 {
            return error::config("last-level steps and step cap must be at least 1");
        }
        let last_sq = schedule.last() * schedule.last();
        let alphas = schedule
            .sigmas()
            .iter()
            .map(|s| epsilon * ((s * s) / last_sq))
            .collect();
        Ok(Self {
            epsilon,
            refinement_rate: refinement_rate(epsilon, schedule.last()),
            alphas,
            last_steps,
            step_cap,
        })
    }
}

/// Per-level end-signals `beta_i` for the non-final levels (the last entry is
/// kept for completeness but never used by the sampler).
#[derive(Debug, Clone, PartialEq)]
pub struct EndSignalSet {
    pub betas: Vec<f64>,
}

impl EndSignalSet {
    /// `beta_i = gamma * sigma_i`.
    pub fn proportional(schedule: &NoiseSchedule, gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return error::config(format!("end-signal coefficient must be positive, got {gamma}"));
        }
        Ok(Self {
            betas: schedule.sigmas().iter().map(|s| gamma * s).collect(),
        })
    }

    /// The same absolute `beta` at every level.
    pub fn constant(schedule: &NoiseSchedule, beta: f64) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return error::config(format!("end-signal must be positive, got {beta}"));
        }
        Ok(Self {
            betas: vec![beta; schedule.len()],
        })
    }
}

/// `lambda(sigma) = sigma^k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeighting {
    pub k: f64,
}

impl LossWeighting {
    pub fn new(k: f64) -> Self {
        if k > 2.0 {
            log::warn!("loss exponent k = {k} exceeds 2; the last level gets the least weight");
        }
        Self { k }
    }

    pub fn weight(&self, sigma: f64) -> f64 {
        loss_weight(sigma, self.k)
    }
}

pub fn loss_weight(sigma: f64, k: f64) -> f64 {
    sigma.powf(k)
}

/// Largest Euclidean distance between any two target rows; `1.0` for a single row.
pub fn initial_sigma_from_targets(targets: ArrayView2<f64>) -> Result<f64> {
    let n = targets.nrows();
    if n == 0 {
        return error::config("cannot derive a noise level from zero targets");
    }
    if n == 1 {
        log::warn!("single target row; using initial noise level 1.0");
        return Ok(1.0);
    }
    if targets.ncols() == 1 {
        let col = targets.column(0);
        let (lo, hi) = col
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        return Ok(hi - lo);
    }
    let rows: Vec<usize> = if n > MAX_PAIRWISE_ROWS {
        let stride = n as f64 / MAX_PAIRWISE_ROWS as f64;
        (0..MAX_PAIRWISE_ROWS)
            .map(|i| (i as f64 * stride) as usize)
            .collect()
    } else {
        (0..n).collect()
    };
    let mut best = 0.0f64;
    for (a, &i) in rows.iter().enumerate() {
        let yi = targets.row(i);
        for &j in &rows[a + 1..] {
            let sq: f64 = yi
                .iter()
                .zip(targets.row(j).iter())
                .map(|(p, q)| (p - q) * (p - q))
                .sum();
            best = best.max(sq);
        }
    }
    Ok(best.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn unit_to_hundredth_over_ten_levels() {
        let s = NoiseSchedule::geometric(1.0, 0.01, 10).unwrap();
        let expected_ratio = 0.01f64.powf(1.0 / 9.0);
        assert!((s.ratio() - expected_ratio).abs() < 1e-15);
        assert!((s.ratio() - 0.599484).abs() < 1e-6);
        assert!((s.sigma(1) - 0.599484).abs() < 1e-6);
        assert_eq!(s.first(), 1.0);
        assert!((s.last() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn linear_toy_endpoints() {
        let s = NoiseSchedule::geometric(20.0, 0.01, 10).unwrap();
        assert_eq!(s.first(), 20.0);
        assert!((s.last() / 0.01 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_degenerate() {
        assert!(NoiseSchedule::geometric(5.0, 5.0, 1).is_err());
        assert!(NoiseSchedule::geometric(5.0, 5.0, 4).is_err());
        assert!(NoiseSchedule::geometric(1.0, 2.0, 4).is_err());
        assert!(NoiseSchedule::geometric(1.0, 0.1, 1).is_err());
        assert!(NoiseSchedule::geometric(1.0, 0.0, 3).is_err());
    }

    #[test]
    fn refinement_rates() {
        assert!((refinement_rate(2e-5, 0.01) - 0.2).abs() < 1e-12);
        assert_eq!(refinement_rate(0.01 * 0.01, 0.01), 1.0);
        // Out of range only warns.
        assert!((refinement_rate(3.0 * 0.01 * 0.01, 0.01) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn loss_weights() {
        assert_eq!(loss_weight(0.5, 2.0), 0.25);
        assert_eq!(loss_weight(0.5, 1.0), 0.5);
        assert_eq!(LossWeighting::new(0.0).weight(0.3), 1.0);
    }

    #[test]
    fn alphas_consistent_with_levels() {
        let s = NoiseSchedule::geometric(2.0, 0.01, 10).unwrap();
        let p = RefinementParams::new(&s, 5e-5, 30, 30).unwrap();
        assert_eq!(p.alphas[9], 5e-5);
        for i in 0..10 {
            let expected = 5e-5 * s.sigma(i).powi(2) / s.last().powi(2);
            assert!((p.alphas[i] / expected - 1.0).abs() < 1e-14);
        }
        assert!((p.alphas[0] / p.alphas[3] - (s.sigma(0) / s.sigma(3)).powi(2)).abs() < 1e-9);
        assert!((p.refinement_rate - 0.5).abs() < 1e-12);
    }

    #[test]
    fn end_signals() {
        let s = NoiseSchedule::geometric(2.0, 0.01, 10).unwrap();
        let e = EndSignalSet::proportional(&s, 0.01).unwrap();
        assert!(e.betas.windows(2).all(|w| w[0] > w[1] && w[1] > 0.0));
        assert!((e.betas[0] - 0.02).abs() < 1e-15);
        assert!(EndSignalSet::proportional(&s, 0.0).is_err());
        assert_eq!(EndSignalSet::constant(&s, 0.01).unwrap().betas, vec![0.01; 10]);
    }

    #[test]
    fn initial_sigma_examples() {
        assert_eq!(initial_sigma_from_targets(array![[0.0, 0.0], [3.0, 4.0]].view()).unwrap(), 5.0);
        assert_eq!(initial_sigma_from_targets(array![[0.0], [1.0], [7.0]].view()).unwrap(), 7.0);
        assert_eq!(initial_sigma_from_targets(array![[2.0, 1.0]].view()).unwrap(), 1.0);
        assert!(initial_sigma_from_targets(Array2::zeros((0, 1)).view()).is_err());
    }

    fn brute_force(y: &Array2<f64>) -> f64 {
        let mut best = 0.0f64;
        for i in 0..y.nrows() {
            for j in 0..y.nrows() {
                let d = (&y.row(i) - &y.row(j)).mapv(|v| v * v).sum().sqrt();
                best = best.max(d);
            }
        }
        best
    }

    #[test]
    fn initial_sigma_matches_brute_force_on_linear_draws() {
        let mut rng = crate::seeded_rng(11);
        let noise = Normal::new(0.0, 2.0).unwrap();
        let y = Array2::from_shape_fn((1000, 1), |_| {
            let x: f64 = rng.random_range(-5.0..5.0);
            2.0 * x + 3.0 + noise.sample(&mut rng)
        });
        assert_eq!(initial_sigma_from_targets(y.view()).unwrap(), brute_force(&y));
    }

    #[test]
    fn initial_sigma_matches_brute_force_multidim() {
        let mut rng = crate::seeded_rng(12);
        let y = Array2::from_shape_fn((300, 3), |_| rng.random_range(-1.0..1.0));
        let fast = initial_sigma_from_targets(y.view()).unwrap();
        assert!((fast - brute_force(&y)).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn schedule_is_geometric_and_reproducible(
            first in 0.05f64..100.0,
            frac in 0.001f64..0.9,
            levels in 2usize..40,
        ) {
            let last = first * frac;
            let s = NoiseSchedule::geometric(first, last, levels).unwrap();
            let again = NoiseSchedule::from_ratio(s.first(), s.ratio(), s.len()).unwrap();
            proptest::prop_assert_eq!(s.sigmas(), again.sigmas());
            proptest::prop_assert!((s.last() / last - 1.0).abs() < 1e-12);
            for w in s.sigmas().windows(2) {
                proptest::prop_assert!(w[0] > w[1]);
                proptest::prop_assert!((w[1] / w[0] - s.ratio()).abs() < 1e-12);
            }
            let p = RefinementParams::new(&s, 1e-3 * last * last, 5, 5).unwrap();
            for i in 0..levels {
                let expected = p.epsilon * s.sigma(i).powi(2) / s.last().powi(2);
                proptest::prop_assert!((p.alphas[i] / expected - 1.0).abs() < 1e-14);
            }
            proptest::prop_assert_eq!(p.alphas[levels - 1], p.epsilon);
        }
    }
}
