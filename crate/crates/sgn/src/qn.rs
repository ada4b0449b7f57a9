//! Rolling quasi-Newton approximation of the smoothed Jacobian.
//!
//! The buffer holds the last `L` pairs `(Z_l, Y_l)` with
//! `Y_l = [gbar_n(theta_l + eps Z_l) - gbar_n(theta_l)] / eps`, refreshing
//! one (configurable) direction per solver iteration. The Jacobian estimate
//! is the least-squares regression coefficient of `Y` on the de-meaned
//! directions:
//!
//! ```text
//! Ghat_L = sum_l Y_l Ztil_l' ( sum_l Ztil_l Ztil_l' )^{-1},
//! Ztil_l = Z_l - mean(Z)
//! ```
//!
//! Because the regression runs on centered directions, any component of `Y`
//! that is constant across the window drops out automatically. A plain
//! sample-mean variant `Ghat_L = (1/L) sum_l Y_l Z_l'` is kept alongside as
//! a cross-check; it converges to the same limit but only as `L` grows.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::moments::{MomentProblem, MomentValue, ParamVector};
use crate::seeds;

/// Smallest admissible singular value of the de-meaned design matrix.
const DESIGN_TOL: f64 = 1e-10;

/// How many fresh directions to try when the design is rank deficient.
/// Gaussian designs are almost surely full rank, so persistent failure
/// indicates a broken problem rather than bad luck.
const MAX_RETRIES: usize = 3;

/// Rolling window of `(direction, scaled moment difference)` pairs.
#[derive(Debug, Clone)]
pub struct QnBuffer {
    eps: f64,
    capacity: usize,
    pairs: VecDeque<(DVector<f64>, DVector<f64>)>,
}

impl QnBuffer {
    /// Assemble a buffer from precomputed pairs (mainly for tests and warm
    /// starts). The window capacity is the number of pairs supplied.
    pub fn from_pairs(eps: f64, pairs: Vec<(DVector<f64>, DVector<f64>)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::config("quasi-Newton buffer cannot be empty"));
        }
        let d = pairs[0].0.len();
        if pairs.len() < d {
            return Err(Error::config(format!(
                "quasi-Newton window {} is smaller than d_theta {d}",
                pairs.len()
            )));
        }
        Ok(QnBuffer { eps, capacity: pairs.len(), pairs: pairs.into() })
    }

    /// Window length `L`.
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Bandwidth the moment differences were scaled by.
    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// The stored pairs, oldest first.
    pub fn pairs(&self) -> impl Iterator<Item = &(DVector<f64>, DVector<f64>)> {
        self.pairs.iter()
    }

    fn push_pair(
        &mut self,
        problem: &dyn MomentProblem,
        theta: &ParamVector,
        moments_at_theta: &MomentValue,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let d = problem.dim_theta();
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let perturbed = ParamVector::from_dvector(theta.as_dvector() + self.eps * &z)?;
        let y = (problem.moments(&perturbed)?.as_dvector() - moments_at_theta.as_dvector())
            / self.eps;
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((z, y));
        Ok(())
    }

    /// Refresh `directions` entries of the window at the current iterate,
    /// evicting the oldest pairs (strict FIFO).
    pub fn update(
        &mut self,
        problem: &dyn MomentProblem,
        theta: &ParamVector,
        moments_at_theta: &MomentValue,
        rng: &mut ChaCha8Rng,
        directions: usize,
    ) -> Result<()> {
        for _ in 0..directions.max(1) {
            self.push_pair(problem, theta, moments_at_theta, rng)?;
        }
        Ok(())
    }

    /// De-meaned least-squares Jacobian estimate (the default estimator).
    ///
    /// De-meaning costs one degree of freedom, so the design is full rank
    /// only when `L >= d_theta + 1`; at `L = d_theta` this always reports
    /// rank deficiency (the sample-mean variant still works there).
    pub fn least_squares_jacobian(&self) -> Result<DMatrix<f64>> {
        let l = self.pairs.len();
        let d = self.pairs[0].0.len();
        let p = self.pairs[0].1.len();
        let mut mean = DVector::zeros(d);
        for (z, _) in &self.pairs {
            mean += z;
        }
        mean /= l as f64;
        let mut design = DMatrix::zeros(l, d);
        let mut rhs = DMatrix::zeros(l, p);
        for (row, (z, y)) in self.pairs.iter().enumerate() {
            for j in 0..d {
                design[(row, j)] = z[j] - mean[j];
            }
            for i in 0..p {
                rhs[(row, i)] = y[i];
            }
        }
        let svd = design.svd(true, true);
        let sigma_min = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
        if sigma_min < DESIGN_TOL {
            return Err(Error::RankDeficient { sigma_min });
        }
        let coef = svd
            .solve(&rhs, DESIGN_TOL * 1e-3)
            .map_err(|e| Error::eval(format!("least-squares solve failed: {e}")))?;
        Ok(coef.transpose())
    }

    /// Sample-mean Jacobian estimate `(1/L) sum_l Y_l Z_l'`.
    pub fn sample_mean_jacobian(&self) -> DMatrix<f64> {
        let l = self.pairs.len();
        let d = self.pairs[0].0.len();
        let p = self.pairs[0].1.len();
        let mut acc = DMatrix::zeros(p, d);
        for (z, y) in &self.pairs {
            for j in 0..d {
                for i in 0..p {
                    acc[(i, j)] += y[i] * z[j];
                }
            }
        }
        acc / l as f64
    }
}

/// Initialize the window with `l` pairs all generated at `theta0`.
pub fn qn_init(
    problem: &dyn MomentProblem,
    theta0: &ParamVector,
    eps: f64,
    l: usize,
    seed: u64,
) -> Result<QnBuffer> {
    if l < problem.dim_theta() {
        return Err(Error::config(format!(
            "quasi-Newton window L = {l} must be at least d_theta = {}",
            problem.dim_theta()
        )));
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::config(format!("bandwidth must be positive, got {eps}")));
    }
    let mut buffer = QnBuffer { eps, capacity: l, pairs: VecDeque::with_capacity(l) };
    let base = problem.moments(theta0)?;
    let mut rng = seeds::stream(&[seed, seeds::role::QN_INIT]);
    for _ in 0..l {
        buffer.push_pair(problem, theta0, &base, &mut rng)?;
    }
    Ok(buffer)
}

/// One solver-iteration update: refresh `directions` window entries at
/// `theta_b` and return the least-squares Jacobian estimate, retrying with
/// fresh directions (up to three) if the design is rank deficient.
///
/// `moments_at_theta` must be `gbar_n(theta_b)`; the solver already has it,
/// so the update costs `directions` extra moment evaluations.
pub fn qn_update_jacobian(
    buffer: &mut QnBuffer,
    problem: &dyn MomentProblem,
    theta_b: &ParamVector,
    moments_at_theta: &MomentValue,
    rng: &mut ChaCha8Rng,
    directions: usize,
) -> Result<DMatrix<f64>> {
    buffer.update(problem, theta_b, moments_at_theta, rng, directions)?;
    let mut attempts = 0;
    loop {
        match buffer.least_squares_jacobian() {
            Ok(estimate) => return Ok(estimate),
            Err(Error::RankDeficient { .. }) if attempts < MAX_RETRIES => {
                attempts += 1;
                // replace the newest pair with a fresh direction
                buffer.pairs.pop_back();
                buffer.push_pair(problem, theta_b, moments_at_theta, rng)?;
            }
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::ParamBox;
    use crate::smoothing::{mc_jacobian, SmoothingConfig};

    fn pv(values: &[f64]) -> ParamVector {
        ParamVector::new(values.to_vec()).unwrap()
    }

    struct Affine {
        a: DMatrix<f64>,
        b: DVector<f64>,
        bounds: ParamBox,
    }

    impl Affine {
        fn new(a: DMatrix<f64>, b: DVector<f64>) -> Self {
            let d = a.ncols();
            Affine { a, b, bounds: ParamBox::cube(-10.0, 10.0, d).unwrap() }
        }
    }

    impl MomentProblem for Affine {
        fn dim_theta(&self) -> usize {
            self.a.ncols()
        }
        fn dim_moments(&self) -> usize {
            self.a.nrows()
        }
        fn sample_size(&self) -> usize {
            100
        }
        fn param_box(&self) -> &ParamBox {
            &self.bounds
        }
        fn moments(&self, theta: &ParamVector) -> Result<MomentValue> {
            MomentValue::from_dvector(&self.a * theta.as_dvector() + &self.b)
        }
    }

    #[test]
    fn init_fills_window_at_theta0() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 2.0]);
        let problem = Affine::new(a.clone(), DVector::zeros(2));
        let buffer = qn_init(&problem, &pv(&[0.2, -0.1]), 0.1, 3, 7).unwrap();
        assert_eq!(buffer.capacity(), 3);
        assert_eq!(buffer.pairs().count(), 3);
        for (z, y) in buffer.pairs() {
            // affine: Y = A Z exactly, independent of theta
            assert!((y - &a * z).norm() < 1e-12);
        }
    }

    #[test]
    fn init_constant_moments_gives_zero_y() {
        let problem = Affine::new(DMatrix::zeros(2, 2), DVector::from_vec(vec![1.0, 2.0]));
        let buffer = qn_init(&problem, &pv(&[0.0, 0.0]), 0.1, 4, 3).unwrap();
        for (_, y) in buffer.pairs() {
            assert!(y.iter().all(|&v| v == 0.0));
        }
        assert!(buffer.least_squares_jacobian().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_is_deterministic_in_seed() {
        let problem = Affine::new(DMatrix::identity(2, 2), DVector::zeros(2));
        let a = qn_init(&problem, &pv(&[1.0, 1.0]), 0.1, 5, 42).unwrap();
        let b = qn_init(&problem, &pv(&[1.0, 1.0]), 0.1, 5, 42).unwrap();
        for ((za, ya), (zb, yb)) in a.pairs().zip(b.pairs()) {
            assert_eq!(za, zb);
            assert_eq!(ya, yb);
        }
    }

    #[test]
    fn init_rejects_underdetermined_window() {
        let problem = Affine::new(DMatrix::identity(3, 3), DVector::zeros(3));
        assert!(matches!(
            qn_init(&problem, &pv(&[0.0; 3]), 0.1, 2, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn least_squares_recovers_affine_jacobian_exactly() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 0.3, 0.7, 5.0, 1.1]);
        let problem = Affine::new(a.clone(), DVector::from_vec(vec![0.4, -0.2, 1.0]));
        let buffer = qn_init(&problem, &pv(&[0.5, -0.5]), 0.05, 6, 11).unwrap();
        let estimate = buffer.least_squares_jacobian().unwrap();
        assert!((&estimate - &a).norm() <= 1e-10 * a.norm().max(1.0));
    }

    #[test]
    fn hand_computed_demeaned_slope() {
        // pairs {(1, 2), (-1, -2), (0, 0)}: mean(Z) = 0, slope = sum YZ / sum Z^2 = 4/2
        let pairs = vec![
            (DVector::from_vec(vec![1.0]), DVector::from_vec(vec![2.0])),
            (DVector::from_vec(vec![-1.0]), DVector::from_vec(vec![-2.0])),
            (DVector::from_vec(vec![0.0]), DVector::from_vec(vec![0.0])),
        ];
        let buffer = QnBuffer::from_pairs(0.1, pairs).unwrap();
        let estimate = buffer.least_squares_jacobian().unwrap();
        assert!((estimate[(0, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_design_is_reported() {
        // identical directions: de-meaned design is exactly zero
        let z = DVector::from_vec(vec![1.0, 1.0]);
        let pairs = vec![(z.clone(), DVector::zeros(1)); 3];
        let buffer = QnBuffer::from_pairs(0.1, pairs).unwrap();
        assert!(matches!(
            buffer.least_squares_jacobian(),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn eviction_is_fifo() {
        let problem = Affine::new(DMatrix::identity(2, 2), DVector::zeros(2));
        let theta0 = pv(&[0.0, 0.0]);
        let mut buffer = qn_init(&problem, &theta0, 0.1, 4, 1).unwrap();
        let initial: Vec<DVector<f64>> = buffer.pairs().map(|(z, _)| z.clone()).collect();
        let g0 = problem.moments(&theta0).unwrap();
        let mut rng = seeds::stream(&[99]);
        buffer.update(&problem, &theta0, &g0, &mut rng, 2).unwrap();
        let after: Vec<DVector<f64>> = buffer.pairs().map(|(z, _)| z.clone()).collect();
        // the two oldest entries are gone, the survivors keep their order
        assert_eq!(after[0], initial[2]);
        assert_eq!(after[1], initial[3]);
    }

    #[test]
    fn window_refreshed_at_new_point_matches_mc_jacobian_target() {
        // after L updates at theta*, every pair was generated at theta*, and
        // for an affine map both estimators equal A exactly
        let a = DMatrix::from_row_slice(2, 2, &[0.8, -0.3, 0.1, 1.4]);
        let problem = Affine::new(a.clone(), DVector::from_vec(vec![1.0, -1.0]));
        let theta0 = pv(&[0.0, 0.0]);
        let theta_star = pv(&[2.0, -2.0]);
        let mut buffer = qn_init(&problem, &theta0, 0.1, 5, 21).unwrap();
        let g_star = problem.moments(&theta_star).unwrap();
        let mut rng = seeds::stream(&[22]);
        for _ in 0..5 {
            buffer.update(&problem, &theta_star, &g_star, &mut rng, 1).unwrap();
        }
        let ls = buffer.least_squares_jacobian().unwrap();
        assert!((&ls - &a).norm() <= 1e-10);
        // sanity: agrees with the direct Monte-Carlo estimator's target
        let cfg = SmoothingConfig { eps: 0.1, draws: 4000, seed: 5 };
        let mc = mc_jacobian(&problem, &theta_star, &cfg).unwrap();
        assert!((&mc - &a).norm() <= 0.1 * a.norm());
    }

    #[test]
    fn sample_mean_variant_converges_for_affine() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, -0.6, 2.0]);
        let problem = Affine::new(a.clone(), DVector::zeros(2));
        let buffer = qn_init(&problem, &pv(&[0.3, 0.3]), 0.1, 10_000, 8).unwrap();
        let ls = buffer.least_squares_jacobian().unwrap();
        let mean = buffer.sample_mean_jacobian();
        assert!((&ls - &a).norm() <= 1e-9);
        assert!((&mean - &a).norm() <= 0.05 * a.norm(), "err {}", (&mean - &a).norm());
    }

    #[test]
    fn update_jacobian_driver_returns_estimate() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        let problem = Affine::new(a.clone(), DVector::zeros(2));
        let theta = pv(&[1.0, 1.0]);
        let mut buffer = qn_init(&problem, &theta, 0.2, 6, 4).unwrap();
        let g = problem.moments(&theta).unwrap();
        let mut rng = seeds::stream(&[5]);
        let estimate = qn_update_jacobian(&mut buffer, &problem, &theta, &g, &mut rng, 1).unwrap();
        assert!((&estimate - &a).norm() <= 1e-10);
    }
}
