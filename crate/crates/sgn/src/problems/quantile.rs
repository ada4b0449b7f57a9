//! Sample quantile estimation as a one-dimensional moment problem.
//!
//! The raw moment is the centered empirical CDF, `F_n(theta) - t`, a step
//! function of `theta`. Convolution smoothing has closed forms: the
//! smoothed moment averages `Phi((theta - x_i)/eps)` and its Jacobian is
//! the Gaussian kernel density estimate `f_eps(theta)`, which is what the
//! local step divides by.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::moments::{MomentProblem, MomentValue, ParamBox, ParamVector};
use crate::seeds;
use crate::smoothing::GaussianKernel;

/// The t-th quantile problem for a fixed dataset.
#[derive(Debug, Clone)]
pub struct QuantileProblem {
    sorted: Vec<f64>,
    t: f64,
    bounds: ParamBox,
}

impl QuantileProblem {
    /// Wrap a dataset; requires `n >= 1`, finite data, and `t` in (0, 1).
    pub fn new(data: Vec<f64>, t: f64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::contract("quantile problem needs at least one datum"));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::contract("quantile data must be finite"));
        }
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::contract(format!("quantile level must lie in (0,1), got {t}")));
        }
        let mut sorted = data;
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let lo = sorted[0] - 1.0;
        let hi = sorted[sorted.len() - 1] + 1.0;
        Ok(QuantileProblem { sorted, t, bounds: ParamBox::new(vec![lo], vec![hi])? })
    }

    /// A fresh standard normal sample of size `n`.
    pub fn standard_normal(n: usize, t: f64, seed: u64) -> Result<Self> {
        let mut rng = seeds::stream(&[seed, seeds::role::DATA]);
        let data: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        Self::new(data, t)
    }

    /// The data, sorted ascending.
    pub fn data(&self) -> &[f64] {
        &self.sorted
    }

    /// Quantile level `t`.
    pub fn t(&self) -> f64 {
        self.t
    }

    /// Empirical CDF `F_n(theta)`.
    pub fn ecdf(&self, theta: f64) -> f64 {
        let count = self.sorted.partition_point(|&x| x <= theta);
        count as f64 / self.sorted.len() as f64
    }

    /// Raw moment `F_n(theta) - t`.
    pub fn raw_moment(&self, theta: f64) -> f64 {
        self.ecdf(theta) - self.t
    }

    /// Closed-form smoothed moment and Jacobian:
    /// `( (1/n) sum_i Phi((theta-x_i)/eps) - t,  (1/(n eps)) sum_i phi((theta-x_i)/eps) )`.
    /// The Jacobian is the kernel density estimate and is strictly positive.
    pub fn smoothed(&self, theta: f64, eps: f64) -> (f64, f64) {
        debug_assert!(eps > 0.0);
        let n = self.sorted.len() as f64;
        let mut cdf_sum = 0.0;
        let mut pdf_sum = 0.0;
        for &x in &self.sorted {
            let z = (theta - x) / eps;
            cdf_sum += GaussianKernel::cdf(z);
            pdf_sum += GaussianKernel::pdf(z);
        }
        (cdf_sum / n - self.t, pdf_sum / (n * eps))
    }

    /// Standard error `sqrt(t(1-t)/n) / f_eps(theta_hat)` used for the
    /// quantile test size.
    pub fn std_err(&self, theta_hat: f64, eps: f64) -> f64 {
        let n = self.sorted.len() as f64;
        let (_, f_eps) = self.smoothed(theta_hat, eps);
        (self.t * (1.0 - self.t) / n).sqrt() / f_eps
    }

    /// The interval of exact roots of `F_n(theta) - t` when `n t` is an
    /// integer, or the degenerate interval at the crossing order statistic
    /// otherwise. Scanning order statistics is independent of the solver
    /// path, so this doubles as the estimation oracle.
    pub fn gmm_root_interval(&self) -> (f64, f64) {
        let n = self.sorted.len();
        let nt = n as f64 * self.t;
        let k = nt.ceil() as usize;
        let k = k.max(1).min(n);
        let at_k = self.sorted[k - 1];
        if (k as f64 - nt).abs() <= 1e-9 {
            // F_n equals t exactly on [x_(k), x_(k+1))
            let upper = if k < n { self.sorted[k] } else { at_k };
            (at_k, upper)
        } else {
            (at_k, at_k)
        }
    }

    /// Midpoint of [`QuantileProblem::gmm_root_interval`].
    pub fn gmm_root_midpoint(&self) -> f64 {
        let (lo, hi) = self.gmm_root_interval();
        0.5 * (lo + hi)
    }

    /// Dump the dataset as CSV (one `x` column, sorted ascending).
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "x")?;
        for x in &self.sorted {
            writeln!(out, "{x:.17e}")?;
        }
        Ok(())
    }

    /// Load a dataset dumped by [`QuantileProblem::write_csv`].
    pub fn read_csv<R: std::io::BufRead>(input: R, t: f64) -> Result<Self> {
        let mut data = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if idx == 0 || trimmed.is_empty() {
                continue;
            }
            let value: f64 = trimmed
                .parse()
                .map_err(|e| Error::contract(format!("row {idx}: bad number ({e})")))?;
            data.push(value);
        }
        Self::new(data, t)
    }
}

impl MomentProblem for QuantileProblem {
    fn dim_theta(&self) -> usize {
        1
    }

    fn dim_moments(&self) -> usize {
        1
    }

    fn sample_size(&self) -> usize {
        self.sorted.len()
    }

    fn param_box(&self) -> &ParamBox {
        &self.bounds
    }

    fn moments(&self, theta: &ParamVector) -> Result<MomentValue> {
        MomentValue::new(vec![self.raw_moment(theta.values()[0])])
    }

    fn smoothed_closed_form(
        &self,
        theta: &ParamVector,
        eps: f64,
    ) -> Option<Result<(MomentValue, DMatrix<f64>)>> {
        let (m, f) = self.smoothed(theta.values()[0], eps);
        Some(
            MomentValue::from_dvector(DVector::from_vec(vec![m]))
                .map(|mv| (mv, DMatrix::from_element(1, 1, f))),
        )
    }
}
