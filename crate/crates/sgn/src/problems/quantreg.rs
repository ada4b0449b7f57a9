//! Instrumental-variable quantile regression moments with per-observation
//! smoothing bandwidths.
//!
//! The raw moments are `(1/n) sum_i [1{y_i - x_i'theta > 0} - t] w_i`.
//! Smoothing the indicator of the residual in the direction of `theta`
//! makes the effective bandwidth observation specific, `eps ||x_i||_2`:
//!
//! ```text
//! gbar_eps(theta) = (1/n) sum_i [Phi((y_i - x_i'theta)/(eps ||x_i||)) - t] w_i
//! G_eps(theta)    = (-1/(n eps)) sum_i phi(...) w_i x_i' / ||x_i||
//! ```

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::moments::{MomentProblem, MomentValue, ParamBox, ParamVector};
use crate::smoothing::GaussianKernel;
use crate::{seeds, special};

/// Quantile regression with instruments `w_i`.
#[derive(Debug, Clone)]
pub struct QuantRegProblem {
    y: DVector<f64>,
    x: DMatrix<f64>,
    w: DMatrix<f64>,
    x_norms: Vec<f64>,
    t: f64,
    bounds: ParamBox,
}

impl QuantRegProblem {
    /// Wrap data `(y, x, w)` where `x` is `n x d` regressors and `w` is
    /// `n x p` instruments with `p >= d`. Rejects zero-norm regressor rows
    /// (they would make the observation bandwidth vanish).
    pub fn new(y: DVector<f64>, x: DMatrix<f64>, w: DMatrix<f64>, t: f64) -> Result<Self> {
        let n = y.len();
        if n == 0 || x.nrows() != n || w.nrows() != n {
            return Err(Error::contract("y, x, w must share a nonzero row count"));
        }
        if w.ncols() < x.ncols() {
            return Err(Error::contract(format!(
                "under-identified: p = {} instruments for d = {} regressors",
                w.ncols(),
                x.ncols()
            )));
        }
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::contract(format!("quantile level must lie in (0,1), got {t}")));
        }
        let mut x_norms = Vec::with_capacity(n);
        for i in 0..n {
            let norm = x.row(i).norm();
            if norm == 0.0 {
                return Err(Error::contract(format!("regressor row {i} has zero norm")));
            }
            x_norms.push(norm);
        }
        let d = x.ncols();
        Ok(QuantRegProblem { y, x, w, x_norms, t, bounds: ParamBox::cube(-10.0, 10.0, d)? })
    }

    /// Generate a just-identified design: intercept plus `d - 1` standard
    /// normal regressors, instruments `w = x`, errors `N(0, sigma^2)`.
    /// Returns the problem and the true t-th conditional quantile
    /// coefficients `beta + Phi^{-1}(t) sigma e_intercept`.
    pub fn generate(
        n: usize,
        beta: &[f64],
        sigma: f64,
        t: f64,
        seed: u64,
    ) -> Result<(Self, ParamVector)> {
        let d = beta.len();
        if d == 0 || n == 0 {
            return Err(Error::contract("generate needs n >= 1 and at least one coefficient"));
        }
        let mut rng = seeds::stream(&[seed, seeds::role::DATA]);
        let mut x = DMatrix::zeros(n, d);
        let mut y = DVector::zeros(n);
        for i in 0..n {
            x[(i, 0)] = 1.0;
            for j in 1..d {
                x[(i, j)] = StandardNormal.sample(&mut rng);
            }
            let noise: f64 = StandardNormal.sample(&mut rng);
            let mean: f64 = (0..d).map(|j| x[(i, j)] * beta[j]).sum();
            y[i] = mean + sigma * noise;
        }
        let mut truth = beta.to_vec();
        truth[0] += special::std_normal_quantile(t) * sigma;
        let w = x.clone();
        Ok((Self::new(y, x, w, t)?, ParamVector::new(truth)?))
    }

    /// Quantile level `t`.
    pub fn t(&self) -> f64 {
        self.t
    }

    /// Dump the dataset as CSV with columns `y, x_0.., w_0..`.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        write!(out, "y")?;
        for j in 0..self.x.ncols() {
            write!(out, ",x_{j}")?;
        }
        for k in 0..self.w.ncols() {
            write!(out, ",w_{k}")?;
        }
        writeln!(out)?;
        for i in 0..self.y.len() {
            write!(out, "{:.17e}", self.y[i])?;
            for j in 0..self.x.ncols() {
                write!(out, ",{:.17e}", self.x[(i, j)])?;
            }
            for k in 0..self.w.ncols() {
                write!(out, ",{:.17e}", self.w[(i, k)])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Load a dataset dumped by [`QuantRegProblem::write_csv`]; the
    /// regressor and instrument dimensions come from the header.
    pub fn read_csv<R: std::io::BufRead>(input: R, t: f64) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::contract("empty CSV"))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.first() != Some(&"y") {
            return Err(Error::contract("first CSV column must be `y`"));
        }
        let d = cols.iter().filter(|c| c.starts_with("x_")).count();
        let p = cols.iter().filter(|c| c.starts_with("w_")).count();
        if d == 0 || p == 0 || cols.len() != 1 + d + p {
            return Err(Error::contract("header must be y, x_0.., w_0.."));
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let values: Vec<f64> = line
                .trim()
                .split(',')
                .map(|v| {
                    v.parse()
                        .map_err(|e| Error::contract(format!("row {idx}: bad number ({e})")))
                })
                .collect::<Result<_>>()?;
            if values.len() != 1 + d + p {
                return Err(Error::contract(format!("row {idx}: wrong field count")));
            }
            rows.push(values);
        }
        let n = rows.len();
        let y = DVector::from_fn(n, |i, _| rows[i][0]);
        let x = DMatrix::from_fn(n, d, |i, j| rows[i][1 + j]);
        let w = DMatrix::from_fn(n, p, |i, k| rows[i][1 + d + k]);
        Self::new(y, x, w, t)
    }

    /// Raw indicator moments at `theta`.
    pub fn raw_moments(&self, theta: &ParamVector) -> DVector<f64> {
        let n = self.y.len();
        let p = self.w.ncols();
        let fitted = &self.x * theta.as_dvector();
        let mut acc = DVector::zeros(p);
        for i in 0..n {
            let ind = if self.y[i] - fitted[i] > 0.0 { 1.0 } else { 0.0 };
            let weight = ind - self.t;
            for k in 0..p {
                acc[k] += weight * self.w[(i, k)];
            }
        }
        acc / n as f64
    }

    /// Closed-form smoothed moments and Jacobian at bandwidth `eps`.
    pub fn smoothed_moments_jacobian(
        &self,
        theta: &ParamVector,
        eps: f64,
    ) -> (DVector<f64>, DMatrix<f64>) {
        debug_assert!(eps > 0.0);
        let n = self.y.len();
        let d = self.x.ncols();
        let p = self.w.ncols();
        let fitted = &self.x * theta.as_dvector();
        let mut moments = DVector::zeros(p);
        let mut jac = DMatrix::zeros(p, d);
        for i in 0..n {
            let bandwidth = eps * self.x_norms[i];
            let u = (self.y[i] - fitted[i]) / bandwidth;
            let cdf_w = GaussianKernel::cdf(u) - self.t;
            let pdf_scaled = GaussianKernel::pdf(u) / self.x_norms[i];
            for k in 0..p {
                moments[k] += cdf_w * self.w[(i, k)];
                for j in 0..d {
                    jac[(k, j)] -= pdf_scaled * self.w[(i, k)] * self.x[(i, j)];
                }
            }
        }
        (moments / n as f64, jac / (n as f64 * eps))
    }
}

impl MomentProblem for QuantRegProblem {
    fn dim_theta(&self) -> usize {
        self.x.ncols()
    }

    fn dim_moments(&self) -> usize {
        self.w.ncols()
    }

    fn sample_size(&self) -> usize {
        self.y.len()
    }

    fn param_box(&self) -> &ParamBox {
        &self.bounds
    }

    fn moments(&self, theta: &ParamVector) -> Result<MomentValue> {
        MomentValue::from_dvector(self.raw_moments(theta))
    }

    fn smoothed_closed_form(
        &self,
        theta: &ParamVector,
        eps: f64,
    ) -> Option<Result<(MomentValue, DMatrix<f64>)>> {
        let (m, jac) = self.smoothed_moments_jacobian(theta, eps);
        Some(MomentValue::from_dvector(m).map(|mv| (mv, jac)))
    }
}
