//! Panel dynamic discrete choice estimated by simulated method of moments.
//!
//! Data generating process:
//!
//! ```text
//! y_it = 1{ x_it' beta + u_it > 0 },   u_it = e_it + rho e_{it-1},   e_it ~ N(0,1)
//! ```
//!
//! with iid strictly exogenous regressors `x_it`. The model is estimated by
//! matching pooled OLS coefficients of `y_it` on `(x_it, y_{it-1}, 1)`
//! between the observed and a simulated panel. The simulation reuses the
//! observed regressors and freezes its shocks at construction (common
//! random numbers), so the moments are a deterministic, piecewise-constant
//! function of `theta = (beta, rho)`.
//!
//! Period `t = 1`'s lagged regressor comes from one simulated burn-in
//! period rather than an arbitrary constant.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::moments::{MomentProblem, MomentValue, ParamBox, ParamVector};
use crate::seeds;
use crate::smoothing::GaussianKernel;

/// Dimensions and true parameters of a DDC design.
#[derive(Debug, Clone, PartialEq)]
pub struct DdcDesign {
    /// Individuals.
    pub n: usize,
    /// Regression periods `T` (plus one burn-in period).
    pub periods: usize,
    /// Number of regressors.
    pub beta_dim: usize,
    /// True slope coefficients.
    pub beta_true: Vec<f64>,
    /// True shock autocorrelation.
    pub rho_true: f64,
}

impl DdcDesign {
    /// The benchmark design: the first five slopes are `1/sqrt(5)`, the
    /// rest zero, `rho = 0.7`.
    pub fn benchmark(n: usize, periods: usize, beta_dim: usize) -> Self {
        let mut beta_true = vec![0.0; beta_dim];
        for b in beta_true.iter_mut().take(5.min(beta_dim)) {
            *b = 1.0 / 5.0_f64.sqrt();
        }
        DdcDesign { n, periods, beta_dim, beta_true, rho_true: 0.7 }
    }

    /// The true parameter vector `(beta, rho)`.
    pub fn theta_dagger(&self) -> ParamVector {
        let mut v = self.beta_true.clone();
        v.push(self.rho_true);
        ParamVector::new(v).expect("true parameters are finite")
    }
}

/// A generated DDC dataset with frozen simulation shocks.
#[derive(Debug, Clone)]
pub struct DdcProblem {
    design: DdcDesign,
    /// Regressors, row `t * n + i` for `t = 0..=T` (period 0 is burn-in).
    x: DMatrix<f64>,
    /// Observed outcomes in the same row layout.
    y_obs: DVector<f64>,
    /// Simulation shocks, entry `(i, t + 1)` for `t = -1..=T`.
    e_sim: DMatrix<f64>,
    /// Pooled OLS coefficients on the observed panel.
    obs_coefs: DVector<f64>,
    bounds: ParamBox,
}

impl DdcProblem {
    /// Generate observed data at the true parameters (stream `data_seed`)
    /// and freeze an independent set of simulation shocks (`sim_seed`).
    pub fn generate(design: DdcDesign, data_seed: u64, sim_seed: u64) -> Result<Self> {
        if design.n == 0 || design.periods == 0 || design.beta_dim == 0 {
            return Err(Error::config("DDC design dimensions must be positive"));
        }
        if design.beta_true.len() != design.beta_dim {
            return Err(Error::config(format!(
                "beta_true has {} entries, expected {}",
                design.beta_true.len(),
                design.beta_dim
            )));
        }
        if design.rho_true.abs() >= 0.95 {
            return Err(Error::config("|rho_true| must stay below 0.95"));
        }
        let rows = (design.periods + 1) * design.n;
        let mut data_rng = seeds::stream(&[data_seed, seeds::role::DATA]);
        let x = DMatrix::from_fn(rows, design.beta_dim, |_, _| StandardNormal.sample(&mut data_rng));
        let e_obs = DMatrix::from_fn(design.n, design.periods + 2, |_, _| {
            StandardNormal.sample(&mut data_rng)
        });
        let mut sim_rng = seeds::stream(&[sim_seed, seeds::role::SIM]);
        let e_sim = DMatrix::from_fn(design.n, design.periods + 2, |_, _| {
            StandardNormal.sample(&mut sim_rng)
        });

        let mut bounds_lo = vec![-2.0; design.beta_dim];
        let mut bounds_hi = vec![2.0; design.beta_dim];
        bounds_lo.push(-0.95);
        bounds_hi.push(0.95);
        let bounds = ParamBox::new(bounds_lo, bounds_hi)?;

        let mut problem = DdcProblem {
            design: design.clone(),
            x,
            y_obs: DVector::zeros(rows),
            e_sim,
            obs_coefs: DVector::zeros(design.beta_dim + 2),
            bounds,
        };
        let theta_true = design.theta_dagger();
        problem.y_obs = problem.simulate_with(&theta_true, &e_obs, None);
        problem.obs_coefs = problem.lagged_pooled_ols(&problem.y_obs)?;
        Ok(problem)
    }

    /// The design behind this dataset.
    pub fn design(&self) -> &DdcDesign {
        &self.design
    }

    /// Regressors, row `t * n + i` for `t = 0..=T`.
    pub fn regressors(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Observed outcomes in the same layout.
    pub fn observed_y(&self) -> &DVector<f64> {
        &self.y_obs
    }

    /// Frozen simulation shocks, entry `(i, t + 1)` for `t = -1..=T`.
    pub fn sim_shocks(&self) -> &DMatrix<f64> {
        &self.e_sim
    }

    /// Pooled OLS coefficients of the observed panel (computed once).
    pub fn observed_coefficients(&self) -> &DVector<f64> {
        &self.obs_coefs
    }

    /// Reassemble a problem from dumped pieces; revalidates shapes and
    /// recomputes the observed-panel coefficients.
    pub fn from_parts(
        design: DdcDesign,
        x: DMatrix<f64>,
        y_obs: DVector<f64>,
        e_sim: DMatrix<f64>,
    ) -> Result<Self> {
        let rows = (design.periods + 1) * design.n;
        if x.nrows() != rows || x.ncols() != design.beta_dim {
            return Err(Error::contract("regressor matrix shape mismatch"));
        }
        if y_obs.len() != rows {
            return Err(Error::contract("observed outcome length mismatch"));
        }
        if e_sim.nrows() != design.n || e_sim.ncols() != design.periods + 2 {
            return Err(Error::contract("simulation shock matrix shape mismatch"));
        }
        let mut bounds_lo = vec![-2.0; design.beta_dim];
        let mut bounds_hi = vec![2.0; design.beta_dim];
        bounds_lo.push(-0.95);
        bounds_hi.push(0.95);
        let mut problem = DdcProblem {
            design: design.clone(),
            x,
            y_obs,
            e_sim,
            obs_coefs: DVector::zeros(design.beta_dim + 2),
            bounds: ParamBox::new(bounds_lo, bounds_hi)?,
        };
        problem.obs_coefs = problem.lagged_pooled_ols(&problem.y_obs)?;
        Ok(problem)
    }

    /// Dump the dataset as CSV: rows `(i, t)` for `t = -1..=T`, columns
    /// `i, t, e_sim, y_obs, x_0..`. The `t = -1` row carries only the
    /// pre-sample simulation shock; its outcome and regressor fields are
    /// empty.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        write!(out, "i,t,e_sim,y_obs")?;
        for j in 0..self.design.beta_dim {
            write!(out, ",x_{j}")?;
        }
        writeln!(out)?;
        for i in 0..self.design.n {
            for t in -1..=(self.design.periods as i64) {
                write!(out, "{i},{t},{:.17e}", self.e_sim[(i, (t + 1) as usize)])?;
                if t < 0 {
                    write!(out, ",")?;
                    for _ in 0..self.design.beta_dim {
                        write!(out, ",")?;
                    }
                } else {
                    let r = t as usize * self.design.n + i;
                    write!(out, ",{:.17e}", self.y_obs[r])?;
                    for j in 0..self.design.beta_dim {
                        write!(out, ",{:.17e}", self.x[(r, j)])?;
                    }
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }

    /// Load a dataset dumped by [`DdcProblem::write_csv`].
    pub fn read_csv<R: std::io::BufRead>(input: R, design: DdcDesign) -> Result<Self> {
        let rows = (design.periods + 1) * design.n;
        let mut x = DMatrix::zeros(rows, design.beta_dim);
        let mut y_obs = DVector::zeros(rows);
        let mut e_sim = DMatrix::zeros(design.n, design.periods + 2);
        let mut seen = 0usize;
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            if idx == 0 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != 4 + design.beta_dim {
                return Err(Error::contract(format!("row {idx}: wrong field count")));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|e| Error::contract(format!("row {idx}: bad number ({e})")))
            };
            let i: usize = fields[0]
                .parse()
                .map_err(|_| Error::contract(format!("row {idx}: bad index")))?;
            let t: i64 = fields[1]
                .parse()
                .map_err(|_| Error::contract(format!("row {idx}: bad period")))?;
            if i >= design.n || t < -1 || t > design.periods as i64 {
                return Err(Error::contract(format!("row {idx}: index out of range")));
            }
            e_sim[(i, (t + 1) as usize)] = parse(fields[2])?;
            if t >= 0 {
                let r = t as usize * design.n + i;
                y_obs[r] = parse(fields[3])?;
                for j in 0..design.beta_dim {
                    x[(r, j)] = parse(fields[4 + j])?;
                }
            }
            seen += 1;
        }
        if seen != design.n * (design.periods + 2) {
            return Err(Error::contract(format!(
                "expected {} data rows, found {seen}",
                design.n * (design.periods + 2)
            )));
        }
        Self::from_parts(design, x, y_obs, e_sim)
    }

    /// Simulate a panel at `theta` with the given shocks. `smooth_eps`
    /// replaces the indicator by `Phi(latent / eps)`.
    fn simulate_with(
        &self,
        theta: &ParamVector,
        shocks: &DMatrix<f64>,
        smooth_eps: Option<f64>,
    ) -> DVector<f64> {
        let d = self.design.beta_dim;
        let beta = &theta.values()[..d];
        let rho = theta.values()[d];
        let rows = (self.design.periods + 1) * self.design.n;
        let mut y = DVector::zeros(rows);
        for t in 0..=self.design.periods {
            for i in 0..self.design.n {
                let r = t * self.design.n + i;
                let mut latent = shocks[(i, t + 1)] + rho * shocks[(i, t)];
                for (j, b) in beta.iter().enumerate() {
                    latent += self.x[(r, j)] * b;
                }
                y[r] = match smooth_eps {
                    None => {
                        if latent > 0.0 {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    Some(eps) => GaussianKernel::cdf(latent / eps),
                };
            }
        }
        y
    }

    /// Pooled OLS of `y_it` on `(x_it, y_{it-1}, intercept)` over
    /// `t = 1..=T`, solved through the normal equations.
    fn lagged_pooled_ols(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let d = self.design.beta_dim;
        let k = d + 2;
        let n = self.design.n;
        let mut xtx = DMatrix::zeros(k, k);
        let mut xty = DVector::zeros(k);
        let mut row = vec![0.0; k];
        for t in 1..=self.design.periods {
            for i in 0..n {
                let r = t * n + i;
                let r_lag = (t - 1) * n + i;
                for (j, slot) in row.iter_mut().enumerate().take(d) {
                    *slot = self.x[(r, j)];
                }
                row[d] = y[r_lag];
                row[d + 1] = 1.0;
                let yi = y[r];
                for a in 0..k {
                    xty[a] += row[a] * yi;
                    for b in a..k {
                        xtx[(a, b)] += row[a] * row[b];
                    }
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                xtx[(a, b)] = xtx[(b, a)];
            }
        }
        let chol = nalgebra::Cholesky::new(xtx)
            .ok_or_else(|| Error::eval("pooled OLS design is singular"))?;
        Ok(chol.solve(&xty))
    }

    fn check_theta(&self, theta: &ParamVector) -> Result<()> {
        if theta.dim() != self.design.beta_dim + 1 {
            return Err(Error::contract(format!(
                "theta has dimension {}, expected {}",
                theta.dim(),
                self.design.beta_dim + 1
            )));
        }
        Ok(())
    }

    /// Smoothed-simulator moments: the indicator in the simulated panel is
    /// replaced by `Phi(latent / eps)` (lagged values included); the
    /// observed panel is untouched. Continuous in `theta`.
    pub fn smoothed_eval(&self, theta: &ParamVector, eps: f64) -> Result<MomentValue> {
        self.check_theta(theta)?;
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::contract(format!("eps must be positive, got {eps}")));
        }
        let y_sim = self.simulate_with(theta, &self.e_sim, Some(eps));
        let sim_coefs = self.lagged_pooled_ols(&y_sim)?;
        MomentValue::from_dvector(&self.obs_coefs - sim_coefs)
    }
}

impl MomentProblem for DdcProblem {
    fn dim_theta(&self) -> usize {
        self.design.beta_dim + 1
    }

    fn dim_moments(&self) -> usize {
        self.design.beta_dim + 2
    }

    fn sample_size(&self) -> usize {
        self.design.n
    }

    fn param_box(&self) -> &ParamBox {
        &self.bounds
    }

    fn moments(&self, theta: &ParamVector) -> Result<MomentValue> {
        self.check_theta(theta)?;
        let y_sim = self.simulate_with(theta, &self.e_sim, None);
        let sim_coefs = self.lagged_pooled_ols(&y_sim)?;
        MomentValue::from_dvector(&self.obs_coefs - sim_coefs)
    }

    fn smoothed_moments(&self, theta: &ParamVector, eps: f64) -> Option<Result<MomentValue>> {
        Some(self.smoothed_eval(theta, eps))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_problem(data_seed: u64, sim_seed: u64) -> DdcProblem {
        DdcProblem::generate(DdcDesign::benchmark(60, 5, 4), data_seed, sim_seed).unwrap()
    }

    /// Independent pooled OLS through an SVD least-squares solve.
    fn ols_oracle(problem: &DdcProblem, y: &DVector<f64>) -> DVector<f64> {
        let d = problem.design().beta_dim;
        let n = problem.design().n;
        let t_max = problem.design().periods;
        let k = d + 2;
        let rows = t_max * n;
        let mut design = DMatrix::zeros(rows, k);
        let mut target = DVector::zeros(rows);
        for t in 1..=t_max {
            for i in 0..n {
                let out = (t - 1) * n + i;
                let r = t * n + i;
                for j in 0..d {
                    design[(out, j)] = problem.regressors()[(r, j)];
                }
                design[(out, d)] = y[(t - 1) * n + i];
                design[(out, d + 1)] = 1.0;
                target[out] = y[r];
            }
        }
        design.svd(true, true).solve(&target, 1e-12).unwrap()
    }

    #[test]
    fn moments_are_common_random_number_deterministic() {
        let problem = small_problem(1, 2);
        let theta = ParamVector::new(vec![0.2, -0.1, 0.4, 0.0, 0.3]).unwrap();
        let a = problem.moments(&theta).unwrap();
        let b = problem.moments(&theta).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        let sa = problem.smoothed_eval(&theta, 0.1).unwrap();
        let sb = problem.smoothed_eval(&theta, 0.1).unwrap();
        assert_eq!(sa.values(), sb.values());
    }

    #[test]
    fn rho_zero_matches_static_probit_oracle() {
        let problem = small_problem(3, 4);
        let d = problem.design().beta_dim;
        let beta = [0.5, -0.2, 0.1, 0.8];
        let mut theta = beta.to_vec();
        theta.push(0.0);
        let theta = ParamVector::new(theta).unwrap();
        let got = problem.moments(&theta).unwrap();

        // oracle: static simulation u_it = e_it with the same frozen shocks
        let rows = (problem.design().periods + 1) * problem.design().n;
        let mut y_static = DVector::zeros(rows);
        for t in 0..=problem.design().periods {
            for i in 0..problem.design().n {
                let r = t * problem.design().n + i;
                let mut latent = problem.sim_shocks()[(i, t + 1)];
                for (j, b) in beta.iter().enumerate().take(d) {
                    latent += problem.regressors()[(r, j)] * b;
                }
                y_static[r] = if latent > 0.0 { 1.0 } else { 0.0 };
            }
        }
        let obs = ols_oracle(&problem, problem.observed_y());
        let sim = ols_oracle(&problem, &y_static);
        let want = obs - sim;
        for (g, w) in got.values().iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-9, "{g} vs {w}");
        }
    }

    #[test]
    fn smoothed_moments_approach_raw_as_eps_vanishes() {
        let problem = small_problem(5, 6);
        for theta in [
            vec![0.3, 0.3, -0.4, 0.2, 0.5],
            vec![0.0, 0.1, 0.0, -0.3, -0.2],
        ] {
            let theta = ParamVector::new(theta).unwrap();
            let raw = problem.moments(&theta).unwrap();
            let smooth = problem.smoothed_eval(&theta, 1e-6).unwrap();
            let gap = (raw.as_dvector() - smooth.as_dvector()).norm();
            assert!(gap <= 1e-8, "gap {gap}");
        }
    }

    #[test]
    fn smoothed_moments_have_finite_difference_jacobian() {
        let problem = small_problem(7, 8);
        let theta = ParamVector::new(vec![0.4, -0.1, 0.2, 0.1, 0.35]).unwrap();
        let eps = 0.05;
        let h = 1e-6;
        for j in 0..theta.dim() {
            let mut up = theta.values().to_vec();
            let mut dn = up.clone();
            up[j] += h;
            dn[j] -= h;
            let m_up = problem.smoothed_eval(&ParamVector::new(up).unwrap(), eps).unwrap();
            let m_dn = problem.smoothed_eval(&ParamVector::new(dn).unwrap(), eps).unwrap();
            for k in 0..m_up.dim() {
                let fd = (m_up.values()[k] - m_dn.values()[k]) / (2.0 * h);
                assert!(fd.is_finite());
            }
        }
    }

    #[test]
    fn moments_invariant_to_individual_relabeling() {
        // permuting individuals permutes pooled OLS rows; coefficients are
        // mathematically unchanged (tiny float reassociation tolerated)
        let design = DdcDesign::benchmark(40, 4, 3);
        let problem = DdcProblem::generate(design.clone(), 9, 10).unwrap();
        let perm: Vec<usize> = (0..design.n).map(|i| (i * 17 + 5) % design.n).collect();
        let rows = (design.periods + 1) * design.n;
        let mut x_perm = DMatrix::zeros(rows, design.beta_dim);
        let mut e_perm = DMatrix::zeros(design.n, design.periods + 2);
        for t in 0..=design.periods {
            for i in 0..design.n {
                for j in 0..design.beta_dim {
                    x_perm[(t * design.n + i, j)] = problem.regressors()[(t * design.n + perm[i], j)];
                }
            }
        }
        for i in 0..design.n {
            for c in 0..design.periods + 2 {
                e_perm[(i, c)] = problem.sim_shocks()[(perm[i], c)];
            }
        }
        let mut y_perm = DVector::zeros(rows);
        for t in 0..=design.periods {
            for i in 0..design.n {
                y_perm[t * design.n + i] = problem.observed_y()[t * design.n + perm[i]];
            }
        }
        let permuted = DdcProblem {
            design: design.clone(),
            x: x_perm,
            y_obs: y_perm.clone(),
            e_sim: e_perm,
            obs_coefs: DVector::zeros(design.beta_dim + 2),
            bounds: problem.bounds.clone(),
        };
        let permuted = DdcProblem {
            obs_coefs: permuted.lagged_pooled_ols(&y_perm).unwrap(),
            ..permuted
        };
        let theta = ParamVector::new(vec![0.3, -0.2, 0.1, 0.55]).unwrap();
        let a = problem.moments(&theta).unwrap();
        let b = permuted.moments(&theta).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn csv_round_trip() {
        let design = DdcDesign::benchmark(20, 3, 2);
        let p = DdcProblem::generate(design.clone(), 11, 12).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let loaded = DdcProblem::read_csv(&buf[..], design).unwrap();
        let theta = ParamVector::new(vec![0.4, 0.1, 0.6]).unwrap();
        assert_eq!(
            p.moments(&theta).unwrap().values(),
            loaded.moments(&theta).unwrap().values()
        );
    }

    #[test]
    fn moment_norm_separates_truth_from_distant_point() {
        // over independent seed pairs, ||gbar(theta_dagger)|| is an order of
        // magnitude below ||gbar(0)||
        let design = DdcDesign::benchmark(250, 10, 14);
        let theta_zero = ParamVector::new(vec![0.0; 15]).unwrap();
        let mut norm_true = 0.0;
        let mut norm_zero = 0.0;
        let pairs = 50;
        for s in 0..pairs {
            let problem = DdcProblem::generate(design.clone(), 100 + s, 200 + s).unwrap();
            let theta_true = design.theta_dagger();
            norm_true += problem.moments(&theta_true).unwrap().as_dvector().norm();
            norm_zero += problem.moments(&theta_zero).unwrap().as_dvector().norm();
        }
        norm_true /= pairs as f64;
        norm_zero /= pairs as f64;
        assert!(
            norm_true <= norm_zero / 5.0,
            "mean norm at truth {norm_true} vs at zero {norm_zero}"
        );
    }
}
