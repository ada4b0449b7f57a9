//! Closed-form toy problems for benchmarking and calibration tests.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::moments::{MomentProblem, MomentValue, ParamBox, ParamVector};

/// One-dimensional moment map with two basins,
/// `g(theta) = (theta^2 - 1, c (theta - 1))`.
///
/// Both `theta = +-1` zero the first moment; the second selects `theta = 1`
/// as the unique exact root, leaving a spurious local minimum of the
/// objective near `theta = -0.85`. Local Gauss-Newton iterations started
/// left of the objective's interior maximum stall there; the covering step
/// escapes.
#[derive(Debug, Clone)]
pub struct TwoBasinProblem {
    weight: f64,
    bounds: ParamBox,
}

impl TwoBasinProblem {
    /// `weight` is the second-moment coefficient `c > 0`; the search box is
    /// `[lo, hi]` (must contain 1).
    pub fn new(weight: f64, lo: f64, hi: f64) -> Result<Self> {
        if weight.is_nan() || weight <= 0.0 {
            return Err(Error::contract("weight must be positive"));
        }
        Ok(TwoBasinProblem { weight, bounds: ParamBox::new(vec![lo], vec![hi])? })
    }

    /// The benchmark instance: `c = 0.5` on `[-3, 3]`.
    pub fn benchmark() -> Self {
        Self::new(0.5, -3.0, 3.0).expect("valid benchmark bounds")
    }

    /// Second-moment coefficient.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// The exact root of the moment map.
    pub fn global_root(&self) -> f64 {
        1.0
    }
}

impl MomentProblem for TwoBasinProblem {
    fn dim_theta(&self) -> usize {
        1
    }

    fn dim_moments(&self) -> usize {
        2
    }

    fn sample_size(&self) -> usize {
        100
    }

    fn param_box(&self) -> &ParamBox {
        &self.bounds
    }

    fn moments(&self, theta: &ParamVector) -> Result<MomentValue> {
        let th = theta.values()[0];
        MomentValue::new(vec![th * th - 1.0, self.weight * (th - 1.0)])
    }

    fn smoothed_closed_form(
        &self,
        theta: &ParamVector,
        eps: f64,
    ) -> Option<Result<(MomentValue, DMatrix<f64>)>> {
        // E[(theta + eps Z)^2 - 1] = theta^2 + eps^2 - 1; the linear moment
        // smooths to itself
        let th = theta.values()[0];
        let m = MomentValue::new(vec![th * th + eps * eps - 1.0, self.weight * (th - 1.0)]);
        let jac = DMatrix::from_column_slice(2, 1, &[2.0 * th, self.weight]);
        Some(m.map(|mv| (mv, jac)))
    }
}

/// Affine moment map `g(theta) = A theta + offset`, with the smoothing
/// closed form equal to the map itself (Gaussian smoothing of an affine
/// function changes nothing). Used as the well-conditioned smooth baseline
/// in rate and recovery tests.
#[derive(Debug, Clone)]
pub struct LinearMomentProblem {
    a: DMatrix<f64>,
    offset: DVector<f64>,
    bounds: ParamBox,
}

impl LinearMomentProblem {
    /// Build from the map and box; requires `p >= d >= 1`.
    pub fn new(a: DMatrix<f64>, offset: DVector<f64>, bounds: ParamBox) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::contract("matrix must be nonempty"));
        }
        if a.nrows() < a.ncols() {
            return Err(Error::contract("under-identified: p < d_theta"));
        }
        if offset.len() != a.nrows() || bounds.dim() != a.ncols() {
            return Err(Error::contract("dimension mismatch in linear problem"));
        }
        Ok(LinearMomentProblem { a, offset, bounds })
    }

    /// Build the map with a prescribed root: `offset = -A root`.
    pub fn with_root(a: DMatrix<f64>, root: &ParamVector, bounds: ParamBox) -> Result<Self> {
        let offset = -(&a * root.as_dvector());
        Self::new(a, offset, bounds)
    }

    /// The map matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }
}

impl MomentProblem for LinearMomentProblem {
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
        MomentValue::from_dvector(&self.a * theta.as_dvector() + &self.offset)
    }

    fn smoothed_closed_form(
        &self,
        theta: &ParamVector,
        _eps: f64,
    ) -> Option<Result<(MomentValue, DMatrix<f64>)>> {
        Some(self.moments(theta).map(|m| (m, self.a.clone())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_basin_root_and_local_minimum() {
        let p = TwoBasinProblem::benchmark();
        let at = |th: f64| {
            p.moments(&ParamVector::new(vec![th]).unwrap())
                .unwrap()
                .as_dvector()
                .norm()
        };
        assert_eq!(at(1.0), 0.0);
        // the critical points of ||g||^2 other than the root: a local
        // minimum near -0.854 and a local maximum near -0.146
        assert!(at(-0.8536) < at(-0.7));
        assert!(at(-0.8536) < at(-1.1));
        assert!(at(-0.8536) > 0.5);
    }

    #[test]
    fn two_basin_smoothing_shifts_quadratic_moment() {
        let p = TwoBasinProblem::benchmark();
        let theta = ParamVector::new(vec![0.5]).unwrap();
        let (m, jac) = p.smoothed_closed_form(&theta, 0.2).unwrap().unwrap();
        assert!((m.values()[0] - (0.25 + 0.04 - 1.0)).abs() < 1e-15);
        assert_eq!(jac[(0, 0)], 1.0);
        assert_eq!(jac[(1, 0)], 0.5);
    }

    #[test]
    fn linear_problem_root_is_zero_of_moments() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.1, -0.3, 1.0]);
        let root = ParamVector::new(vec![0.7, -0.4]).unwrap();
        let p = LinearMomentProblem::with_root(a, &root, ParamBox::cube(-5.0, 5.0, 2).unwrap())
            .unwrap();
        let g = p.moments(&root).unwrap();
        assert!(g.as_dvector().norm() < 1e-14);
    }
}
