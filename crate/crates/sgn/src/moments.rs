//! The moment-condition problem abstraction: parameter boxes, weighted
//! norms, and the [`MomentProblem`] trait implemented by every estimation
//! problem in this crate.
//!
//! A problem maps a parameter vector `theta` to sample moments
//! `gbar_n(theta)` whose weighted norm the solver drives to zero. Simulated
//! problems must freeze their simulation draws at construction (common
//! random numbers) so that `moments` is a pure function of `theta`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Axis-aligned parameter box `[lower_1, upper_1] x ... x [lower_d, upper_d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBox {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl ParamBox {
    /// Build a box from per-coordinate bounds. Requires `lower[i] < upper[i]`
    /// and at least one coordinate.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::contract(format!(
                "parameter box needs matching nonempty bounds, got {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::contract(format!(
                    "parameter box coordinate {i} invalid: [{lo}, {hi}]"
                )));
            }
        }
        Ok(ParamBox {
            lower: DVector::from_vec(lower),
            upper: DVector::from_vec(upper),
        })
    }

    /// The cube `[lo, hi]^dim`.
    pub fn cube(lo: f64, hi: f64, dim: usize) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    /// Number of coordinates.
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Lower bounds.
    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    /// Upper bounds.
    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    /// Whether `theta` lies inside the box (boundary included).
    pub fn contains(&self, theta: &ParamVector) -> bool {
        theta.dim() == self.dim()
            && theta
                .as_dvector()
                .iter()
                .enumerate()
                .all(|(i, &v)| self.lower[i] <= v && v <= self.upper[i])
    }

    /// Affinely rescale a point of the unit cube onto the box.
    pub fn from_unit_cube(&self, u: &[f64]) -> ParamVector {
        debug_assert_eq!(u.len(), self.dim());
        let values = DVector::from_fn(self.dim(), |i, _| {
            self.lower[i] + u[i] * (self.upper[i] - self.lower[i])
        });
        ParamVector(values)
    }
}

/// A point of the parameter space; entries are finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(DVector<f64>);

impl ParamVector {
    /// Validate and wrap a parameter vector.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::contract("parameter vector must be nonempty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("parameter vector has non-finite entries"));
        }
        Ok(ParamVector(DVector::from_vec(values)))
    }

    /// Wrap an nalgebra vector, validating finiteness.
    pub fn from_dvector(values: DVector<f64>) -> Result<Self> {
        Self::new(values.data.into())
    }

    /// Number of coordinates.
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Borrow the underlying vector.
    pub fn as_dvector(&self) -> &DVector<f64> {
        &self.0
    }

    /// Coordinates as a slice.
    pub fn values(&self) -> &[f64] {
        self.0.as_slice()
    }

    /// Consume into the underlying vector.
    pub fn into_dvector(self) -> DVector<f64> {
        self.0
    }
}

/// A vector of sample moments `gbar_n(theta)`; entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentValue(DVector<f64>);

impl MomentValue {
    /// Validate and wrap a moment vector.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::from_dvector(DVector::from_vec(values))
    }

    /// Wrap an nalgebra vector, validating finiteness.
    pub fn from_dvector(values: DVector<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::eval("moment vector must be nonempty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::eval("moment vector has non-finite entries"));
        }
        Ok(MomentValue(values))
    }

    /// Number of moments.
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Borrow the underlying vector.
    pub fn as_dvector(&self) -> &DVector<f64> {
        &self.0
    }

    /// Entries as a slice.
    pub fn values(&self) -> &[f64] {
        self.0.as_slice()
    }
}

/// Symmetric, strictly positive definite weighting matrix `W_n`.
///
/// Positive definiteness is checked at construction by an unpivoted
/// Cholesky factorization with a `1e-10` tolerance on the pivots; the
/// factor is kept so the solver can form `W = L L'` square roots cheaply.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    entries: DMatrix<f64>,
    /// Lower Cholesky factor, `entries = chol * chol'`.
    chol: DMatrix<f64>,
}

const PIVOT_TOL: f64 = 1e-10;

impl WeightMatrix {
    /// Validate symmetry and positive definiteness.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let p = entries.nrows();
        if p == 0 || entries.ncols() != p {
            return Err(Error::contract(format!(
                "weight matrix must be square and nonempty, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let scale = entries.iter().fold(0.0_f64, |a, &x| a.max(x.abs())).max(1.0);
        for i in 0..p {
            for j in (i + 1)..p {
                if (entries[(i, j)] - entries[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::contract(format!(
                        "weight matrix is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let chol = cholesky_lower(&entries)?;
        Ok(WeightMatrix { entries, chol })
    }

    /// The identity weighting of dimension `p`.
    pub fn identity(p: usize) -> Self {
        WeightMatrix {
            entries: DMatrix::identity(p, p),
            chol: DMatrix::identity(p, p),
        }
    }

    /// Diagonal weighting from strictly positive entries.
    pub fn diagonal(diag: Vec<f64>) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_vec(diag)))
    }

    /// Moment dimension `p`.
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Borrow the matrix.
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Lower Cholesky factor `L` with `W = L L'`.
    pub fn cholesky_lower(&self) -> &DMatrix<f64> {
        &self.chol
    }
}

/// Plain unpivoted Cholesky with a tolerance on the pivots; fails if any
/// pivot drops to `1e-10` or below, which rejects indefinite or nearly
/// singular weightings.
fn cholesky_lower(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = a.nrows();
    let mut l = DMatrix::zeros(p, p);
    for j in 0..p {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if diag <= PIVOT_TOL {
            return Err(Error::contract(format!(
                "weight matrix is not strictly positive definite (pivot {j} = {diag:.3e})"
            )));
        }
        let d = diag.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..p {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// An estimation problem: sample size, parameter box, and the moment map.
///
/// Implementations must be pure in `theta`: repeated calls at the same
/// point return identical values (frozen simulation draws), and calls must
/// be safe from multiple threads.
pub trait MomentProblem: Send + Sync {
    /// Parameter dimension `d_theta`.
    fn dim_theta(&self) -> usize;

    /// Moment dimension `p >= d_theta`.
    fn dim_moments(&self) -> usize;

    /// Sample size `n` behind the moments.
    fn sample_size(&self) -> usize;

    /// The parameter box the covering sequence searches over.
    fn param_box(&self) -> &ParamBox;

    /// Sample moments `gbar_n(theta)`. Evaluation slightly outside the box
    /// must be tolerated (the smoothed Jacobian perturbs points by
    /// `eps * Z` without clamping).
    fn moments(&self, theta: &ParamVector) -> Result<MomentValue>;

    /// Closed-form smoothed moments and Jacobian `(gbar_eps, G_eps)` when
    /// the problem admits them, `None` otherwise.
    fn smoothed_closed_form(
        &self,
        theta: &ParamVector,
        eps: f64,
    ) -> Option<Result<(MomentValue, DMatrix<f64>)>> {
        let _ = (theta, eps);
        None
    }

    /// Smoothed moments `gbar_eps` alone, for problems that can smooth their
    /// moments without exposing a Jacobian (e.g. smoothing inside a
    /// simulator). Defaults to the closed form when available.
    fn smoothed_moments(&self, theta: &ParamVector, eps: f64) -> Option<Result<MomentValue>> {
        self.smoothed_closed_form(theta, eps)
            .map(|r| r.map(|(m, _)| m))
    }
}

/// Weighted norm `||v||_W = sqrt(v' W v)`.
pub fn weighted_norm(v: &MomentValue, w: &WeightMatrix) -> Result<f64> {
    if v.dim() != w.dim() {
        return Err(Error::contract(format!(
            "weighted_norm dimension mismatch: vector {} vs matrix {}",
            v.dim(),
            w.dim()
        )));
    }
    let q = (v.as_dvector().transpose() * w.entries() * v.as_dvector())[(0, 0)];
    // clip tiny negative round-off
    Ok(q.max(0.0).sqrt())
}

/// Sample objective `Q_n(theta) = ||gbar_n(theta)||_W^2`.
pub fn objective(problem: &dyn MomentProblem, theta: &ParamVector, w: &WeightMatrix) -> Result<f64> {
    let g = problem.moments(theta)?;
    let norm = weighted_norm(&g, w)?;
    Ok(norm * norm)
}

/// Coordinatewise clamp of `theta` onto the box; interior points come back
/// unchanged.
pub fn clamp_to_box(theta: &ParamVector, bounds: &ParamBox) -> ParamVector {
    debug_assert_eq!(theta.dim(), bounds.dim());
    let values = DVector::from_fn(theta.dim(), |i, _| {
        theta.as_dvector()[i].clamp(bounds.lower()[i], bounds.upper()[i])
    });
    ParamVector(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(values: &[f64]) -> ParamVector {
        ParamVector::new(values.to_vec()).unwrap()
    }

    fn mv(values: &[f64]) -> MomentValue {
        MomentValue::new(values.to_vec()).unwrap()
    }

    #[test]
    fn weighted_norm_euclidean() {
        let w = WeightMatrix::identity(2);
        assert_eq!(weighted_norm(&mv(&[3.0, 4.0]), &w).unwrap(), 5.0);
    }

    #[test]
    fn weighted_norm_diagonal() {
        let w = WeightMatrix::diagonal(vec![4.0, 1.0]).unwrap();
        assert_eq!(weighted_norm(&mv(&[1.0, 0.0]), &w).unwrap(), 2.0);
    }

    #[test]
    fn weighted_norm_zero_vector() {
        let w = WeightMatrix::diagonal(vec![2.0, 3.0]).unwrap();
        assert_eq!(weighted_norm(&mv(&[0.0, 0.0]), &w).unwrap(), 0.0);
    }

    #[test]
    fn weighted_norm_dimension_mismatch() {
        let w = WeightMatrix::identity(3);
        assert!(matches!(
            weighted_norm(&mv(&[1.0, 2.0]), &w),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn weight_matrix_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(WeightMatrix::new(m).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]);
        assert!(WeightMatrix::new(asym).is_err());
    }

    #[test]
    fn cholesky_factor_reconstructs() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let w = WeightMatrix::new(m.clone()).unwrap();
        let l = w.cholesky_lower();
        assert!((l * l.transpose() - m).norm() < 1e-12);
    }

    #[test]
    fn clamp_examples() {
        let b = ParamBox::cube(0.0, 1.0, 2).unwrap();
        assert_eq!(clamp_to_box(&pv(&[2.0, -1.0]), &b), pv(&[1.0, 0.0]));
        assert_eq!(clamp_to_box(&pv(&[0.5, 0.5]), &b), pv(&[0.5, 0.5]));
        assert_eq!(clamp_to_box(&pv(&[0.0, 1.0]), &b), pv(&[0.0, 1.0]));
    }

    #[test]
    fn box_rejects_bad_bounds() {
        assert!(ParamBox::new(vec![0.0], vec![0.0]).is_err());
        assert!(ParamBox::new(vec![1.0], vec![0.0]).is_err());
        assert!(ParamBox::new(vec![], vec![]).is_err());
    }

    #[test]
    fn param_vector_rejects_non_finite() {
        assert!(ParamVector::new(vec![f64::NAN]).is_err());
        assert!(ParamVector::new(vec![f64::INFINITY, 0.0]).is_err());
    }

    /// `gbar(theta) = theta - 1` in one dimension.
    struct LinearRoot;

    impl MomentProblem for LinearRoot {
        fn dim_theta(&self) -> usize {
            1
        }
        fn dim_moments(&self) -> usize {
            1
        }
        fn sample_size(&self) -> usize {
            1
        }
        fn param_box(&self) -> &ParamBox {
            static BOX: std::sync::OnceLock<ParamBox> = std::sync::OnceLock::new();
            BOX.get_or_init(|| ParamBox::cube(-10.0, 10.0, 1).unwrap())
        }
        fn moments(&self, theta: &ParamVector) -> Result<MomentValue> {
            MomentValue::new(vec![theta.values()[0] - 1.0])
        }
    }

    #[test]
    fn objective_is_squared_norm() {
        let w = WeightMatrix::identity(1);
        assert_eq!(objective(&LinearRoot, &pv(&[1.0]), &w).unwrap(), 0.0);
        assert_eq!(objective(&LinearRoot, &pv(&[3.0]), &w).unwrap(), 4.0);
        // determinism across repeated calls
        let a = objective(&LinearRoot, &pv(&[0.3]), &w).unwrap();
        let b = objective(&LinearRoot, &pv(&[0.3]), &w).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    proptest! {
        #[test]
        fn norm_scales_with_sqrt_of_weight(c in 0.01_f64..100.0, x in -5.0_f64..5.0, y in -5.0_f64..5.0) {
            let w1 = WeightMatrix::identity(2);
            let wc = WeightMatrix::new(DMatrix::identity(2, 2) * c).unwrap();
            let v = mv(&[x, y]);
            let lhs = weighted_norm(&v, &wc).unwrap();
            let rhs = c.sqrt() * weighted_norm(&v, &w1).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
        }

        #[test]
        fn norm_triangle_inequality(
            a in proptest::collection::vec(-10.0_f64..10.0, 3),
            b in proptest::collection::vec(-10.0_f64..10.0, 3),
        ) {
            let w = WeightMatrix::new(DMatrix::from_row_slice(3, 3, &[
                2.0, 0.3, 0.0,
                0.3, 1.0, 0.1,
                0.0, 0.1, 0.5,
            ])).unwrap();
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let lhs = weighted_norm(&mv(&sum), &w).unwrap();
            let rhs = weighted_norm(&mv(&a), &w).unwrap() + weighted_norm(&mv(&b), &w).unwrap();
            prop_assert!(lhs <= rhs + 1e-10);
        }

        #[test]
        fn clamp_is_idempotent(x in -20.0_f64..20.0, y in -20.0_f64..20.0) {
            let b = ParamBox::new(vec![-1.0, 0.0], vec![2.0, 1.0]).unwrap();
            let once = clamp_to_box(&pv(&[x, y]), &b);
            let twice = clamp_to_box(&once, &b);
            prop_assert_eq!(once, twice.clone());
            prop_assert!(b.contains(&twice));
        }
    }
}
