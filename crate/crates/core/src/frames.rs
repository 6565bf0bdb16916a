//! Park-frame rotations between the local `dq` frame of an inverter and the
//! common `DQ` frame rotating at the nominal frequency.
//!
//! `x_DQ = T(delta) x_dq` with `T` the planar rotation by `delta`. Angles are
//! kept unwrapped; the controllers keep them small and the damping term of the
//! frequency law integrates `delta` directly.

use nalgebra::{DMatrix, Matrix2, Vector2};
use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

/// Frame angle in radians. The controller domain is the open interval
/// `(-pi/2, pi/2)`; values outside are representable so that unstable runs
/// can be observed, and [`Angle::in_domain`] reports the violation.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Angle(f64);

impl Angle {
    pub fn new(radians: f64) -> Self {
        Angle(radians)
    }

    /// Builds an angle, rejecting values outside `(-pi/2, pi/2)`.
    pub fn checked(radians: f64) -> Result<Self> {
        let a = Angle(radians);
        if a.in_domain() {
            Ok(a)
        } else {
            Err(Error::param(
                "delta",
                format!("|{radians}| must be below pi/2"),
            ))
        }
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    pub fn in_domain(self) -> bool {
        self.0.is_finite() && self.0.abs() < FRAC_PI_2
    }
}

impl From<f64> for Angle {
    fn from(v: f64) -> Self {
        Angle(v)
    }
}

/// A proper 2x2 rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationMatrix(Matrix2<f64>);

impl RotationMatrix {
    pub fn matrix(&self) -> &Matrix2<f64> {
        &self.0
    }

    pub fn apply(&self, v: &Vector2<f64>) -> Vector2<f64> {
        self.0 * v
    }

    pub fn transpose(&self) -> RotationMatrix {
        RotationMatrix(self.0.transpose())
    }
}

/// `J = [[0, 1], [-1, 0]]`.
pub fn j_matrix() -> Matrix2<f64> {
    Matrix2::new(0.0, 1.0, -1.0, 0.0)
}

/// `e = [1, 0]^T`, selects the direct component.
pub fn e_vector() -> Vector2<f64> {
    Vector2::new(1.0, 0.0)
}

/// `e_2 = [[0, 1], [0, 0]]`, moves the quadrature component onto the direct axis.
pub fn e2_matrix() -> Matrix2<f64> {
    Matrix2::new(0.0, 1.0, 0.0, 0.0)
}

pub fn rotation(delta: impl Into<Angle>) -> RotationMatrix {
    let (s, c) = delta.into().radians().sin_cos();
    RotationMatrix(Matrix2::new(c, -s, s, c))
}

/// `dT/d(delta) = J^T T(delta)`.
pub fn rotation_derivative(delta: impl Into<Angle>) -> Matrix2<f64> {
    j_matrix().transpose() * rotation(delta).0
}

/// `blkdiag(T(delta_1), ..., T(delta_n))`.
pub fn block_rotation(deltas: &[f64]) -> Result<DMatrix<f64>> {
    if deltas.is_empty() {
        return Err(Error::EmptySystem);
    }
    let n = deltas.len();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for (j, &d) in deltas.iter().enumerate() {
        out.fixed_view_mut::<2, 2>(2 * j, 2 * j)
            .copy_from(rotation(d).matrix());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_angle_is_identity() {
        assert_eq!(*rotation(0.0).matrix(), Matrix2::identity());
        assert_eq!(rotation_derivative(0.0), j_matrix().transpose());
    }

    #[test]
    fn quarter_turn() {
        let t = rotation(FRAC_PI_2);
        assert_relative_eq!(*t.matrix(), Matrix2::new(0.0, -1.0, 1.0, 0.0), epsilon = 1e-15);
        let v = t.apply(&e_vector());
        assert_relative_eq!(v, Vector2::new(0.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn table_angle_entry() {
        let t = rotation(-0.0231);
        assert!((t.matrix()[(0, 0)] - 0.99973).abs() < 5e-6);
    }

    #[test]
    fn derivative_at_quarter_pi() {
        let d = std::f64::consts::FRAC_PI_4;
        assert_eq!(rotation_derivative(d), j_matrix().transpose() * rotation(d).matrix());
    }

    #[test]
    fn block_rotation_shapes() {
        assert_eq!(block_rotation(&[0.0, 0.0]).unwrap(), DMatrix::identity(4, 4));
        let q = block_rotation(&[FRAC_PI_2]).unwrap();
        assert_relative_eq!(q[(0, 1)], -1.0, epsilon = 1e-15);
        assert_relative_eq!(q[(1, 0)], 1.0, epsilon = 1e-15);
        assert!(matches!(block_rotation(&[]), Err(Error::EmptySystem)));

        let deltas = [-0.0194, -0.0192, -0.0254, -0.025, -0.0268];
        let t = block_rotation(&deltas).unwrap();
        assert_eq!(t.shape(), (10, 10));
        assert!((t.transpose() * &t - DMatrix::identity(10, 10)).amax() < 1e-12);
    }

    #[test]
    fn checked_angle_domain() {
        assert!(Angle::checked(0.3).is_ok());
        assert!(Angle::checked(FRAC_PI_2).is_err());
        assert!(!Angle::new(f64::NAN).in_domain());
    }

    proptest! {
        #[test]
        fn rotation_is_orthogonal(d in -10.0f64..10.0) {
            let t = *rotation(d).matrix();
            prop_assert!((t.transpose() * t - Matrix2::identity()).amax() < 1e-12);
            prop_assert!((t.determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn derivative_matches_central_difference(d in -3.0f64..3.0) {
            let h = 1e-6;
            let fd = (rotation(d + h).matrix() - rotation(d - h).matrix()) / (2.0 * h);
            prop_assert!((fd - rotation_derivative(d)).amax() < 1e-8);
        }

        #[test]
        fn block_rotation_preserves_norm(
            deltas in proptest::collection::vec(-1.5f64..1.5, 1..6),
            seed in proptest::collection::vec(-100.0f64..100.0, 12),
        ) {
            let t = block_rotation(&deltas).unwrap();
            let v = nalgebra::DVector::from_iterator(2 * deltas.len(), seed.iter().copied().cycle().take(2 * deltas.len()));
            prop_assert!(((&t * &v).norm() - v.norm()).abs() < 1e-12 * v.norm().max(1.0));
        }
    }
}
