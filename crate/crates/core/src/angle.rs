//! Angle canonicalization and quadrant algebra on the complex plane.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maps an angle onto its representative in (−π, π].
pub fn wrap_angle(theta: f64) -> Result<f64> {
    if !theta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "cannot wrap non-finite angle {theta}"
        )));
    }
    Ok(wrap(theta))
}

/// Infallible variant of [`wrap_angle`] for values already known to be finite.
#[inline]
pub(crate) fn wrap(theta: f64) -> f64 {
    // fmod is exact, so canonical inputs pass through untouched.
    let r = theta % TAU;
    if r > PI {
        r - TAU
    } else if r <= -PI {
        r + TAU
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quadrant {
    Q1,
    Q2,
    Q3,
    Q4,
}

impl Quadrant {
    /// Quadrant of a complex value. Zero components count as nonnegative,
    /// so the axes fall into Q1, Q2 or Q4 deterministically.
    #[inline]
    pub fn of(re: f64, im: f64) -> Quadrant {
        match (re >= 0.0, im >= 0.0) {
            (true, true) => Quadrant::Q1,
            (false, true) => Quadrant::Q2,
            (false, false) => Quadrant::Q3,
            (true, false) => Quadrant::Q4,
        }
    }

    /// Quadrant of the unit phasor at `theta`.
    #[inline]
    pub fn of_angle(theta: f64) -> Quadrant {
        Quadrant::of(theta.cos(), theta.sin())
    }

    pub fn opposite(self) -> Quadrant {
        match self {
            Quadrant::Q1 => Quadrant::Q3,
            Quadrant::Q2 => Quadrant::Q4,
            Quadrant::Q3 => Quadrant::Q1,
            Quadrant::Q4 => Quadrant::Q2,
        }
    }

    /// Left half-plane (Q2 or Q3).
    pub fn is_left(self) -> bool {
        matches!(self, Quadrant::Q2 | Quadrant::Q3)
    }
}

pub fn quadrant_of(re: f64, im: f64) -> Result<Quadrant> {
    if !(re.is_finite() && im.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "quadrant of non-finite value ({re}, {im})"
        )));
    }
    Ok(Quadrant::of(re, im))
}

/// True iff the two quadrants sit on opposite ends of a diagonal
/// (Q1/Q3 or Q2/Q4).
#[inline]
pub fn opposite_diagonal(a: Quadrant, b: Quadrant) -> bool {
    a.opposite() == b
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn congruent(a: f64, b: f64) -> bool {
        let d = (a - b) / TAU;
        (d - d.round()).abs() * TAU < 1e-12
    }

    #[test]
    fn wrap_examples() {
        assert!((wrap_angle(3.0 * PI).unwrap() - PI).abs() < 1e-12);
        assert!((wrap_angle(-1.5 * PI).unwrap() - 0.5 * PI).abs() < 1e-12);
        assert_eq!(wrap_angle(0.1).unwrap(), 0.1);
        assert_eq!(wrap_angle(PI).unwrap(), PI);
        assert_eq!(wrap_angle(-PI).unwrap(), PI);
    }

    #[test]
    fn wrap_rejects_non_finite() {
        assert!(matches!(wrap_angle(f64::NAN), Err(Error::InvalidArgument(_))));
        assert!(wrap_angle(f64::INFINITY).is_err());
    }

    #[test]
    fn quadrant_examples() {
        assert_eq!(quadrant_of(1.0, 1.0).unwrap(), Quadrant::Q1);
        assert_eq!(quadrant_of(-1.0, 0.5).unwrap(), Quadrant::Q2);
        assert_eq!(quadrant_of(0.0, 0.0).unwrap(), Quadrant::Q1);
        assert_eq!(quadrant_of(-1.0, 0.0).unwrap(), Quadrant::Q2);
        assert_eq!(quadrant_of(0.0, -1.0).unwrap(), Quadrant::Q4);
        assert!(quadrant_of(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn quadrants_of_unit_diagonals() {
        let expected = [Quadrant::Q1, Quadrant::Q2, Quadrant::Q3, Quadrant::Q4];
        for (theta, q) in [PI / 4.0, 3.0 * PI / 4.0, -3.0 * PI / 4.0, -PI / 4.0]
            .into_iter()
            .zip(expected)
        {
            assert_eq!(Quadrant::of(theta.cos(), theta.sin()), q);
        }
    }

    #[test]
    fn opposite_diagonal_examples() {
        use Quadrant::*;
        assert!(opposite_diagonal(Q1, Q3));
        assert!(opposite_diagonal(Q4, Q2));
        assert!(!opposite_diagonal(Q1, Q1));
        assert!(!opposite_diagonal(Q2, Q3));
        let all = [Q1, Q2, Q3, Q4];
        for a in all {
            assert!(!opposite_diagonal(a, a));
            for b in all {
                assert_eq!(opposite_diagonal(a, b), opposite_diagonal(b, a));
            }
        }
    }

    proptest! {
        #[test]
        fn wrap_is_canonical_and_idempotent(theta in -100.0f64..100.0) {
            let w = wrap_angle(theta).unwrap();
            prop_assert!(w > -PI && w <= PI);
            prop_assert!(congruent(w, theta));
            prop_assert_eq!(wrap_angle(w).unwrap(), w);
        }
    }
}
