//! 3×3 singular value and polar decompositions.
//!
//! The SVD is a one-sided (Hestenes) Jacobi iteration: columns of `F V` are
//! orthogonalized pair by pair until every pair is orthogonal to machine
//! precision. It is accurate in the relative sense for every singular value
//! and fully deterministic, which keeps return maps reproducible.

use crate::error::{Result, SimError};
use crate::math::{Mat3, Vec3};

const MAX_SWEEPS: usize = 40;

/// `F = U diag(sigma) Vᵀ` with `det U = det V = +1`.
///
/// Singular values are sorted descending by magnitude; only the last one can
/// be negative, and only when `det F < 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Svd3 {
    pub u: Mat3,
    pub sigma: Vec3,
    pub v: Mat3,
}

impl Svd3 {
    pub fn reconstruct(&self) -> Mat3 {
        self.u * Mat3::from_diagonal(&self.sigma) * self.v.transpose()
    }

    /// Closest rotation `U Vᵀ`.
    pub fn rotation(&self) -> Mat3 {
        self.u * self.v.transpose()
    }
}

pub fn svd3(f: &Mat3) -> Svd3 {
    let mut a = *f;
    let mut v = Mat3::identity();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let cp = a.column(p);
            let cq = a.column(q);
            let alpha = cp.norm_squared();
            let beta = cq.norm_squared();
            let gamma = cp.dot(&cq);
            if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                continue;
            }
            rotated = true;
            let zeta = (beta - alpha) / (2.0 * gamma);
            let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = c * t;
            rotate_columns(&mut a, p, q, c, s);
            rotate_columns(&mut v, p, q, c, s);
        }
        if !rotated {
            break;
        }
    }

    let mut sigma = Vec3::new(a.column(0).norm(), a.column(1).norm(), a.column(2).norm());

    // Sort descending; stable on ties so that already-ordered input keeps its axes.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));
    let (a, mut v, s) = permute(&a, &v, &sigma, order);
    sigma = s;

    let sigma_max = sigma[0];
    let tiny = sigma_max * 1e-15;
    let mut u = Mat3::zeros();
    let mut rank = 0;
    for i in 0..3 {
        if sigma[i] > tiny && sigma[i] > 0.0 {
            u.set_column(i, &(a.column(i) / sigma[i]));
            rank += 1;
        }
    }
    complete_basis(&mut u, rank);

    if u.determinant() < 0.0 {
        u.column_mut(2).neg_mut();
        sigma[2] = -sigma[2];
    }
    if v.determinant() < 0.0 {
        v.column_mut(2).neg_mut();
        sigma[2] = -sigma[2];
    }

    Svd3 { u, sigma, v }
}

/// Rotation factor `R` of the polar decomposition `F = R S`.
pub fn polar_rotation(f: &Mat3) -> Result<Mat3> {
    let det = f.determinant();
    if !(det > 0.0) {
        return Err(SimError::DegenerateDeformation {
            det,
            particle: None,
        });
    }
    Ok(svd3(f).rotation())
}

fn rotate_columns(m: &mut Mat3, p: usize, q: usize, c: f64, s: f64) {
    for r in 0..3 {
        let mp = m[(r, p)];
        let mq = m[(r, q)];
        m[(r, p)] = c * mp - s * mq;
        m[(r, q)] = s * mp + c * mq;
    }
}

fn permute(a: &Mat3, v: &Mat3, sigma: &Vec3, order: [usize; 3]) -> (Mat3, Mat3, Vec3) {
    let mut pa = Mat3::zeros();
    let mut pv = Mat3::zeros();
    let mut ps = Vec3::zeros();
    for (dst, &src) in order.iter().enumerate() {
        pa.set_column(dst, &a.column(src));
        pv.set_column(dst, &v.column(src));
        ps[dst] = sigma[src];
    }
    (pa, pv, ps)
}

/// Fill the trailing `3 - rank` columns of `u` with a right-handed orthonormal
/// complement of the leading `rank` columns.
fn complete_basis(u: &mut Mat3, rank: usize) {
    match rank {
        0 => *u = Mat3::identity(),
        1 => {
            let u0: Vec3 = u.column(0).into();
            let u1 = least_aligned_axis(&u0).cross(&u0).normalize();
            u.set_column(1, &u1);
            u.set_column(2, &u0.cross(&u1));
        }
        2 => {
            let u0: Vec3 = u.column(0).into();
            let u1: Vec3 = u.column(1).into();
            u.set_column(2, &u0.cross(&u1).normalize());
        }
        _ => {}
    }
}

fn least_aligned_axis(d: &Vec3) -> Vec3 {
    let (ax, ay, az) = (d.x.abs(), d.y.abs(), d.z.abs());
    if ax <= ay && ax <= az {
        Vec3::x()
    } else if ay <= az {
        Vec3::y()
    } else {
        Vec3::z()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::axis_angle;
    use proptest::prelude::*;

    fn assert_rotation(m: &Mat3) {
        assert!((m.transpose() * m - Mat3::identity()).norm() < 1e-12);
        assert!((m.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_is_trivial() {
        let s = svd3(&Mat3::identity());
        assert_eq!(s.u, Mat3::identity());
        assert_eq!(s.v, Mat3::identity());
        assert_eq!(s.sigma, Vec3::new(1.0, 1.0, 1.0));
    }

    #[test]
    fn sorted_diagonal_is_untouched() {
        let s = svd3(&Mat3::from_diagonal(&Vec3::new(3.0, 2.0, 1.0)));
        assert_eq!(s.u, Mat3::identity());
        assert_eq!(s.v, Mat3::identity());
        assert_eq!(s.sigma, Vec3::new(3.0, 2.0, 1.0));
    }

    #[test]
    fn unsorted_diagonal_is_sorted() {
        let f = Mat3::from_diagonal(&Vec3::new(1.0, 3.0, 2.0));
        let s = svd3(&f);
        assert_eq!(s.sigma, Vec3::new(3.0, 2.0, 1.0));
        assert!((s.reconstruct() - f).norm() < 1e-15);
        assert_rotation(&s.u);
        assert_rotation(&s.v);
    }

    #[test]
    fn reflection_puts_sign_on_smallest() {
        let f = Mat3::from_diagonal(&Vec3::new(-2.0, 3.0, 1.0));
        let s = svd3(&f);
        assert_eq!(s.sigma[0], 3.0);
        assert_eq!(s.sigma[1], 2.0);
        assert_eq!(s.sigma[2], -1.0);
        assert!((s.reconstruct() - f).norm() < 1e-14);
        assert_rotation(&s.u);
        assert_rotation(&s.v);
    }

    #[test]
    fn rank_deficient_inputs() {
        for f in [
            Mat3::zeros(),
            Mat3::new(1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 3.0, 6.0, 9.0),
            Mat3::new(1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0),
        ] {
            let s = svd3(&f);
            assert!((s.reconstruct() - f).norm() <= 1e-13 * f.norm().max(1.0));
            assert_rotation(&s.u);
            assert_rotation(&s.v);
        }
    }

    #[test]
    fn polar_recovers_rotation() {
        let r0 = axis_angle(&Vec3::new(0.3, -1.0, 0.4), 1.1);
        let f = r0 * Mat3::from_diagonal(&Vec3::new(2.0, 1.0, 1.0));
        let r = polar_rotation(&f).unwrap();
        assert!((r - r0).norm() < 1e-10);
        assert!((polar_rotation(&r0).unwrap() - r0).norm() < 1e-12);
        let spd = Mat3::from_diagonal(&Vec3::new(2.0, 3.0, 4.0));
        assert!((polar_rotation(&spd).unwrap() - Mat3::identity()).norm() < 1e-14);
    }

    #[test]
    fn polar_rejects_inverted() {
        let f = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(matches!(
            polar_rotation(&f),
            Err(SimError::DegenerateDeformation { .. })
        ));
        assert!(polar_rotation(&Mat3::zeros()).is_err());
    }

    fn arb_mat() -> impl Strategy<Value = Mat3> {
        proptest::array::uniform9(-3.0f64..3.0).prop_map(|a| Mat3::from_row_slice(&a))
    }

    proptest! {
        #[test]
        fn reconstruction_and_orthogonality(f in arb_mat()) {
            let s = svd3(&f);
            prop_assert!((s.reconstruct() - f).norm() <= 1e-10 * f.norm().max(1e-300));
            prop_assert!((s.u.determinant() - 1.0).abs() < 1e-12);
            prop_assert!((s.v.determinant() - 1.0).abs() < 1e-12);
            prop_assert!(s.sigma[0] >= s.sigma[1] && s.sigma[1] >= s.sigma[2].abs());
            prop_assert!(s.sigma[1] >= 0.0);
            if f.determinant() > 0.0 {
                prop_assert!(s.sigma[2] >= 0.0);
            }
        }

        #[test]
        fn polar_is_closest_rotation(f in arb_mat(), axis in proptest::array::uniform3(-1.0f64..1.0), angle in 0.0f64..0.2) {
            prop_assume!(f.determinant() > 1e-3);
            let r = polar_rotation(&f).unwrap();
            prop_assert!((r.transpose() * r - Mat3::identity()).norm() < 1e-12);
            // any nearby rotation is no closer to F
            let axis = Vec3::from(axis);
            prop_assume!(axis.norm() > 1e-3);
            let other = axis_angle(&axis, angle) * r;
            prop_assert!((f - r).norm() <= (f - other).norm() + 1e-12);
        }
    }
}
