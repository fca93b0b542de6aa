//! Small linear-algebra vocabulary shared by every module.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;

/// Deviatoric part `M - tr(M)/3 I`.
pub fn dev(m: &Mat3) -> Mat3 {
    m - Mat3::identity() * (m.trace() / 3.0)
}

pub fn dev3(v: &Vec3) -> Vec3 {
    let mean = v.sum() / 3.0;
    v.add_scalar(-mean)
}

pub fn symmetrize(m: &Mat3) -> Mat3 {
    (m + m.transpose()) * 0.5
}

/// Symmetric positive-definiteness test via Cholesky.
pub fn is_spd(m: &Mat3) -> bool {
    m.iter().all(|x| x.is_finite()) && m.cholesky().is_some()
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted descending.
pub fn sym_eigen_sorted(m: &Mat3) -> (Vec3, Mat3) {
    let eig = SymmetricEigen::new(*m);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = Vec3::new(
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    );
    let mut vectors = Mat3::zeros();
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Rotation about `axis` by `angle` radians.
pub fn axis_angle(axis: &Vec3, angle: f64) -> Mat3 {
    *nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle).matrix()
}

pub fn skew(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

pub fn frobenius(m: &Mat3) -> f64 {
    m.norm()
}

pub fn is_finite_mat(m: &Mat3) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Unit quaternion `(w, x, y, z)` of a rotation matrix.
pub fn quaternion_from_rotation(m: &Mat3) -> nalgebra::Quaternion<f64> {
    nalgebra::UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(*m)).into_inner()
}
