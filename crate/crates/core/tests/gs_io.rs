mod common;

use std::io::Cursor;

use common::*;
use nalgebra::Quaternion;
use proptest::prelude::*;
use splatsim_core::gs_io::{
    anisotropy_metric, clamp_anisotropy, load_gaussian_ply, read_gaussian_ply, save_gaussian_ply, write_gaussian_ply,
    GaussianCloud, GaussianKernel, PlyFormat,
};
use splatsim_core::math::sym_eigen_sorted;
use splatsim_core::{Mat3, SimError, Vec3};

fn random_cloud(seed: u64, n: usize, degree: usize) -> GaussianCloud {
    let mut rng = rng(seed);
    let mut kernels: Vec<GaussianKernel> = (0..n).map(|_| random_kernel(&mut rng, degree)).collect();
    for k in kernels.iter_mut().step_by(3) {
        k.sh_rotation = random_unit_quaternion(&mut rng).into_inner();
    }
    GaussianCloud::new(kernels, degree).unwrap()
}

fn assert_close(a: &GaussianCloud, b: &GaussianCloud, tol: f64) {
    assert_eq!(a.len(), b.len());
    assert_eq!(a.sh_degree, b.sh_degree);
    for (i, (x, y)) in a.kernels.iter().zip(&b.kernels).enumerate() {
        let ctx = format!("kernel {i}");
        assert!((x.center - y.center).amax() <= tol, "{ctx} center");
        assert!((x.scale - y.scale).amax() <= tol * x.scale.amax().max(1.0), "{ctx} scale");
        assert!((x.rotation.coords - y.rotation.coords).amax() <= tol, "{ctx} rotation");
        assert!((x.sh_rotation.coords - y.sh_rotation.coords).amax() <= tol, "{ctx} sh rotation");
        assert!((x.opacity - y.opacity).abs() <= tol, "{ctx} opacity");
        for (p, q) in x.sh.iter().zip(&y.sh) {
            assert!((0..3).all(|c| (p[c] - q[c]).abs() <= tol), "{ctx} sh");
        }
    }
}

#[test]
fn thousand_kernel_round_trip_binary_and_ascii() {
    let cloud = random_cloud(1, 1000, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cloud.ply");
    save_gaussian_ply(&cloud, &path).unwrap();
    assert_close(&load_gaussian_ply(&path).unwrap(), &cloud, 1e-6);

    let mut text = Vec::new();
    write_gaussian_ply(&cloud, &mut text, PlyFormat::Ascii).unwrap();
    let back = read_gaussian_ply(&mut Cursor::new(text)).unwrap();
    assert_close(&back, &cloud, 1e-6);
}

/// Once values are representable in the stored precision, save∘load is the identity bit for bit.
#[test]
fn golden_bytes_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.ply");
    let second = dir.path().join("b.ply");
    save_gaussian_ply(&random_cloud(2, 64, 1), &first).unwrap();
    let loaded = load_gaussian_ply(&first).unwrap();
    save_gaussian_ply(&loaded, &second).unwrap();
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    assert_eq!(load_gaussian_ply(&second).unwrap(), loaded);
}

#[test]
fn header_lists_the_splat_fields_in_order() {
    let cloud = random_cloud(3, 2, 1);
    let mut bytes = Vec::new();
    write_gaussian_ply(&cloud, &mut bytes, PlyFormat::BinaryLittleEndian).unwrap();
    let header_end = bytes.windows(11).position(|w| w == b"end_header\n").unwrap();
    let header = String::from_utf8(bytes[..header_end].to_vec()).unwrap();
    let props: Vec<&str> = header
        .lines()
        .filter_map(|l| l.strip_prefix("property float "))
        .collect();
    let mut expect = vec!["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"];
    let rest: Vec<String> = (0..9).map(|i| format!("f_rest_{i}")).collect();
    expect.extend(rest.iter().map(String::as_str));
    expect.extend(["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]);
    expect.extend(["sh_rot_0", "sh_rot_1", "sh_rot_2", "sh_rot_3"]);
    assert_eq!(props, expect);
    assert!(header.starts_with("ply\nformat binary_little_endian 1.0\n"));
}

#[test]
fn f_rest_is_channel_major() {
    let header = "ply\nformat ascii 1.0\nelement vertex 1\n\
        property float x\nproperty float y\nproperty float z\n\
        property float f_dc_0\nproperty float f_dc_1\nproperty float f_dc_2\n\
        property float f_rest_0\nproperty float f_rest_1\nproperty float f_rest_2\n\
        property float f_rest_3\nproperty float f_rest_4\nproperty float f_rest_5\n\
        property float f_rest_6\nproperty float f_rest_7\nproperty float f_rest_8\n\
        property float opacity\nproperty float scale_0\nproperty float scale_1\nproperty float scale_2\n\
        property float rot_0\nproperty float rot_1\nproperty float rot_2\nproperty float rot_3\nend_header\n";
    let text = format!("{header}0 0 0 0.1 0.2 0.3 1 2 3 4 5 6 7 8 9 0 0 0 0 1 0 0 0\n");
    let cloud = read_gaussian_ply(&mut Cursor::new(text)).unwrap();
    let k = &cloud.kernels[0];
    assert_eq!(cloud.sh_degree, 1);
    assert_eq!(k.sh[0], [0.1, 0.2, 0.3]);
    // coefficient 1 of red, green, blue are f_rest_0, f_rest_3, f_rest_6
    assert_eq!(k.sh[1], [1.0, 4.0, 7.0]);
    assert_eq!(k.sh[3], [3.0, 6.0, 9.0]);
    assert_eq!(k.opacity, 0.5);
    assert_eq!(k.scale, Vec3::repeat(1.0));
}

#[test]
fn binary_doubles_and_other_elements_are_accepted() {
    let mut bytes = b"ply\nformat binary_little_endian 1.0\ncomment written elsewhere\nelement camera 1\nproperty uchar id\n\
element vertex 1\nproperty double x\nproperty double y\nproperty double z\nproperty float f_dc_0\nproperty float f_dc_1\n\
property float f_dc_2\nproperty float opacity\nproperty float scale_0\nproperty float scale_1\nproperty float scale_2\n\
property float rot_0\nproperty float rot_1\nproperty float rot_2\nproperty float rot_3\nproperty uchar red\nend_header\n"
        .to_vec();
    bytes.push(7);
    for v in [1.25f64, -2.5, 3.0] {
        bytes.extend(v.to_le_bytes());
    }
    for v in [0.5f32, 0.25, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0] {
        bytes.extend(v.to_le_bytes());
    }
    bytes.push(255);
    let cloud = read_gaussian_ply(&mut Cursor::new(bytes)).unwrap();
    let k = &cloud.kernels[0];
    assert_eq!(k.center, Vec3::new(1.25, -2.5, 3.0));
    assert!((k.opacity - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-7);
    assert_eq!(k.rotation, Quaternion::new(0.0, 0.0, 0.0, 1.0));
}

#[test]
fn truncated_file_is_an_error() {
    let cloud = random_cloud(4, 3, 0);
    let mut bytes = Vec::new();
    write_gaussian_ply(&cloud, &mut bytes, PlyFormat::BinaryLittleEndian).unwrap();
    bytes.truncate(bytes.len() - 5);
    assert!(read_gaussian_ply(&mut Cursor::new(bytes)).is_err());
    let missing = tempfile::tempdir().unwrap().path().join("nope.ply");
    assert!(matches!(load_gaussian_ply(&missing), Err(SimError::Io { .. })));
}

#[test]
fn covariance_examples() {
    let k = GaussianKernel::new(Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0), Quaternion::identity(), 1.0, vec![[0.0; 3]]);
    assert_eq!(k.covariance(), Mat3::from_diagonal(&Vec3::new(1.0, 4.0, 9.0)));

    let half = std::f64::consts::FRAC_PI_4;
    let z90 = Quaternion::new(half.cos(), 0.0, 0.0, half.sin());
    let k = GaussianKernel::new(Vec3::zeros(), Vec3::new(2.0, 1.0, 1.0), z90, 1.0, vec![[0.0; 3]]);
    assert!((k.covariance() - Mat3::from_diagonal(&Vec3::new(1.0, 4.0, 1.0))).amax() < 1e-15);
}

proptest! {
    #[test]
    fn covariance_is_spd_with_squared_scale_eigenvalues(seed in 0u64..10_000) {
        let mut rng = rng(seed);
        let k = random_kernel(&mut rng, 0);
        let (eig, _) = sym_eigen_sorted(&k.covariance());
        let mut s2: Vec<f64> = k.scale.iter().map(|s| s * s).collect();
        s2.sort_by(|a, b| b.total_cmp(a));
        for i in 0..3 {
            prop_assert!(eig[i] > 0.0);
            prop_assert!((eig[i] - s2[i]).abs() <= 1e-12 * s2[0]);
        }
    }

    #[test]
    fn clamp_is_idempotent_and_zeroes_the_metric(seed in 0u64..10_000, r in 1.0f64..6.0) {
        let cloud = random_cloud(seed, 8, 0);
        let once = clamp_anisotropy(&cloud, r);
        prop_assert_eq!(anisotropy_metric(&once, r), 0.0);
        prop_assert_eq!(&clamp_anisotropy(&once, r), &once);
        for (a, b) in once.kernels.iter().zip(&cloud.kernels) {
            prop_assert_eq!(a.center, b.center);
            prop_assert_eq!(a.opacity, b.opacity);
            prop_assert_eq!(a.scale.min(), b.scale.min());
            prop_assert!(a.scale.max() <= r * a.scale.min() * (1.0 + 1e-12));
        }
    }
}

#[test]
fn anisotropy_examples() {
    let k = |s: [f64; 3]| GaussianKernel::new(Vec3::zeros(), Vec3::from(s), Quaternion::identity(), 1.0, vec![[0.0; 3]]);
    let one = GaussianCloud::new(vec![k([3.0, 1.0, 1.0])], 0).unwrap();
    assert_eq!(anisotropy_metric(&one, 2.0), 1.0);
    let two = GaussianCloud::new(vec![k([1.5, 1.0, 1.0]), k([1.0, 4.0, 1.0])], 0).unwrap();
    assert_eq!(anisotropy_metric(&two, 2.0), 1.0);
    let clamped = clamp_anisotropy(&GaussianCloud::new(vec![k([4.0, 1.0, 1.0])], 0).unwrap(), 2.0);
    assert_eq!(clamped.kernels[0].scale, Vec3::new(2.0, 1.0, 1.0));
}
