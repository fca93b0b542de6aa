//! Convex hull volume, used as a volume proxy for deformed point sets.

use std::collections::HashSet;

use crate::math::Vec3;

/// Volume of the convex hull of `points`; zero for degenerate (flat) sets.
pub fn convex_hull_volume(points: &[Vec3]) -> f64 {
    if points.len() < 4 {
        return 0.0;
    }
    let (lo, hi) = points.iter().fold(
        (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), p| (lo.inf(p), hi.sup(p)),
    );
    let eps = 1e-10 * (hi - lo).norm().max(f64::MIN_POSITIVE);

    let Some(simplex) = initial_simplex(points, eps) else {
        return 0.0;
    };
    let interior = simplex.iter().map(|&i| points[i]).sum::<Vec3>() / 4.0;
    let [a, b, c, d] = simplex;
    let mut faces: Vec<[usize; 3]> = vec![[a, b, c], [a, b, d], [a, c, d], [b, c, d]];
    for f in &mut faces {
        if normal(points, f).dot(&(points[f[0]] - interior)) < 0.0 {
            f.swap(1, 2);
        }
    }

    for (pi, p) in points.iter().enumerate() {
        if simplex.contains(&pi) {
            continue;
        }
        let mut visible = Vec::new();
        faces.retain(|f| {
            let n = normal(points, f);
            let len = n.norm();
            if len > 0.0 && n.dot(&(p - points[f[0]])) > eps * len {
                visible.push(*f);
                false
            } else {
                true
            }
        });
        if visible.is_empty() {
            continue;
        }
        let edges: HashSet<(usize, usize)> = visible
            .iter()
            .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .collect();
        for f in &visible {
            for (u, v) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                if !edges.contains(&(v, u)) {
                    faces.push([u, v, pi]);
                }
            }
        }
    }

    faces
        .iter()
        .map(|f| {
            let (a, b, c) = (points[f[0]] - interior, points[f[1]] - interior, points[f[2]] - interior);
            a.dot(&b.cross(&c)) / 6.0
        })
        .sum()
}

fn normal(points: &[Vec3], f: &[usize; 3]) -> Vec3 {
    (points[f[1]] - points[f[0]]).cross(&(points[f[2]] - points[f[0]]))
}

fn initial_simplex(points: &[Vec3], eps: f64) -> Option<[usize; 4]> {
    let argmax = |score: &dyn Fn(&Vec3) -> f64| {
        (0..points.len())
            .max_by(|&a, &b| score(&points[a]).total_cmp(&score(&points[b])))
            .unwrap_or(0)
    };
    let i0 = argmax(&|p| -p.x);
    let p0 = points[i0];
    let i1 = argmax(&|p| (p - p0).norm());
    let p1 = points[i1];
    let axis = p1 - p0;
    if axis.norm() <= eps {
        return None;
    }
    let i2 = argmax(&|p| (p - p0).cross(&axis).norm());
    let n = axis.cross(&(points[i2] - p0));
    if n.norm() <= eps * axis.norm() {
        return None;
    }
    let i3 = argmax(&|p| n.dot(&(p - p0)).abs());
    if n.dot(&(points[i3] - p0)).abs() <= eps * n.norm() {
        return None;
    }
    Some([i0, i1, i2, i3])
}
