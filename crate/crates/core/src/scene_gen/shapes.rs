//! Procedural surface primitives that stand in for mesh assets.
//!
//! Every generator samples uniformly by area and centers the result on the
//! primitive's bounding-box center.

use std::f64::consts::PI;

use crate::error::{invalid, Result};
use crate::geometry::{PointCloud, Vec3};
use crate::rng::SceneRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    /// Full side lengths `dims`.
    Box,
    /// Radius `dims[0]`, height `dims[2]` along Z.
    Cylinder,
    /// Radius `dims[0]`.
    Sphere,
    /// Rectangle `dims[0] x dims[1]` in the XY plane.
    Plane,
    /// L-shaped prism: arms of length `dims[0]` (X) and `dims[1]` (Y) with
    /// thickness `min(dims[0], dims[1]) / 3`, extruded `dims[2]` along Z.
    LShape,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] = [
        ShapeKind::Box,
        ShapeKind::Cylinder,
        ShapeKind::Sphere,
        ShapeKind::Plane,
        ShapeKind::LShape,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub dims: Vec3,
    pub pool_size: usize,
}

impl ShapeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            return invalid(format!("shape dims must be positive, got {:?}", self.dims));
        }
        if self.pool_size == 0 {
            return invalid("shape pool size must be positive");
        }
        Ok(())
    }
}

pub fn gen_shape(spec: &ShapeSpec, rng: &mut SceneRng) -> Result<PointCloud> {
    spec.validate()?;
    let points = (0..spec.pool_size)
        .map(|_| sample_surface(spec.kind, spec.dims, rng))
        .collect();
    PointCloud::new(points)
}

fn sample_surface(kind: ShapeKind, d: Vec3, rng: &mut SceneRng) -> Vec3 {
    match kind {
        ShapeKind::Box => sample_box(d, rng),
        ShapeKind::Cylinder => sample_cylinder(d[0], d[2], rng),
        ShapeKind::Sphere => sample_sphere(d[0], rng),
        ShapeKind::Plane => [
            rng.uniform(-0.5, 0.5) * d[0],
            rng.uniform(-0.5, 0.5) * d[1],
            0.0,
        ],
        ShapeKind::LShape => sample_l_prism(d, rng),
    }
}

fn sample_box(d: Vec3, rng: &mut SceneRng) -> Vec3 {
    let [a, b, c] = d;
    let areas = [b * c, a * c, a * b];
    let total = areas.iter().sum::<f64>();
    let pick = rng.uniform(0.0, total);
    let axis = if pick < areas[0] {
        0
    } else if pick < areas[0] + areas[1] {
        1
    } else {
        2
    };
    let side = if rng.unit() < 0.5 { -0.5 } else { 0.5 };
    let mut p = [
        rng.uniform(-0.5, 0.5) * a,
        rng.uniform(-0.5, 0.5) * b,
        rng.uniform(-0.5, 0.5) * c,
    ];
    p[axis] = side * d[axis];
    p
}

fn sample_cylinder(r: f64, h: f64, rng: &mut SceneRng) -> Vec3 {
    let lateral = 2.0 * PI * r * h;
    let caps = 2.0 * PI * r * r;
    let phi = rng.uniform(0.0, 2.0 * PI);
    if rng.uniform(0.0, lateral + caps) < lateral {
        [r * phi.cos(), r * phi.sin(), rng.uniform(-0.5, 0.5) * h]
    } else {
        let rho = r * rng.unit().sqrt();
        let z = if rng.unit() < 0.5 { -0.5 * h } else { 0.5 * h };
        [rho * phi.cos(), rho * phi.sin(), z]
    }
}

fn sample_sphere(r: f64, rng: &mut SceneRng) -> Vec3 {
    // Archimedes: z is uniform on the sphere's surface.
    let z = rng.uniform(-1.0, 1.0);
    let phi = rng.uniform(0.0, 2.0 * PI);
    let rho = (1.0 - z * z).max(0.0).sqrt();
    let v = [rho * phi.cos(), rho * phi.sin(), z];
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [r * v[0] / n, r * v[1] / n, r * v[2] / n]
}

fn sample_l_prism(d: Vec3, rng: &mut SceneRng) -> Vec3 {
    let [a, b, h] = d;
    let t = a.min(b) / 3.0;
    let cap_area = a * t + t * (b - t);
    let perimeter = 2.0 * a + 2.0 * b;
    let side_area = perimeter * h;
    let p = if rng.uniform(0.0, 2.0 * cap_area + side_area) < 2.0 * cap_area {
        let z = if rng.unit() < 0.5 { 0.0 } else { h };
        if rng.uniform(0.0, cap_area) < a * t {
            [rng.uniform(0.0, a), rng.uniform(0.0, t), z]
        } else {
            [rng.uniform(0.0, t), rng.uniform(t, b), z]
        }
    } else {
        let outline: [[f64; 2]; 7] = [
            [0.0, 0.0],
            [a, 0.0],
            [a, t],
            [t, t],
            [t, b],
            [0.0, b],
            [0.0, 0.0],
        ];
        let mut s = rng.uniform(0.0, perimeter);
        let mut xy = outline[outline.len() - 1];
        for w in outline.windows(2) {
            let len = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            if s <= len {
                let f = s / len;
                xy = [
                    w[0][0] + f * (w[1][0] - w[0][0]),
                    w[0][1] + f * (w[1][1] - w[0][1]),
                ];
                break;
            }
            s -= len;
        }
        [xy[0], xy[1], rng.uniform(0.0, h)]
    };
    [p[0] - 0.5 * a, p[1] - 0.5 * b, p[2] - 0.5 * h]
}
