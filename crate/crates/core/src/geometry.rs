//! Point clouds, flow fields and the rigid-scale motions that relate frames.

use crate::error::{invalid, Result};
use crate::rng::SceneRng;

pub type Vec3 = [f64; 3];

#[inline]
pub fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn norm3(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

#[inline]
pub fn dist_sq3(a: Vec3, b: Vec3) -> f64 {
    let d = sub3(a, b);
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

fn all_finite(rows: &[Vec3]) -> bool {
    rows.iter().flatten().all(|v| v.is_finite())
}

/// Row-major 3x3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn mul(&self, other: &Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.0[i][k] * other.0[k][j]).sum();
            }
        }
        Mat3(out)
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }
}

/// An unordered set of 3D points stored as an N x 3 matrix (meters).
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return invalid("point cloud must contain at least one point");
        }
        if !all_finite(&points) {
            return invalid("point cloud contains non-finite coordinates");
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Vec3> {
        self.points
    }

    pub fn select(&self, indices: &[usize]) -> Result<PointCloud> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return invalid(format!("row {bad} out of range for {} points", self.len()));
        }
        PointCloud::new(indices.iter().map(|&i| self.points[i]).collect())
    }

    pub fn centroid(&self) -> Vec3 {
        let n = self.len() as f64;
        let mut acc = [0.0; 3];
        for p in &self.points {
            acc = add3(acc, *p);
        }
        [acc[0] / n, acc[1] / n, acc[2] / n]
    }

    /// Population standard deviation along each axis.
    pub fn axis_std(&self) -> Vec3 {
        let c = self.centroid();
        let n = self.len() as f64;
        let mut acc = [0.0; 3];
        for p in &self.points {
            for a in 0..3 {
                acc[a] += (p[a] - c[a]).powi(2);
            }
        }
        [(acc[0] / n).sqrt(), (acc[1] / n).sqrt(), (acc[2] / n).sqrt()]
    }

    /// Midpoint of the axis-aligned bounding box. Depends only on the set of
    /// points, never on their order.
    pub fn bbox_center(&self) -> Vec3 {
        let mut lo = self.points[0];
        let mut hi = self.points[0];
        for p in &self.points[1..] {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        [
            0.5 * (lo[0] + hi[0]),
            0.5 * (lo[1] + hi[1]),
            0.5 * (lo[2] + hi[2]),
        ]
    }

    pub fn shifted(&self, offset: Vec3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| add3(*p, offset)).collect(),
        }
    }
}

/// Per-point motion vectors (meters per frame), row-aligned with a cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    vectors: Vec<Vec3>,
}

impl FlowField {
    pub fn new(vectors: Vec<Vec3>) -> Result<Self> {
        if !all_finite(&vectors) {
            return invalid("flow field contains non-finite entries");
        }
        Ok(Self { vectors })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            vectors: vec![[0.0; 3]; n],
        }
    }

    pub fn constant(n: usize, v: Vec3) -> Result<Self> {
        Self::new(vec![v; n])
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[Vec3] {
        &self.vectors
    }

    pub fn into_vectors(self) -> Vec<Vec3> {
        self.vectors
    }

    pub fn negated(&self) -> FlowField {
        FlowField {
            vectors: self.vectors.iter().map(|v| [-v[0], -v[1], -v[2]]).collect(),
        }
    }

    pub fn select(&self, indices: &[usize]) -> Result<FlowField> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return invalid(format!("row {bad} out of range for {} vectors", self.len()));
        }
        Ok(FlowField {
            vectors: indices.iter().map(|&i| self.vectors[i]).collect(),
        })
    }
}

/// Rotation angles (radians about X, Y, Z), per-axis stretch and translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidScaleTransform {
    pub theta: Vec3,
    pub mu: Vec3,
    pub t: Vec3,
}

impl RigidScaleTransform {
    pub fn identity() -> Self {
        Self {
            theta: [0.0; 3],
            mu: [1.0; 3],
            t: [0.0; 3],
        }
    }

    pub fn new(theta: Vec3, mu: Vec3, t: Vec3) -> Result<Self> {
        if mu.iter().any(|&m| !(m > 0.0)) {
            return invalid(format!("stretch must be strictly positive, got {mu:?}"));
        }
        if theta.iter().chain(t.iter()).any(|v| !v.is_finite()) {
            return invalid("transform parameters must be finite");
        }
        Ok(Self { theta, mu, t })
    }

    pub fn matrix(&self) -> Mat3 {
        make_rotation_matrix(self.theta, self.mu).expect("stretch validated at construction")
    }

    /// The affine motion `p -> M p + t`.
    pub fn motion(&self) -> Motion {
        Motion {
            m: self.matrix(),
            t: self.t,
        }
    }
}

/// An affine map `p -> m p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Motion {
    pub m: Mat3,
    pub t: Vec3,
}

impl Motion {
    pub fn apply(&self, p: Vec3) -> Vec3 {
        add3(self.m.mul_vec(p), self.t)
    }
}

/// Which data-gathering assumption produced a scene pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mechanism {
    /// Frame 2 is frame 1 moved by the flow; points are tracked.
    Correspondence,
    /// Each frame is an independent surface sample.
    Resampling,
}

impl Mechanism {
    pub fn code(self) -> u8 {
        match self {
            Mechanism::Correspondence => 0,
            Mechanism::Resampling => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Mechanism::Correspondence),
            1 => Some(Mechanism::Resampling),
            _ => None,
        }
    }
}

/// Two consecutive frames with ground-truth flow for the first.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenePair {
    pub frame1: PointCloud,
    pub frame2: PointCloud,
    pub flow: FlowField,
    pub mechanism: Mechanism,
    pub seed: u64,
}

impl ScenePair {
    /// Validates row alignment and, for `Correspondence`, that
    /// `frame2 == frame1 + flow` holds bit for bit.
    pub fn new(
        frame1: PointCloud,
        frame2: PointCloud,
        flow: FlowField,
        mechanism: Mechanism,
        seed: u64,
    ) -> Result<Self> {
        if flow.len() != frame1.len() {
            return invalid(format!(
                "flow has {} rows but frame1 has {}",
                flow.len(),
                frame1.len()
            ));
        }
        if mechanism == Mechanism::Correspondence {
            if frame2.len() != frame1.len() {
                return invalid("correspondence frames must have equal size");
            }
            let exact = frame1
                .points()
                .iter()
                .zip(flow.vectors())
                .zip(frame2.points())
                .all(|((p, f), q)| add3(*p, *f) == *q);
            if !exact {
                return invalid("correspondence pair violates frame2 = frame1 + flow");
            }
        }
        Ok(Self {
            frame1,
            frame2,
            flow,
            mechanism,
            seed,
        })
    }

    /// Rounds every value to the nearest binary32 number so the pair survives
    /// a trip through the on-disk format unchanged. Correspondence pairs are
    /// snapped so the sum relation still holds exactly after rounding.
    pub fn quantized(&self) -> ScenePair {
        let q = |v: f64| v as f32 as f64;
        match self.mechanism {
            Mechanism::Resampling => ScenePair {
                frame1: PointCloud {
                    points: self.frame1.points.iter().map(|p| p.map(q)).collect(),
                },
                frame2: PointCloud {
                    points: self.frame2.points.iter().map(|p| p.map(q)).collect(),
                },
                flow: FlowField {
                    vectors: self.flow.vectors.iter().map(|v| v.map(q)).collect(),
                },
                ..self.clone()
            },
            Mechanism::Correspondence => {
                let mut f1 = Vec::with_capacity(self.frame1.len());
                let mut f2 = Vec::with_capacity(self.frame1.len());
                let mut fl = Vec::with_capacity(self.frame1.len());
                for (p, f) in self.frame1.points.iter().zip(&self.flow.vectors) {
                    let mut a = [0.0; 3];
                    let mut b = [0.0; 3];
                    let mut c = [0.0; 3];
                    for k in 0..3 {
                        (a[k], b[k], c[k]) = snap_sum(p[k], f[k]);
                    }
                    f1.push(a);
                    fl.push(b);
                    f2.push(c);
                }
                ScenePair {
                    frame1: PointCloud { points: f1 },
                    frame2: PointCloud { points: f2 },
                    flow: FlowField { vectors: fl },
                    ..self.clone()
                }
            }
        }
    }
}

fn is_f32(x: f64) -> bool {
    x as f32 as f64 == x
}

fn ulp32(x: f64) -> f64 {
    let bits = (x.abs() as f32).to_bits();
    let exp = ((bits >> 23) & 0xff).max(1) as i32;
    2f64.powi(exp - 127 - 23)
}

/// Finds binary32 values `(a', b', c')` close to `(a, b, a + b)` with
/// `a' + b' == c'` exact in both binary32 and binary64 arithmetic.
fn snap_sum(a: f64, b: f64) -> (f64, f64, f64) {
    if is_f32(a) && is_f32(b) && is_f32(a + b) && (a as f32 + b as f32) as f64 == a + b {
        return (a, b, a + b);
    }
    let mut q = ulp32(a).max(ulp32(a + b));
    loop {
        let a2 = (a / q).round() * q;
        let c2 = ((a + b) / q).round() * q;
        let b2 = c2 - a2;
        if is_f32(a2) && is_f32(b2) && is_f32(c2) && (a2 as f32 + b2 as f32) as f64 == c2 {
            return (a2, b2, c2);
        }
        q *= 2.0;
    }
}

/// `M = Rz(theta_z) * Ry(theta_y) * Rx(theta_x) * diag(mu)`.
pub fn make_rotation_matrix(theta: Vec3, mu: Vec3) -> Result<Mat3> {
    if mu.iter().any(|&m| !(m > 0.0)) {
        return invalid(format!("stretch must be strictly positive, got {mu:?}"));
    }
    let (sx, cx) = theta[0].sin_cos();
    let (sy, cy) = theta[1].sin_cos();
    let (sz, cz) = theta[2].sin_cos();
    let rx = Mat3([[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]]);
    let ry = Mat3([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]]);
    let rz = Mat3([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]]);
    let s = Mat3([[mu[0], 0.0, 0.0], [0.0, mu[1], 0.0], [0.0, 0.0, mu[2]]]);
    Ok(rz.mul(&ry).mul(&rx).mul(&s))
}

/// Row `i` of the result is `m * p_i + t`.
pub fn apply_transform(cloud: &PointCloud, m: &Mat3, t: Vec3) -> PointCloud {
    let motion = Motion { m: *m, t };
    PointCloud {
        points: cloud.points.iter().map(|p| motion.apply(*p)).collect(),
    }
}

pub fn translate_by_flow(cloud: &PointCloud, flow: &FlowField) -> Result<PointCloud> {
    if cloud.len() != flow.len() {
        return invalid(format!(
            "cloud has {} rows but flow has {}",
            cloud.len(),
            flow.len()
        ));
    }
    Ok(PointCloud {
        points: cloud
            .points
            .iter()
            .zip(&flow.vectors)
            .map(|(p, f)| add3(*p, *f))
            .collect(),
    })
}

/// Converts meters per frame into meters per second given the frame rate.
pub fn flow_rate_convert(flow: &FlowField, rate: f64) -> Result<FlowField> {
    if !(rate > 0.0) || !rate.is_finite() {
        return invalid(format!("sampling rate must be positive, got {rate}"));
    }
    FlowField::new(flow.vectors.iter().map(|v| v.map(|x| x * rate)).collect())
}

pub fn sample_without_replacement(
    cloud: &PointCloud,
    n: usize,
    rng: &mut SceneRng,
) -> Result<(PointCloud, Vec<usize>)> {
    if n == 0 || n > cloud.len() {
        return invalid(format!(
            "cannot sample {n} points from a cloud of {}",
            cloud.len()
        ));
    }
    let idx = rng.sample_indices(cloud.len(), n);
    Ok((cloud.select(&idx)?, idx))
}

/// Random partition of `0..n` into halves of sizes `n / 2` and `n - n / 2`.
pub fn split_disjoint_indices(n: usize, rng: &mut SceneRng) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return invalid(format!("cannot split a cloud of {n} points"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let second = idx.split_off(n / 2);
    Ok((idx, second))
}

pub fn split_disjoint(cloud: &PointCloud, rng: &mut SceneRng) -> Result<(PointCloud, PointCloud)> {
    let (a, b) = split_disjoint_indices(cloud.len(), rng)?;
    Ok((cloud.select(&a)?, cloud.select(&b)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn random_cloud(rng: &mut SceneRng, n: usize) -> PointCloud {
        PointCloud::new((0..n).map(|_| rng.uniform3(-5.0, 5.0)).collect()).unwrap()
    }

    fn random_flow(rng: &mut SceneRng, n: usize) -> FlowField {
        FlowField::new((0..n).map(|_| rng.uniform3(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn rotation_identity() {
        let m = make_rotation_matrix([0.0; 3], [1.0; 3]).unwrap();
        assert_eq!(m, Mat3::IDENTITY);
    }

    #[test]
    fn rotation_quarter_turn_about_z() {
        let m = make_rotation_matrix([0.0, 0.0, PI / 2.0], [1.0; 3]).unwrap();
        let v = m.mul_vec([1.0, 0.0, 0.0]);
        assert!((v[0]).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12 && v[2].abs() < 1e-12);
    }

    #[test]
    fn rotation_determinant_is_stretch_product() {
        let mut rng = SceneRng::new(5);
        for _ in 0..100 {
            let theta = rng.uniform3(-PI, PI);
            let mu = rng.uniform3(0.5, 6.0);
            let m = make_rotation_matrix(theta, mu).unwrap();
            let expect = mu[0] * mu[1] * mu[2];
            assert!(((m.det() - expect) / expect).abs() < 1e-10);
        }
    }

    #[test]
    fn unit_stretch_is_orthonormal() {
        let mut rng = SceneRng::new(6);
        for _ in 0..50 {
            let m = make_rotation_matrix(rng.uniform3(-PI, PI), [1.0; 3]).unwrap();
            let mtm = m.transpose().mul(&m);
            for i in 0..3 {
                for j in 0..3 {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((mtm.0[i][j] - e).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn rotation_rejects_non_positive_stretch() {
        assert!(make_rotation_matrix([0.0; 3], [1.0, 0.0, 1.0]).is_err());
        assert!(make_rotation_matrix([0.0; 3], [1.0, 1.0, -2.0]).is_err());
        assert!(RigidScaleTransform::new([0.0; 3], [1.0, f64::NAN, 1.0], [0.0; 3]).is_err());
    }

    #[test]
    fn identity_transform_is_bit_exact() {
        let mut rng = SceneRng::new(1);
        let c = random_cloud(&mut rng, 20);
        assert_eq!(apply_transform(&c, &Mat3::IDENTITY, [0.0; 3]), c);
    }

    #[test]
    fn pure_translation_shifts_rows() {
        let mut rng = SceneRng::new(2);
        let c = random_cloud(&mut rng, 20);
        let out = apply_transform(&c, &Mat3::IDENTITY, [1.0, 2.0, 3.0]);
        for (p, q) in c.points().iter().zip(out.points()) {
            assert_eq!(*q, add3(*p, [1.0, 2.0, 3.0]));
        }
    }

    #[test]
    fn transform_composition() {
        let mut rng = SceneRng::new(3);
        let c = random_cloud(&mut rng, 50);
        let m1 = make_rotation_matrix(rng.uniform3(-PI, PI), rng.uniform3(0.5, 2.0)).unwrap();
        let m2 = make_rotation_matrix(rng.uniform3(-PI, PI), rng.uniform3(0.5, 2.0)).unwrap();
        let t1 = rng.uniform3(-3.0, 3.0);
        let t2 = rng.uniform3(-3.0, 3.0);
        let twice = apply_transform(&apply_transform(&c, &m1, t1), &m2, t2);
        let once = apply_transform(&c, &m2.mul(&m1), add3(m2.mul_vec(t1), t2));
        for (a, b) in twice.points().iter().zip(once.points()) {
            assert!(norm3(sub3(*a, *b)) < 1e-9);
        }
    }

    #[test]
    fn translate_by_flow_cases() {
        let mut rng = SceneRng::new(4);
        let c = random_cloud(&mut rng, 30);
        assert_eq!(translate_by_flow(&c, &FlowField::zeros(30)).unwrap(), c);

        let one = PointCloud::new(vec![[0.0; 3]]).unwrap();
        let f = FlowField::new(vec![[1.0; 3]]).unwrap();
        assert_eq!(translate_by_flow(&one, &f).unwrap().points(), &[[1.0; 3]]);

        let f = random_flow(&mut rng, 30);
        let back = translate_by_flow(&translate_by_flow(&c, &f).unwrap(), &f.negated()).unwrap();
        for (a, b) in back.points().iter().zip(c.points()) {
            assert!(norm3(sub3(*a, *b)) < 1e-12);
        }

        assert!(translate_by_flow(&c, &FlowField::zeros(29)).is_err());
    }

    #[test]
    fn translate_by_flow_is_a_group_action() {
        let mut rng = SceneRng::new(8);
        let c = random_cloud(&mut rng, 40);
        let f1 = random_flow(&mut rng, 40);
        let f2 = random_flow(&mut rng, 40);
        let seq = translate_by_flow(&translate_by_flow(&c, &f1).unwrap(), &f2).unwrap();
        let sum = FlowField::new(
            f1.vectors()
                .iter()
                .zip(f2.vectors())
                .map(|(a, b)| add3(*a, *b))
                .collect(),
        )
        .unwrap();
        let joint = translate_by_flow(&c, &sum).unwrap();
        for (a, b) in seq.points().iter().zip(joint.points()) {
            assert!(norm3(sub3(*a, *b)) < 1e-12);
        }
    }

    #[test]
    fn rate_conversion() {
        let f = FlowField::new(vec![[0.5, 0.0, 0.0]]).unwrap();
        assert_eq!(flow_rate_convert(&f, 10.0).unwrap().vectors(), &[[5.0, 0.0, 0.0]]);
        assert_eq!(flow_rate_convert(&f, 1.0).unwrap(), f);
        assert!(flow_rate_convert(&f, 0.0).is_err());
        assert!(flow_rate_convert(&f, -1.0).is_err());

        let mut rng = SceneRng::new(9);
        for _ in 0..10 {
            let f = random_flow(&mut rng, 25);
            let h = flow_rate_convert(&f, 0.5).unwrap();
            for (a, b) in f.vectors().iter().zip(h.vectors()) {
                assert!((norm3(*b) - 0.5 * norm3(*a)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn sampling_full_size_is_a_permutation() {
        let mut rng = SceneRng::new(10);
        let c = random_cloud(&mut rng, 16);
        let (s, mut idx) = sample_without_replacement(&c, 16, &mut rng).unwrap();
        assert_eq!(s.len(), 16);
        idx.sort_unstable();
        assert_eq!(idx, (0..16).collect::<Vec<_>>());
        assert!(sample_without_replacement(&c, 17, &mut rng).is_err());
        assert!(sample_without_replacement(&c, 0, &mut rng).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let mut rng = SceneRng::new(10);
        let c = random_cloud(&mut rng, 64);
        let a = sample_without_replacement(&c, 10, &mut SceneRng::new(99)).unwrap();
        let b = sample_without_replacement(&c, 10, &mut SceneRng::new(99)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_is_uniform_monte_carlo() {
        let c = PointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]])
            .unwrap();
        let mut rng = SceneRng::new(1234);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            let (_, idx) = sample_without_replacement(&c, 1, &mut rng).unwrap();
            counts[idx[0]] += 1;
        }
        for n in counts {
            assert!((2350..=2650).contains(&n), "{counts:?}");
        }
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let mut rng = SceneRng::new(12);
        let (a, b) = split_disjoint_indices(4, &mut rng).unwrap();
        assert_eq!((a.len(), b.len()), (2, 2));
        let mut all: Vec<_> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3]);

        let (a, b) = split_disjoint_indices(5, &mut rng).unwrap();
        assert_eq!((a.len(), b.len()), (2, 3));
        assert!(split_disjoint_indices(1, &mut rng).is_err());

        let c = random_cloud(&mut rng, 9);
        let s1 = split_disjoint(&c, &mut SceneRng::new(3)).unwrap();
        let s2 = split_disjoint(&c, &mut SceneRng::new(3)).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn cloud_rejects_bad_input() {
        assert!(PointCloud::new(vec![]).is_err());
        assert!(PointCloud::new(vec![[0.0, f64::INFINITY, 0.0]]).is_err());
        assert!(FlowField::new(vec![[f64::NAN, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn correspondence_pair_is_validated() {
        let c = PointCloud::new(vec![[0.1, 0.2, 0.3]]).unwrap();
        let f = FlowField::new(vec![[0.7, 0.0, -0.1]]).unwrap();
        let moved = translate_by_flow(&c, &f).unwrap();
        assert!(ScenePair::new(c.clone(), moved, f.clone(), Mechanism::Correspondence, 0).is_ok());
        assert!(ScenePair::new(c.clone(), c.clone(), f, Mechanism::Correspondence, 0).is_err());
    }

    #[test]
    fn quantized_correspondence_keeps_exact_sum() {
        let mut rng = SceneRng::new(77);
        for _ in 0..20 {
            let c = random_cloud(&mut rng, 50);
            let f = random_flow(&mut rng, 50);
            let moved = translate_by_flow(&c, &f).unwrap();
            let pair = ScenePair::new(c, moved, f.clone(), Mechanism::Correspondence, 1).unwrap();
            let q = pair.quantized();
            let q = ScenePair::new(q.frame1, q.frame2, q.flow, q.mechanism, q.seed).unwrap();
            assert_eq!(q.quantized(), q);
            for v in q.frame1.points().iter().chain(q.frame2.points()).chain(q.flow.vectors()) {
                assert!(v.iter().all(|&x| is_f32(x)));
            }
            for (a, b) in q.flow.vectors().iter().zip(f.vectors()) {
                assert!(norm3(sub3(*a, *b)) < 1e-5);
            }
        }
    }

    #[test]
    fn snap_handles_tiny_coordinates() {
        let (a, b, c) = snap_sum(1e-9, 0.3);
        assert!(is_f32(a) && is_f32(b) && is_f32(c));
        assert_eq!(a + b, c);
        let (a, b, c) = snap_sum(-3.0000001, 6.1);
        assert!(is_f32(a) && is_f32(b) && is_f32(c));
        assert_eq!(a + b, c);
    }
}
