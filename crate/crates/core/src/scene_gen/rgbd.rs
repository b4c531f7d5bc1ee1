//! RGBD (disparity + optical flow) frames to point-cloud scene pairs.
//!
//! Pixel `(u, v)` lives at index `v * width + u`. Depth is
//! `focal_length / disparity`; the next-frame position of a pixel uses the
//! optical flow for its image coordinates and `disparity + disparity_change`
//! for its depth.

use crate::error::{invalid, Result};
use crate::geometry::{sub3, FlowField, Mechanism, PointCloud, ScenePair, Vec3};
use crate::rng::SceneRng;

pub const DEFAULT_FOCAL_LENGTH: f64 = 1050.0;
pub const DEFAULT_WIDTH: usize = 960;
pub const DEFAULT_HEIGHT: usize = 540;

/// How image coordinates are lifted to 3D.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Projection {
    /// `X = (u - W/2) * Z / f`, `Y = (v - H/2) * Z / f`.
    Pinhole,
    /// `X = (u - W/2) * f / Z`, `Y = (v - H/2) * f / Z`, the scale factor as
    /// written in the original FlyingThings3D conversion.
    PaperVerbatim,
}

/// What to do with pixels whose disparity (or next-frame disparity) is not
/// strictly positive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DisparityPolicy {
    /// Only sample pixels with valid depth.
    Skip,
    /// Sample all pixels; fail if an invalid one is drawn.
    Error,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RgbdFrame {
    pub width: usize,
    pub height: usize,
    pub focal_length: f64,
    pub disparity: Vec<f64>,
    /// Pixels per frame, `[du, dv]`.
    pub optical_flow: Vec<[f64; 2]>,
    pub disparity_change: Vec<f64>,
}

impl RgbdFrame {
    pub fn new(
        width: usize,
        height: usize,
        focal_length: f64,
        disparity: Vec<f64>,
        optical_flow: Vec<[f64; 2]>,
        disparity_change: Vec<f64>,
    ) -> Result<Self> {
        let n = width * height;
        if n == 0 {
            return invalid("empty image grid");
        }
        if !(focal_length > 0.0) {
            return invalid("focal length must be positive");
        }
        if disparity.len() != n || optical_flow.len() != n || disparity_change.len() != n {
            return invalid(format!("grids must all hold {width}x{height} = {n} pixels"));
        }
        Ok(Self {
            width,
            height,
            focal_length,
            disparity,
            optical_flow,
            disparity_change,
        })
    }

    /// Frame with uniform disparity, zero optical flow and zero disparity change.
    pub fn uniform(width: usize, height: usize, focal_length: f64, disparity: f64) -> Result<Self> {
        let n = width * height;
        Self::new(
            width,
            height,
            focal_length,
            vec![disparity; n],
            vec![[0.0; 2]; n],
            vec![0.0; n],
        )
    }

    fn pixel(&self, index: usize) -> (f64, f64) {
        ((index % self.width) as f64, (index / self.width) as f64)
    }

    fn depth_valid(&self, index: usize) -> bool {
        self.disparity[index] > 0.0
    }

    fn next_depth_valid(&self, index: usize) -> bool {
        self.depth_valid(index) && self.disparity[index] + self.disparity_change[index] > 0.0
    }

    /// 3D position of pixel `index` in this frame.
    pub fn point(&self, index: usize, projection: Projection) -> Vec3 {
        let (u, v) = self.pixel(index);
        backproject(u, v, self.disparity[index], self.focal_length, self.width, self.height, projection)
    }

    /// 3D position of pixel `index` one frame later.
    pub fn next_point(&self, index: usize, projection: Projection) -> Vec3 {
        let (u, v) = self.pixel(index);
        let [du, dv] = self.optical_flow[index];
        let d = self.disparity[index] + self.disparity_change[index];
        backproject(u + du, v + dv, d, self.focal_length, self.width, self.height, projection)
    }
}

pub fn backproject(
    u: f64,
    v: f64,
    disparity: f64,
    focal: f64,
    width: usize,
    height: usize,
    projection: Projection,
) -> Vec3 {
    let z = focal / disparity;
    let scale = match projection {
        Projection::Pinhole => z / focal,
        Projection::PaperVerbatim => focal / z,
    };
    [
        (u - width as f64 / 2.0) * scale,
        (v - height as f64 / 2.0) * scale,
        z,
    ]
}

/// Inverse of the pinhole back-projection: `(u, v, disparity)`.
pub fn project_pinhole(p: Vec3, focal: f64, width: usize, height: usize) -> (f64, f64, f64) {
    let u = p[0] * focal / p[2] + width as f64 / 2.0;
    let v = p[1] * focal / p[2] + height as f64 / 2.0;
    (u, v, focal / p[2])
}

/// Samples `n_points` pixels of each frame independently (re-sampling
/// mechanism) and lifts them to 3D. Flow is computed for the first frame only.
pub fn rgbd_to_cloud(
    frame_t: &RgbdFrame,
    frame_t1: &RgbdFrame,
    n_points: usize,
    seed: u64,
    projection: Projection,
    policy: DisparityPolicy,
) -> Result<ScenePair> {
    if frame_t.width != frame_t1.width || frame_t.height != frame_t1.height {
        return invalid("RGBD frames have different grid sizes");
    }
    if frame_t.focal_length != frame_t1.focal_length {
        return invalid("RGBD frames have different focal lengths");
    }
    if n_points == 0 {
        return invalid("n_points must be positive");
    }
    let mut rng = SceneRng::new(seed);
    let idx0 = draw_pixels(frame_t, n_points, policy, &mut rng, RgbdFrame::next_depth_valid)?;
    let idx1 = draw_pixels(frame_t1, n_points, policy, &mut rng, RgbdFrame::depth_valid)?;

    let pos0: Vec<Vec3> = idx0.iter().map(|&i| frame_t.point(i, projection)).collect();
    let flow: Vec<Vec3> = idx0
        .iter()
        .zip(&pos0)
        .map(|(&i, p)| sub3(frame_t.next_point(i, projection), *p))
        .collect();
    let pos1: Vec<Vec3> = idx1.iter().map(|&i| frame_t1.point(i, projection)).collect();
    ScenePair::new(
        PointCloud::new(pos0)?,
        PointCloud::new(pos1)?,
        FlowField::new(flow)?,
        Mechanism::Resampling,
        seed,
    )
}

fn draw_pixels(
    frame: &RgbdFrame,
    n: usize,
    policy: DisparityPolicy,
    rng: &mut SceneRng,
    valid: fn(&RgbdFrame, usize) -> bool,
) -> Result<Vec<usize>> {
    let total = frame.width * frame.height;
    match policy {
        DisparityPolicy::Skip => {
            let candidates: Vec<usize> = (0..total).filter(|&i| valid(frame, i)).collect();
            if candidates.len() < n {
                return invalid(format!(
                    "only {} pixels have valid disparity, {n} requested",
                    candidates.len()
                ));
            }
            Ok(rng
                .sample_indices(candidates.len(), n)
                .into_iter()
                .map(|k| candidates[k])
                .collect())
        }
        DisparityPolicy::Error => {
            if total < n {
                return invalid(format!("grid has {total} pixels, {n} requested"));
            }
            let idx = rng.sample_indices(total, n);
            if let Some(&bad) = idx.iter().find(|&&i| !valid(frame, i)) {
                let (u, v) = frame.pixel(bad);
                return invalid(format!("non-positive disparity at pixel ({u}, {v})"));
            }
            Ok(idx)
        }
    }
}
