//! Synthetic scene generators: one moving object, many moving objects, and
//! conversion of RGBD frame pairs into point clouds.

mod dataset;
mod rgbd;
mod shapes;

use std::collections::HashSet;
use std::f64::consts::PI;

pub use dataset::{decode_dataset, encode_dataset, read_dataset, write_dataset, HEADER_LEN, MAGIC, VERSION};
pub use rgbd::{
    backproject, project_pinhole, rgbd_to_cloud, DisparityPolicy, Projection, RgbdFrame,
    DEFAULT_FOCAL_LENGTH, DEFAULT_HEIGHT, DEFAULT_WIDTH,
};
pub use shapes::{gen_shape, ShapeKind, ShapeSpec};

use crate::error::{invalid, Result};
use crate::geometry::{add3, sub3, FlowField, Mechanism, Motion, PointCloud, RigidScaleTransform, ScenePair, Vec3};
use crate::rng::SceneRng;

/// Uniform ranges for the three motion parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionRanges {
    pub theta: (f64, f64),
    pub mu: (f64, f64),
    pub t: (f64, f64),
}

impl MotionRanges {
    pub const SINGLE_INITIAL: MotionRanges = MotionRanges {
        theta: (-PI, PI),
        mu: (5.0, 6.0),
        t: (-1.0, 1.0),
    };
    pub const MULTI_INITIAL: MotionRanges = MotionRanges {
        theta: (-PI, PI),
        mu: (3.0, 8.0),
        t: (-10.0, 10.0),
    };
    pub const PER_FRAME: MotionRanges = MotionRanges {
        theta: (-PI / 15.0, PI / 15.0),
        mu: (0.9, 1.1),
        t: (-0.25, 0.25),
    };

    fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("theta", self.theta), ("mu", self.mu), ("t", self.t)] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return invalid(format!("bad {name} range ({lo}, {hi})"));
            }
        }
        if !(self.mu.0 > 0.0) {
            return invalid("stretch range must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MotionSpec {
    Random(MotionRanges),
    Fixed(RigidScaleTransform),
}

impl MotionSpec {
    fn draw(&self, rng: &mut SceneRng) -> Result<RigidScaleTransform> {
        match *self {
            MotionSpec::Fixed(t) => Ok(t),
            MotionSpec::Random(r) => RigidScaleTransform::new(
                rng.uniform3(r.theta.0, r.theta.1),
                rng.uniform3(r.mu.0, r.mu.1),
                rng.uniform3(r.t.0, r.t.1),
            ),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            MotionSpec::Random(r) => r.validate(),
            MotionSpec::Fixed(_) => Ok(()),
        }
    }
}

/// Where object surfaces come from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ShapeSource {
    Fixed(ShapeKind, Vec3),
    /// Kind drawn uniformly, each dimension uniform in `dims`.
    Random { dims: (f64, f64) },
}

impl Default for ShapeSource {
    fn default() -> Self {
        ShapeSource::Random { dims: (0.4, 1.0) }
    }
}

impl ShapeSource {
    fn draw(&self, pool_size: usize, rng: &mut SceneRng) -> ShapeSpec {
        match *self {
            ShapeSource::Fixed(kind, dims) => ShapeSpec {
                kind,
                dims,
                pool_size,
            },
            ShapeSource::Random { dims } => {
                let kind = ShapeKind::ALL[rng.below(ShapeKind::ALL.len())];
                ShapeSpec {
                    kind,
                    dims: rng.uniform3(dims.0, dims.1),
                    pool_size,
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ShapeSource::Fixed(kind, dims) => ShapeSpec {
                kind,
                dims,
                pool_size: 1,
            }
            .validate(),
            ShapeSource::Random { dims: (lo, hi) } => {
                if lo > 0.0 && lo <= hi && hi.is_finite() {
                    Ok(())
                } else {
                    invalid(format!("bad shape dims range ({lo}, {hi})"))
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SingleSceneConfig {
    pub shape: ShapeSource,
    /// Surface points per object before frame sampling.
    pub pool_size: usize,
    pub points_per_frame: usize,
    pub n_frames: usize,
    pub mechanism: Mechanism,
    pub initial: MotionSpec,
    pub per_frame: MotionSpec,
}

impl Default for SingleSceneConfig {
    fn default() -> Self {
        Self {
            shape: ShapeSource::default(),
            pool_size: 5120,
            points_per_frame: 512,
            n_frames: 2,
            mechanism: Mechanism::Resampling,
            initial: MotionSpec::Random(MotionRanges::SINGLE_INITIAL),
            per_frame: MotionSpec::Random(MotionRanges::PER_FRAME),
        }
    }
}

impl SingleSceneConfig {
    /// Translation-only per-frame motion (no rotation, unit stretch).
    pub fn translation_only(mut self) -> Self {
        self.per_frame = MotionSpec::Random(MotionRanges {
            theta: (0.0, 0.0),
            mu: (1.0, 1.0),
            t: MotionRanges::PER_FRAME.t,
        });
        self
    }

    pub fn validate(&self) -> Result<()> {
        validate_sizes(self.points_per_frame, self.pool_size, self.n_frames)?;
        self.shape.validate()?;
        self.initial.validate()?;
        self.per_frame.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MultiSceneConfig {
    pub shape: ShapeSource,
    /// Surface points per object.
    pub pool_size: usize,
    pub points_per_frame: usize,
    pub n_frames: usize,
    pub mechanism: Mechanism,
    /// Inclusive range for the number of objects.
    pub n_objects: (usize, usize),
    pub initial: MotionSpec,
    pub per_frame: MotionSpec,
}

impl Default for MultiSceneConfig {
    fn default() -> Self {
        Self {
            shape: ShapeSource::default(),
            pool_size: 10_240,
            points_per_frame: 512,
            n_frames: 2,
            mechanism: Mechanism::Resampling,
            n_objects: (2, 20),
            initial: MotionSpec::Random(MotionRanges::MULTI_INITIAL),
            per_frame: MotionSpec::Random(MotionRanges::PER_FRAME),
        }
    }
}

impl MultiSceneConfig {
    pub fn validate(&self) -> Result<()> {
        validate_sizes(self.points_per_frame, self.pool_size, self.n_frames)?;
        let (lo, hi) = self.n_objects;
        if lo == 0 || lo > hi {
            return invalid(format!("bad object count range ({lo}, {hi})"));
        }
        self.shape.validate()?;
        self.initial.validate()?;
        self.per_frame.validate()
    }
}

fn validate_sizes(points: usize, pool: usize, frames: usize) -> Result<()> {
    if points == 0 {
        return invalid("points per frame must be positive");
    }
    if pool < 2 * points {
        return invalid(format!(
            "pool size {pool} must be at least twice the {points} points per frame"
        ));
    }
    if frames < 2 {
        return invalid("a sequence needs at least two frames");
    }
    Ok(())
}

/// A generated pair together with the ground truth used to build it.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedScene {
    pub pair: ScenePair,
    /// Per-frame motion of each object.
    pub motions: Vec<Motion>,
    /// Object index of each frame-1 row.
    pub frame1_objects: Vec<usize>,
    /// Pool index (over the union of all object pools) of each frame-1 row.
    pub frame1_sources: Vec<usize>,
    pub frame2_sources: Vec<usize>,
}

impl GeneratedScene {
    /// Fraction of frame-1 rows whose source surface point also appears in
    /// frame 2.
    pub fn shared_fraction(&self) -> f64 {
        let second: HashSet<usize> = self.frame2_sources.iter().copied().collect();
        let shared = self
            .frame1_sources
            .iter()
            .filter(|i| second.contains(i))
            .count();
        shared as f64 / self.frame1_sources.len() as f64
    }

    /// Largest deviation between `p + f` and the object's motion applied to
    /// `p`, over all frame-1 rows.
    pub fn flow_truth_error(&self) -> f64 {
        self.pair
            .frame1
            .points()
            .iter()
            .zip(self.pair.flow.vectors())
            .zip(&self.frame1_objects)
            .map(|((p, f), &o)| crate::geometry::norm3(sub3(add3(*p, *f), self.motions[o].apply(*p))))
            .fold(0.0, f64::max)
    }
}

/// `(M - I) p + t`: the displacement of `p` under `p -> M p + t`.
fn displacement(motion: &Motion, p: Vec3) -> Vec3 {
    let mp = motion.m.mul_vec(p);
    add3(sub3(mp, p), motion.t)
}

/// Frame sequence over a set of object pools sharing one index space.
struct PoolSequence {
    /// Surface points at the current frame, concatenated over objects.
    points: Vec<Vec3>,
    objects: Vec<usize>,
    motions: Vec<Motion>,
}

impl PoolSequence {
    fn step(&mut self) {
        for (p, &o) in self.points.iter_mut().zip(&self.objects) {
            *p = self.motions[o].apply(*p);
        }
    }

    fn flows(&self, idx: &[usize]) -> Vec<Vec3> {
        idx.iter()
            .map(|&i| displacement(&self.motions[self.objects[i]], self.points[i]))
            .collect()
    }
}

fn run_sequence(
    mut pools: PoolSequence,
    points_per_frame: usize,
    n_frames: usize,
    mechanism: Mechanism,
    seed: u64,
    rng: &mut SceneRng,
) -> Result<Vec<GeneratedScene>> {
    let total = pools.points.len();
    let mut out = Vec::with_capacity(n_frames - 1);
    let mut idx = rng.sample_indices(total, points_per_frame);
    match mechanism {
        Mechanism::Correspondence => {
            let mut frame: Vec<Vec3> = idx.iter().map(|&i| pools.points[i]).collect();
            for _ in 1..n_frames {
                let flow = pools.flows(&idx);
                let next: Vec<Vec3> = frame.iter().zip(&flow).map(|(p, f)| add3(*p, *f)).collect();
                out.push(GeneratedScene {
                    pair: ScenePair::new(
                        PointCloud::new(frame)?,
                        PointCloud::new(next.clone())?,
                        FlowField::new(flow)?,
                        mechanism,
                        seed,
                    )?,
                    motions: pools.motions.clone(),
                    frame1_objects: idx.iter().map(|&i| pools.objects[i]).collect(),
                    frame1_sources: idx.clone(),
                    frame2_sources: idx.clone(),
                });
                pools.step();
                frame = next;
            }
        }
        Mechanism::Resampling => {
            for _ in 1..n_frames {
                let frame: Vec<Vec3> = idx.iter().map(|&i| pools.points[i]).collect();
                let flow = pools.flows(&idx);
                let objects = idx.iter().map(|&i| pools.objects[i]).collect();
                pools.step();
                let next_idx = rng.sample_indices(total, points_per_frame);
                let next: Vec<Vec3> = next_idx.iter().map(|&i| pools.points[i]).collect();
                out.push(GeneratedScene {
                    pair: ScenePair::new(
                        PointCloud::new(frame)?,
                        PointCloud::new(next)?,
                        FlowField::new(flow)?,
                        mechanism,
                        seed,
                    )?,
                    motions: pools.motions.clone(),
                    frame1_objects: objects,
                    frame1_sources: idx,
                    frame2_sources: next_idx.clone(),
                });
                idx = next_idx;
            }
        }
    }
    Ok(out)
}

/// One object: surface pool, initial placement, then `n_frames - 1` applications
/// of a single per-frame motion. Returns one pair per consecutive frame pair.
pub fn gen_single_sequence(cfg: &SingleSceneConfig, seed: u64) -> Result<Vec<GeneratedScene>> {
    cfg.validate()?;
    let mut rng = SceneRng::new(seed);
    let spec = cfg.shape.draw(cfg.pool_size, &mut rng);
    let pool = gen_shape(&spec, &mut rng)?;
    let init = cfg.initial.draw(&mut rng)?.motion();
    let motion = cfg.per_frame.draw(&mut rng)?.motion();
    let points = pool.points().iter().map(|p| init.apply(*p)).collect::<Vec<_>>();
    let pools = PoolSequence {
        objects: vec![0; points.len()],
        points,
        motions: vec![motion],
    };
    run_sequence(pools, cfg.points_per_frame, cfg.n_frames, cfg.mechanism, seed, &mut rng)
}

pub fn gen_single_scene_detailed(cfg: &SingleSceneConfig, seed: u64) -> Result<GeneratedScene> {
    let cfg = SingleSceneConfig { n_frames: 2, ..*cfg };
    Ok(gen_single_sequence(&cfg, seed)?.remove(0))
}

pub fn gen_single_scene(cfg: &SingleSceneConfig, seed: u64) -> Result<ScenePair> {
    Ok(gen_single_scene_detailed(cfg, seed)?.pair)
}

/// Several independently moving objects whose frames are subsampled from the
/// union of all object surfaces. An object may end up with few or no points.
pub fn gen_multi_sequence(cfg: &MultiSceneConfig, seed: u64) -> Result<Vec<GeneratedScene>> {
    cfg.validate()?;
    let mut rng = SceneRng::new(seed);
    let n_objects = rng.int_inclusive(cfg.n_objects.0, cfg.n_objects.1);
    let mut points = Vec::with_capacity(n_objects * cfg.pool_size);
    let mut objects = Vec::with_capacity(n_objects * cfg.pool_size);
    let mut motions = Vec::with_capacity(n_objects);
    for o in 0..n_objects {
        let spec = cfg.shape.draw(cfg.pool_size, &mut rng);
        let pool = gen_shape(&spec, &mut rng)?;
        let init = cfg.initial.draw(&mut rng)?.motion();
        motions.push(cfg.per_frame.draw(&mut rng)?.motion());
        points.extend(pool.points().iter().map(|p| init.apply(*p)));
        objects.extend(std::iter::repeat(o).take(cfg.pool_size));
    }
    let pools = PoolSequence {
        points,
        objects,
        motions,
    };
    run_sequence(pools, cfg.points_per_frame, cfg.n_frames, cfg.mechanism, seed, &mut rng)
}

pub fn gen_multi_scene_detailed(cfg: &MultiSceneConfig, seed: u64) -> Result<GeneratedScene> {
    let cfg = MultiSceneConfig { n_frames: 2, ..*cfg };
    Ok(gen_multi_sequence(&cfg, seed)?.remove(0))
}

pub fn gen_multi_scene(cfg: &MultiSceneConfig, seed: u64) -> Result<ScenePair> {
    Ok(gen_multi_scene_detailed(cfg, seed)?.pair)
}

/// Which generator a dataset is drawn from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DatasetKind {
    Single(SingleSceneConfig),
    Multi(MultiSceneConfig),
}

impl DatasetKind {
    pub fn generate(&self, seed: u64) -> Result<GeneratedScene> {
        match self {
            DatasetKind::Single(c) => gen_single_scene_detailed(c, seed),
            DatasetKind::Multi(c) => gen_multi_scene_detailed(c, seed),
        }
    }
}

/// Scenes `seed_base + i` for `i in 0..count`, generated in parallel and
/// returned in index order.
pub fn gen_dataset(kind: &DatasetKind, count: usize, seed_base: u64) -> Result<Vec<ScenePair>> {
    use rayon::prelude::*;
    (0..count as u64)
        .into_par_iter()
        .map(|i| kind.generate(seed_base.wrapping_add(i)).map(|g| g.pair))
        .collect()
}
