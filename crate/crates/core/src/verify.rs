//! Self-check harness: named invariant checks with a printable table.

use std::time::Instant;

use crate::autodiff::{grad_check, Tape, Tensor, Var, DEFAULT_STEP};
use crate::baselines::{knn_flow, BaselineKind};
use crate::error::Result;
use crate::geometry::{add3, dist_sq3, Mechanism, PointCloud, ScenePair};
use crate::losses::{
    cycle_consistency, cycle_consistency_var, knn_loss_var, multiscale_l2_var, multiscale_triplet,
    multiscale_triplet_var, supervised_l2_var, triplet_margin, CycleLoss, ScaleSchedule, ScheduleKind,
};
use crate::nets::{checkpoint, EmbedderParams, EmbedderSpec, EmbeddingPyramid, FlowExtractorParams, FlowExtractorSpec};
use crate::rng::SceneRng;
use crate::scene_gen::{
    decode_dataset, encode_dataset, gen_dataset, gen_multi_scene_detailed, gen_single_scene_detailed, DatasetKind,
    MultiSceneConfig, SingleSceneConfig,
};
use crate::set_distances::{hungarian_distance, knn_loss, nearest_neighbors};
use crate::spatial::brute_force_knn;
use crate::training::validate;

/// Largest relative finite-difference error a gradient check tolerates.
pub const GRAD_TOLERANCE: f64 = 1e-4;

type CheckFn = Box<dyn Fn() -> std::result::Result<String, String> + Send + Sync>;

/// A named property. `run` returns a short detail string on success and the
/// reason on failure.
pub struct Check {
    pub name: String,
    run: CheckFn,
}

impl Check {
    pub fn new(name: impl Into<String>, run: impl Fn() -> std::result::Result<String, String> + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            run: Box::new(run),
        }
    }

    /// Finite-difference check of a scalar tape function at `points`.
    pub fn gradient<F>(name: impl Into<String>, f: F, points: Vec<Tensor>) -> Self
    where
        F: Fn(&mut Tape, Var) -> Result<Var> + Send + Sync + 'static,
    {
        Self::new(name, move || {
            let mut worst: f64 = 0.0;
            for p in &points {
                worst = worst.max(grad_check(&f, p, DEFAULT_STEP).map_err(|e| e.to_string())?);
            }
            if worst < GRAD_TOLERANCE {
                Ok(format!("max rel err {worst:.1e}"))
            } else {
                Err(format!("max rel err {worst:.3e} exceeds {GRAD_TOLERANCE:e}"))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

pub fn run_checks(checks: &[Check]) -> Vec<CheckResult> {
    checks
        .iter()
        .map(|c| {
            let t0 = Instant::now();
            let out = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| (c.run)()))
                .unwrap_or_else(|_| Err("panicked".into()));
            let (passed, detail) = match out {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckResult {
                name: c.name.clone(),
                passed,
                detail,
                seconds: t0.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

pub fn format_table(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut s = String::new();
    for r in results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        s.push_str(&format!("{status}  {:<width$}  {:>6.2}s  {}\n", r.name, r.seconds, r.detail));
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    s.push_str(&format!("{} checks, {} failed\n", results.len(), failed));
    s
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: crate::Error) -> String {
    e.to_string()
}

fn random_tensor(rng: &mut SceneRng, r: usize, c: usize) -> Tensor {
    Tensor::new(r, c, (0..r * c).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

fn random_cloud(rng: &mut SceneRng, n: usize) -> PointCloud {
    PointCloud::new((0..n).map(|_| rng.uniform3(-1.0, 1.0)).collect()).unwrap()
}

fn random_points(seed: u64, count: usize, r: usize, c: usize) -> Vec<Tensor> {
    let mut rng = SceneRng::new(seed);
    (0..count).map(|_| random_tensor(&mut rng, r, c)).collect()
}

fn bind_levels(tape: &mut Tape, x: Var, dims: usize, levels: usize) -> Result<Vec<Var>> {
    let flat = tape.reshape(x, levels, dims)?;
    (0..levels).map(|l| tape.slice_rows(flat, l, 1)).collect()
}

fn constant_levels(tape: &mut Tape, p: &Tensor) -> Result<Vec<Var>> {
    (0..p.rows())
        .map(|l| {
            let row = Tensor::new(1, p.cols(), p.row(l).to_vec())?;
            Ok(tape.constant(row))
        })
        .collect()
}

fn gradient_checks() -> Vec<Check> {
    const N: usize = 6;
    let mut rng = SceneRng::new(404);
    let target = random_tensor(&mut rng, N, 3);
    let bwd = random_tensor(&mut rng, N, 3);
    let pos = random_tensor(&mut rng, 3, 4);
    let neg = random_tensor(&mut rng, 3, 4);
    let knn_target = random_cloud(&mut rng, 9);
    let schedule = ScaleSchedule::new(ScheduleKind::InvSqrt, 3);

    let mut checks = vec![Check::gradient(
        "gradient: supervised l2",
        move |t, x| {
            let y = t.constant(target.clone());
            supervised_l2_var(t, x, y)
        },
        random_points(1, 3, N, 3),
    )];
    for kind in CycleLoss::ALL {
        let b = bwd.clone();
        checks.push(Check::gradient(
            format!("gradient: cycle {}", kind.name()),
            move |t, x| {
                let y = t.constant(b.clone());
                cycle_consistency_var(t, x, y, kind)
            },
            random_points(2, 3, N, 3),
        ));
    }
    {
        let (p, n, s) = (pos.clone(), neg.clone(), schedule.clone());
        checks.push(Check::gradient(
            "gradient: multiscale triplet",
            move |t, x| {
                let a = bind_levels(t, x, 4, 3)?;
                let pv = constant_levels(t, &p)?;
                let nv = constant_levels(t, &n)?;
                multiscale_triplet_var(t, &a, &pv, &nv, &s, 1.0)
            },
            random_points(3, 3, 3, 4),
        ));
        let (p, n) = (pos.clone(), neg.clone());
        let last_only = ScaleSchedule::new(ScheduleKind::LastOnly, 3);
        checks.push(Check::gradient(
            "gradient: triplet",
            move |t, x| {
                let a = bind_levels(t, x, 4, 3)?;
                let pv = constant_levels(t, &p)?;
                let nv = constant_levels(t, &n)?;
                multiscale_triplet_var(t, &a, &pv, &nv, &last_only, 1.0)
            },
            random_points(4, 3, 3, 4),
        ));
        let (n, s) = (neg, schedule);
        checks.push(Check::gradient(
            "gradient: multiscale l2",
            move |t, x| {
                let a = bind_levels(t, x, 4, 3)?;
                let nv = constant_levels(t, &n)?;
                multiscale_l2_var(t, &a, &nv, &s)
            },
            random_points(5, 3, 3, 4),
        ));
    }
    checks.push(Check::gradient(
        "gradient: knn loss",
        move |t, x| knn_loss_var(t, x, &knn_target, 2),
        random_points(6, 3, N, 3),
    ));

    let mut init = SceneRng::new(405);
    let spec = FlowExtractorSpec {
        local: vec![8],
        global: vec![8],
        decoder: vec![8],
        ..Default::default()
    };
    let mut flow = FlowExtractorParams::init(&spec, &mut init).unwrap();
    for t in flow.affine.as_mut().unwrap().tensors_mut() {
        for x in t.data_mut() {
            *x = init.uniform(-0.1, 0.1);
        }
    }
    let frame2 = random_tensor(&mut init, 7, 3);
    let weights = random_tensor(&mut init, N, 3);
    checks.push(Check::gradient(
        "gradient: flow extractor forward",
        move |t, x| {
            let vars = flow.bind(t, false);
            let f2 = t.constant(frame2.clone());
            let out = flow.forward(t, &vars, x, f2)?;
            let w = t.constant(weights.clone());
            let prod = t.mul(out, w)?;
            t.sum(prod)
        },
        random_points(7, 3, N, 3),
    ));
    let embedder = EmbedderParams::init(&EmbedderSpec { stages: vec![6, 8] }, &mut init).unwrap();
    let level_weights: Vec<Tensor> = [8, 6].iter().map(|&d| random_tensor(&mut init, 1, d)).collect();
    checks.push(Check::gradient(
        "gradient: embedder forward",
        move |t, x| {
            let vars = embedder.bind(t, false);
            let levels = embedder.forward(t, &vars, x)?;
            let mut total: Option<Var> = None;
            for (z, w) in levels.iter().zip(&level_weights) {
                let w = t.constant(w.clone());
                let p = t.mul(*z, w)?;
                let s = t.sum(p)?;
                total = Some(match total {
                    Some(acc) => t.add(acc, s)?,
                    None => s,
                });
            }
            Ok(total.unwrap())
        },
        random_points(8, 3, N, 3),
    ));
    checks
}

fn single(points: usize, pool: usize, mechanism: Mechanism) -> SingleSceneConfig {
    SingleSceneConfig {
        points_per_frame: points,
        pool_size: pool,
        mechanism,
        ..Default::default()
    }
}

fn generator_checks() -> Vec<Check> {
    vec![
        Check::new("zero baseline zEPE is 1", || {
            for kind in [
                DatasetKind::Single(single(64, 640, Mechanism::Resampling)),
                DatasetKind::Multi(MultiSceneConfig {
                    points_per_frame: 256,
                    pool_size: 1024,
                    n_objects: (2, 5),
                    ..Default::default()
                }),
            ] {
                let scenes = gen_dataset(&kind, 20, 1).map_err(err)?;
                let r = validate(&BaselineKind::Zero, &scenes).map_err(err)?;
                ensure((r.zepe - 1.0).abs() < 1e-12, || format!("zEPE {}", r.zepe))?;
            }
            Ok("single and multi".into())
        }),
        Check::new("correspondence frame2 = frame1 + flow", || {
            for seed in 0..200 {
                let g = gen_single_scene_detailed(&single(64, 640, Mechanism::Correspondence), seed).map_err(err)?;
                let p = &g.pair;
                for ((a, f), b) in p.frame1.points().iter().zip(p.flow.vectors()).zip(p.frame2.points()) {
                    ensure(add3(*a, *f) == *b, || format!("scene {seed} breaks exact sum"))?;
                }
            }
            Ok("200 scenes".into())
        }),
        Check::new("resampling shares about 10% of points", || {
            let cfg = single(512, 5120, Mechanism::Resampling);
            let mut total = 0.0;
            for seed in 0..200 {
                total += gen_single_scene_detailed(&cfg, seed).map_err(err)?.shared_fraction();
            }
            let mean = total / 200.0;
            ensure((mean - 0.10).abs() <= 0.01, || format!("mean shared fraction {mean:.4}"))?;
            Ok(format!("mean {mean:.4}"))
        }),
        Check::new("multi-object sharing within [0.001, 0.01]", || {
            let cfg = MultiSceneConfig::default();
            let mut total = 0.0;
            for seed in 0..20 {
                total += gen_multi_scene_detailed(&cfg, seed).map_err(err)?.shared_fraction();
            }
            let mean = total / 20.0;
            ensure((0.001..=0.01).contains(&mean), || format!("mean shared fraction {mean:.5}"))?;
            Ok(format!("mean {mean:.5}"))
        }),
        Check::new("flow equals the object transform", || {
            let mut worst: f64 = 0.0;
            for mechanism in [Mechanism::Correspondence, Mechanism::Resampling] {
                for seed in 0..30 {
                    let singles = gen_single_scene_detailed(&single(128, 1280, mechanism), seed).map_err(err)?;
                    let multi = MultiSceneConfig {
                        points_per_frame: 256,
                        pool_size: 512,
                        n_objects: (2, 6),
                        mechanism,
                        ..Default::default()
                    };
                    let multis = gen_multi_scene_detailed(&multi, seed).map_err(err)?;
                    for g in [singles, multis] {
                        for ((p, f), o) in g.pair.frame1.points().iter().zip(g.pair.flow.vectors()).zip(&g.frame1_objects) {
                            worst = worst.max(dist_sq3(add3(*p, *f), g.motions[*o].apply(*p)).sqrt());
                        }
                    }
                }
            }
            ensure(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
            Ok(format!("max deviation {worst:.1e}"))
        }),
        Check::new("generation is deterministic", || {
            let kind = DatasetKind::Single(single(32, 320, Mechanism::Resampling));
            let a = encode_dataset(&gen_dataset(&kind, 10, 77).map_err(err)?);
            let b = encode_dataset(&gen_dataset(&kind, 10, 77).map_err(err)?);
            ensure(a == b, || "regenerated bytes differ".into())?;
            Ok(format!("{} bytes", a.len()))
        }),
    ]
}

fn oracle_checks() -> Vec<Check> {
    vec![
        Check::new("nearest neighbors match brute force", || {
            let mut rng = SceneRng::new(500);
            for _ in 0..50 {
                let (nq, nt) = (1 + rng.below(200), 1 + rng.below(300));
                let k = 1 + rng.below(nt.min(5));
                let q = random_cloud(&mut rng, nq);
                let t = random_cloud(&mut rng, nt);
                let fast = nearest_neighbors(&q, &t, k).map_err(err)?;
                for (p, row) in q.points().iter().zip(&fast) {
                    ensure(*row == brute_force_knn(*p, t.points(), k), || "neighbor lists differ".into())?;
                }
                let pair = ScenePair::new(q.clone(), t.clone(), crate::FlowField::zeros(nq), Mechanism::Resampling, 0)
                    .map_err(err)?;
                let flow = knn_flow(&pair, k).map_err(err)?;
                for (i, p) in q.points().iter().enumerate() {
                    let nn = brute_force_knn(*p, t.points(), k);
                    let mut acc = [0.0; 3];
                    for n in &nn {
                        for a in 0..3 {
                            acc[a] += t.points()[n.index][a] - p[a];
                        }
                    }
                    ensure(flow.vectors()[i] == acc.map(|v| v / k as f64), || "knn flow differs".into())?;
                }
                let loss = knn_loss(&q, &t, k).map_err(err)?;
                let brute: f64 = q
                    .points()
                    .iter()
                    .map(|p| brute_force_knn(*p, t.points(), k).iter().map(|n| n.dist()).sum::<f64>() / k as f64)
                    .sum::<f64>()
                    / nq as f64;
                ensure(loss == brute, || format!("knn loss {loss} vs {brute}"))?;
            }
            Ok("50 instances".into())
        }),
        Check::new("hungarian matches permutation search", || {
            let mut rng = SceneRng::new(501);
            for _ in 0..40 {
                let n = 1 + rng.below(6);
                let a = random_cloud(&mut rng, n);
                let b = random_cloud(&mut rng, n);
                let fast = hungarian_distance(&a, &b).map_err(err)?;
                let best = permutations(n)
                    .iter()
                    .map(|perm| {
                        perm.iter()
                            .enumerate()
                            .map(|(i, &j)| dist_sq3(a.points()[i], b.points()[j]).sqrt())
                            .sum::<f64>()
                            / n as f64
                    })
                    .fold(f64::INFINITY, f64::min);
                ensure((fast - best).abs() < 1e-12, || format!("{fast} vs exhaustive {best}"))?;
            }
            Ok("40 instances".into())
        }),
    ]
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn algebra_checks() -> Vec<Check> {
    vec![
        Check::new("last-only schedule equals shallow triplet", || {
            let mut rng = SceneRng::new(600);
            for _ in 0..20 {
                let pyr = |rng: &mut SceneRng| EmbeddingPyramid {
                    levels: vec![random_tensor(rng, 1, 5), random_tensor(rng, 1, 3)],
                };
                let (a, p, n) = (pyr(&mut rng), pyr(&mut rng), pyr(&mut rng));
                let s = ScaleSchedule::new(ScheduleKind::LastOnly, 2);
                let ms = multiscale_triplet(&a, &p, &n, &s, 0.7).map_err(err)?;
                let d = |x: &Tensor, y: &Tensor| {
                    x.data().iter().zip(y.data()).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
                };
                let shallow = triplet_margin(d(&a.levels[0], &p.levels[0]), d(&a.levels[0], &n.levels[0]), 0.7);
                ensure(ms == shallow, || format!("{ms} vs {shallow}"))?;
            }
            Ok("20 pyramids".into())
        }),
        Check::new("cycle cos of F and -F is -1", || {
            let mut rng = SceneRng::new(601);
            let f = crate::FlowField::new((0..50).map(|_| rng.uniform3(-2.0, 2.0)).collect()).map_err(err)?;
            let neg = crate::FlowField::new(f.vectors().iter().map(|v| v.map(|x| -x)).collect()).map_err(err)?;
            let c = cycle_consistency(&f, &neg, CycleLoss::Cos).map_err(err)?;
            ensure(c == -1.0, || format!("got {c}"))?;
            Ok("exact".into())
        }),
        Check::new("two-level triplet example", || {
            let level = |v: f64| Tensor::new(1, 1, vec![v]).unwrap();
            let a = EmbeddingPyramid {
                levels: vec![level(0.0), level(0.0)],
            };
            let p = EmbeddingPyramid {
                levels: vec![level(0.5), level(0.5)],
            };
            let n = EmbeddingPyramid {
                levels: vec![level(1.0), level(1.0)],
            };
            let s = ScaleSchedule::new(ScheduleKind::InvSqrt, 2);
            let v = multiscale_triplet(&a, &p, &n, &s, 1.0).map_err(err)?;
            let expect = 0.5 + 0.5 / 2f64.sqrt();
            ensure((v - expect).abs() < 1e-9, || format!("{v} vs {expect}"))?;
            Ok(format!("{v:.5}"))
        }),
    ]
}

fn format_checks() -> Vec<Check> {
    vec![
        Check::new("dataset file round trip", || {
            let scenes: Vec<ScenePair> = gen_dataset(&DatasetKind::Single(single(40, 400, Mechanism::Resampling)), 4, 9)
                .map_err(err)?
                .iter()
                .map(ScenePair::quantized)
                .collect();
            let bytes = encode_dataset(&scenes);
            let back = decode_dataset(&bytes).map_err(err)?;
            ensure(encode_dataset(&back) == bytes, || "re-encoded bytes differ".into())?;
            ensure(back == scenes, || "decoded scenes differ from the quantized originals".into())?;
            for cut in [0, 5, bytes.len() / 2, bytes.len() - 1] {
                ensure(decode_dataset(&bytes[..cut]).is_err(), || format!("truncation at {cut} accepted"))?;
            }
            Ok(format!("{} bytes", bytes.len()))
        }),
        Check::new("checkpoint file round trip", || {
            let mut rng = SceneRng::new(700);
            let flow = FlowExtractorParams::init(&FlowExtractorSpec::default(), &mut rng).map_err(err)?;
            let bytes = checkpoint::encode_arrays(&flow.named());
            let arrays = checkpoint::decode_arrays(&bytes).map_err(err)?;
            let back = FlowExtractorParams::from_named(&arrays, flow.pool).map_err(err)?;
            ensure(back == flow, || "parameters changed".into())?;
            for cut in [0, 4, bytes.len() / 2, bytes.len() - 1] {
                ensure(checkpoint::decode_arrays(&bytes[..cut]).is_err(), || format!("truncation at {cut} accepted"))?;
            }
            Ok(format!("{} bytes", bytes.len()))
        }),
    ]
}

/// Every built-in check.
pub fn standard_checks() -> Vec<Check> {
    let mut checks = generator_checks();
    checks.extend(oracle_checks());
    checks.extend(gradient_checks());
    checks.extend(algebra_checks());
    checks.extend(format_checks());
    checks
}
