use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::schedule::{EarlyStopping, PlateauScheduler};
use super::steps::{adversarial_step, knn_selfsup_step, supervised_step, SceneGrads, StepSettings};
use crate::autodiff::Tensor;
use crate::baselines::FlowEstimator;
use crate::error::{invalid, Result};
use crate::geometry::{apply_transform, make_rotation_matrix, FlowField, ScenePair};
use crate::losses::{CycleLoss, LossWeights, ScaleSchedule, ScheduleKind};
use crate::metrics::{mean_flow_norm, MetricsAccumulator, MetricsReport};
use crate::nets::{EmbedderParams, EmbedderSpec, FlowExtractorParams, FlowExtractorSpec};
use crate::rng::SceneRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Adversarial,
    Knn,
    Supervised,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Adversarial => "adversarial",
            Method::Knn => "knn",
            Method::Supervised => "supervised",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub min_epochs: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub flow_adam: AdamConfig,
    pub embedder_adam: AdamConfig,
    pub lr_decay: f64,
    pub lr_patience: usize,
    pub stop_patience: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub cycle: CycleLoss,
    pub schedule: ScheduleKind,
    pub knn_k: usize,
    pub match_negative_size: bool,
    /// Rotate each training pair by a fresh random rotation every time it is
    /// visited (both frames and the flow).
    pub augment: bool,
    pub flow: FlowExtractorSpec,
    pub embedder: EmbedderSpec,
}

impl TrainConfig {
    /// Defaults for `method`.
    pub fn new(method: Method) -> Self {
        let adversarial = method == Method::Adversarial;
        let flow_lr = if adversarial { 5e-4 } else { 1e-4 };
        Self {
            method,
            min_epochs: 50,
            max_epochs: 500,
            batch_size: 8,
            flow_adam: AdamConfig {
                lr: flow_lr,
                ..AdamConfig::default()
            },
            embedder_adam: AdamConfig {
                lr: 5e-5,
                ..AdamConfig::default()
            },
            lr_decay: if adversarial { 0.75 } else { 0.5 },
            lr_patience: if adversarial { 10 } else { 5 },
            stop_patience: if adversarial { 40 } else { 20 },
            seed: 0,
            weights: LossWeights::default(),
            cycle: CycleLoss::default(),
            schedule: ScheduleKind::default(),
            knn_k: 1,
            match_negative_size: true,
            augment: true,
            flow: FlowExtractorSpec::default(),
            embedder: EmbedderSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.min_epochs > self.max_epochs {
            return invalid("need 0 < min_epochs <= max_epochs");
        }
        if self.batch_size == 0 || self.knn_k == 0 {
            return invalid("batch size and k must be positive");
        }
        if self.lr_patience == 0 || self.stop_patience == 0 {
            return invalid("patience values must be at least 1");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return invalid("lr decay factor must lie in (0, 1]");
        }
        self.flow_adam.validate()?;
        self.embedder_adam.validate()?;
        self.weights.validate()?;
        self.flow.validate()?;
        self.embedder.validate()
    }

    pub fn step_settings(&self) -> StepSettings {
        StepSettings {
            weights: self.weights,
            cycle: self.cycle,
            schedule: ScaleSchedule::new(self.schedule, self.embedder.stages.len()),
            knn_k: self.knn_k,
            match_negative_size: self.match_negative_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub flow_loss: f64,
    /// Absent for methods without an embedder.
    pub embed_loss: Option<f64>,
    pub val: MetricsReport,
    pub flow_lr: f64,
    pub embed_lr: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str =
        "epoch,flow_loss,embed_loss,val_epe,val_zepe,val_acc01,val_acc005,flow_lr,embed_lr";

    pub fn csv_row(r: &EpochRecord) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        format!(
            "{},{:e},{},{:e},{:e},{:e},{:e},{:e},{}",
            r.epoch,
            r.flow_loss,
            opt(r.embed_loss),
            r.val.epe,
            r.val.zepe,
            r.val.acc01,
            r.val.acc005,
            r.flow_lr,
            opt(r.embed_lr)
        )
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{}", Self::CSV_HEADER).unwrap();
        for r in &self.records {
            writeln!(s, "{}", Self::csv_row(r)).unwrap();
        }
        s
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.records
            .iter()
            .fold(None, |best: Option<&EpochRecord>, r| match best {
                Some(b) if b.val.epe <= r.val.epe => Some(b),
                _ => Some(r),
            })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation EPE.
    pub flow: FlowExtractorParams,
    pub embedder: Option<EmbedderParams>,
    /// Flow parameters after the final epoch.
    pub last_flow: FlowExtractorParams,
    pub log: TrainLog,
    pub best_epoch: usize,
}

/// Point-weighted metrics of `estimator` on `scenes`, normalized by the mean
/// target norm of `scenes`.
pub fn validate(estimator: &(dyn FlowEstimator + Sync), scenes: &[ScenePair]) -> Result<MetricsReport> {
    if scenes.is_empty() {
        return invalid("validation set is empty");
    }
    let norm = mean_flow_norm(scenes.iter().map(|s| &s.flow))?;
    let preds: Vec<_> = scenes
        .par_iter()
        .map(|s| estimator.estimate(s))
        .collect::<Result<_>>()?;
    let mut acc = MetricsAccumulator::default();
    for (p, s) in preds.iter().zip(scenes) {
        acc.add(p, &s.flow)?;
    }
    acc.report(norm)
}

fn average(grads: &[Vec<Tensor>]) -> Vec<Tensor> {
    let mut out = grads[0].clone();
    for g in &grads[1..] {
        for (o, t) in out.iter_mut().zip(g) {
            for (a, b) in o.data_mut().iter_mut().zip(t.data()) {
                *a += b;
            }
        }
    }
    let k = 1.0 / grads.len() as f64;
    for o in &mut out {
        for a in o.data_mut() {
            *a *= k;
        }
    }
    out
}

/// Applies one random rotation about the origin to both frames and the
/// flow. The result skips pair validation: rotation does not preserve the
/// bit-exact sum of correspondence pairs, and training does not need it.
fn random_rotation(pair: &ScenePair, rng: &mut SceneRng) -> Result<ScenePair> {
    let r = make_rotation_matrix(rng.uniform3(-PI, PI), [1.0; 3])?;
    let flow = FlowField::new(pair.flow.vectors().iter().map(|v| r.mul_vec(*v)).collect())?;
    Ok(ScenePair {
        frame1: apply_transform(&pair.frame1, &r, [0.0; 3]),
        frame2: apply_transform(&pair.frame2, &r, [0.0; 3]),
        flow,
        mechanism: pair.mechanism,
        seed: pair.seed,
    })
}

/// Runs training with `progress` called after every epoch.
pub fn train_loop_with(
    cfg: &TrainConfig,
    train: &[ScenePair],
    val: &[ScenePair],
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return invalid("training and validation sets must be non-empty");
    }
    let mut init_rng = SceneRng::for_stream(cfg.seed, 0);
    let mut flow = FlowExtractorParams::init(&cfg.flow, &mut init_rng)?;
    let mut embedder = match cfg.method {
        Method::Adversarial => Some(EmbedderParams::init(&cfg.embedder, &mut init_rng)?),
        _ => None,
    };
    let mut flow_opt = Adam::new(cfg.flow_adam);
    let mut embed_opt = Adam::new(cfg.embedder_adam);
    let mut plateau = PlateauScheduler::new(cfg.lr_decay, cfg.lr_patience);
    let mut stopper = EarlyStopping::new(cfg.min_epochs, cfg.stop_patience);
    let settings = cfg.step_settings();
    let mut order_rng = SceneRng::for_stream(cfg.seed, 1);

    let mut log = TrainLog::default();
    let mut best = (f64::INFINITY, flow.clone(), embedder.clone(), 0usize);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step_counter: u64 = 0;

    for epoch in 0..cfg.max_epochs {
        order_rng.shuffle(&mut order);
        let (mut flow_sum, mut embed_sum) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let base = step_counter;
            step_counter += batch.len() as u64;
            let results: Vec<SceneGrads> = batch
                .par_iter()
                .enumerate()
                .map(|(j, &i)| {
                    let mut rng = SceneRng::for_stream(cfg.seed, 2 + base + j as u64);
                    let rotated;
                    let scene = if cfg.augment {
                        rotated = random_rotation(&train[i], &mut rng)?;
                        &rotated
                    } else {
                        &train[i]
                    };
                    match (&cfg.method, &embedder) {
                        (Method::Adversarial, Some(e)) => {
                            adversarial_step(&flow, e, scene, &settings, rng.next_u64()).map(|r| r.0)
                        }
                        (Method::Knn, _) => knn_selfsup_step(&flow, scene, &settings),
                        _ => supervised_step(&flow, scene),
                    }
                })
                .collect::<Result<_>>()?;
            for r in &results {
                flow_sum += r.flow_loss;
                embed_sum += r.embed_loss.unwrap_or(0.0);
            }
            if let Some(e) = embedder.as_mut() {
                let g: Vec<Vec<Tensor>> = results.iter().filter_map(|r| r.embedder.clone()).collect();
                embed_opt.step(e.tensors_mut(), &average(&g))?;
            }
            let g: Vec<Vec<Tensor>> = results.into_iter().map(|r| r.flow).collect();
            flow_opt.step(flow.tensors_mut(), &average(&g))?;
        }

        let report = validate(&flow, val)?;
        let n = train.len() as f64;
        let record = EpochRecord {
            epoch,
            flow_loss: flow_sum / n,
            embed_loss: embedder.as_ref().map(|_| embed_sum / n),
            val: report,
            flow_lr: flow_opt.config.lr,
            embed_lr: embedder.as_ref().map(|_| embed_opt.config.lr),
        };
        progress(&record);
        log.records.push(record);

        if report.epe < best.0 {
            best = (report.epe, flow.clone(), embedder.clone(), epoch);
        }
        let factor = plateau.observe(report.epe);
        if factor != 1.0 {
            flow_opt.set_lr(flow_opt.config.lr * factor);
            embed_opt.set_lr(embed_opt.config.lr * factor);
        }
        if stopper.observe(report.epe) {
            break;
        }
    }
    Ok(TrainOutcome {
        flow: best.1,
        embedder: best.2,
        last_flow: flow,
        log,
        best_epoch: best.3,
    })
}

pub fn train_loop(cfg: &TrainConfig, train: &[ScenePair], val: &[ScenePair]) -> Result<TrainOutcome> {
    train_loop_with(cfg, train, val, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::BaselineKind;
    use crate::geometry::Mechanism;
    use crate::scene_gen::{gen_dataset, DatasetKind, SingleSceneConfig};

    fn data(count: usize, seed: u64) -> Vec<ScenePair> {
        let cfg = SingleSceneConfig {
            points_per_frame: 24,
            pool_size: 480,
            mechanism: Mechanism::Resampling,
            ..Default::default()
        };
        gen_dataset(&DatasetKind::Single(cfg), count, seed).unwrap()
    }

    fn tiny(method: Method) -> TrainConfig {
        let mut cfg = TrainConfig::new(method);
        cfg.min_epochs = 1;
        cfg.max_epochs = 2;
        cfg.batch_size = 3;
        cfg.flow.local = vec![8];
        cfg.flow.global = vec![8];
        cfg.flow.decoder = vec![8];
        cfg.embedder.stages = vec![8, 8];
        cfg
    }

    #[test]
    fn zero_estimator_scores_one() {
        let val = data(6, 50);
        let r = validate(&BaselineKind::Zero, &val).unwrap();
        assert!((r.zepe - 1.0).abs() < 1e-12);
        assert!(validate(&BaselineKind::Zero, &[]).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let (train, val) = (data(7, 10), data(3, 20));
        for method in [Method::Adversarial, Method::Knn, Method::Supervised] {
            let cfg = tiny(method);
            let a = train_loop(&cfg, &train, &val).unwrap();
            let b = train_loop(&cfg, &train, &val).unwrap();
            assert_eq!(a.log.to_csv(), b.log.to_csv());
            assert_eq!(a.flow, b.flow);
            assert_eq!(a.embedder, b.embedder);
            assert_eq!(a.log.records.len(), 2);
            assert_eq!(a.embedder.is_some(), method == Method::Adversarial);
        }
    }

    #[test]
    fn best_epoch_params_are_returned() {
        let (train, val) = (data(6, 30), data(3, 40));
        let mut cfg = tiny(Method::Supervised);
        cfg.max_epochs = 4;
        cfg.flow_adam.lr = 1e-2;
        let out = train_loop(&cfg, &train, &val).unwrap();
        let best = out.log.best().unwrap();
        assert_eq!(best.epoch, out.best_epoch);
        let r = validate(&out.flow, &val).unwrap();
        assert_eq!(r.epe, best.val.epe);
    }

    #[test]
    fn bad_inputs_rejected() {
        let train = data(3, 60);
        assert!(train_loop(&tiny(Method::Knn), &train, &[]).is_err());
        assert!(train_loop(&tiny(Method::Knn), &[], &train).is_err());
        let mut cfg = tiny(Method::Knn);
        cfg.lr_patience = 0;
        assert!(cfg.validate().is_err());
        cfg = tiny(Method::Knn);
        cfg.flow_adam.lr = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn csv_has_one_row_per_epoch() {
        let (train, val) = (data(4, 70), data(2, 80));
        let out = train_loop(&tiny(Method::Adversarial), &train, &val).unwrap();
        let csv = out.log.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], TrainLog::CSV_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 9));
    }

    #[test]
    fn rotation_preserves_flow_norms() {
        let pair = &data(1, 90)[0];
        let mut rng = SceneRng::new(1);
        let r = random_rotation(pair, &mut rng).unwrap();
        let a = mean_flow_norm([&pair.flow]).unwrap();
        let b = mean_flow_norm([&r.flow]).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
