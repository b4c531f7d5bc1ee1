//! End point error, accuracy thresholds and dataset-normalized EPE.
//!
//! Dataset-level numbers are point-weighted: every point of every scene
//! counts once, regardless of how many points its scene has.

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::geometry::{norm3, sub3, FlowField, ScenePair};

/// Acc 01: error below 0.1 m or 10% of the target norm.
pub const ACC01: (f64, f64) = (0.1, 0.10);
/// Acc 005: error below 0.05 m or 5% of the target norm.
pub const ACC005: (f64, f64) = (0.05, 0.05);

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub epe: f64,
    pub zepe: f64,
    pub acc01: f64,
    pub acc005: f64,
    pub mean_target_norm: f64,
    pub n_points: usize,
}

fn check_aligned(pred: &FlowField, target: &FlowField) -> Result<()> {
    if pred.len() != target.len() {
        return invalid(format!(
            "prediction has {} rows, target has {}",
            pred.len(),
            target.len()
        ));
    }
    if pred.is_empty() {
        return invalid("empty flow fields");
    }
    Ok(())
}

fn errors<'a>(pred: &'a FlowField, target: &'a FlowField) -> impl Iterator<Item = f64> + 'a {
    pred.vectors()
        .iter()
        .zip(target.vectors())
        .map(|(p, t)| norm3(sub3(*p, *t)))
}

pub fn epe(pred: &FlowField, target: &FlowField) -> Result<f64> {
    check_aligned(pred, target)?;
    Ok(errors(pred, target).sum::<f64>() / pred.len() as f64)
}

fn is_hit(err: f64, target_norm: f64, abs_thresh: f64, rel_thresh: f64) -> bool {
    err <= abs_thresh || err <= rel_thresh * target_norm
}

/// Fraction of rows within `abs_thresh` meters or `rel_thresh` of the target
/// norm. Either criterion suffices.
pub fn accuracy(pred: &FlowField, target: &FlowField, abs_thresh: f64, rel_thresh: f64) -> Result<f64> {
    check_aligned(pred, target)?;
    if !(abs_thresh > 0.0) || !(rel_thresh > 0.0) {
        return invalid("accuracy thresholds must be positive");
    }
    let hits = errors(pred, target)
        .zip(target.vectors())
        .filter(|(e, t)| is_hit(*e, norm3(**t), abs_thresh, rel_thresh))
        .count();
    Ok(hits as f64 / pred.len() as f64)
}

pub fn mean_flow_norm<'a>(targets: impl IntoIterator<Item = &'a FlowField>) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for f in targets {
        for v in f.vectors() {
            sum += norm3(*v);
        }
        n += f.len();
    }
    if n == 0 {
        return invalid("mean flow norm of an empty set");
    }
    Ok(sum / n as f64)
}

/// Running point-weighted totals.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricsAccumulator {
    err_sum: f64,
    hits01: usize,
    hits005: usize,
    n: usize,
}

impl MetricsAccumulator {
    pub fn add(&mut self, pred: &FlowField, target: &FlowField) -> Result<()> {
        check_aligned(pred, target)?;
        for (e, t) in errors(pred, target).zip(target.vectors()) {
            let tn = norm3(*t);
            self.err_sum += e;
            self.hits01 += is_hit(e, tn, ACC01.0, ACC01.1) as usize;
            self.hits005 += is_hit(e, tn, ACC005.0, ACC005.1) as usize;
        }
        self.n += pred.len();
        Ok(())
    }

    pub fn report(&self, dataset_mean_norm: f64) -> Result<MetricsReport> {
        if !(dataset_mean_norm > 0.0) {
            return invalid(format!(
                "dataset mean norm must be positive, got {dataset_mean_norm}"
            ));
        }
        if self.n == 0 {
            return invalid("no points evaluated");
        }
        let n = self.n as f64;
        let epe = self.err_sum / n;
        Ok(MetricsReport {
            epe,
            zepe: epe / dataset_mean_norm,
            acc01: self.hits01 as f64 / n,
            acc005: self.hits005 as f64 / n,
            mean_target_norm: dataset_mean_norm,
            n_points: self.n,
        })
    }
}

pub fn evaluate(pred: &FlowField, pair: &ScenePair, dataset_mean_norm: f64) -> Result<MetricsReport> {
    let mut acc = MetricsAccumulator::default();
    acc.add(pred, &pair.flow)?;
    acc.report(dataset_mean_norm)
}
