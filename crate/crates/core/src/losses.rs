//! Training losses, both on the tape and as plain values.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{invalid, Result};
use crate::geometry::{FlowField, PointCloud};
use crate::nets::EmbeddingPyramid;
use crate::spatial::knn_all;

/// Which terms of the cycle-consistency penalty are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleLoss {
    None,
    Cos,
    Mse,
    L2,
    CosMse,
    #[default]
    CosL2,
}

impl CycleLoss {
    pub const ALL: [CycleLoss; 6] = [
        CycleLoss::None,
        CycleLoss::Cos,
        CycleLoss::Mse,
        CycleLoss::L2,
        CycleLoss::CosMse,
        CycleLoss::CosL2,
    ];

    fn terms(self) -> (bool, bool, bool) {
        // (cos, mse, l2)
        match self {
            CycleLoss::None => (false, false, false),
            CycleLoss::Cos => (true, false, false),
            CycleLoss::Mse => (false, true, false),
            CycleLoss::L2 => (false, false, true),
            CycleLoss::CosMse => (true, true, false),
            CycleLoss::CosL2 => (true, false, true),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CycleLoss::None => "none",
            CycleLoss::Cos => "cos",
            CycleLoss::Mse => "mse",
            CycleLoss::L2 => "l2",
            CycleLoss::CosMse => "cos_mse",
            CycleLoss::CosL2 => "cos_l2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    LastOnly,
    #[default]
    InvSqrt,
    Inv,
    InvSquare,
}

/// Per-level weights `gamma_l`, level 0 being the deepest.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSchedule {
    pub kind: ScheduleKind,
    pub gammas: Vec<f64>,
}

impl ScaleSchedule {
    pub fn new(kind: ScheduleKind, levels: usize) -> Self {
        let gammas = (0..levels)
            .map(|l| {
                let x = (l + 1) as f64;
                match kind {
                    ScheduleKind::LastOnly => {
                        if l == 0 {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    ScheduleKind::InvSqrt => 1.0 / x.sqrt(),
                    ScheduleKind::Inv => 1.0 / x,
                    ScheduleKind::InvSquare => 1.0 / (x * x),
                }
            })
            .collect();
        Self { kind, gammas }
    }

    /// Arbitrary non-negative weights.
    pub fn custom(gammas: Vec<f64>) -> Result<Self> {
        if gammas.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return invalid("schedule weights must be finite and non-negative");
        }
        Ok(Self {
            kind: ScheduleKind::InvSqrt,
            gammas,
        })
    }

    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub gamma_cc: f64,
    pub gamma_knn: f64,
    pub margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gamma_cc: 1.0,
            gamma_knn: 1.0,
            margin: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.gamma_cc) || !ok(self.gamma_knn) {
            return invalid("loss weights must be finite and non-negative");
        }
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return invalid("triplet margin must be positive");
        }
        Ok(())
    }
}

fn zero_scalar(tape: &mut Tape) -> Var {
    tape.constant(Tensor::scalar(0.0))
}

/// Mean row norm of `pred - target`.
pub fn supervised_l2_var(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let d = tape.sub(pred, target)?;
    let n = tape.l2_norm_rows(d)?;
    tape.mean(n)
}

/// Cycle penalty between forward flow and the backward flow estimated from
/// the translated cloud. The L2 term is the mean of `|f_fwd + f_bwd|`, the
/// MSE term the mean over all elements of `(f_fwd + f_bwd)^2`, the cosine
/// term the mean row cosine of `(f_fwd, f_bwd)`. The cosine term is not
/// clamped, so the full penalty can reach -1.
pub fn cycle_consistency_var(tape: &mut Tape, fwd: Var, bwd: Var, kind: CycleLoss) -> Result<Var> {
    if tape.shape(fwd) != tape.shape(bwd) {
        return invalid("cycle consistency needs aligned flow fields");
    }
    let (cos, mse, l2) = kind.terms();
    let mut total: Option<Var> = None;
    let mut push = |tape: &mut Tape, v: Var| -> Result<()> {
        total = Some(match total {
            Some(t) => tape.add(t, v)?,
            None => v,
        });
        Ok(())
    };
    if l2 || mse {
        let s = tape.add(fwd, bwd)?;
        if l2 {
            let n = tape.l2_norm_rows(s)?;
            let m = tape.mean(n)?;
            push(tape, m)?;
        }
        if mse {
            let sq = tape.mul(s, s)?;
            let m = tape.mean(sq)?;
            push(tape, m)?;
        }
    }
    if cos {
        let c = tape.cosine_similarity_rows(fwd, bwd)?;
        let m = tape.mean(c)?;
        push(tape, m)?;
    }
    Ok(match total {
        Some(t) => t,
        None => zero_scalar(tape),
    })
}

/// `max(0, m + d_p - d_n)`.
pub fn triplet_margin(d_p: f64, d_n: f64, m: f64) -> f64 {
    (m + d_p - d_n).max(0.0)
}

pub fn triplet_margin_var(tape: &mut Tape, d_p: Var, d_n: Var, m: f64) -> Result<Var> {
    let shifted = tape.add_scalar(d_p, m)?;
    let diff = tape.sub(shifted, d_n)?;
    tape.max_with_zero(diff)
}

fn level_distance(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    tape.l2_norm_rows(d)
}

fn check_levels(schedule: &ScaleSchedule, lens: &[usize]) -> Result<()> {
    if lens.iter().any(|&l| l != schedule.len()) {
        return invalid(format!(
            "pyramid lengths {lens:?} do not match a {}-level schedule",
            schedule.len()
        ));
    }
    Ok(())
}

/// `sum_l gamma_l max(0, m + |a_l - p_l| - |a_l - n_l|)`. Levels with
/// zero weight are skipped.
pub fn multiscale_triplet_var(
    tape: &mut Tape,
    a: &[Var],
    p: &[Var],
    n: &[Var],
    schedule: &ScaleSchedule,
    m: f64,
) -> Result<Var> {
    check_levels(schedule, &[a.len(), p.len(), n.len()])?;
    let mut total: Option<Var> = None;
    for (l, &g) in schedule.gammas.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let dp = level_distance(tape, a[l], p[l])?;
        let dn = level_distance(tape, a[l], n[l])?;
        let h = triplet_margin_var(tape, dp, dn, m)?;
        let term = if g == 1.0 { h } else { tape.scale(h, g)? };
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    Ok(match total {
        Some(t) => t,
        None => zero_scalar(tape),
    })
}

/// `sum_l gamma_l |a_l - n_l|`.
pub fn multiscale_l2_var(tape: &mut Tape, a: &[Var], n: &[Var], schedule: &ScaleSchedule) -> Result<Var> {
    check_levels(schedule, &[a.len(), n.len()])?;
    let mut total: Option<Var> = None;
    for (l, &g) in schedule.gammas.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let d = level_distance(tape, a[l], n[l])?;
        let term = if g == 1.0 { d } else { tape.scale(d, g)? };
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    Ok(match total {
        Some(t) => t,
        None => zero_scalar(tape),
    })
}

/// Mean over rows of `pred` of the mean distance to the `k` nearest points
/// of `target`. Neighbors are found on the forward values and held fixed
/// for differentiation.
pub fn knn_loss_var(tape: &mut Tape, pred: Var, target: &PointCloud, k: usize) -> Result<Var> {
    let (n, c) = tape.shape(pred);
    if c != 3 || n == 0 {
        return invalid("knn loss needs a non-empty n x 3 prediction");
    }
    if k == 0 || k > target.len() {
        return invalid(format!("k = {k} but target has {} points", target.len()));
    }
    let query = tape.value(pred).to_vec3();
    let nn = knn_all(&query, target.points(), k);
    let mut total: Option<Var> = None;
    for j in 0..k {
        let rows: Vec<[f64; 3]> = nn.iter().map(|r| target.points()[r[j].index]).collect();
        let t = tape.constant(Tensor::from_rows(&rows));
        let d = level_distance(tape, pred, t)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, d)?,
            None => d,
        });
    }
    let per_point = tape.scale(total.expect("k >= 1"), 1.0 / k as f64)?;
    tape.mean(per_point)
}

fn flow_tensor(f: &FlowField) -> Tensor {
    Tensor::from_rows(f.vectors())
}

fn eval_scalar(build: impl FnOnce(&mut Tape) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let v = build(&mut tape)?;
    Ok(tape.value(v).item())
}

pub fn supervised_l2(pred: &FlowField, target: &FlowField) -> Result<f64> {
    if pred.len() != target.len() {
        return invalid("supervised loss needs aligned flow fields");
    }
    eval_scalar(|t| {
        let p = t.constant(flow_tensor(pred));
        let q = t.constant(flow_tensor(target));
        supervised_l2_var(t, p, q)
    })
}

pub fn cycle_consistency(fwd: &FlowField, bwd: &FlowField, kind: CycleLoss) -> Result<f64> {
    if fwd.len() != bwd.len() {
        return invalid("cycle consistency needs aligned flow fields");
    }
    eval_scalar(|t| {
        let a = t.constant(flow_tensor(fwd));
        let b = t.constant(flow_tensor(bwd));
        cycle_consistency_var(t, a, b, kind)
    })
}

fn bind_pyramid(tape: &mut Tape, p: &EmbeddingPyramid) -> Vec<Var> {
    p.levels.iter().map(|l| tape.constant(l.clone())).collect()
}

pub fn multiscale_triplet(
    a: &EmbeddingPyramid,
    p: &EmbeddingPyramid,
    n: &EmbeddingPyramid,
    schedule: &ScaleSchedule,
    m: f64,
) -> Result<f64> {
    eval_scalar(|t| {
        let (av, pv, nv) = (bind_pyramid(t, a), bind_pyramid(t, p), bind_pyramid(t, n));
        multiscale_triplet_var(t, &av, &pv, &nv, schedule, m)
    })
}

pub fn multiscale_l2(a: &EmbeddingPyramid, n: &EmbeddingPyramid, schedule: &ScaleSchedule) -> Result<f64> {
    eval_scalar(|t| {
        let (av, nv) = (bind_pyramid(t, a), bind_pyramid(t, n));
        multiscale_l2_var(t, &av, &nv, schedule)
    })
}
