//! Non-learning flow estimators: zero, centroid shift and nearest neighbor.

use crate::error::{invalid, Result};
use crate::geometry::{sub3, FlowField, ScenePair, Vec3};
use crate::spatial::knn_all;

/// Callable flow estimator: maps a scene pair to a flow aligned with frame1.
pub trait FlowEstimator {
    fn estimate(&self, pair: &ScenePair) -> Result<FlowField>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Zero,
    Average,
    Knn { k: usize },
}

impl BaselineKind {
    pub const DEFAULT_K: usize = 1;

    pub fn knn() -> Self {
        BaselineKind::Knn { k: Self::DEFAULT_K }
    }

    pub fn name(&self) -> String {
        match self {
            BaselineKind::Zero => "zero".into(),
            BaselineKind::Average => "average".into(),
            BaselineKind::Knn { k } if *k == Self::DEFAULT_K => "knn".into(),
            BaselineKind::Knn { k } => format!("knn{k}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BaselineKind::Knn { k: 0 } => invalid("knn baseline needs k >= 1"),
            _ => Ok(()),
        }
    }
}

impl FlowEstimator for BaselineKind {
    fn estimate(&self, pair: &ScenePair) -> Result<FlowField> {
        match *self {
            BaselineKind::Zero => Ok(zero_flow(pair)),
            BaselineKind::Average => average_flow(pair),
            BaselineKind::Knn { k } => knn_flow(pair, k),
        }
    }
}

pub fn zero_flow(pair: &ScenePair) -> FlowField {
    FlowField::zeros(pair.frame1.len())
}

/// Every row is the centroid shift between the two frames.
pub fn average_flow(pair: &ScenePair) -> Result<FlowField> {
    if pair.frame1.is_empty() || pair.frame2.is_empty() {
        return invalid("average flow of an empty frame");
    }
    let shift = sub3(pair.frame2.centroid(), pair.frame1.centroid());
    FlowField::constant(pair.frame1.len(), shift)
}

/// Row i is the mean offset from point i to its `k` nearest frame2 points.
pub fn knn_flow(pair: &ScenePair, k: usize) -> Result<FlowField> {
    let target = pair.frame2.points();
    if k == 0 || k > target.len() {
        return invalid(format!("k = {k} but frame2 has {} points", target.len()));
    }
    let query = pair.frame1.points();
    let nn = knn_all(query, target, k);
    let vectors: Vec<Vec3> = query
        .iter()
        .zip(&nn)
        .map(|(p, row)| {
            let mut acc = [0.0; 3];
            for n in row {
                let d = sub3(target[n.index], *p);
                for a in 0..3 {
                    acc[a] += d[a];
                }
            }
            acc.map(|v| v / k as f64)
        })
        .collect();
    FlowField::new(vectors)
}
