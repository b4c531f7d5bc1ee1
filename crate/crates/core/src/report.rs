//! Plot-ready CSV and JSON reports. Both carry the resolved configuration:
//! CSV as leading `# ` comment lines, JSON as a `config` string.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::FlowEstimator;
use crate::error::Result;
use crate::geometry::ScenePair;
use crate::metrics::{evaluate, mean_flow_norm, MetricsAccumulator, MetricsReport};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneRow {
    pub scene: usize,
    pub seed: u64,
    pub n_points: usize,
    pub epe: f64,
    pub zepe: f64,
    pub acc01: f64,
    pub acc005: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub config: String,
    pub estimator: String,
    pub scenes: Vec<SceneRow>,
    pub aggregate: MetricsReport,
}

/// Evaluates `estimator` on every scene. Per-scene zEPE uses the mean target
/// norm of the whole set, so rows and aggregate share a normalizer.
pub fn evaluate_scenes(
    estimator: &(dyn FlowEstimator + Sync),
    name: &str,
    scenes: &[ScenePair],
    config: &str,
) -> Result<EvalReport> {
    let norm = mean_flow_norm(scenes.iter().map(|s| &s.flow))?;
    let preds: Vec<_> = scenes
        .par_iter()
        .map(|s| estimator.estimate(s))
        .collect::<Result<_>>()?;
    let mut acc = MetricsAccumulator::default();
    let mut rows = Vec::with_capacity(scenes.len());
    for (i, (p, s)) in preds.iter().zip(scenes).enumerate() {
        acc.add(p, &s.flow)?;
        let r = evaluate(p, s, norm)?;
        rows.push(SceneRow {
            scene: i,
            seed: s.seed,
            n_points: r.n_points,
            epe: r.epe,
            zepe: r.zepe,
            acc01: r.acc01,
            acc005: r.acc005,
        });
    }
    Ok(EvalReport {
        config: config.to_string(),
        estimator: name.to_string(),
        scenes: rows,
        aggregate: acc.report(norm)?,
    })
}

/// `text` with every line prefixed by `# `, ending in a newline.
pub fn comment_block(text: &str) -> String {
    let mut s = String::new();
    for line in text.lines() {
        writeln!(s, "# {line}").unwrap();
    }
    s
}

pub const SCENE_CSV_HEADER: &str = "scene,seed,n_points,epe,zepe,acc01,acc005";

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = comment_block(&self.config);
        writeln!(s, "# estimator = {}", self.estimator).unwrap();
        writeln!(s, "{SCENE_CSV_HEADER}").unwrap();
        for r in &self.scenes {
            writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.scene, r.seed, r.n_points, r.epe, r.zepe, r.acc01, r.acc005
            )
            .unwrap();
        }
        let a = &self.aggregate;
        writeln!(s, "all,,{},{},{},{},{}", a.n_points, a.epe, a.zepe, a.acc01, a.acc005).unwrap();
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// The aggregate row (`scene == "all"`) of a CSV written by
/// [`EvalReport::to_csv`], as `(epe, zepe, acc01, acc005)`.
pub fn csv_aggregate(csv: &str) -> Option<(f64, f64, f64, f64)> {
    let line = csv.lines().find(|l| l.starts_with("all,"))?;
    let f: Vec<&str> = line.split(',').collect();
    let num = |i: usize| f.get(i)?.parse::<f64>().ok();
    Some((num(3)?, num(4)?, num(5)?, num(6)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::BaselineKind;
    use crate::scene_gen::{gen_dataset, DatasetKind, SingleSceneConfig};

    fn scenes() -> Vec<ScenePair> {
        let cfg = SingleSceneConfig {
            points_per_frame: 32,
            pool_size: 640,
            ..Default::default()
        };
        gen_dataset(&DatasetKind::Single(cfg), 5, 3).unwrap()
    }

    #[test]
    fn csv_and_json_agree() {
        let r = evaluate_scenes(&BaselineKind::knn(), "knn", &scenes(), "seed = 3\n[x]\ny = 1").unwrap();
        let csv = r.to_csv();
        assert!(csv.starts_with("# seed = 3\n# [x]\n# y = 1\n"));
        let (epe, zepe, a1, a5) = csv_aggregate(&csv).unwrap();
        let a = r.aggregate;
        assert_eq!((epe, zepe, a1, a5), (a.epe, a.zepe, a.acc01, a.acc005));

        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(json["aggregate"]["epe"].as_f64().unwrap(), a.epe);
        assert_eq!(json["aggregate"]["zepe"].as_f64().unwrap(), a.zepe);
        assert_eq!(json["scenes"].as_array().unwrap().len(), 5);
        assert_eq!(json["config"].as_str().unwrap(), "seed = 3\n[x]\ny = 1");
    }

    #[test]
    fn rows_are_point_weighted_into_aggregate() {
        let r = evaluate_scenes(&BaselineKind::Zero, "zero", &scenes(), "").unwrap();
        assert_eq!(r.aggregate.zepe, 1.0);
        let total: usize = r.scenes.iter().map(|s| s.n_points).sum();
        let weighted: f64 = r.scenes.iter().map(|s| s.epe * s.n_points as f64).sum::<f64>() / total as f64;
        assert!((weighted - r.aggregate.epe).abs() < 1e-12);
    }
}
