use serde::{Deserialize, Serialize};

use super::flow_extractor::collect_mlp;
use super::mlp::Mlp;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{invalid, Result};
use crate::geometry::PointCloud;
use crate::rng::SceneRng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderSpec {
    /// Output width of each stage, shallowest first.
    pub stages: Vec<usize>,
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        Self { stages: vec![32, 64, 128] }
    }
}

impl EmbedderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() || self.stages.contains(&0) {
            return invalid("embedder needs one or more positive stage widths");
        }
        Ok(())
    }
}

/// Global feature vectors of one cloud; index 0 is the deepest stage.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPyramid {
    pub levels: Vec<Tensor>,
}

impl EmbeddingPyramid {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Per-point stages, each a linear layer with ReLU, with a max-pooled
/// global vector read out after every stage.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderParams {
    pub stages: Vec<Mlp>,
}

#[derive(Debug, Clone)]
pub struct EmbedderVars {
    stages: Vec<Vec<Var>>,
}

impl EmbedderVars {
    pub fn all(&self) -> Vec<Var> {
        self.stages.iter().flatten().copied().collect()
    }
}

impl EmbedderParams {
    pub fn init(spec: &EmbedderSpec, rng: &mut SceneRng) -> Result<Self> {
        spec.validate()?;
        let mut prev = 3;
        let mut stages = Vec::with_capacity(spec.stages.len());
        for &w in &spec.stages {
            stages.push(Mlp::init(&[prev, w], true, false, rng)?);
            prev = w;
        }
        Ok(Self { stages })
    }

    pub fn spec(&self) -> EmbedderSpec {
        EmbedderSpec {
            stages: self.stages.iter().map(Mlp::output_dim).collect(),
        }
    }

    pub fn levels(&self) -> usize {
        self.stages.len()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.stages.iter().flat_map(Mlp::tensors).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.stages.iter_mut().flat_map(Mlp::tensors_mut).collect()
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        self.stages
            .iter()
            .enumerate()
            .flat_map(|(i, s)| s.named(&format!("embed.stage{i}")))
            .collect()
    }

    pub fn from_named(arrays: &[(String, Tensor)]) -> Result<Self> {
        let mut stages: Vec<Mlp> = Vec::new();
        while arrays.iter().any(|(n, _)| n.starts_with(&format!("embed.stage{}.", stages.len()))) {
            stages.push(collect_mlp(arrays, &format!("embed.stage{}", stages.len()), true)?);
        }
        if stages.is_empty() {
            return invalid("no embedder arrays found");
        }
        let mut prev = 3;
        for s in &stages {
            if s.input_dim() != prev {
                return invalid("embedder stage widths do not chain");
            }
            prev = s.output_dim();
        }
        Ok(Self { stages })
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> EmbedderVars {
        EmbedderVars {
            stages: self.stages.iter().map(|s| s.bind(tape, trainable)).collect(),
        }
    }

    /// Pyramid of `1 x width` handles, deepest first.
    pub fn forward(&self, tape: &mut Tape, vars: &EmbedderVars, cloud: Var) -> Result<Vec<Var>> {
        let (n, c) = tape.shape(cloud);
        if n == 0 || c != 3 {
            return invalid("embedder needs a non-empty n x 3 cloud");
        }
        let mut h = cloud;
        let mut out = Vec::with_capacity(self.stages.len());
        for (stage, v) in self.stages.iter().zip(&vars.stages) {
            h = stage.forward(tape, v, h)?;
            out.push(tape.max_pool_rows(h)?);
        }
        out.reverse();
        Ok(out)
    }

    pub fn embed(&self, cloud: &PointCloud) -> Result<EmbeddingPyramid> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let x = tape.constant(Tensor::from_rows(cloud.points()));
        let levels = self.forward(&mut tape, &vars, x)?;
        Ok(EmbeddingPyramid {
            levels: levels.into_iter().map(|v| tape.value(v).clone()).collect(),
        })
    }
}
