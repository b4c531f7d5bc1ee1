use serde::{Deserialize, Serialize};

use super::mlp::{Linear, Mlp};
use crate::autodiff::{Tape, Tensor, Var};
use crate::baselines::FlowEstimator;
use crate::error::{invalid, Result};
use crate::geometry::{FlowField, PointCloud, ScenePair};
use crate::rng::SceneRng;

/// How the per-point features of both frames become the global feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalPool {
    /// One max pool over the rows of both frames.
    Joint,
    /// `[pool(frame1) | pool(frame2)]`.
    PerFrame,
    /// `[pool(frame1) | pool(frame2) - pool(frame1)]`.
    #[default]
    Delta,
}

impl GlobalPool {
    pub const ALL: [GlobalPool; 3] = [GlobalPool::Joint, GlobalPool::PerFrame, GlobalPool::Delta];

    pub fn code(self) -> u8 {
        match self {
            GlobalPool::Joint => 0,
            GlobalPool::PerFrame => 1,
            GlobalPool::Delta => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.code() == code)
    }

    fn width(self, g: usize) -> usize {
        match self {
            GlobalPool::Joint => g,
            GlobalPool::PerFrame | GlobalPool::Delta => 2 * g,
        }
    }
}

/// Layer widths of the flow extractor. The decoder always ends in a linear
/// 3-wide layer, which is appended to `decoder`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowExtractorSpec {
    pub local: Vec<usize>,
    pub global: Vec<usize>,
    pub decoder: Vec<usize>,
    pub zero_init_decoder: bool,
    pub pool: GlobalPool,
    /// Adds `[p | 1] B` to each output row, with the 4x3 matrix `B` read
    /// linearly from the global feature. Its weights start at zero.
    pub affine_head: bool,
    /// Appends to the global feature, for every local channel and each
    /// frame, the coordinates of the point where that channel peaks.
    pub support_points: bool,
}

impl Default for FlowExtractorSpec {
    fn default() -> Self {
        Self {
            local: vec![32],
            global: vec![64],
            decoder: vec![64, 32],
            zero_init_decoder: false,
            pool: GlobalPool::Delta,
            affine_head: true,
            support_points: false,
        }
    }
}

impl FlowExtractorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.local.is_empty() || self.global.is_empty() {
            return invalid("flow extractor needs at least one local and one global layer");
        }
        if [&self.local, &self.global, &self.decoder].iter().any(|d| d.contains(&0)) {
            return invalid("flow extractor layer widths must be positive");
        }
        Ok(())
    }
}

/// Point-set flow regressor. Each point of both frames gets a time channel
/// (0 for frame1, 1 for frame2); a shared per-point encoder feeds a
/// max-pooled global feature, and the decoder maps
/// `[point feature | global feature]` to a 3-vector for frame1 points only.
/// Coordinates are centered on frame1's bounding box first. The pool reads
/// both the local features and the deeper global-branch features.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowExtractorParams {
    pub local: Mlp,
    pub global: Mlp,
    pub decoder: Mlp,
    pub affine: Option<Mlp>,
    pub pool: GlobalPool,
    pub support_points: bool,
}

/// Tape handles of a bound [`FlowExtractorParams`].
#[derive(Debug, Clone)]
pub struct FlowVars {
    local: Vec<Var>,
    global: Vec<Var>,
    decoder: Vec<Var>,
    affine: Vec<Var>,
}

impl FlowVars {
    /// Handles in [`FlowExtractorParams::tensors`] order.
    pub fn all(&self) -> Vec<Var> {
        self.local
            .iter()
            .chain(&self.global)
            .chain(&self.decoder)
            .chain(&self.affine)
            .copied()
            .collect()
    }
}

impl FlowExtractorParams {
    pub fn init(spec: &FlowExtractorSpec, rng: &mut SceneRng) -> Result<Self> {
        spec.validate()?;
        let mut local_dims = vec![4];
        local_dims.extend(&spec.local);
        let l = *local_dims.last().unwrap();
        let mut global_dims = vec![l];
        global_dims.extend(&spec.global);
        let g = *global_dims.last().unwrap();
        let pooled = global_width(spec.pool, l, g, spec.support_points);
        let mut dec_dims = vec![l + pooled];
        dec_dims.extend(&spec.decoder);
        dec_dims.push(3);
        let local = Mlp::init(&local_dims, true, false, rng)?;
        let global = Mlp::init(&global_dims, true, false, rng)?;
        let decoder = Mlp::init(&dec_dims, false, spec.zero_init_decoder, rng)?;
        let affine = if spec.affine_head {
            Some(Mlp::init(&[pooled, 12], false, true, rng)?)
        } else {
            None
        };
        Ok(Self {
            local,
            global,
            decoder,
            affine,
            pool: spec.pool,
            support_points: spec.support_points,
        })
    }

    pub fn spec(&self) -> FlowExtractorSpec {
        let tail = |m: &Mlp| m.dims()[1..].to_vec();
        let mut decoder = tail(&self.decoder);
        decoder.pop();
        FlowExtractorSpec {
            local: tail(&self.local),
            global: tail(&self.global),
            decoder,
            zero_init_decoder: false,
            pool: self.pool,
            affine_head: self.affine.is_some(),
            support_points: self.support_points,
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut t = self.local.tensors();
        t.extend(self.global.tensors());
        t.extend(self.decoder.tensors());
        if let Some(a) = &self.affine {
            t.extend(a.tensors());
        }
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut t = self.local.tensors_mut();
        t.extend(self.global.tensors_mut());
        t.extend(self.decoder.tensors_mut());
        if let Some(a) = &mut self.affine {
            t.extend(a.tensors_mut());
        }
        t
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut t = self.local.named("flow.local");
        t.extend(self.global.named("flow.global"));
        t.extend(self.decoder.named("flow.decoder"));
        if let Some(a) = &self.affine {
            t.extend(a.named("flow.affine"));
        }
        t
    }

    /// Rebuilds parameters from `named()` output, inferring widths from
    /// shapes. Split pooling modes share a layout, so `pool` is supplied.
    pub fn from_named(arrays: &[(String, Tensor)], pool: GlobalPool) -> Result<Self> {
        let local = collect_mlp(arrays, "flow.local", true)?;
        let global = collect_mlp(arrays, "flow.global", true)?;
        let decoder = collect_mlp(arrays, "flow.decoder", false)?;
        let affine = if arrays.iter().any(|(n, _)| n.starts_with("flow.affine.")) {
            Some(collect_mlp(arrays, "flow.affine", false)?)
        } else {
            None
        };
        let (l, g) = (local.output_dim(), global.output_dim());
        let support_points = decoder.input_dim() == l + global_width(pool, l, g, true);
        let pooled = global_width(pool, l, g, support_points);
        if local.input_dim() != 4
            || global.input_dim() != l
            || decoder.input_dim() != l + pooled
            || decoder.output_dim() != 3
            || affine.as_ref().is_some_and(|a| a.dims() != [pooled, 12])
        {
            return invalid("flow extractor arrays have inconsistent widths");
        }
        Ok(Self {
            local,
            global,
            decoder,
            affine,
            pool,
            support_points,
        })
    }

    /// [`named`](Self::named) plus a `1 x 1` `flow.pool` array holding the
    /// pooling code, so a checkpoint is self-describing.
    pub fn checkpoint_arrays(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self.named().into_iter().map(|(n, t)| (n, t.clone())).collect();
        out.push(("flow.pool".into(), Tensor::scalar(self.pool.code() as f64)));
        out
    }

    pub fn from_checkpoint_arrays(arrays: &[(String, Tensor)]) -> Result<Self> {
        let pool = match arrays.iter().find(|(n, _)| n == "flow.pool") {
            None => return invalid("checkpoint has no flow.pool entry"),
            Some((_, t)) => {
                let code = t.data().first().copied().unwrap_or(-1.0);
                GlobalPool::ALL
                    .into_iter()
                    .find(|p| p.code() as f64 == code)
                    .ok_or_else(|| crate::Error::InvalidArgument(format!("unknown pooling code {code}")))?
            }
        };
        Self::from_named(arrays, pool)
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> FlowVars {
        FlowVars {
            local: self.local.bind(tape, trainable),
            global: self.global.bind(tape, trainable),
            decoder: self.decoder.bind(tape, trainable),
            affine: self.affine.as_ref().map_or_else(Vec::new, |a| a.bind(tape, trainable)),
        }
    }

    /// Flow for each row of `frame1` (`n1 x 3`), given both frames as
    /// `n x 3` tape values.
    pub fn forward(&self, tape: &mut Tape, vars: &FlowVars, frame1: Var, frame2: Var) -> Result<Var> {
        let (n1, c1) = tape.shape(frame1);
        let (n2, c2) = tape.shape(frame2);
        if n1 == 0 || n2 == 0 {
            return invalid("flow extractor needs non-empty frames");
        }
        if c1 != 3 || c2 != 3 {
            return invalid("flow extractor frames must have three columns");
        }
        let hi = tape.max_pool_rows(frame1)?;
        let lo = tape.min_pool_rows(frame1)?;
        let mid = tape.add(hi, lo)?;
        let center = tape.scale(mid, 0.5)?;
        let c1b = tape.broadcast_rows(center, n1)?;
        let c2b = tape.broadcast_rows(center, n2)?;
        let x1 = tape.sub(frame1, c1b)?;
        let x2 = tape.sub(frame2, c2b)?;
        let t1 = tape.constant(Tensor::zeros(n1, 1));
        let t2 = tape.constant(Tensor::filled(n2, 1, 1.0));
        let x1t = tape.concat_cols(x1, t1)?;
        let x2t = tape.concat_cols(x2, t2)?;
        let x = tape.concat_rows(x1t, x2t)?;

        let local = self.local.forward(tape, &vars.local, x)?;
        let deep = self.global.forward(tape, &vars.global, local)?;
        let deep = tape.concat_cols(local, deep)?;
        let global = match self.pool {
            GlobalPool::Joint => tape.max_pool_rows(deep)?,
            split => {
                let d1 = tape.slice_rows(deep, 0, n1)?;
                let d2 = tape.slice_rows(deep, n1, n2)?;
                let g1 = tape.max_pool_rows(d1)?;
                let g2 = tape.max_pool_rows(d2)?;
                let second = if split == GlobalPool::Delta { tape.sub(g2, g1)? } else { g2 };
                tape.concat_cols(g1, second)?
            }
        };
        let global = if self.support_points {
            let feats = tape.value(local).clone();
            let s1 = support_coords(tape, &feats, 0..n1, x1)?;
            let s2 = support_coords(tape, &feats, n1..n1 + n2, x2)?;
            let second = if self.pool == GlobalPool::Delta { tape.sub(s2, s1)? } else { s2 };
            let s = tape.concat_cols(s1, second)?;
            tape.concat_cols(global, s)?
        } else {
            global
        };
        let local1 = tape.slice_rows(local, 0, n1)?;
        let global1 = tape.broadcast_rows(global, n1)?;
        let features = tape.concat_cols(local1, global1)?;
        let out = self.decoder.forward(tape, &vars.decoder, features)?;
        let Some(affine) = &self.affine else {
            return Ok(out);
        };
        let coeffs = affine.forward(tape, &vars.affine, global)?;
        let b = tape.reshape(coeffs, 4, 3)?;
        let ones = tape.constant(Tensor::filled(n1, 1, 1.0));
        let homogeneous = tape.concat_cols(x1, ones)?;
        let moved = tape.matmul(homogeneous, b)?;
        tape.add(out, moved)
    }

    pub fn predict(&self, frame1: &PointCloud, frame2: &PointCloud) -> Result<FlowField> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let f1 = tape.constant(Tensor::from_rows(frame1.points()));
        let f2 = tape.constant(Tensor::from_rows(frame2.points()));
        let out = self.forward(&mut tape, &vars, f1, f2)?;
        FlowField::new(tape.value(out).to_vec3())
    }
}

impl FlowEstimator for FlowExtractorParams {
    fn estimate(&self, pair: &ScenePair) -> Result<FlowField> {
        self.predict(&pair.frame1, &pair.frame2)
    }
}

fn global_width(pool: GlobalPool, l: usize, g: usize, support_points: bool) -> usize {
    pool.width(l + g) + if support_points { 6 * l } else { 0 }
}

/// `1 x 3c` coordinates of the rows of `coords` where each of the `c`
/// columns of `feats[rows]` is largest. The lowest index wins ties; columns
/// that never exceed zero contribute zeros, so the result does not depend on
/// row order.
fn support_coords(tape: &mut Tape, feats: &Tensor, rows: std::ops::Range<usize>, coords: Var) -> Result<Var> {
    let c = feats.cols();
    let start = rows.start;
    let mut best = vec![0.0; c];
    let mut arg = vec![0usize; c];
    for r in rows {
        for (j, &x) in feats.row(r).iter().enumerate() {
            if x > best[j] {
                best[j] = x;
                arg[j] = r - start;
            }
        }
    }
    let picked = tape.gather_rows(coords, &arg)?;
    let mask: Vec<f64> = best.iter().flat_map(|&b| [if b > 0.0 { 1.0 } else { 0.0 }; 3]).collect();
    let mask = tape.constant(Tensor::new(c, 3, mask)?);
    let masked = tape.mul(picked, mask)?;
    tape.reshape(masked, 1, 3 * c)
}

pub(crate) fn collect_mlp(arrays: &[(String, Tensor)], prefix: &str, relu_last: bool) -> Result<Mlp> {
    let find = |name: String| arrays.iter().find(|(n, _)| *n == name).map(|(_, t)| t.clone());
    let mut layers = Vec::new();
    loop {
        let i = layers.len();
        match (find(format!("{prefix}.{i}.w")), find(format!("{prefix}.{i}.b"))) {
            (Some(w), Some(b)) => layers.push(Linear { w, b }),
            (None, None) => break,
            _ => return invalid(format!("{prefix}.{i} is missing its weight or bias")),
        }
    }
    if layers.is_empty() {
        return invalid(format!("no arrays found for {prefix}"));
    }
    Mlp::from_layers(layers, relu_last)
}
