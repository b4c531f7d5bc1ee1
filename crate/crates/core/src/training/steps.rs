//! Loss and gradient computation for one scene pair under each method.

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::error::{invalid, Result};
use crate::geometry::{PointCloud, ScenePair, Vec3};
use crate::losses::{
    cycle_consistency_var, knn_loss_var, multiscale_l2_var, multiscale_triplet_var, supervised_l2_var,
    CycleLoss, LossWeights, ScaleSchedule,
};
use crate::nets::{EmbedderParams, FlowExtractorParams, FlowVars};
use crate::rng::SceneRng;

/// Gradients and loss values from one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGrads {
    pub flow: Vec<Tensor>,
    pub embedder: Option<Vec<Tensor>>,
    pub flow_loss: f64,
    pub embed_loss: Option<f64>,
}

/// Settings shared by the self-supervised steps.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSettings {
    pub weights: LossWeights,
    pub cycle: CycleLoss,
    pub schedule: ScaleSchedule,
    pub knn_k: usize,
    /// Subsample the negative cloud to the anchor's size before embedding.
    pub match_negative_size: bool,
}

/// Index sets of the triplet built by [`adversarial_step`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletIndices {
    pub anchor: Vec<usize>,
    pub positive: Vec<usize>,
    /// Rows of the predicted cloud used as the negative.
    pub negative: Vec<usize>,
}

/// Both frames moved by the same offset so frame1's bounding box is centered
/// at the origin.
pub fn centered_frames(pair: &ScenePair) -> (PointCloud, PointCloud) {
    let c = pair.frame1.bbox_center();
    let shift: Vec3 = [-c[0], -c[1], -c[2]];
    (pair.frame1.shifted(shift), pair.frame2.shifted(shift))
}

fn grads_of(g: &Gradients, vars: &[Var]) -> Vec<Tensor> {
    vars.iter().map(|v| g.wrt(*v)).collect()
}

fn cloud_var(tape: &mut Tape, c: &PointCloud) -> Var {
    tape.constant(Tensor::from_rows(c.points()))
}

/// `(F_fwd, C_hat, F_bwd)` on the tape.
fn cycle_forward(
    flow: &FlowExtractorParams,
    tape: &mut Tape,
    fv: &FlowVars,
    c_t: Var,
    c_t1: Var,
) -> Result<(Var, Var, Var)> {
    let fwd = flow.forward(tape, fv, c_t, c_t1)?;
    let c_hat = tape.add(c_t, fwd)?;
    let bwd = flow.forward(tape, fv, c_hat, c_t)?;
    Ok((fwd, c_hat, bwd))
}

fn weighted(tape: &mut Tape, v: Var, w: f64) -> Result<Var> {
    if w == 1.0 {
        Ok(v)
    } else {
        tape.scale(v, w)
    }
}

/// Chooses disjoint anchor and positive index sets from `n2` target rows and
/// the negative rows from `n1` predicted rows.
pub fn triplet_indices(n1: usize, n2: usize, match_size: bool, rng: &mut SceneRng) -> Result<TripletIndices> {
    if n2 < 2 {
        return invalid("target frame needs at least two points to split");
    }
    let perm = rng.sample_indices(n2, n2);
    let half = n2 / 2;
    let anchor = perm[..half].to_vec();
    let positive = perm[half..2 * half].to_vec();
    let negative = if match_size && half < n1 {
        let mut idx = rng.sample_indices(n1, half);
        idx.sort_unstable();
        idx
    } else {
        (0..n1).collect()
    };
    Ok(TripletIndices {
        anchor,
        positive,
        negative,
    })
}

fn gather_rows(tape: &mut Tape, v: Var, rows: &[usize]) -> Result<Var> {
    if rows.len() == tape.shape(v).0 && rows.iter().enumerate().all(|(i, r)| i == *r) {
        return Ok(v);
    }
    tape.gather_rows(v, rows)
}

/// One adversarial update's worth of gradients. The embedder loss is the
/// multiscale triplet on (anchor, positive, negative); the flow loss is the
/// multiscale L2 between anchor and negative plus the weighted cycle term.
/// Each loss only yields gradients for its own network.
pub fn adversarial_step(
    flow: &FlowExtractorParams,
    embedder: &EmbedderParams,
    pair: &ScenePair,
    settings: &StepSettings,
    seed: u64,
) -> Result<(SceneGrads, TripletIndices)> {
    let (c_t, c_t1) = centered_frames(pair);
    let mut rng = SceneRng::new(seed);
    let idx = triplet_indices(c_t.len(), c_t1.len(), settings.match_negative_size, &mut rng)?;
    debug_assert!(idx.anchor.iter().all(|a| !idx.positive.contains(a)));

    let mut tape = Tape::new();
    let fv = flow.bind(&mut tape, true);
    let xt = cloud_var(&mut tape, &c_t);
    let xt1 = cloud_var(&mut tape, &c_t1);
    let (fwd, c_hat, bwd) = cycle_forward(flow, &mut tape, &fv, xt, xt1)?;

    let anchor = cloud_var(&mut tape, &c_t1.select(&idx.anchor)?);
    let positive = cloud_var(&mut tape, &c_t1.select(&idx.positive)?);
    let negative = gather_rows(&mut tape, c_hat, &idx.negative)?;
    let negative_fixed = tape.constant(tape.value(negative).clone());

    // Embedder loss: trainable embedder on fixed inputs.
    let ev = embedder.bind(&mut tape, true);
    let za = embedder.forward(&mut tape, &ev, anchor)?;
    let zp = embedder.forward(&mut tape, &ev, positive)?;
    let zn_fixed = embedder.forward(&mut tape, &ev, negative_fixed)?;
    let l_embed = multiscale_triplet_var(&mut tape, &za, &zp, &zn_fixed, &settings.schedule, settings.weights.margin)?;

    // Flow loss: frozen embedder, gradients through the negative only.
    let ec = embedder.bind(&mut tape, false);
    let za_fixed: Vec<Var> = za.iter().map(|v| tape.constant(tape.value(*v).clone())).collect();
    let zn = embedder.forward(&mut tape, &ec, negative)?;
    let ml2 = multiscale_l2_var(&mut tape, &za_fixed, &zn, &settings.schedule)?;
    let l_flow = if settings.weights.gamma_cc > 0.0 && settings.cycle != CycleLoss::None {
        let cc = cycle_consistency_var(&mut tape, fwd, bwd, settings.cycle)?;
        let cc = weighted(&mut tape, cc, settings.weights.gamma_cc)?;
        tape.add(ml2, cc)?
    } else {
        ml2
    };

    let g_embed = tape.backward(l_embed)?;
    let g_flow = tape.backward(l_flow)?;
    let grads = SceneGrads {
        flow: grads_of(&g_flow, &fv.all()),
        embedder: Some(grads_of(&g_embed, &ev.all())),
        flow_loss: tape.value(l_flow).item(),
        embed_loss: Some(tape.value(l_embed).item()),
    };
    Ok((grads, idx))
}

/// Nearest-neighbor self-supervision: `gamma_knn * knn(C_hat, C_t1) +
/// gamma_cc * cycle`.
pub fn knn_selfsup_step(flow: &FlowExtractorParams, pair: &ScenePair, settings: &StepSettings) -> Result<SceneGrads> {
    let (c_t, c_t1) = centered_frames(pair);
    let mut tape = Tape::new();
    let fv = flow.bind(&mut tape, true);
    let xt = cloud_var(&mut tape, &c_t);
    let xt1 = cloud_var(&mut tape, &c_t1);
    let w = settings.weights;
    let use_cc = w.gamma_cc > 0.0 && settings.cycle != CycleLoss::None;
    let (fwd, c_hat, bwd) = if use_cc {
        let (f, c, b) = cycle_forward(flow, &mut tape, &fv, xt, xt1)?;
        (f, c, Some(b))
    } else {
        let f = flow.forward(&mut tape, &fv, xt, xt1)?;
        let c = tape.add(xt, f)?;
        (f, c, None)
    };
    let mut loss: Option<Var> = None;
    if w.gamma_knn > 0.0 {
        let k = knn_loss_var(&mut tape, c_hat, &c_t1, settings.knn_k)?;
        loss = Some(weighted(&mut tape, k, w.gamma_knn)?);
    }
    if let Some(bwd) = bwd {
        let cc = cycle_consistency_var(&mut tape, fwd, bwd, settings.cycle)?;
        let cc = weighted(&mut tape, cc, w.gamma_cc)?;
        loss = Some(match loss {
            Some(l) => tape.add(l, cc)?,
            None => cc,
        });
    }
    let loss = match loss {
        Some(l) => l,
        None => {
            // Both weights zero: a constant objective.
            let s = tape.sum(fwd)?;
            tape.scale(s, 0.0)?
        }
    };
    let g = tape.backward(loss)?;
    Ok(SceneGrads {
        flow: grads_of(&g, &fv.all()),
        embedder: None,
        flow_loss: tape.value(loss).item(),
        embed_loss: None,
    })
}

/// Mean end point error against the ground-truth flow.
pub fn supervised_step(flow: &FlowExtractorParams, pair: &ScenePair) -> Result<SceneGrads> {
    let (c_t, c_t1) = centered_frames(pair);
    let mut tape = Tape::new();
    let fv = flow.bind(&mut tape, true);
    let xt = cloud_var(&mut tape, &c_t);
    let xt1 = cloud_var(&mut tape, &c_t1);
    let pred = flow.forward(&mut tape, &fv, xt, xt1)?;
    let target = tape.constant(Tensor::from_rows(pair.flow.vectors()));
    let loss = supervised_l2_var(&mut tape, pred, target)?;
    let g = tape.backward(loss)?;
    Ok(SceneGrads {
        flow: grads_of(&g, &fv.all()),
        embedder: None,
        flow_loss: tape.value(loss).item(),
        embed_loss: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{FlowField, Mechanism};
    use crate::losses::{knn_loss_var, multiscale_triplet, ScheduleKind};
    use crate::nets::{EmbedderSpec, FlowExtractorSpec};
    use crate::scene_gen::{gen_single_scene, SingleSceneConfig};
    use crate::set_distances::knn_loss;

    fn scene(n: usize, mechanism: Mechanism, seed: u64) -> ScenePair {
        let cfg = SingleSceneConfig {
            points_per_frame: n,
            pool_size: 64 * n,
            mechanism,
            ..Default::default()
        };
        gen_single_scene(&cfg, seed).unwrap()
    }

    fn small_nets(zero_decoder: bool) -> (FlowExtractorParams, EmbedderParams) {
        let mut rng = SceneRng::new(7);
        let spec = FlowExtractorSpec {
            local: vec![6],
            global: vec![8],
            decoder: vec![8],
            zero_init_decoder: zero_decoder,
            ..Default::default()
        };
        let flow = FlowExtractorParams::init(&spec, &mut rng).unwrap();
        let emb = EmbedderParams::init(&EmbedderSpec { stages: vec![6, 8] }, &mut rng).unwrap();
        (flow, emb)
    }

    fn settings() -> StepSettings {
        StepSettings {
            weights: LossWeights::default(),
            cycle: CycleLoss::CosL2,
            schedule: ScaleSchedule::new(ScheduleKind::InvSqrt, 2),
            knn_k: 1,
            match_negative_size: true,
        }
    }

    /// Nudges the affine head off zero so every parameter carries signal.
    fn perturb_affine(flow: &mut FlowExtractorParams) {
        let mut rng = SceneRng::new(11);
        for t in flow.affine.as_mut().unwrap().tensors_mut() {
            for x in t.data_mut() {
                *x = rng.uniform(-0.05, 0.05);
            }
        }
    }

    fn assert_close(analytic: f64, numeric: f64, what: &str) {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        assert!(rel < 1e-4 || (analytic - numeric).abs() < 1e-9, "{what}: {analytic} vs {numeric}");
    }

    /// Central differences of `f` over a spread of entries of every tensor.
    fn check_fd<P: Clone>(
        params: &P,
        tensors: fn(&mut P) -> Vec<&mut Tensor>,
        grads: &[Tensor],
        f: impl Fn(&P) -> f64,
        what: &str,
    ) {
        let h = 1e-6;
        for (ti, g) in grads.iter().enumerate() {
            for ei in (0..g.len()).step_by(1 + g.len() / 4) {
                let mut plus = params.clone();
                tensors(&mut plus)[ti].data_mut()[ei] += h;
                let mut minus = params.clone();
                tensors(&mut minus)[ti].data_mut()[ei] -= h;
                let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
                assert_close(g.data()[ei], numeric, &format!("{what} tensor {ti} entry {ei}"));
            }
        }
    }

    #[test]
    fn triplet_indices_are_disjoint_and_sized() {
        let mut rng = SceneRng::new(3);
        for (n1, n2) in [(10, 10), (7, 20), (40, 9), (2, 2)] {
            let idx = triplet_indices(n1, n2, true, &mut rng).unwrap();
            assert_eq!(idx.anchor.len(), n2 / 2);
            assert_eq!(idx.positive.len(), n2 / 2);
            assert!(idx.anchor.iter().all(|a| !idx.positive.contains(a) && *a < n2));
            assert!(idx.negative.iter().all(|i| *i < n1));
            assert_eq!(idx.negative.len(), if n2 / 2 < n1 { n2 / 2 } else { n1 });
        }
        let idx = triplet_indices(12, 10, false, &mut rng).unwrap();
        assert_eq!(idx.negative, (0..12).collect::<Vec<_>>());
        assert!(triplet_indices(5, 1, true, &mut rng).is_err());
    }

    #[test]
    fn adversarial_gradients_match_finite_differences() {
        let pair = scene(8, Mechanism::Resampling, 21);
        let (mut flow, emb) = small_nets(false);
        perturb_affine(&mut flow);
        let s = settings();
        let (g, _) = adversarial_step(&flow, &emb, &pair, &s, 5).unwrap();
        check_fd(
            &flow,
            FlowExtractorParams::tensors_mut,
            &g.flow,
            |f| adversarial_step(f, &emb, &pair, &s, 5).unwrap().0.flow_loss,
            "flow",
        );
        check_fd(
            &emb,
            EmbedderParams::tensors_mut,
            g.embedder.as_ref().unwrap(),
            |e| adversarial_step(&flow, e, &pair, &s, 5).unwrap().0.embed_loss.unwrap(),
            "embedder",
        );
    }

    #[test]
    fn embedder_gradients_ignore_the_flow_loss() {
        // The flow loss depends on the embedder, but its gradient must not leak
        // into the embedder update: the reported embedder gradient matches the
        // triplet loss alone and differs from that of their sum.
        let pair = scene(8, Mechanism::Resampling, 22);
        let (flow, emb) = small_nets(false);
        let s = settings();
        let (g, _) = adversarial_step(&flow, &emb, &pair, &s, 9).unwrap();
        let ge = &g.embedder.unwrap()[0];
        let h = 1e-6;
        let total = |e: &EmbedderParams| {
            let r = adversarial_step(&flow, e, &pair, &s, 9).unwrap().0;
            r.flow_loss + r.embed_loss.unwrap()
        };
        let mut differs = false;
        for ei in 0..ge.len() {
            let mut plus = emb.clone();
            plus.tensors_mut()[0].data_mut()[ei] += h;
            let mut minus = emb.clone();
            minus.tensors_mut()[0].data_mut()[ei] -= h;
            let numeric = (total(&plus) - total(&minus)) / (2.0 * h);
            differs |= (numeric - ge.data()[ei]).abs() > 1e-5;
        }
        assert!(differs);
    }

    #[test]
    fn flow_gradients_ignore_the_embedder_loss() {
        // Perturbing flow parameters moves the negative, which changes the
        // triplet loss; the flow gradient must still equal that of L_flow alone.
        let pair = scene(8, Mechanism::Resampling, 23);
        let (mut flow, emb) = small_nets(false);
        perturb_affine(&mut flow);
        let s = settings();
        let (g, _) = adversarial_step(&flow, &emb, &pair, &s, 4).unwrap();
        let total = |f: &FlowExtractorParams| {
            let r = adversarial_step(f, &emb, &pair, &s, 4).unwrap().0;
            r.flow_loss + r.embed_loss.unwrap()
        };
        let h = 1e-6;
        let mut moved = false;
        for ei in 0..g.flow[0].len() {
            let mut plus = flow.clone();
            plus.tensors_mut()[0].data_mut()[ei] += h;
            let mut minus = flow.clone();
            minus.tensors_mut()[0].data_mut()[ei] -= h;
            let numeric = (total(&plus) - total(&minus)) / (2.0 * h);
            moved |= (numeric - g.flow[0].data()[ei]).abs() > 1e-5;
        }
        assert!(moved, "fixture should make the triplet loss depend on the flow");
    }

    #[test]
    fn negative_comes_from_the_prediction() {
        let pair = scene(16, Mechanism::Correspondence, 24);
        let (flow, emb) = small_nets(true);
        let s = settings();
        let (g, idx) = adversarial_step(&flow, &emb, &pair, &s, 2).unwrap();
        // Zero flow: the negative is a subsample of frame1, not of frame2.
        let (c_t, c_t1) = centered_frames(&pair);
        let za = emb.embed(&c_t1.select(&idx.anchor).unwrap()).unwrap();
        let zp = emb.embed(&c_t1.select(&idx.positive).unwrap()).unwrap();
        let zn = emb.embed(&c_t.select(&idx.negative).unwrap()).unwrap();
        let expect = multiscale_triplet(&za, &zp, &zn, &s.schedule, s.weights.margin).unwrap();
        assert!((g.embed_loss.unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_decoder_has_no_cycle_term() {
        let pair = scene(32, Mechanism::Resampling, 25);
        let (flow, emb) = small_nets(true);
        let mut s = settings();
        let (with_cc, _) = adversarial_step(&flow, &emb, &pair, &s, 8).unwrap();
        s.weights.gamma_cc = 0.0;
        let (without, _) = adversarial_step(&flow, &emb, &pair, &s, 8).unwrap();
        assert_eq!(with_cc.flow_loss, without.flow_loss);
        assert!(with_cc.flow_loss > 0.0);
    }

    #[test]
    fn oracle_negative_is_indistinguishable_from_positive() {
        // With the true flow, C_t + F samples the same surface as C_{t+1}, so the
        // triplet loss should sit at the margin, as for a positive negative.
        let (_, emb) = small_nets(false);
        let s = settings();
        let m = s.weights.margin;
        let mut rng = SceneRng::new(99);
        let (mut oracle, mut reference) = (0.0, 0.0);
        for i in 0..100 {
            let pair = scene(128, Mechanism::Resampling, 1000 + i);
            let (c_t, c_t1) = centered_frames(&pair);
            let c_hat = translate_by_flow_cloud(&c_t, &pair.flow);
            let idx = triplet_indices(c_t.len(), c_t1.len(), true, &mut rng).unwrap();
            let za = emb.embed(&c_t1.select(&idx.anchor).unwrap()).unwrap();
            let zp = emb.embed(&c_t1.select(&idx.positive).unwrap()).unwrap();
            let zn = emb.embed(&c_hat.select(&idx.negative).unwrap()).unwrap();
            oracle += multiscale_triplet(&za, &zp, &zn, &s.schedule, m).unwrap();
            reference += multiscale_triplet(&za, &zp, &zp, &s.schedule, m).unwrap();
        }
        let gap = (oracle - reference) / 100.0;
        assert!(gap.abs() < 0.1 * m, "gap {gap}");
    }

    fn translate_by_flow_cloud(c: &PointCloud, f: &FlowField) -> PointCloud {
        crate::geometry::translate_by_flow(c, f).unwrap()
    }

    #[test]
    fn knn_step_is_the_component_sum() {
        let pair = scene(24, Mechanism::Resampling, 26);
        let (mut flow, _) = small_nets(false);
        perturb_affine(&mut flow);
        let mut s = settings();
        s.weights.gamma_knn = 0.7;
        s.weights.gamma_cc = 1.3;
        let g = knn_selfsup_step(&flow, &pair, &s).unwrap();

        let (c_t, c_t1) = centered_frames(&pair);
        let fwd = flow.predict(&c_t, &c_t1).unwrap();
        let c_hat = crate::geometry::translate_by_flow(&c_t, &fwd).unwrap();
        let bwd = flow.predict(&c_hat, &c_t).unwrap();
        let expect = 0.7 * knn_loss(&c_hat, &c_t1, 1).unwrap()
            + 1.3 * crate::losses::cycle_consistency(&fwd, &bwd, CycleLoss::CosL2).unwrap();
        assert!((g.flow_loss - expect).abs() < 1e-12, "{} vs {expect}", g.flow_loss);
    }

    #[test]
    fn knn_step_special_cases() {
        let pair = scene(24, Mechanism::Correspondence, 27);
        let still = ScenePair {
            frame2: pair.frame1.clone(),
            flow: FlowField::zeros(pair.frame1.len()),
            ..pair.clone()
        };
        let (flow, _) = small_nets(true);
        let mut s = settings();
        s.weights.gamma_cc = 0.0;
        assert_eq!(knn_selfsup_step(&flow, &still, &s).unwrap().flow_loss, 0.0);

        s.weights.gamma_knn = 0.0;
        s.weights.gamma_cc = 1.0;
        let (mut moving, _) = small_nets(false);
        perturb_affine(&mut moving);
        let g = knn_selfsup_step(&moving, &pair, &s).unwrap();
        let (c_t, c_t1) = centered_frames(&pair);
        let fwd = moving.predict(&c_t, &c_t1).unwrap();
        let c_hat = crate::geometry::translate_by_flow(&c_t, &fwd).unwrap();
        let bwd = moving.predict(&c_hat, &c_t).unwrap();
        let cc = crate::losses::cycle_consistency(&fwd, &bwd, CycleLoss::CosL2).unwrap();
        assert!((g.flow_loss - cc).abs() < 1e-12);
    }

    #[test]
    fn knn_gradients_match_finite_differences() {
        let pair = scene(8, Mechanism::Resampling, 28);
        let (mut flow, _) = small_nets(false);
        perturb_affine(&mut flow);
        let s = settings();
        let g = knn_selfsup_step(&flow, &pair, &s).unwrap();
        check_fd(
            &flow,
            FlowExtractorParams::tensors_mut,
            &g.flow,
            |f| knn_selfsup_step(f, &pair, &s).unwrap().flow_loss,
            "knn",
        );
        // The tape loss ignores neighbor reassignment, like the value version.
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(pair.frame1.points()));
        let l = knn_loss_var(&mut tape, x, &pair.frame2, 1).unwrap();
        assert_eq!(tape.value(l).item(), knn_loss(&pair.frame1, &pair.frame2, 1).unwrap());
    }

    #[test]
    fn supervised_step_cases() {
        let pair = scene(16, Mechanism::Resampling, 29);
        let (zero, _) = small_nets(true);
        let g = supervised_step(&zero, &pair).unwrap();
        let mean_norm = crate::metrics::mean_flow_norm([&pair.flow]).unwrap();
        assert!((g.flow_loss - mean_norm).abs() < 1e-12);

        // A target equal to the current prediction gives zero loss.
        let (mut flow, _) = small_nets(false);
        perturb_affine(&mut flow);
        let (c_t, c_t1) = centered_frames(&pair);
        let own = ScenePair {
            flow: flow.predict(&c_t, &c_t1).unwrap(),
            ..pair.clone()
        };
        assert!(supervised_step(&flow, &own).unwrap().flow_loss.abs() < 1e-12);

        let g = supervised_step(&flow, &pair).unwrap();
        check_fd(
            &flow,
            FlowExtractorParams::tensors_mut,
            &g.flow,
            |f| supervised_step(f, &pair).unwrap().flow_loss,
            "supervised",
        );
    }
}
