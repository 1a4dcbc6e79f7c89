use std::collections::BTreeSet;

use ndarray::{concatenate, Array2, ArrayView1, ArrayView2, Axis, Zip};

use super::{GroundingConfig, GroundingExample};
use crate::error::{Error, Result};
use crate::ingest::ProposalFrame;
use crate::tensorcore::{dropout_mask, AdamState, Checkpoint, LinearLayer, Parameterized, Rng};

/// Visual encoder `D_v -> hidden -> relu -> dropout -> E`, word encoder `D -> E`.
#[derive(Clone, Debug, PartialEq)]
pub struct MilModel {
    pub visual1: LinearLayer,
    pub visual2: LinearLayer,
    pub word: LinearLayer,
    pub dropout: f64,
}

impl MilModel {
    pub fn new(visual_dim: usize, word_dim: usize, cfg: &GroundingConfig, rng: &mut Rng) -> Self {
        Self {
            visual1: LinearLayer::new(visual_dim, cfg.hidden_dim, rng),
            visual2: LinearLayer::new(cfg.hidden_dim, cfg.embed_dim, rng),
            word: LinearLayer::new(word_dim, cfg.embed_dim, rng),
            dropout: cfg.dropout,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            visual1: self.visual1.zeros_like(),
            visual2: self.visual2.zeros_like(),
            word: self.word.zeros_like(),
            dropout: self.dropout,
        }
    }

    pub fn visual_dim(&self) -> usize {
        self.visual1.in_dim()
    }

    pub fn word_dim(&self) -> usize {
        self.word.in_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.visual1.out_dim()
    }

    pub fn to_checkpoint(&self, seed: u64, epoch: usize) -> Checkpoint {
        let mut ckpt = Checkpoint::new("mil", seed, epoch);
        ckpt.push_layer("visual1", &self.visual1);
        ckpt.push_layer("visual2", &self.visual2);
        ckpt.push_layer("word", &self.word);
        ckpt.set_meta("dropout", self.dropout);
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(&["mil"])?;
        let m = Self {
            visual1: ckpt.layer("visual1")?,
            visual2: ckpt.layer("visual2")?,
            word: ckpt.layer("word")?,
            dropout: ckpt.meta("dropout")?,
        };
        if m.visual2.in_dim() != m.visual1.out_dim() || m.visual2.out_dim() != m.word.out_dim() {
            return Err(Error::Checkpoint("MIL encoder shapes disagree".into()));
        }
        Ok(m)
    }

    fn check_dims(&self, feats: &ArrayView2<f64>, entity_vec: &[f64]) -> Result<()> {
        if feats.ncols() != self.visual_dim() {
            return Err(Error::Dim {
                expected: self.visual_dim(),
                got: feats.ncols(),
                context: "proposal feature",
            });
        }
        if entity_vec.len() != self.word_dim() {
            return Err(Error::Dim {
                expected: self.word_dim(),
                got: entity_vec.len(),
                context: "entity vector",
            });
        }
        Ok(())
    }
}

impl Parameterized for MilModel {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.visual1.tensors();
        t.extend(self.visual2.tensors());
        t.extend(self.word.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.visual1.tensors_mut();
        t.extend(self.visual2.tensors_mut());
        t.extend(self.word.tensors_mut());
        t
    }
}

struct VisualCache {
    pre: Array2<f64>,
    act: Array2<f64>,
    phi: Array2<f64>,
}

fn encode_visual(model: &MilModel, x: &ArrayView2<f64>, mask: Option<&Array2<f64>>) -> VisualCache {
    let pre = model.visual1.forward_batch(x);
    let mut act = pre.mapv(|v| v.max(0.0));
    if let Some(m) = mask {
        act *= m;
    }
    let phi = model.visual2.forward_batch(&act.view());
    VisualCache { pre, act, phi }
}

fn backward_visual(
    model: &MilModel,
    x: &ArrayView2<f64>,
    cache: &VisualCache,
    d_phi: &Array2<f64>,
    mask: Option<&Array2<f64>>,
    grads: &mut MilModel,
) {
    let mut d_act =
        model
            .visual2
            .backward_batch(&cache.act.view(), &d_phi.view(), &mut grads.visual2);
    if let Some(m) = mask {
        d_act *= m;
    }
    Zip::from(&mut d_act).and(&cache.pre).for_each(|d, p| {
        if *p <= 0.0 {
            *d = 0.0;
        }
    });
    model
        .visual1
        .accumulate_param_grads(x, &d_act.view(), &mut grads.visual1);
}

/// Eval-mode proposal scores `phi(r_k) . psi(e)`.
pub(super) fn scores_eval(
    model: &MilModel,
    feats: &ArrayView2<f64>,
    entity_vec: &[f64],
) -> Result<Vec<f64>> {
    model.check_dims(feats, entity_vec)?;
    let phi = encode_visual(model, feats, None).phi;
    let psi = model.word.forward(entity_vec)?;
    Ok(phi.dot(&ArrayView1::from(&psi[..])).to_vec())
}

/// Proposal scores for a frame; dropout is applied only when `training`.
pub fn mil_scores(
    model: &MilModel,
    frame: &ProposalFrame,
    entity_vec: &[f64],
    training: bool,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let feats = super::feature_matrix(frame)?;
    model.check_dims(&feats.view(), entity_vec)?;
    let mask = if training {
        let vals = dropout_mask(feats.nrows() * model.hidden_dim(), model.dropout, rng)?;
        Some(Array2::from_shape_vec((feats.nrows(), model.hidden_dim()), vals).expect("mask shape"))
    } else {
        None
    };
    let phi = encode_visual(model, &feats.view(), mask.as_ref()).phi;
    let psi = model.word.forward(entity_vec)?;
    Ok(phi.dot(&ArrayView1::from(&psi[..])).to_vec())
}

/// Frame-level score: the best proposal score in eval mode.
pub fn mil_frame_score(model: &MilModel, frame: &ProposalFrame, entity_vec: &[f64]) -> Result<f64> {
    let feats = super::feature_matrix(frame)?;
    let s = scores_eval(model, &feats.view(), entity_vec)?;
    Ok(s.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// One positive `(frame, entity)` in a MIL batch.
#[derive(Clone, Copy, Debug)]
pub struct MilItem<'a> {
    pub features: ArrayView2<'a, f64>,
    pub entity: &'a str,
    pub entity_vec: &'a [f64],
}

impl<'a> From<&'a GroundingExample> for MilItem<'a> {
    fn from(e: &'a GroundingExample) -> Self {
        Self {
            features: e.features.view(),
            entity: &e.entity,
            entity_vec: &e.entity_vec,
        }
    }
}

/// Random choices for one batch: a negative partner per item and the
/// dropout mask for the stacked proposal rows (`None` in eval mode).
#[derive(Clone, Debug)]
pub struct MilBatchPlan {
    pub negatives: Vec<usize>,
    pub mask: Option<Array2<f64>>,
}

/// Sample one partner with a different entity for every item, uniformly
/// over the batch, plus the dropout mask when `training`.
pub fn plan_mil_batch(
    model: &MilModel,
    items: &[MilItem],
    rng: &mut Rng,
    training: bool,
) -> Result<MilBatchPlan> {
    let mut negatives = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let candidates: Vec<usize> = (0..items.len())
            .filter(|&j| j != i && items[j].entity != item.entity)
            .collect();
        if candidates.is_empty() {
            return Err(Error::invalid(
                "MIL batch needs at least two distinct entities to sample negatives",
            ));
        }
        negatives.push(candidates[rng.below(candidates.len())]);
    }
    let mask = if training {
        let rows: usize = items.iter().map(|i| i.features.nrows()).sum();
        let vals = dropout_mask(rows * model.hidden_dim(), model.dropout, rng)?;
        Some(Array2::from_shape_vec((rows, model.hidden_dim()), vals).expect("mask shape"))
    } else {
        None
    };
    Ok(MilBatchPlan { negatives, mask })
}

/// Two-sided hinge loss summed over the batch, with gradients.
///
/// For item `i` with sampled partner `l`:
/// `max(0, S(f_i, e_l) - S(f_i, e_i) + delta) + max(0, S(f_l, e_i) - S(f_i, e_i) + delta)`
/// where `S(f, e)` is the max proposal score. The max routes the whole
/// gradient to its winning proposal.
pub fn mil_loss(
    model: &MilModel,
    items: &[MilItem],
    delta: f64,
    rng: &mut Rng,
) -> Result<(f64, MilModel)> {
    let plan = plan_mil_batch(model, items, rng, true)?;
    mil_loss_with_plan(model, items, &plan, delta)
}

pub fn mil_loss_with_plan(
    model: &MilModel,
    items: &[MilItem],
    plan: &MilBatchPlan,
    delta: f64,
) -> Result<(f64, MilModel)> {
    if items.is_empty() {
        return Err(Error::invalid("empty MIL batch"));
    }
    if plan.negatives.len() != items.len() {
        return Err(Error::Dim {
            expected: items.len(),
            got: plan.negatives.len(),
            context: "MIL negatives",
        });
    }
    for item in items {
        model.check_dims(&item.features, item.entity_vec)?;
    }

    let mut offsets = Vec::with_capacity(items.len() + 1);
    offsets.push(0);
    for item in items {
        offsets.push(offsets.last().unwrap() + item.features.nrows());
    }
    let views: Vec<ArrayView2<f64>> = items.iter().map(|i| i.features).collect();
    let x = concatenate(Axis(0), &views).map_err(|e| Error::invalid(e.to_string()))?;
    if let Some(m) = &plan.mask {
        if m.dim() != (x.nrows(), model.hidden_dim()) {
            return Err(Error::invalid("dropout mask shape does not match batch"));
        }
    }
    let mut xe = Array2::zeros((items.len(), model.word_dim()));
    for (i, item) in items.iter().enumerate() {
        xe.row_mut(i).assign(&ArrayView1::from(item.entity_vec));
    }

    let cache = encode_visual(model, &x.view(), plan.mask.as_ref());
    let psi = model.word.forward_batch(&xe.view());

    // Best proposal row and score for (frame f, entity of item e).
    let best = |f: usize, e: usize| -> (usize, f64) {
        let psi_e = psi.row(e);
        let mut arg = offsets[f];
        let mut val = f64::NEG_INFINITY;
        for r in offsets[f]..offsets[f + 1] {
            let s = cache.phi.row(r).dot(&psi_e);
            if s > val {
                val = s;
                arg = r;
            }
        }
        (arg, val)
    };

    let mut d_phi = Array2::<f64>::zeros(cache.phi.raw_dim());
    let mut d_psi = Array2::<f64>::zeros(psi.raw_dim());
    let push = |row: usize, e: usize, g: f64, d_phi: &mut Array2<f64>, d_psi: &mut Array2<f64>| {
        d_phi.row_mut(row).scaled_add(g, &psi.row(e));
        d_psi.row_mut(e).scaled_add(g, &cache.phi.row(row));
    };

    let mut loss = 0.0;
    for (i, &l) in plan.negatives.iter().enumerate() {
        let (r_ii, s_ii) = best(i, i);
        let (r_il, s_il) = best(i, l);
        let (r_li, s_li) = best(l, i);
        let wrong_entity = s_il - s_ii + delta;
        if wrong_entity > 0.0 {
            loss += wrong_entity;
            push(r_il, l, 1.0, &mut d_phi, &mut d_psi);
            push(r_ii, i, -1.0, &mut d_phi, &mut d_psi);
        }
        let wrong_frame = s_li - s_ii + delta;
        if wrong_frame > 0.0 {
            loss += wrong_frame;
            push(r_li, i, 1.0, &mut d_phi, &mut d_psi);
            push(r_ii, i, -1.0, &mut d_phi, &mut d_psi);
        }
    }

    let mut grads = model.zeros_like();
    model
        .word
        .accumulate_param_grads(&xe.view(), &d_psi.view(), &mut grads.word);
    backward_visual(
        model,
        &x.view(),
        &cache,
        &d_phi,
        plan.mask.as_ref(),
        &mut grads,
    );
    Ok((loss, grads))
}

#[derive(Clone, Debug)]
pub struct TrainedMil {
    pub model: MilModel,
    /// Mean per-item hinge loss for each epoch.
    pub loss_trace: Vec<f64>,
}

/// Adam over shuffled minibatches. Only the two encoders are trained; the
/// proposal features and word vectors are fixed inputs.
///
/// Batches whose items all share one entity have no valid negatives and
/// are skipped.
pub fn train_mil(examples: &[GroundingExample], cfg: &GroundingConfig) -> Result<TrainedMil> {
    cfg.validate()?;
    let (visual_dim, word_dim) = check_corpus(examples)?;
    let mut model = MilModel::new(visual_dim, word_dim, cfg, &mut Rng::new(cfg.seed));
    let mut adam = AdamState::for_model(cfg.lr, &model);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut rng = Rng::derived(cfg.seed, 1 + epoch as u64);
        rng.shuffle(&mut order);
        let (mut total, mut n) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let items: Vec<MilItem> = chunk.iter().map(|&i| MilItem::from(&examples[i])).collect();
            let distinct: BTreeSet<&str> = items.iter().map(|i| i.entity).collect();
            if distinct.len() < 2 {
                continue;
            }
            let (loss, grads) = mil_loss(&model, &items, cfg.delta, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("MIL loss at epoch {epoch}")));
            }
            adam.step_model(&mut model, &grads)?;
            total += loss;
            n += items.len();
        }
        loss_trace.push(if n > 0 { total / n as f64 } else { 0.0 });
    }
    Ok(TrainedMil { model, loss_trace })
}

pub(super) fn check_corpus(examples: &[GroundingExample]) -> Result<(usize, usize)> {
    let first = examples
        .first()
        .ok_or_else(|| Error::invalid("no training examples"))?;
    let dims = (first.features.ncols(), first.entity_vec.len());
    for e in examples {
        if e.features.nrows() == 0 {
            return Err(Error::invalid(format!(
                "frame {} has no proposals",
                e.frame_id
            )));
        }
        if (e.features.ncols(), e.entity_vec.len()) != dims {
            return Err(Error::Dim {
                expected: dims.0,
                got: e.features.ncols(),
                context: "training example dims",
            });
        }
    }
    let distinct: BTreeSet<&str> = examples.iter().map(|e| e.entity.as_str()).collect();
    if distinct.len() < 2 {
        return Err(Error::invalid(
            "training needs at least two distinct entities",
        ));
    }
    Ok(dims)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grounding::argmax;
    use crate::ingest::{BBox, Proposal};
    use crate::tensorcore::sigmoid;
    use approx::assert_relative_eq;

    fn cfg() -> GroundingConfig {
        GroundingConfig {
            embed_dim: 4,
            hidden_dim: 6,
            ..GroundingConfig::mil()
        }
    }

    fn random_frame(k: usize, dim: usize, rng: &mut Rng) -> ProposalFrame {
        ProposalFrame {
            frame_id: "f".into(),
            video_id: "v".into(),
            entity: None,
            proposals: (0..k)
                .map(|i| Proposal {
                    bbox: BBox::new(0.0, 0.0, 1.0 + i as f64, 1.0).unwrap(),
                    feature: (0..dim).map(|_| rng.normal()).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn zero_model_scores_zero() {
        let mut rng = Rng::new(1);
        let mut m = MilModel::new(5, 3, &cfg(), &mut rng);
        m.fill_zero();
        let f = random_frame(4, 5, &mut rng);
        assert_eq!(
            mil_scores(&m, &f, &[1.0, 2.0, 3.0], false, &mut rng).unwrap(),
            vec![0.0; 4]
        );
    }

    #[test]
    fn single_proposal_is_dot_product() {
        let mut rng = Rng::new(2);
        let m = MilModel::new(5, 3, &cfg(), &mut rng);
        let f = random_frame(1, 5, &mut rng);
        let e = [0.3, -0.1, 0.7];
        let hidden: Vec<f64> = m
            .visual1
            .forward(&f.proposals[0].feature)
            .unwrap()
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        let phi = m.visual2.forward(&hidden).unwrap();
        let psi = m.word.forward(&e).unwrap();
        let dot: f64 = phi.iter().zip(&psi).map(|(a, b)| a * b).sum();
        let s = mil_scores(&m, &f, &e, false, &mut rng).unwrap();
        assert_relative_eq!(s[0], dot, epsilon = 1e-12);
        assert_relative_eq!(mil_frame_score(&m, &f, &e).unwrap(), dot, epsilon = 1e-12);
    }

    #[test]
    fn raw_and_sigmoid_argmax_agree() {
        let mut rng = Rng::new(3);
        for _ in 0..50 {
            let m = MilModel::new(5, 3, &cfg(), &mut rng);
            let f = random_frame(6, 5, &mut rng);
            let e: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let s = mil_scores(&m, &f, &e, false, &mut rng).unwrap();
            assert_eq!(argmax(&s), argmax(&sigmoid(&s)));
        }
    }

    #[test]
    fn dimension_mismatch() {
        let mut rng = Rng::new(4);
        let m = MilModel::new(5, 3, &cfg(), &mut rng);
        let f = random_frame(2, 4, &mut rng);
        assert!(mil_scores(&m, &f, &[0.0; 3], false, &mut rng).is_err());
        let f = random_frame(2, 5, &mut rng);
        assert!(mil_scores(&m, &f, &[0.0; 2], false, &mut rng).is_err());
    }

    #[test]
    fn single_entity_batch_is_error() {
        let mut rng = Rng::new(5);
        let m = MilModel::new(2, 2, &cfg(), &mut rng);
        let feats = Array2::<f64>::ones((2, 2));
        let v = [1.0, 0.0];
        let items = [
            MilItem {
                features: feats.view(),
                entity: "a",
                entity_vec: &v,
            },
            MilItem {
                features: feats.view(),
                entity: "a",
                entity_vec: &v,
            },
        ];
        assert!(mil_loss(&m, &items, 0.01, &mut rng).is_err());
    }

    #[test]
    fn train_rejects_single_entity_corpus() {
        let ex = GroundingExample {
            frame_id: "f".into(),
            entity: "a".into(),
            features: Array2::ones((2, 3)),
            entity_vec: vec![1.0],
        };
        assert!(train_mil(&[ex.clone(), ex], &cfg()).is_err());
    }

    fn identity_model() -> MilModel {
        let eye = || LinearLayer::from_parts(Array2::eye(2), ndarray::Array1::zeros(2)).unwrap();
        MilModel {
            visual1: eye(),
            visual2: eye(),
            word: eye(),
            dropout: 0.0,
        }
    }

    fn eval_plan(negatives: Vec<usize>) -> MilBatchPlan {
        MilBatchPlan {
            negatives,
            mask: None,
        }
    }

    #[test]
    fn hinge_arithmetic() {
        let m = identity_model();
        let (ea, eb) = ([1.0, 0.0], [0.0, 1.0]);
        let fa = ndarray::arr2(&[[0.5, 0.6]]);
        let fb = ndarray::arr2(&[[0.4, 1.0]]);
        let items = [
            MilItem {
                features: fa.view(),
                entity: "a",
                entity_vec: &ea,
            },
            MilItem {
                features: fb.view(),
                entity: "b",
                entity_vec: &eb,
            },
        ];
        let (loss, _) = mil_loss_with_plan(&m, &items, &eval_plan(vec![1, 0]), 0.01).unwrap();
        assert_relative_eq!(loss, 0.11, epsilon = 1e-12);
    }

    #[test]
    fn separated_batch_has_zero_loss_and_gradient() {
        let m = identity_model();
        let (ea, eb) = ([1.0, 0.0], [0.0, 1.0]);
        let fa = ndarray::arr2(&[[1.0, 0.0], [0.2, 0.1]]);
        let fb = ndarray::arr2(&[[0.0, 1.0]]);
        let items = [
            MilItem {
                features: fa.view(),
                entity: "a",
                entity_vec: &ea,
            },
            MilItem {
                features: fb.view(),
                entity: "b",
                entity_vec: &eb,
            },
        ];
        let (loss, grads) = mil_loss_with_plan(&m, &items, &eval_plan(vec![1, 0]), 0.01).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.flat_params().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn equal_scores_cost_two_margins() {
        let mut rng = Rng::new(10);
        let mut m = MilModel::new(3, 2, &cfg(), &mut rng);
        m.fill_zero();
        let f = Array2::<f64>::ones((3, 3));
        let v = [1.0, 1.0];
        let items = [
            MilItem {
                features: f.view(),
                entity: "a",
                entity_vec: &v,
            },
            MilItem {
                features: f.view(),
                entity: "b",
                entity_vec: &v,
            },
            MilItem {
                features: f.view(),
                entity: "c",
                entity_vec: &v,
            },
        ];
        let (loss, _) = mil_loss(&m, &items, 0.01, &mut rng).unwrap();
        assert_relative_eq!(loss, 3.0 * 0.02, epsilon = 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(11);
        for _ in 0..10 {
            let m = MilModel::new(4, 3, &cfg(), &mut rng);
            let feats: Vec<Array2<f64>> = (0..4)
                .map(|_| Array2::from_shape_fn((3, 4), |_| rng.normal()))
                .collect();
            let vecs: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..3).map(|_| rng.normal()).collect())
                .collect();
            let names = ["a", "b", "a", "c"];
            let items: Vec<MilItem> = (0..4)
                .map(|i| MilItem {
                    features: feats[i].view(),
                    entity: names[i],
                    entity_vec: &vecs[i],
                })
                .collect();
            let plan = plan_mil_batch(&m, &items, &mut rng, true).unwrap();
            // a large margin keeps every hinge active so the loss is smooth
            let report = crate::tensorcore::finite_diff_check(
                |p| {
                    let mut probe = m.clone();
                    probe.load_flat(p);
                    let (l, g) = mil_loss_with_plan(&probe, &items, &plan, 10.0)?;
                    Ok((l, g.flat_params()))
                },
                &m.flat_params(),
                1e-4,
            )
            .unwrap();
            assert!(report.passed(), "{report:?}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = MilModel::new(5, 3, &cfg(), &mut Rng::new(8));
        let bytes = m.to_checkpoint(8, 20).to_bytes().unwrap();
        let back = MilModel::from_checkpoint(&Checkpoint::read(&bytes[..]).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
