use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::mil::check_corpus;
use super::{GroundingConfig, GroundingExample};
use crate::error::{Error, Result};
use crate::ingest::ProposalFrame;
use crate::tensorcore::{
    softmax, softmax_backward, AdamState, Checkpoint, LinearLayer, Parameterized, Rng,
};

/// Attention over proposals followed by reconstruction of the encoded entity.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconModel {
    /// `phi`: `D_v -> E`
    pub visual: LinearLayer,
    /// `psi`: `D -> E`
    pub word: LinearLayer,
    /// `2E -> 1` over `[phi(r_k); psi(e)]`
    pub attention: LinearLayer,
    /// `E -> E`
    pub reconstructor: LinearLayer,
    /// Treat `psi(e)` as a constant target in the loss.
    pub freeze_target: bool,
}

impl ReconModel {
    pub fn new(visual_dim: usize, word_dim: usize, cfg: &GroundingConfig, rng: &mut Rng) -> Self {
        let e = cfg.embed_dim;
        Self {
            visual: LinearLayer::new(visual_dim, e, rng),
            word: LinearLayer::new(word_dim, e, rng),
            attention: LinearLayer::new(2 * e, 1, rng),
            reconstructor: LinearLayer::new(e, e, rng),
            freeze_target: cfg.freeze_target,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            visual: self.visual.zeros_like(),
            word: self.word.zeros_like(),
            attention: self.attention.zeros_like(),
            reconstructor: self.reconstructor.zeros_like(),
            freeze_target: self.freeze_target,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.visual.out_dim()
    }

    pub fn to_checkpoint(&self, seed: u64, epoch: usize) -> Checkpoint {
        let mut ckpt = Checkpoint::new("recon", seed, epoch);
        ckpt.push_layer("visual", &self.visual);
        ckpt.push_layer("word", &self.word);
        ckpt.push_layer("attention", &self.attention);
        ckpt.push_layer("reconstructor", &self.reconstructor);
        ckpt.set_meta("freeze_target", self.freeze_target);
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(&["recon"])?;
        let m = Self {
            visual: ckpt.layer("visual")?,
            word: ckpt.layer("word")?,
            attention: ckpt.layer("attention")?,
            reconstructor: ckpt.layer("reconstructor")?,
            freeze_target: ckpt.meta("freeze_target").unwrap_or(false),
        };
        let e = m.embed_dim();
        if m.word.out_dim() != e
            || m.attention.in_dim() != 2 * e
            || m.attention.out_dim() != 1
            || m.reconstructor.in_dim() != e
            || m.reconstructor.out_dim() != e
        {
            return Err(Error::Checkpoint(
                "reconstruction model shapes disagree".into(),
            ));
        }
        Ok(m)
    }

    fn check_dims(&self, feats: &ArrayView2<f64>, entity_vec: &[f64]) -> Result<()> {
        if feats.nrows() == 0 {
            return Err(Error::invalid("frame has no proposals"));
        }
        if feats.ncols() != self.visual.in_dim() {
            return Err(Error::Dim {
                expected: self.visual.in_dim(),
                got: feats.ncols(),
                context: "proposal feature",
            });
        }
        if entity_vec.len() != self.word.in_dim() {
            return Err(Error::Dim {
                expected: self.word.in_dim(),
                got: entity_vec.len(),
                context: "entity vector",
            });
        }
        Ok(())
    }
}

impl Parameterized for ReconModel {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.visual.tensors();
        t.extend(self.word.tensors());
        t.extend(self.attention.tensors());
        t.extend(self.reconstructor.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.visual.tensors_mut();
        t.extend(self.word.tensors_mut());
        t.extend(self.attention.tensors_mut());
        t.extend(self.reconstructor.tensors_mut());
        t
    }
}

struct Forward {
    phi: Array2<f64>,
    psi: Array1<f64>,
    weights: Vec<f64>,
    attended: Array1<f64>,
    recon: Array1<f64>,
}

fn forward(model: &ReconModel, feats: &ArrayView2<f64>, entity_vec: &[f64]) -> Result<Forward> {
    model.check_dims(feats, entity_vec)?;
    let e = model.embed_dim();
    let phi = model.visual.forward_batch(feats);
    let psi = Array1::from(model.word.forward(entity_vec)?);
    let w = model.attention.weights.row(0);
    let entity_term = w.slice(s![e..]).dot(&psi) + model.attention.bias[0];
    let logits: Vec<f64> = phi
        .dot(&w.slice(s![..e]))
        .iter()
        .map(|v| v + entity_term)
        .collect();
    let weights = softmax(&logits);
    let attended = ArrayView1::from(&weights[..]).dot(&phi);
    let recon = model.reconstructor.weights.dot(&attended) + &model.reconstructor.bias;
    Ok(Forward {
        phi,
        psi,
        weights,
        attended,
        recon,
    })
}

/// Eval-mode attention weights and reconstruction.
pub(super) fn attention_eval(
    model: &ReconModel,
    feats: &ArrayView2<f64>,
    entity_vec: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let f = forward(model, feats, entity_vec)?;
    Ok((f.weights, f.recon.to_vec()))
}

/// Attention weights `a_1..a_K` over the frame's proposals and the
/// reconstruction `W_rec sum_k a_k phi(r_k)`.
pub fn recon_attention(
    model: &ReconModel,
    frame: &ProposalFrame,
    entity_vec: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let feats = super::feature_matrix(frame)?;
    attention_eval(model, &feats.view(), entity_vec)
}

/// Loss and gradients for one example, accumulated into `grads` scaled by `scale`.
fn accumulate(
    model: &ReconModel,
    feats: &ArrayView2<f64>,
    entity_vec: &[f64],
    scale: f64,
    grads: &mut ReconModel,
) -> Result<f64> {
    let f = forward(model, feats, entity_vec)?;
    let e = model.embed_dim() as f64;
    let diff = &f.psi - &f.recon;
    let loss = diff.dot(&diff) / e;

    let d_recon = diff.mapv(|d| -2.0 * scale * d / e);
    let mut d_psi = if model.freeze_target {
        Array1::zeros(diff.len())
    } else {
        diff.mapv(|d| 2.0 * scale * d / e)
    };

    // r = W_rec v + b
    let d_recon_col = d_recon.view().insert_axis(Axis(1));
    grads.reconstructor.weights += &d_recon_col.dot(&f.attended.view().insert_axis(Axis(0)));
    grads.reconstructor.bias += &d_recon;
    let d_attended = model.reconstructor.weights.t().dot(&d_recon);

    // v = sum_k a_k phi_k
    let d_weights = f.phi.dot(&d_attended).to_vec();
    let mut d_phi = ArrayView1::from(&f.weights[..])
        .insert_axis(Axis(1))
        .dot(&d_attended.view().insert_axis(Axis(0)));

    // a = softmax(W_a [phi_k; psi] + b)
    let d_logits = Array1::from(softmax_backward(&f.weights, &d_weights));
    let k = model.embed_dim();
    let w = model.attention.weights.row(0);
    let d_logit_sum = d_logits.sum();
    {
        let mut gw = grads.attention.weights.row_mut(0);
        gw.slice_mut(s![..k]).scaled_add(1.0, &d_logits.dot(&f.phi));
        gw.slice_mut(s![k..]).scaled_add(d_logit_sum, &f.psi);
    }
    grads.attention.bias[0] += d_logit_sum;
    d_phi += &d_logits
        .view()
        .insert_axis(Axis(1))
        .dot(&w.slice(s![..k]).insert_axis(Axis(0)));
    d_psi.scaled_add(d_logit_sum, &w.slice(s![k..]));

    model
        .visual
        .accumulate_param_grads(feats, &d_phi.view(), &mut grads.visual);
    let x = ArrayView1::from(entity_vec).insert_axis(Axis(0));
    model
        .word
        .accumulate_param_grads(&x, &d_psi.view().insert_axis(Axis(0)), &mut grads.word);
    Ok(loss)
}

/// `(1/E) sum_d (psi(e)_d - r_d)^2` with gradients for every layer.
pub fn recon_loss(
    model: &ReconModel,
    frame: &ProposalFrame,
    entity_vec: &[f64],
) -> Result<(f64, ReconModel)> {
    let feats = super::feature_matrix(frame)?;
    let mut grads = model.zeros_like();
    let loss = accumulate(model, &feats.view(), entity_vec, 1.0, &mut grads)?;
    Ok((loss, grads))
}

/// Mean reconstruction loss over a batch of examples.
pub fn recon_batch_loss(
    model: &ReconModel,
    batch: &[&GroundingExample],
) -> Result<(f64, ReconModel)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty reconstruction batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = model.zeros_like();
    let mut total = 0.0;
    for ex in batch {
        total += accumulate(
            model,
            &ex.features.view(),
            &ex.entity_vec,
            scale,
            &mut grads,
        )?;
    }
    Ok((total * scale, grads))
}

#[derive(Clone, Debug)]
pub struct TrainedRecon {
    pub model: ReconModel,
    /// Mean per-example loss for each epoch.
    pub loss_trace: Vec<f64>,
}

/// Adam over shuffled minibatches minimising the reconstruction loss.
pub fn train_recon(examples: &[GroundingExample], cfg: &GroundingConfig) -> Result<TrainedRecon> {
    cfg.validate()?;
    let (visual_dim, word_dim) = check_corpus(examples)?;
    let mut model = ReconModel::new(visual_dim, word_dim, cfg, &mut Rng::new(cfg.seed));
    let mut adam = AdamState::for_model(cfg.lr, &model);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut rng = Rng::derived(cfg.seed, 1 + epoch as u64);
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&GroundingExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let (loss, grads) = recon_batch_loss(&model, &batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "reconstruction loss at epoch {epoch}"
                )));
            }
            adam.step_model(&mut model, &grads)?;
            total += loss * batch.len() as f64;
        }
        loss_trace.push(total / examples.len() as f64);
    }
    Ok(TrainedRecon { model, loss_trace })
}
