//! Frame classifiers over precomputed whole-frame features, plus top-k
//! accuracy and MAP@k.
//!
//! The head is `linear(D_f -> 256) -> relu -> dropout(0.5) -> linear(256 -> C)`.
//! In single-label mode the logits go through softmax cross-entropy against
//! the frame's aligned entity; in multi-label mode through sigmoid binary
//! cross-entropy against every entity of the frame's video.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Zip};

use crate::error::{Error, Result};
use crate::ingest::FrameVector;
use crate::tensorcore::{
    bce, cross_entropy, dropout_mask, sigmoid, softmax, AdamState, Checkpoint, LinearLayer,
    Parameterized, Rng,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Single,
    Multi,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Single => "cls-single",
            Mode::Multi => "cls-multi",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" | "cls-single" => Ok(Mode::Single),
            "multi" | "cls-multi" => Ok(Mode::Multi),
            other => Err(Error::invalid(format!("unknown classifier mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RecognitionConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub hidden_dim: usize,
    pub dropout: f64,
}

impl Default for RecognitionConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            lr: 1e-4,
            epochs: 20,
            seed: 0,
            hidden_dim: 256,
            dropout: 0.5,
        }
    }
}

impl RecognitionConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.hidden_dim == 0 {
            return Err(Error::invalid(
                "batch size, epochs and hidden size must be positive",
            ));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    pub layer1: LinearLayer,
    pub layer2: LinearLayer,
    pub dropout: f64,
    /// Sorted entity names; position is the class id.
    pub class_index: Vec<String>,
    pub mode: Mode,
}

/// Per-example training target.
#[derive(Clone, Debug)]
pub enum Target {
    Class(usize),
    MultiHot(Vec<f64>),
}

impl ClassifierModel {
    pub fn new(
        feature_dim: usize,
        class_index: Vec<String>,
        mode: Mode,
        cfg: &RecognitionConfig,
        rng: &mut Rng,
    ) -> Self {
        let c = class_index.len();
        Self {
            layer1: LinearLayer::new(feature_dim, cfg.hidden_dim, rng),
            layer2: LinearLayer::new(cfg.hidden_dim, c, rng),
            dropout: cfg.dropout,
            class_index,
            mode,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.layer1.in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.class_index.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layer1: self.layer1.zeros_like(),
            layer2: self.layer2.zeros_like(),
            dropout: self.dropout,
            class_index: self.class_index.clone(),
            mode: self.mode,
        }
    }

    /// Eval-mode logits.
    pub fn logits(&self, feature: &[f64]) -> Result<Vec<f64>> {
        let h = self.layer1.forward(feature)?;
        let h: Vec<f64> = h.into_iter().map(|v| v.max(0.0)).collect();
        self.layer2.forward(&h)
    }

    /// Softmax probabilities (single) or sigmoid activations (multi).
    pub fn scores(&self, feature: &[f64]) -> Result<Vec<f64>> {
        let z = self.logits(feature)?;
        Ok(match self.mode {
            Mode::Single => softmax(&z),
            Mode::Multi => sigmoid(&z),
        })
    }

    /// Mean batch loss and its gradient. `mask` holds inverted-dropout
    /// multipliers for the hidden layer; `None` runs in eval mode.
    pub fn loss_and_grads(
        &self,
        x: &ArrayView2<f64>,
        targets: &[&Target],
        mask: Option<&Array2<f64>>,
    ) -> Result<(f64, ClassifierModel)> {
        let b = x.nrows();
        if targets.len() != b {
            return Err(Error::Dim {
                expected: b,
                got: targets.len(),
                context: "classifier targets",
            });
        }
        let pre = self.layer1.try_forward_batch(x)?;
        let mut act = pre.mapv(|v| v.max(0.0));
        if let Some(m) = mask {
            act *= m;
        }
        let logits = self.layer2.forward_batch(&act.view());

        let mut loss = 0.0;
        let mut d_logits = Array2::<f64>::zeros(logits.raw_dim());
        for (i, t) in targets.iter().enumerate() {
            let row = logits.row(i).to_vec();
            let (l, g) = match (self.mode, t) {
                (Mode::Single, Target::Class(c)) => cross_entropy(&row, *c)?,
                (Mode::Multi, Target::MultiHot(v)) => bce(&row, v)?,
                _ => return Err(Error::invalid("target kind does not match classifier mode")),
            };
            loss += l;
            for (d, gv) in d_logits.row_mut(i).iter_mut().zip(g) {
                *d = gv / b as f64;
            }
        }
        loss /= b as f64;

        let mut grads = self.zeros_like();
        let mut d_act =
            self.layer2
                .backward_batch(&act.view(), &d_logits.view(), &mut grads.layer2);
        if let Some(m) = mask {
            d_act *= m;
        }
        Zip::from(&mut d_act).and(&pre).for_each(|d, p| {
            if *p <= 0.0 {
                *d = 0.0;
            }
        });
        self.layer1
            .accumulate_param_grads(x, &d_act.view(), &mut grads.layer1);
        Ok((loss, grads))
    }

    pub fn to_checkpoint(&self, seed: u64, epoch: usize) -> Checkpoint {
        let mut ckpt = Checkpoint::new(self.mode.as_str(), seed, epoch);
        ckpt.push_layer("layer1", &self.layer1);
        ckpt.push_layer("layer2", &self.layer2);
        ckpt.set_meta("class_index", &self.class_index);
        ckpt.set_meta("dropout", self.dropout);
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(&["cls-single", "cls-multi"])?;
        let model = Self {
            layer1: ckpt.layer("layer1")?,
            layer2: ckpt.layer("layer2")?,
            dropout: ckpt.meta("dropout")?,
            class_index: ckpt.meta("class_index")?,
            mode: ckpt.header.kind.parse()?,
        };
        if model.layer2.out_dim() != model.class_index.len()
            || model.layer2.in_dim() != model.layer1.out_dim()
        {
            return Err(Error::Checkpoint(
                "classifier layer shapes disagree with class index".into(),
            ));
        }
        Ok(model)
    }
}

impl Parameterized for ClassifierModel {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.layer1.tensors();
        t.extend(self.layer2.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.layer1.tensors_mut();
        t.extend(self.layer2.tensors_mut());
        t
    }
}

#[derive(Clone, Debug)]
pub struct TrainedClassifier {
    pub model: ClassifierModel,
    /// Mean minibatch loss per epoch.
    pub loss_trace: Vec<f64>,
}

/// Train a classifier head.
///
/// Single mode labels each frame with its own entity. Multi mode labels it
/// with every entity of its video, taken from `video_labels`.
pub fn train_classifier(
    frames: &[FrameVector],
    video_labels: &BTreeMap<String, BTreeSet<String>>,
    cfg: &RecognitionConfig,
    mode: Mode,
) -> Result<TrainedClassifier> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(Error::invalid("no training frames"));
    }
    let dim = frames[0].feature.len();

    let mut classes = BTreeSet::new();
    for f in frames {
        let entity = f
            .entity
            .as_ref()
            .ok_or_else(|| Error::UnknownLabel(format!("frame {} has no entity", f.frame_id)))?;
        classes.insert(entity.clone());
        if mode == Mode::Multi {
            let set = video_labels.get(&f.video_id).ok_or_else(|| {
                Error::UnknownLabel(format!("video {} has no labels", f.video_id))
            })?;
            classes.extend(set.iter().cloned());
        }
    }
    let class_index: Vec<String> = classes.into_iter().collect();
    let lookup: HashMap<&str, usize> = class_index
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();

    let mut x = Array2::<f64>::zeros((frames.len(), dim));
    let mut targets = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        if f.feature.len() != dim {
            return Err(Error::Dim {
                expected: dim,
                got: f.feature.len(),
                context: "frame feature",
            });
        }
        x.row_mut(i)
            .assign(&ndarray::ArrayView1::from(&f.feature[..]));
        let entity = f.entity.as_deref().expect("checked above");
        targets.push(match mode {
            Mode::Single => Target::Class(lookup[entity]),
            Mode::Multi => {
                let mut hot = vec![0.0; class_index.len()];
                for e in &video_labels[&f.video_id] {
                    hot[lookup[e.as_str()]] = 1.0;
                }
                Target::MultiHot(hot)
            }
        });
    }

    let mut init_rng = Rng::new(cfg.seed);
    let mut model = ClassifierModel::new(dim, class_index, mode, cfg, &mut init_rng);
    let mut adam = AdamState::for_model(cfg.lr, &model);
    let mut order: Vec<usize> = (0..frames.len()).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut rng = Rng::derived(cfg.seed, 1 + epoch as u64);
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = x.select(ndarray::Axis(0), chunk);
            let tb: Vec<&Target> = chunk.iter().map(|&i| &targets[i]).collect();
            let mask_vals = dropout_mask(chunk.len() * cfg.hidden_dim, model.dropout, &mut rng)?;
            let mask = Array2::from_shape_vec((chunk.len(), cfg.hidden_dim), mask_vals)
                .expect("mask shape");
            let (loss, grads) = model.loss_and_grads(&xb.view(), &tb, Some(&mask))?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "classifier loss at epoch {epoch}"
                )));
            }
            adam.step_model(&mut model, &grads)?;
            total += loss;
            batches += 1;
        }
        loss_trace.push(total / batches as f64);
    }
    Ok(TrainedClassifier { model, loss_trace })
}

/// Top `k` classes by score, ties broken by class order.
pub fn predict_topk(
    model: &ClassifierModel,
    feature: &[f64],
    k: usize,
) -> Result<Vec<(String, f64)>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let scores = model.scores(feature)?;
    Ok(rank_indices(&scores)
        .into_iter()
        .take(k)
        .map(|i| (model.class_index[i].clone(), scores[i]))
        .collect())
}

/// Indices sorted by descending score; equal scores keep index order.
pub fn rank_indices(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Percentage of frames whose gold entity is within the top `k` predictions.
/// `predictions` pairs a frame id with its ranked entity list.
pub fn top_k_accuracy(
    predictions: &[(String, Vec<String>)],
    gold: &HashMap<String, String>,
    k: usize,
) -> Result<f64> {
    if predictions.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (frame_id, ranked) in predictions {
        let g = gold
            .get(frame_id)
            .ok_or_else(|| Error::MissingGold(frame_id.clone()))?;
        if ranked.iter().take(k).any(|e| e == g) {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / predictions.len() as f64)
}

/// `AP@k = sum_{r<=k} P@r * rel(r) / min(|gold|, k)`. `None` for empty gold.
pub fn average_precision_at_k(ranked: &[String], gold: &BTreeSet<String>, k: usize) -> Option<f64> {
    if gold.is_empty() || k == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, item) in ranked.iter().take(k).enumerate() {
        if gold.contains(item) {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    Some(sum / gold.len().min(k) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapReport {
    pub map: f64,
    pub n_images: usize,
    /// Images skipped because their gold set was empty.
    pub n_excluded: usize,
}

/// Mean of per-image AP@k values, skipping images without gold.
pub fn map_at_k(per_image: &[Option<f64>]) -> MapReport {
    let vals: Vec<f64> = per_image.iter().flatten().copied().collect();
    let map = if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    MapReport {
        map,
        n_images: vals.len(),
        n_excluded: per_image.len() - vals.len(),
    }
}

/// Ranked class lists for a batch of features (eval mode).
pub fn rank_frames(
    model: &ClassifierModel,
    frames: &[FrameVector],
) -> Result<Vec<(String, Vec<String>)>> {
    frames
        .iter()
        .map(|f| {
            let scores = model.scores(&f.feature)?;
            let ranked = rank_indices(&scores)
                .into_iter()
                .map(|i| model.class_index[i].clone())
                .collect();
            Ok((f.frame_id.clone(), ranked))
        })
        .collect()
}
