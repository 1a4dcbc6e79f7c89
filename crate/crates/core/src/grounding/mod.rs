//! Weakly-supervised grounding: pick the region proposal that depicts an
//! entity, trained only from entity/frame pairs.
//!
//! Two models share the same inputs (a frame's proposal features and the
//! entity's word vector):
//!
//! * [`MilModel`] scores each proposal by the dot product of its encoded
//!   feature with the encoded entity and is trained with a two-sided hinge
//!   loss against a sampled wrong entity and a sampled wrong frame.
//! * [`ReconModel`] attends over proposals and is trained to reconstruct the
//!   encoded entity from the attention-weighted visual encoding.
//!
//! [`metrics`] holds IoU, grounding accuracy, the proposal upper bound and
//! the random baseline.

pub mod metrics;
mod mil;
mod recon;

use std::collections::HashMap;

use ndarray::Array2;

pub use metrics::{
    grounding_accuracy, iou, random_baseline, upper_bound, AccuracyReport, RandomBaseline,
};
pub use mil::{
    mil_frame_score, mil_loss, mil_loss_with_plan, mil_scores, plan_mil_batch, train_mil,
    MilBatchPlan, MilItem, MilModel, TrainedMil,
};
pub use recon::{
    recon_attention, recon_batch_loss, recon_loss, train_recon, ReconModel, TrainedRecon,
};

use crate::error::{Error, Result};
use crate::ingest::{BBox, EmbeddingTable, EntityFramePair, ProposalFrame};
use crate::tensorcore::{sigmoid, Checkpoint};

#[derive(Clone, Debug)]
pub struct GroundingConfig {
    /// Hinge margin for MIL.
    pub delta: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Shared embedding size of both encoders.
    pub embed_dim: usize,
    /// Hidden width of the MIL visual encoder.
    pub hidden_dim: usize,
    /// Dropout after the MIL visual encoder's hidden layer.
    pub dropout: f64,
    /// Stop gradient through the reconstruction target `psi(e)`.
    pub freeze_target: bool,
}

impl GroundingConfig {
    pub fn mil() -> Self {
        Self {
            delta: 0.01,
            lr: 1e-5,
            epochs: 20,
            batch_size: 64,
            seed: 0,
            embed_dim: 100,
            hidden_dim: 512,
            dropout: 0.2,
            freeze_target: false,
        }
    }

    pub fn recon() -> Self {
        Self {
            lr: 1e-3,
            ..Self::mil()
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::invalid("delta must be positive"));
        }
        if !(self.lr > 0.0) || self.epochs == 0 || self.batch_size == 0 || self.embed_dim == 0 {
            return Err(Error::invalid(
                "lr, epochs, batch size and embedding size must be positive",
            ));
        }
        Ok(())
    }
}

/// One training or evaluation input: a frame's proposal features (rows)
/// and the word vector of the entity to ground.
#[derive(Clone, Debug)]
pub struct GroundingExample {
    pub frame_id: String,
    pub entity: String,
    pub features: Array2<f64>,
    pub entity_vec: Vec<f64>,
}

/// Row matrix of a frame's proposal features.
pub fn feature_matrix(frame: &ProposalFrame) -> Result<Array2<f64>> {
    let k = frame.proposals.len();
    if k == 0 {
        return Err(Error::invalid(format!(
            "frame {} has no proposals",
            frame.frame_id
        )));
    }
    let d = frame.proposals[0].feature.len();
    let mut m = Array2::zeros((k, d));
    for (i, p) in frame.proposals.iter().enumerate() {
        if p.feature.len() != d {
            return Err(Error::Dim {
                expected: d,
                got: p.feature.len(),
                context: "proposal feature",
            });
        }
        m.row_mut(i)
            .assign(&ndarray::ArrayView1::from(&p.feature[..]));
    }
    Ok(m)
}

/// Join pairs with their proposal frames and entity vectors.
///
/// Every pair must have a frame and every entity an embedding; all missing
/// entities are reported together.
pub fn build_examples(
    pairs: &[EntityFramePair],
    frames: &[ProposalFrame],
    embeddings: &EmbeddingTable,
) -> Result<Vec<GroundingExample>> {
    let by_id: HashMap<&str, &ProposalFrame> =
        frames.iter().map(|f| (f.frame_id.as_str(), f)).collect();
    let vectors = embeddings.entity_vectors(pairs.iter().map(|p| p.entity.as_str()))?;
    pairs
        .iter()
        .map(|p| {
            let frame = by_id
                .get(p.frame_id.as_str())
                .ok_or_else(|| Error::MissingFrame(p.frame_id.clone()))?;
            Ok(GroundingExample {
                frame_id: p.frame_id.clone(),
                entity: p.entity.clone(),
                features: feature_matrix(frame)?,
                entity_vec: vectors[&p.entity].clone(),
            })
        })
        .collect()
}

/// A trained grounding model of either kind.
#[derive(Clone, Debug, PartialEq)]
pub enum GroundingModel {
    Mil(MilModel),
    Recon(ReconModel),
}

impl GroundingModel {
    pub fn name(&self) -> &'static str {
        match self {
            GroundingModel::Mil(_) => "MIL",
            GroundingModel::Recon(_) => "reconstruction",
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        match ckpt.header.kind.as_str() {
            "mil" => Ok(GroundingModel::Mil(MilModel::from_checkpoint(ckpt)?)),
            "recon" => Ok(GroundingModel::Recon(ReconModel::from_checkpoint(ckpt)?)),
            other => Err(Error::Checkpoint(format!(
                "not a grounding checkpoint: {other}"
            ))),
        }
    }

    pub fn to_checkpoint(&self, seed: u64, epoch: usize) -> Checkpoint {
        match self {
            GroundingModel::Mil(m) => m.to_checkpoint(seed, epoch),
            GroundingModel::Recon(m) => m.to_checkpoint(seed, epoch),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundingPrediction {
    pub frame_id: String,
    pub entity: String,
    pub chosen_index: usize,
    pub chosen_box: BBox,
    /// Sigmoid score (MIL) or attention weight (reconstruction).
    pub score: f64,
}

/// First index of the maximum; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        match best {
            Some(b) if values[b] >= *v => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Choose the proposal for `entity_vec` in eval mode.
pub fn ground(
    model: &GroundingModel,
    frame: &ProposalFrame,
    entity: &str,
    entity_vec: &[f64],
) -> Result<GroundingPrediction> {
    if frame.proposals.is_empty() {
        return Err(Error::invalid(format!(
            "frame {} has no proposals",
            frame.frame_id
        )));
    }
    let feats = feature_matrix(frame)?;
    let weights = match model {
        GroundingModel::Mil(m) => sigmoid(&mil::scores_eval(m, &feats.view(), entity_vec)?),
        GroundingModel::Recon(m) => recon::attention_eval(m, &feats.view(), entity_vec)?.0,
    };
    let k = argmax(&weights).expect("non-empty proposals");
    Ok(GroundingPrediction {
        frame_id: frame.frame_id.clone(),
        entity: entity.to_string(),
        chosen_index: k,
        chosen_box: frame.proposals[k].bbox,
        score: weights[k],
    })
}

/// Ground every gold-annotated `(frame, entity)` that has proposals.
pub fn predict_for_gold(
    model: &GroundingModel,
    frames: &[ProposalFrame],
    gold: &[crate::ingest::GoldAnnotation],
    embeddings: &EmbeddingTable,
) -> Result<Vec<GroundingPrediction>> {
    let by_id: HashMap<&str, &ProposalFrame> =
        frames.iter().map(|f| (f.frame_id.as_str(), f)).collect();
    let vectors = embeddings.entity_vectors(gold.iter().map(|g| g.entity.as_str()))?;
    gold.iter()
        .map(|g| {
            let frame = by_id
                .get(g.frame_id.as_str())
                .ok_or_else(|| Error::MissingFrame(g.frame_id.clone()))?;
            ground(model, frame, &g.entity, &vectors[&g.entity])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Proposal;
    use crate::tensorcore::Rng;

    fn frame(k: usize, dim: usize, rng: &mut Rng) -> ProposalFrame {
        ProposalFrame {
            frame_id: "f".into(),
            video_id: "v".into(),
            entity: None,
            proposals: (0..k)
                .map(|i| Proposal {
                    bbox: BBox::new(i as f64, 0.0, i as f64 + 1.0, 1.0).unwrap(),
                    feature: (0..dim).map(|_| rng.normal()).collect(),
                })
                .collect(),
        }
    }

    fn small_cfg() -> GroundingConfig {
        GroundingConfig {
            embed_dim: 4,
            hidden_dim: 6,
            ..GroundingConfig::mil()
        }
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), Some(1));
        assert_eq!(argmax(&[]), None);
    }

    #[test]
    fn single_proposal_always_index_zero() {
        let mut rng = Rng::new(3);
        let f = frame(1, 5, &mut rng);
        let mil = GroundingModel::Mil(MilModel::new(5, 3, &small_cfg(), &mut rng));
        let rec = GroundingModel::Recon(ReconModel::new(5, 3, &small_cfg(), &mut rng));
        for m in [&mil, &rec] {
            let p = ground(m, &f, "x", &[0.1, 0.2, 0.3]).unwrap();
            assert_eq!(p.chosen_index, 0);
            assert_eq!(p.chosen_box, f.proposals[0].bbox);
        }
    }

    #[test]
    fn mil_equal_scores_pick_first() {
        let mut rng = Rng::new(4);
        let f = frame(4, 5, &mut rng);
        let mut m = MilModel::new(5, 3, &small_cfg(), &mut rng);
        use crate::tensorcore::Parameterized;
        m.fill_zero();
        let p = ground(&GroundingModel::Mil(m), &f, "x", &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(p.chosen_index, 0);
        assert_eq!(p.score, 0.5);
    }

    #[test]
    fn empty_frame_is_error() {
        let mut rng = Rng::new(4);
        let f = ProposalFrame {
            frame_id: "e".into(),
            video_id: "v".into(),
            entity: None,
            proposals: vec![],
        };
        let m = GroundingModel::Mil(MilModel::new(5, 3, &small_cfg(), &mut rng));
        assert!(ground(&m, &f, "x", &[0.0; 3]).is_err());
    }

    #[test]
    fn build_examples_reports_missing() {
        let mut rng = Rng::new(1);
        let mut f = frame(2, 3, &mut rng);
        f.frame_id = "v_1000".into();
        let mut emb = EmbeddingTable::new(2).unwrap();
        emb.insert("hand", vec![1.0, 0.0]).unwrap();
        let pair = |e: &str, fid: &str| EntityFramePair {
            entity: e.into(),
            video_id: "v".into(),
            timestamp_s: 1.0,
            frame_id: fid.into(),
        };
        let ok = build_examples(&[pair("hand", "v_1000")], std::slice::from_ref(&f), &emb).unwrap();
        assert_eq!(ok[0].features.dim(), (2, 3));
        let err = build_examples(
            &[pair("knee", "v_1000"), pair("elbow", "v_1000")],
            std::slice::from_ref(&f),
            &emb,
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingEmbeddings(ref m) if m == &["elbow", "knee"]));
        assert!(matches!(
            build_examples(&[pair("hand", "nope")], &[f], &emb),
            Err(Error::MissingFrame(_))
        ));
    }

    #[test]
    fn config_defaults() {
        let m = GroundingConfig::mil();
        assert_eq!(
            (
                m.delta,
                m.lr,
                m.epochs,
                m.embed_dim,
                m.hidden_dim,
                m.dropout
            ),
            (0.01, 1e-5, 20, 100, 512, 0.2)
        );
        assert_eq!(GroundingConfig::recon().lr, 1e-3);
        assert!(GroundingConfig { delta: 0.0, ..m }.validate().is_err());
    }
}
