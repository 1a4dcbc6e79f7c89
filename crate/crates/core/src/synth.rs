//! Planted synthetic corpora with known answers.
//!
//! In a grounding corpus every frame of entity `i` holds exactly one
//! proposal whose feature comes from a cluster tied linearly to `i`'s word
//! vector; its box is the gold box. The remaining proposals draw features
//! from background clusters orthogonal to all entity clusters and sit on
//! tiles disjoint from the gold box.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2};

use crate::dataset::frame_id;
use crate::error::{Error, Result};
use crate::ingest::{
    BBox, EmbeddingTable, EntityFramePair, FrameVector, GoldAnnotation, Proposal, ProposalFrame,
};
use crate::tensorcore::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_entities: usize,
    pub proposals_per_frame: usize,
    pub frames_per_entity: usize,
    /// Frames sharing a video id; the last video of an entity may be shorter.
    pub frames_per_video: usize,
    pub visual_dim: usize,
    pub embed_dim: usize,
    pub noise_sigma: f64,
    pub canvas: (f64, f64),
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_entities: 20,
            proposals_per_frame: 10,
            frames_per_entity: 100,
            frames_per_video: 10,
            visual_dim: 64,
            embed_dim: 32,
            noise_sigma: 0.1,
            canvas: (640.0, 480.0),
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_entities < 2 {
            return Err(Error::invalid("need at least two entities"));
        }
        if self.proposals_per_frame == 0
            || self.frames_per_entity == 0
            || self.frames_per_video == 0
        {
            return Err(Error::invalid(
                "proposal, frame and video counts must be positive",
            ));
        }
        if self.visual_dim == 0 || self.embed_dim == 0 {
            return Err(Error::invalid("dimensions must be positive"));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::invalid(
                "noise sigma must be finite and non-negative",
            ));
        }
        if !(self.canvas.0 > 0.0 && self.canvas.1 > 0.0) {
            return Err(Error::invalid("canvas must have positive size"));
        }
        Ok(())
    }
}

/// Entity names `obj00`, `obj01`, ...
pub fn entity_name(i: usize) -> String {
    format!("obj{i:02}")
}

fn video_name(entity: usize, video: usize) -> String {
    format!("vid{entity:02}x{video:03}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundingCorpus {
    pub frames: Vec<ProposalFrame>,
    pub gold: Vec<GoldAnnotation>,
    pub embeddings: EmbeddingTable,
    pub pairs: Vec<EntityFramePair>,
    /// Planted proposal index per frame, aligned with `frames`.
    pub planted: Vec<usize>,
}

/// Orthonormal rows via Gram-Schmidt on Gaussian draws.
fn orthonormal_rows(n: usize, dim: usize, rng: &mut Rng) -> Array2<f64> {
    let mut q = Array2::<f64>::zeros((n, dim));
    let mut i = 0;
    while i < n {
        let mut v = Array1::from_shape_fn(dim, |_| rng.normal());
        for j in 0..i {
            let proj = q.row(j).dot(&v);
            v.scaled_add(-proj, &q.row(j));
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-8 {
            q.row_mut(i).assign(&(v / norm));
            i += 1;
        }
    }
    q
}

/// Axis-aligned disjoint tiles covering at least `k` cells of the canvas.
fn tiles(k: usize, canvas: (f64, f64)) -> Vec<BBox> {
    let cols = (k as f64).sqrt().ceil() as usize;
    let rows = k.div_ceil(cols);
    let (w, h) = (canvas.0 / cols as f64, canvas.1 / rows as f64);
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (x, y) = (c as f64 * w, r as f64 * h);
            out.push(
                BBox::new(x + 0.1 * w, y + 0.1 * h, x + 0.9 * w, y + 0.9 * h)
                    .expect("tile is valid"),
            );
        }
    }
    out
}

fn noisy(center: &Array1<f64>, sigma: f64, rng: &mut Rng) -> Vec<f64> {
    center.iter().map(|c| c + sigma * rng.normal()).collect()
}

/// Build a planted grounding corpus.
///
/// Entity `i`'s word vector is the `i`-th basis direction plus noise, so
/// `embed_dim` must be at least `n_entities`, and `visual_dim` must leave
/// room for background directions beyond the entity subspace.
pub fn gen_grounding_corpus(spec: &SynthSpec) -> Result<GroundingCorpus> {
    spec.validate()?;
    let (c, d, dv) = (spec.n_entities, spec.embed_dim, spec.visual_dim);
    if d < c {
        return Err(Error::invalid(format!(
            "embed_dim {d} is smaller than n_entities {c}"
        )));
    }
    if dv <= d {
        return Err(Error::invalid(format!(
            "visual_dim {dv} must exceed embed_dim {d}"
        )));
    }
    let n_background = (2 * c).min(dv - d);

    let mut rng = Rng::derived(spec.seed, 0);
    let mut embeddings = EmbeddingTable::new(d)?;
    let mut vectors = Vec::with_capacity(c);
    for i in 0..c {
        let mut v: Vec<f64> = (0..d).map(|_| spec.noise_sigma * rng.normal()).collect();
        v[i] += 1.0;
        embeddings.insert(entity_name(i), v.clone())?;
        vectors.push(Array1::from(v));
    }

    let basis = orthonormal_rows(d + n_background, dv, &mut rng);
    let scale = (dv as f64).sqrt();
    let entity_map = basis.slice(ndarray::s![..d, ..]);
    let centers: Vec<Array1<f64>> = vectors
        .iter()
        .map(|v| entity_map.t().dot(v) * scale)
        .collect();
    let background: Vec<Array1<f64>> = (0..n_background)
        .map(|j| basis.row(d + j).to_owned() * scale)
        .collect();

    let k = spec.proposals_per_frame;
    let grid = tiles(k, spec.canvas);
    let mut corpus = GroundingCorpus {
        frames: Vec::with_capacity(c * spec.frames_per_entity),
        gold: Vec::new(),
        embeddings,
        pairs: Vec::new(),
        planted: Vec::new(),
    };
    for (i, center) in centers.iter().enumerate() {
        let mut rng = Rng::derived(spec.seed, 1 + i as u64);
        let entity = entity_name(i);
        for n in 0..spec.frames_per_entity {
            let video_id = video_name(i, n / spec.frames_per_video);
            let t = (n % spec.frames_per_video + 1) as f64;
            let fid = frame_id(&video_id, t);
            let mut cells: Vec<usize> = (0..grid.len()).collect();
            rng.shuffle(&mut cells);
            let planted = rng.below(k);
            let proposals = (0..k)
                .map(|p| {
                    let feature = if p == planted {
                        noisy(center, spec.noise_sigma, &mut rng)
                    } else {
                        noisy(
                            &background[rng.below(n_background)],
                            spec.noise_sigma,
                            &mut rng,
                        )
                    };
                    Proposal {
                        bbox: grid[cells[p]],
                        feature,
                    }
                })
                .collect();
            corpus.gold.push(GoldAnnotation {
                frame_id: fid.clone(),
                entity: entity.clone(),
                boxes: vec![grid[cells[planted]]],
            });
            corpus.pairs.push(EntityFramePair {
                entity: entity.clone(),
                video_id: video_id.clone(),
                timestamp_s: t,
                frame_id: fid.clone(),
            });
            corpus.frames.push(ProposalFrame {
                frame_id: fid,
                video_id,
                entity: Some(entity.clone()),
                proposals,
            });
            corpus.planted.push(planted);
        }
    }
    Ok(corpus)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationCorpus {
    pub frames: Vec<FrameVector>,
    pub pairs: Vec<EntityFramePair>,
    pub video_labels: BTreeMap<String, BTreeSet<String>>,
    /// Class centers, one row per entity.
    pub centers: Array2<f64>,
}

/// Standard-normal class centers in `visual_dim` dimensions.
pub fn classification_centers(spec: &SynthSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    let mut rng = Rng::derived(spec.seed, 0);
    Ok(Array2::from_shape_fn(
        (spec.n_entities, spec.visual_dim),
        |_| rng.normal(),
    ))
}

/// Whole-frame features `center_i + noise`, one entity per video.
pub fn gen_classification_corpus(spec: &SynthSpec) -> Result<ClassificationCorpus> {
    let centers = classification_centers(spec)?;
    classification_from_centers(spec, centers)
}

/// Like [`gen_classification_corpus`] with caller-chosen centers.
pub fn classification_from_centers(
    spec: &SynthSpec,
    centers: Array2<f64>,
) -> Result<ClassificationCorpus> {
    spec.validate()?;
    if centers.dim() != (spec.n_entities, spec.visual_dim) {
        return Err(Error::invalid("centers must be n_entities x visual_dim"));
    }
    let mut frames = Vec::new();
    let mut pairs = Vec::new();
    let mut video_labels: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (i, center) in centers.rows().into_iter().enumerate() {
        let mut rng = Rng::derived(spec.seed, 1 + i as u64);
        let entity = entity_name(i);
        let center = center.to_owned();
        for n in 0..spec.frames_per_entity {
            let video_id = video_name(i, n / spec.frames_per_video);
            let t = (n % spec.frames_per_video + 1) as f64;
            let fid = frame_id(&video_id, t);
            video_labels
                .entry(video_id.clone())
                .or_default()
                .insert(entity.clone());
            pairs.push(EntityFramePair {
                entity: entity.clone(),
                video_id: video_id.clone(),
                timestamp_s: t,
                frame_id: fid.clone(),
            });
            frames.push(FrameVector {
                frame_id: fid,
                video_id,
                entity: Some(entity.clone()),
                feature: noisy(&center, spec.noise_sigma, &mut rng),
            });
        }
    }
    Ok(ClassificationCorpus {
        frames,
        pairs,
        video_labels,
        centers,
    })
}

/// Exhaustive upper bound, written independently of the grounding
/// metrics: for each boxed gold record, scan every proposal of its frame
/// against every gold box. Returns a percentage; 0 when nothing counts.
pub fn oracle_upper_bound(
    frames: &[ProposalFrame],
    gold: &[GoldAnnotation],
    threshold: f64,
) -> Result<f64> {
    let mut counted = 0usize;
    let mut reachable = 0usize;
    for g in gold {
        if g.boxes.is_empty() {
            continue;
        }
        let mut frame = None;
        for f in frames {
            if f.frame_id == g.frame_id {
                frame = Some(f);
                break;
            }
        }
        let frame = frame.ok_or_else(|| Error::MissingFrame(g.frame_id.clone()))?;
        counted += 1;
        let mut found = false;
        for p in &frame.proposals {
            for gb in &g.boxes {
                let ix = (p.bbox.x2.min(gb.x2) - p.bbox.x1.max(gb.x1)).max(0.0);
                let iy = (p.bbox.y2.min(gb.y2) - p.bbox.y1.max(gb.y1)).max(0.0);
                let inter = ix * iy;
                let area_p = (p.bbox.x2 - p.bbox.x1) * (p.bbox.y2 - p.bbox.y1);
                let area_g = (gb.x2 - gb.x1) * (gb.y2 - gb.y1);
                if inter > 0.0 && inter / (area_p + area_g - inter) >= threshold {
                    found = true;
                }
            }
        }
        if found {
            reachable += 1;
        }
    }
    Ok(if counted == 0 {
        0.0
    } else {
        100.0 * reachable as f64 / counted as f64
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{read_gold, read_proposal_frames, write_gold, write_proposal_frames};

    fn small() -> SynthSpec {
        SynthSpec {
            n_entities: 4,
            proposals_per_frame: 5,
            frames_per_entity: 6,
            frames_per_video: 3,
            visual_dim: 12,
            embed_dim: 4,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn shapes_and_planting() {
        let c = gen_grounding_corpus(&small()).unwrap();
        assert_eq!(c.frames.len(), 24);
        assert_eq!(c.embeddings.len(), 4);
        for (f, (g, &k)) in c.frames.iter().zip(c.gold.iter().zip(&c.planted)) {
            assert_eq!(f.proposals.len(), 5);
            assert_eq!(g.boxes, vec![f.proposals[k].bbox]);
            for (j, p) in f.proposals.iter().enumerate() {
                assert_eq!(p.feature.len(), 12);
                if j != k {
                    assert!(
                        p.bbox.x2 <= g.boxes[0].x1
                            || p.bbox.x1 >= g.boxes[0].x2
                            || p.bbox.y2 <= g.boxes[0].y1
                            || p.bbox.y1 >= g.boxes[0].y2
                    );
                }
            }
        }
        assert_eq!(c.pairs[3].video_id, "vid00x001");
    }

    #[test]
    fn planted_feature_is_linear_in_embedding_at_zero_noise() {
        let spec = SynthSpec {
            noise_sigma: 0.0,
            ..small()
        };
        let c = gen_grounding_corpus(&spec).unwrap();
        for (f, &k) in c.frames.iter().zip(&c.planted) {
            let e = c.embeddings.get(f.entity.as_deref().unwrap()).unwrap();
            let norm: f64 = f.proposals[k]
                .feature
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            assert!(
                (norm - 12f64.sqrt() * e.iter().map(|v| v * v).sum::<f64>().sqrt()).abs() < 1e-9
            );
        }
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(gen_grounding_corpus(&SynthSpec {
            embed_dim: 3,
            ..small()
        })
        .is_err());
        assert!(gen_grounding_corpus(&SynthSpec {
            visual_dim: 4,
            ..small()
        })
        .is_err());
        assert!(SynthSpec {
            n_entities: 1,
            ..small()
        }
        .validate()
        .is_err());
        assert!(SynthSpec {
            noise_sigma: -1.0,
            ..small()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn deterministic_and_round_trips() {
        let a = gen_grounding_corpus(&small()).unwrap();
        assert_eq!(a, gen_grounding_corpus(&small()).unwrap());
        let mut buf = Vec::new();
        write_proposal_frames(&a.frames, 12, &mut buf).unwrap();
        assert_eq!(read_proposal_frames(&buf[..]).unwrap(), a.frames);
        let mut buf = Vec::new();
        write_gold(&a.gold, &mut buf).unwrap();
        assert_eq!(read_gold(&buf[..]).unwrap(), a.gold);
    }

    #[test]
    fn noise_free_upper_bound_is_full() {
        let c = gen_grounding_corpus(&SynthSpec {
            noise_sigma: 0.0,
            ..small()
        })
        .unwrap();
        for t in [0.5, 0.3, 0.1] {
            assert_eq!(oracle_upper_bound(&c.frames, &c.gold, t).unwrap(), 100.0);
        }
        assert_eq!(oracle_upper_bound(&c.frames, &[], 0.5).unwrap(), 0.0);
    }

    #[test]
    fn classification_corpus() {
        let c = gen_classification_corpus(&small()).unwrap();
        assert_eq!(c.frames.len(), 24);
        assert_eq!(c.video_labels.len(), 8);
        assert!(c.video_labels.values().all(|s| s.len() == 1));
        assert_eq!(c, gen_classification_corpus(&small()).unwrap());
    }
}
