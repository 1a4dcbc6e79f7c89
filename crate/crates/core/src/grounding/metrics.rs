//! Grounding evaluation: IoU, accuracy at an IoU threshold, the proposal
//! upper bound and the random-choice baseline.
//!
//! Gold records with no boxes are left out of every denominator and counted
//! in `n_excluded`.

use std::collections::HashMap;

use serde::Serialize;

use super::GroundingPrediction;
use crate::error::{Error, Result};
use crate::ingest::{BBox, GoldAnnotation, ProposalFrame};
use crate::tensorcore::Rng;

/// Intersection over union of two boxes; 0 when they do not overlap.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = w * h;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// A box is a hit when it overlaps some gold box with IoU at or above `threshold`.
fn hits(candidate: &BBox, gold: &[BBox], threshold: f64) -> bool {
    gold.iter().any(|g| {
        let v = iou(candidate, g);
        v > 0.0 && v >= threshold
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub threshold: f64,
    /// Percentage in `[0, 100]`; 0 when nothing was evaluated.
    pub accuracy: f64,
    pub n_positive: usize,
    pub n_evaluated: usize,
    /// Gold records without boxes.
    pub n_excluded: usize,
}

impl AccuracyReport {
    fn new(threshold: f64, n_positive: usize, n_evaluated: usize, n_excluded: usize) -> Self {
        Self {
            threshold,
            accuracy: percent(n_positive, n_evaluated),
            n_positive,
            n_evaluated,
            n_excluded,
        }
    }
}

fn percent(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        100.0 * n as f64 / d as f64
    }
}

type GoldKey<'a> = (&'a str, &'a str);

fn gold_index(gold: &[GoldAnnotation]) -> HashMap<GoldKey<'_>, &GoldAnnotation> {
    gold.iter()
        .map(|g| ((g.frame_id.as_str(), g.entity.as_str()), g))
        .collect()
}

/// Share of predictions whose chosen box hits a gold box.
pub fn grounding_accuracy(
    predictions: &[GroundingPrediction],
    gold: &[GoldAnnotation],
    threshold: f64,
) -> Result<AccuracyReport> {
    let index = gold_index(gold);
    let (mut pos, mut n, mut excluded) = (0, 0, 0);
    for p in predictions {
        let g = index
            .get(&(p.frame_id.as_str(), p.entity.as_str()))
            .ok_or_else(|| Error::MissingGold(format!("{} / {}", p.frame_id, p.entity)))?;
        if g.boxes.is_empty() {
            excluded += 1;
            continue;
        }
        n += 1;
        if hits(&p.chosen_box, &g.boxes, threshold) {
            pos += 1;
        }
    }
    Ok(AccuracyReport::new(threshold, pos, n, excluded))
}

/// Pair each boxed gold record with its frame's proposal boxes.
fn gold_candidates<'a>(
    frames: &'a [ProposalFrame],
    gold: &'a [GoldAnnotation],
) -> Result<(Vec<(&'a GoldAnnotation, Vec<BBox>)>, usize)> {
    let by_id: HashMap<&str, &ProposalFrame> =
        frames.iter().map(|f| (f.frame_id.as_str(), f)).collect();
    let mut out = Vec::new();
    let mut excluded = 0;
    for g in gold {
        if g.boxes.is_empty() {
            excluded += 1;
            continue;
        }
        let frame = by_id
            .get(g.frame_id.as_str())
            .ok_or_else(|| Error::MissingFrame(g.frame_id.clone()))?;
        if frame.proposals.is_empty() {
            return Err(Error::invalid(format!(
                "frame {} has no proposals",
                frame.frame_id
            )));
        }
        out.push((g, frame.proposals.iter().map(|p| p.bbox).collect()));
    }
    Ok((out, excluded))
}

/// Best achievable accuracy: share of gold records where any proposal hits.
pub fn upper_bound(
    frames: &[ProposalFrame],
    gold: &[GoldAnnotation],
    threshold: f64,
) -> Result<AccuracyReport> {
    let (cands, excluded) = gold_candidates(frames, gold)?;
    let pos = cands
        .iter()
        .filter(|(g, boxes)| boxes.iter().any(|b| hits(b, &g.boxes, threshold)))
        .count();
    Ok(AccuracyReport::new(threshold, pos, cands.len(), excluded))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RandomBaseline {
    pub threshold: f64,
    pub mean: f64,
    /// Population standard deviation over trials.
    pub std: f64,
    pub trials: usize,
    pub n_evaluated: usize,
    pub n_excluded: usize,
}

/// Accuracy of picking a uniform proposal per frame, over `trials` draws.
pub fn random_baseline(
    frames: &[ProposalFrame],
    gold: &[GoldAnnotation],
    threshold: f64,
    rng: &mut Rng,
    trials: usize,
) -> Result<RandomBaseline> {
    if trials == 0 {
        return Err(Error::invalid("trials must be positive"));
    }
    let (cands, excluded) = gold_candidates(frames, gold)?;
    let hit_table: Vec<Vec<bool>> = cands
        .iter()
        .map(|(g, boxes)| boxes.iter().map(|b| hits(b, &g.boxes, threshold)).collect())
        .collect();
    let scores: Vec<f64> = (0..trials)
        .map(|_| {
            let pos = hit_table.iter().filter(|h| h[rng.below(h.len())]).count();
            percent(pos, hit_table.len())
        })
        .collect();
    let mean = scores.iter().sum::<f64>() / trials as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / trials as f64;
    Ok(RandomBaseline {
        threshold,
        mean,
        std: var.sqrt(),
        trials,
        n_evaluated: cands.len(),
        n_excluded: excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Proposal;
    use approx::assert_relative_eq;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn frame(id: &str, boxes: &[BBox]) -> ProposalFrame {
        ProposalFrame {
            frame_id: id.into(),
            video_id: "v".into(),
            entity: None,
            proposals: boxes
                .iter()
                .map(|&bbox| Proposal {
                    bbox,
                    feature: vec![0.0],
                })
                .collect(),
        }
    }

    fn gold(id: &str, boxes: &[BBox]) -> GoldAnnotation {
        GoldAnnotation {
            frame_id: id.into(),
            entity: "e".into(),
            boxes: boxes.to_vec(),
        }
    }

    fn pred(id: &str, bx: BBox) -> GroundingPrediction {
        GroundingPrediction {
            frame_id: id.into(),
            entity: "e".into(),
            chosen_index: 0,
            chosen_box: bx,
            score: 1.0,
        }
    }

    #[test]
    fn iou_examples() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(20.0, 20.0, 30.0, 30.0)), 0.0);
        assert_eq!(iou(&a, &b(10.0, 0.0, 20.0, 10.0)), 0.0);
        assert_relative_eq!(
            iou(&a, &b(5.0, 0.0, 15.0, 10.0)),
            1.0 / 3.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn ten_frames_three_positive() {
        let g_box = b(0.0, 0.0, 10.0, 10.0);
        let far = b(50.0, 50.0, 60.0, 60.0);
        let ids: Vec<String> = (0..10).map(|i| format!("f{i}")).collect();
        let golds: Vec<_> = ids.iter().map(|id| gold(id, &[g_box])).collect();
        let preds: Vec<_> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| pred(id, if i < 3 { g_box } else { far }))
            .collect();
        for t in [0.5, 0.3, 0.1] {
            let r = grounding_accuracy(&preds, &golds, t).unwrap();
            assert_eq!((r.accuracy, r.n_positive, r.n_evaluated), (30.0, 3, 10));
        }
    }

    #[test]
    fn empty_gold_is_excluded_and_missing_gold_errors() {
        let a = b(0.0, 0.0, 1.0, 1.0);
        let golds = [gold("x", &[a]), gold("y", &[])];
        let r = grounding_accuracy(&[pred("x", a), pred("y", a)], &golds, 0.5).unwrap();
        assert_eq!((r.accuracy, r.n_evaluated, r.n_excluded), (100.0, 1, 1));
        assert!(matches!(
            grounding_accuracy(&[pred("z", a)], &golds, 0.5),
            Err(Error::MissingGold(_))
        ));
    }

    #[test]
    fn upper_bound_and_forced_choice_baseline() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        let half = b(5.0, 0.0, 15.0, 10.0);
        let frames = [frame("x", &[a]), frame("y", &[half])];
        let golds = [gold("x", &[a]), gold("y", &[a])];
        let ub = upper_bound(&frames, &golds, 0.5).unwrap();
        assert_eq!(ub.accuracy, 50.0);
        assert_eq!(upper_bound(&frames, &golds, 0.3).unwrap().accuracy, 100.0);
        let rb = random_baseline(&frames, &golds, 0.5, &mut Rng::new(1), 20).unwrap();
        assert_eq!((rb.mean, rb.std), (50.0, 0.0));
    }

    #[test]
    fn baseline_one_in_ten() {
        let g_box = b(0.0, 0.0, 10.0, 10.0);
        let mut boxes = vec![g_box];
        boxes.extend((1..10).map(|i| b(20.0 * i as f64, 0.0, 20.0 * i as f64 + 10.0, 10.0)));
        let frames: Vec<_> = (0..500).map(|i| frame(&format!("f{i}"), &boxes)).collect();
        let golds: Vec<_> = (0..500).map(|i| gold(&format!("f{i}"), &[g_box])).collect();
        let rb = random_baseline(&frames, &golds, 0.5, &mut Rng::new(2), 100).unwrap();
        // binomial: mean 10%, std of a trial sqrt(0.09/500) = 1.34 points
        let stderr = 100.0 * (0.09f64 / 500.0).sqrt() / 10.0;
        assert!((rb.mean - 10.0).abs() < 3.0 * stderr, "{rb:?}");
        let again = random_baseline(&frames, &golds, 0.5, &mut Rng::new(2), 100).unwrap();
        assert_eq!(rb, again);
    }

    #[test]
    fn missing_frame_errors() {
        let a = b(0.0, 0.0, 1.0, 1.0);
        assert!(matches!(
            upper_bound(&[], &[gold("x", &[a])], 0.5),
            Err(Error::MissingFrame(_))
        ));
        assert!(random_baseline(
            &[frame("x", &[a])],
            &[gold("x", &[a])],
            0.5,
            &mut Rng::new(0),
            0
        )
        .is_err());
    }
}
