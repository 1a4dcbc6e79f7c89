//! Brute-force reference implementations used to cross-check the library.
//! Nothing here calls into the library's metric code.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use groundkit::{BBox, GoldAnnotation, ProposalFrame};

/// IoU by explicit interval overlap on each axis.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
        let lo = if a0 > b0 { a0 } else { b0 };
        let hi = if a1 < b1 { a1 } else { b1 };
        if hi > lo {
            hi - lo
        } else {
            0.0
        }
    }
    let inter = overlap(a.x1, a.x2, b.x1, b.x2) * overlap(a.y1, a.y2, b.y1, b.y2);
    if inter == 0.0 {
        return 0.0;
    }
    let area = |r: &BBox| (r.x2 - r.x1) * (r.y2 - r.y1);
    inter / (area(a) + area(b) - inter)
}

fn positive(candidate: &BBox, gold: &[BBox], threshold: f64) -> bool {
    let mut hit = false;
    for g in gold {
        let v = iou(candidate, g);
        if v > 0.0 && v >= threshold {
            hit = true;
        }
    }
    hit
}

/// `(frame_id, entity, chosen box)` predictions against gold; empty-box gold is skipped.
pub fn grounding_accuracy(
    preds: &[(String, String, BBox)],
    gold: &[GoldAnnotation],
    threshold: f64,
) -> f64 {
    let mut n = 0;
    let mut pos = 0;
    for (fid, ent, bx) in preds {
        let g = gold
            .iter()
            .find(|g| &g.frame_id == fid && &g.entity == ent)
            .expect("gold for prediction");
        if g.boxes.is_empty() {
            continue;
        }
        n += 1;
        if positive(bx, &g.boxes, threshold) {
            pos += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        100.0 * pos as f64 / n as f64
    }
}

pub fn upper_bound(frames: &[ProposalFrame], gold: &[GoldAnnotation], threshold: f64) -> f64 {
    let mut n = 0;
    let mut pos = 0;
    for g in gold.iter().filter(|g| !g.boxes.is_empty()) {
        let f = frames
            .iter()
            .find(|f| f.frame_id == g.frame_id)
            .expect("frame for gold");
        n += 1;
        if f.proposals
            .iter()
            .any(|p| positive(&p.bbox, &g.boxes, threshold))
        {
            pos += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        100.0 * pos as f64 / n as f64
    }
}

/// AP@k from the definition: precision at every relevant rank within k,
/// normalised by min(|gold|, k).
pub fn average_precision(ranked: &[String], gold: &BTreeSet<String>, k: usize) -> Option<f64> {
    if gold.is_empty() {
        return None;
    }
    let cut = k.min(ranked.len());
    let mut total = 0.0;
    for r in 1..=cut {
        if gold.contains(&ranked[r - 1]) {
            let relevant_so_far = ranked[..r].iter().filter(|e| gold.contains(*e)).count();
            total += relevant_so_far as f64 / r as f64;
        }
    }
    Some(total / gold.len().min(k) as f64)
}

pub fn mean_ap(
    ranked: &[(String, Vec<String>)],
    gold: &HashMap<String, BTreeSet<String>>,
    k: usize,
) -> f64 {
    let vals: Vec<f64> = ranked
        .iter()
        .filter_map(|(id, r)| average_precision(r, &gold[id], k))
        .collect();
    if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}
