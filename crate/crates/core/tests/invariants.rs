use std::collections::BTreeSet;

use groundkit::grounding::{grounding_accuracy, iou, upper_bound, GroundingPrediction};
use groundkit::recognition::{average_precision_at_k, map_at_k};
use groundkit::synth::{gen_grounding_corpus, SynthSpec};
use groundkit::tensorcore::{sigmoid, softmax};
use groundkit::{BBox, GoldAnnotation, Proposal, ProposalFrame};
use proptest::prelude::*;

fn bbox() -> impl Strategy<Value = BBox> {
    (0.0..100.0f64, 0.0..100.0f64, 0.5..60.0f64, 0.5..60.0f64)
        .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
}

/// Frames with proposals, matching gold and a chosen index per frame.
fn scene() -> impl Strategy<Value = (Vec<ProposalFrame>, Vec<GoldAnnotation>, Vec<usize>)> {
    prop::collection::vec(
        (
            prop::collection::vec(bbox(), 1..6),
            prop::collection::vec(bbox(), 0..3),
            any::<prop::sample::Index>(),
        ),
        1..12,
    )
    .prop_map(|rows| {
        let mut frames = vec![];
        let mut gold = vec![];
        let mut chosen = vec![];
        for (i, (props, gboxes, pick)) in rows.into_iter().enumerate() {
            let id = format!("v_{i}");
            chosen.push(pick.index(props.len()));
            frames.push(ProposalFrame {
                frame_id: id.clone(),
                video_id: "v".into(),
                entity: None,
                proposals: props
                    .into_iter()
                    .map(|b| Proposal {
                        bbox: b,
                        feature: vec![0.0],
                    })
                    .collect(),
            });
            gold.push(GoldAnnotation {
                frame_id: id,
                entity: "e".into(),
                boxes: gboxes,
            });
        }
        (frames, gold, chosen)
    })
}

fn predictions(frames: &[ProposalFrame], chosen: &[usize]) -> Vec<GroundingPrediction> {
    frames
        .iter()
        .zip(chosen)
        .map(|(f, &k)| GroundingPrediction {
            frame_id: f.frame_id.clone(),
            entity: "e".into(),
            chosen_index: k,
            chosen_box: f.proposals[k].bbox,
            score: 0.0,
        })
        .collect()
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let v = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!((v - iou(&b, &a)).abs() < 1e-12);
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn accuracy_is_bounded_by_upper_bound((frames, gold, chosen) in scene(), t in 0.0..1.0f64) {
        if gold.iter().all(|g| g.boxes.is_empty()) {
            return Ok(());
        }
        let preds = predictions(&frames, &chosen);
        let acc = grounding_accuracy(&preds, &gold, t).unwrap();
        let ub = upper_bound(&frames, &gold, t).unwrap();
        prop_assert!(acc.accuracy <= ub.accuracy + 1e-9);
        prop_assert_eq!(acc.n_evaluated + acc.n_excluded, gold.len());
    }

    #[test]
    fn accuracy_never_drops_as_threshold_loosens((frames, gold, chosen) in scene(), a in 0.0..1.0f64, b in 0.0..1.0f64) {
        if gold.iter().all(|g| g.boxes.is_empty()) {
            return Ok(());
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let preds = predictions(&frames, &chosen);
        prop_assert!(grounding_accuracy(&preds, &gold, lo).unwrap().accuracy >= grounding_accuracy(&preds, &gold, hi).unwrap().accuracy);
        prop_assert!(upper_bound(&frames, &gold, lo).unwrap().accuracy >= upper_bound(&frames, &gold, hi).unwrap().accuracy);
    }

    #[test]
    fn average_precision_in_unit_interval(perm in Just((0..8).collect::<Vec<usize>>()).prop_shuffle(), mask in prop::collection::vec(any::<bool>(), 8), k in 1usize..10) {
        let ranked: Vec<String> = perm.iter().map(|i| format!("c{i}")).collect();
        let gold: BTreeSet<String> = (0..8).filter(|&i| mask[i]).map(|i| format!("c{i}")).collect();
        let ap = average_precision_at_k(&ranked, &gold, k);
        prop_assert_eq!(ap.is_none(), gold.is_empty());
        if let Some(v) = ap {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            // Putting every gold class first is a perfect ranking.
            let mut ideal: Vec<String> = gold.iter().cloned().collect();
            ideal.extend(ranked.iter().filter(|c| !gold.contains(*c)).cloned());
            prop_assert!((average_precision_at_k(&ideal, &gold, k).unwrap() - 1.0).abs() < 1e-12);
        }
        let m = map_at_k(&[ap, None]);
        prop_assert_eq!(m.n_excluded, 1 + usize::from(ap.is_none()));
    }

    #[test]
    fn softmax_is_a_distribution(x in prop::collection::vec(-50.0..50.0f64, 1..12)) {
        let p = softmax(&x);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let s = sigmoid(&x);
        prop_assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn planted_corpus_always_reachable(c in 2usize..6, k in 1usize..8, seed in any::<u64>()) {
        let spec = SynthSpec {
            n_entities: c,
            proposals_per_frame: k,
            frames_per_entity: 3,
            visual_dim: 16,
            embed_dim: 6,
            seed,
            ..SynthSpec::default()
        };
        let corpus = gen_grounding_corpus(&spec).unwrap();
        prop_assert_eq!(corpus.gold.len(), c * 3);
        prop_assert_eq!(upper_bound(&corpus.frames, &corpus.gold, 0.5).unwrap().accuracy, 100.0);
        prop_assert!(corpus.frames.iter().all(|f| f.proposals.len() == k));
    }
}
