//! Finite-difference gradient checks over randomly initialised models.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grounding::{
    mil_loss_with_plan, plan_mil_batch, recon_loss, GroundingConfig, MilItem, MilModel, ReconModel,
};
use crate::ingest::{BBox, Proposal, ProposalFrame};
use crate::recognition::{ClassifierModel, Mode, RecognitionConfig, Target};
use crate::tensorcore::{
    dropout_mask, finite_diff_check, mse, GradCheckReport, LinearLayer, Parameterized, Rng,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradTask {
    /// Single linear layer under squared error.
    Linear,
    ClsSingle,
    ClsMulti,
    Mil,
    Recon,
}

impl GradTask {
    pub const ALL: [GradTask; 5] = [
        GradTask::Linear,
        GradTask::ClsSingle,
        GradTask::ClsMulti,
        GradTask::Mil,
        GradTask::Recon,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            GradTask::Linear => "linear",
            GradTask::ClsSingle => "cls-single",
            GradTask::ClsMulti => "cls-multi",
            GradTask::Mil => "mil",
            GradTask::Recon => "recon",
        }
    }

    /// 1e-6 for the purely linear path, 1e-4 elsewhere.
    pub fn default_tolerance(&self) -> f64 {
        match self {
            GradTask::Linear => 1e-6,
            _ => 1e-4,
        }
    }
}

impl fmt::Display for GradTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GradTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GradTask::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown gradient-check task {s:?}")))
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckSummary {
    pub task: GradTask,
    pub trials: usize,
    pub failed: usize,
    /// The trial with the largest relative error.
    pub worst: GradCheckReport,
}

impl GradCheckSummary {
    pub fn passed(&self) -> bool {
        self.failed == 0
    }
}

fn check<P, F>(model: &P, mut loss: F, tolerance: f64) -> Result<GradCheckReport>
where
    P: Parameterized + Clone,
    F: FnMut(&P) -> Result<(f64, P)>,
{
    finite_diff_check(
        |p| {
            let mut probe = model.clone();
            probe.load_flat(p);
            let (l, g) = loss(&probe)?;
            Ok((l, g.flat_params()))
        },
        &model.flat_params(),
        tolerance,
    )
}

fn gaussian(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.normal())
}

fn frame(feats: &Array2<f64>) -> ProposalFrame {
    ProposalFrame {
        frame_id: "probe".into(),
        video_id: "probe".into(),
        entity: None,
        proposals: feats
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, r)| Proposal {
                bbox: BBox::new(i as f64, 0.0, i as f64 + 1.0, 1.0).expect("valid box"),
                feature: r.to_vec(),
            })
            .collect(),
    }
}

fn one_trial(task: GradTask, tolerance: f64, rng: &mut Rng) -> Result<GradCheckReport> {
    match task {
        GradTask::Linear => {
            let layer = LinearLayer::new(5, 3, rng);
            let x: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
            let y: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            check(
                &layer,
                |l| {
                    let out = l.forward(&x)?;
                    let (loss, g) = mse(&out, &y)?;
                    Ok((loss, l.backward(&x, &g)?.0))
                },
                tolerance,
            )
        }
        GradTask::ClsSingle | GradTask::ClsMulti => {
            let mode = if task == GradTask::ClsSingle {
                Mode::Single
            } else {
                Mode::Multi
            };
            let cfg = RecognitionConfig {
                hidden_dim: 6,
                ..RecognitionConfig::default()
            };
            let classes: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
            let model = ClassifierModel::new(5, classes, mode, &cfg, rng);
            let x = gaussian(3, 5, rng);
            let targets: Vec<Target> = (0..3)
                .map(|_| match mode {
                    Mode::Single => Target::Class(rng.below(4)),
                    Mode::Multi => Target::MultiHot((0..4).map(|_| rng.below(2) as f64).collect()),
                })
                .collect();
            let refs: Vec<&Target> = targets.iter().collect();
            let mask = Array2::from_shape_vec((3, 6), dropout_mask(18, cfg.dropout, rng)?)
                .expect("mask shape");
            check(
                &model,
                |m| m.loss_and_grads(&x.view(), &refs, Some(&mask)),
                tolerance,
            )
        }
        GradTask::Mil => {
            let cfg = GroundingConfig {
                embed_dim: 4,
                hidden_dim: 6,
                ..GroundingConfig::mil()
            };
            let model = MilModel::new(5, 3, &cfg, rng);
            let feats: Vec<Array2<f64>> = (0..4).map(|_| gaussian(3, 5, rng)).collect();
            let vecs: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..3).map(|_| rng.normal()).collect())
                .collect();
            let names = ["a", "b", "c", "a"];
            let items: Vec<MilItem> = (0..4)
                .map(|i| MilItem {
                    features: feats[i].view(),
                    entity: names[i],
                    entity_vec: &vecs[i],
                })
                .collect();
            let plan = plan_mil_batch(&model, &items, rng, true)?;
            // A wide margin keeps every hinge active, so the loss is smooth
            // around the probe points; the max and relu stay piecewise linear.
            check(
                &model,
                |m| mil_loss_with_plan(m, &items, &plan, 100.0),
                tolerance,
            )
        }
        GradTask::Recon => {
            let cfg = GroundingConfig {
                embed_dim: 4,
                ..GroundingConfig::recon()
            };
            let model = ReconModel::new(5, 3, &cfg, rng);
            let f = frame(&gaussian(4, 5, rng));
            let e: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            check(&model, |m| recon_loss(m, &f, &e), tolerance)
        }
    }
}

/// Run `trials` independent checks of `task`, each on a fresh random model
/// and input.
pub fn gradcheck_task(
    task: GradTask,
    trials: usize,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckSummary> {
    if trials == 0 {
        return Err(Error::invalid("trials must be positive"));
    }
    let mut rng = Rng::new(seed);
    let mut failed = 0;
    let mut worst: Option<GradCheckReport> = None;
    for _ in 0..trials {
        let report = one_trial(task, tolerance, &mut rng)?;
        if !report.passed() {
            failed += 1;
        }
        if worst
            .as_ref()
            .is_none_or(|w| report.max_rel_error > w.max_rel_error)
        {
            worst = Some(report);
        }
    }
    Ok(GradCheckSummary {
        task,
        trials,
        failed,
        worst: worst.expect("at least one trial"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_task_passes_a_few_trials() {
        for task in GradTask::ALL {
            let s = gradcheck_task(task, 5, task.default_tolerance(), 1).unwrap();
            assert!(s.passed(), "{task}: {:?}", s.worst);
        }
    }

    #[test]
    fn zero_tolerance_fails() {
        assert!(!gradcheck_task(GradTask::Recon, 2, 0.0, 1).unwrap().passed());
    }

    #[test]
    fn parse_names() {
        assert_eq!("cls-multi".parse::<GradTask>().unwrap(), GradTask::ClsMulti);
        assert!("cls".parse::<GradTask>().is_err());
    }
}
