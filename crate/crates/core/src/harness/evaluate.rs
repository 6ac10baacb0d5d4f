use super::checkpoint::Checkpoint;
use super::corpus::{pad_or_trim, Utterance};
use super::features::FeatureExtractor;
use crate::error::{Error, Result};
use crate::eval::{Trial, TrialScores};
use crate::tensor::Tensor;
use crate::SsdModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    /// Pad or trim every trial to the training length.
    Fixed,
    /// Feed every trial at its own length.
    Variable,
}

impl EvalMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fix" => Ok(EvalMode::Fixed),
            "var" => Ok(EvalMode::Variable),
            _ => Err(Error::Input(format!("unknown mode `{s}` (expected fix or var)"))),
        }
    }
}

/// Scores trials one at a time; with several members the detection scores
/// are averaged in member order.
pub fn score_trials(
    members: &[SsdModel],
    extractor: &FeatureExtractor,
    utts: &[Utterance],
    mode: EvalMode,
    target_samples: usize,
) -> Result<TrialScores> {
    if members.is_empty() {
        return Err(Error::Contract("no model to score with".into()));
    }
    let entries = utts
        .iter()
        .map(|u| {
            let wave = match mode {
                EvalMode::Fixed => pad_or_trim(&u.samples, target_samples)?,
                EvalMode::Variable => u.samples.clone(),
            };
            let f = extractor.extract(&wave)?;
            let (t, d) = (f.shape()[0], f.shape()[1]);
            let x = Tensor::new(vec![1, t, d], f.into_data())?;
            let mut score = 0.0;
            for m in members {
                score += m.scores(&x)?[0];
            }
            Ok(Trial {
                id: u.id.clone(),
                score: score / members.len() as f64,
                label: u.label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    TrialScores::new(entries)
}

/// Scores a split with a loaded checkpoint.
pub fn evaluate(ckpt: &Checkpoint, utts: &[Utterance], mode: EvalMode) -> Result<TrialScores> {
    let cfg = &ckpt.config;
    let extractor = FeatureExtractor::new(cfg.model.projector.input_dim, cfg.feature_seed)?;
    score_trials(&ckpt.models()?, &extractor, utts, mode, cfg.target_samples)
}
