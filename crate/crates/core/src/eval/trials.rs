use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Bonafide,
    Spoof,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Bonafide => "bonafide",
            Label::Spoof => "spoof",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "bonafide" => Ok(Label::Bonafide),
            "spoof" => Ok(Label::Spoof),
            other => Err(format!("unknown label `{other}` (expected bonafide or spoof)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub id: String,
    pub score: f64,
    pub label: Label,
}

/// Scored trials with unique ids.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrialScores {
    entries: Vec<Trial>,
}

impl TrialScores {
    pub fn new(entries: Vec<Trial>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for t in &entries {
            if t.id.is_empty() || t.id.chars().any(char::is_whitespace) {
                return Err(Error::Input(format!("invalid trial id `{}`", t.id)));
            }
            if !seen.insert(t.id.as_str()) {
                return Err(Error::Input(format!("duplicate trial id `{}`", t.id)));
            }
        }
        Ok(TrialScores { entries })
    }

    /// Convenience constructor with generated ids `b0, b1, …` and `s0, s1, …`.
    pub fn from_scores(bonafide: &[f64], spoof: &[f64]) -> Self {
        let entries = bonafide
            .iter()
            .enumerate()
            .map(|(i, &score)| Trial {
                id: format!("b{i}"),
                score,
                label: Label::Bonafide,
            })
            .chain(spoof.iter().enumerate().map(|(i, &score)| Trial {
                id: format!("s{i}"),
                score,
                label: Label::Spoof,
            }))
            .collect();
        TrialScores { entries }
    }

    pub fn entries(&self) -> &[Trial] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scores_of(&self, label: Label) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|t| t.label == label)
            .map(|t| t.score)
            .collect()
    }

    /// Bona fide and spoof scores after checking the metric preconditions.
    pub(crate) fn metric_split(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        if let Some(t) = self.entries.iter().find(|t| !t.score.is_finite()) {
            return Err(Error::Metric(format!("trial {} has non-finite score", t.id)));
        }
        let bona = self.scores_of(Label::Bonafide);
        let spoof = self.scores_of(Label::Spoof);
        if bona.is_empty() || spoof.is_empty() {
            return Err(Error::Metric(format!(
                "need both classes, got {} bonafide and {} spoof trials",
                bona.len(),
                spoof.len()
            )));
        }
        Ok((bona, spoof))
    }
}
