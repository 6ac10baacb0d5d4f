use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::trials::{Label, Trial, TrialScores};
use crate::error::{Error, Result};

/// `trial_id score` lines; scores carry 17 significant digits so they
/// read back bit-exactly.
pub fn format_scores(scores: &TrialScores) -> String {
    let mut out = String::new();
    for t in scores.entries() {
        writeln!(out, "{} {:.16e}", t.id, t.score).unwrap();
    }
    out
}

pub fn format_labels(scores: &TrialScores) -> String {
    let mut out = String::new();
    for t in scores.entries() {
        writeln!(out, "{} {}", t.id, t.label).unwrap();
    }
    out
}

pub fn write_scores(path: &Path, scores: &TrialScores) -> Result<()> {
    Ok(fs::write(path, format_scores(scores))?)
}

pub fn write_labels(path: &Path, scores: &TrialScores) -> Result<()> {
    Ok(fs::write(path, format_labels(scores))?)
}

fn two_fields(line: &str, n: usize) -> Result<(&str, &str)> {
    let mut parts = line.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some(a), Some(b), None) => Ok((a, b)),
        _ => Err(Error::parse(n, format!("expected two fields, got `{line}`"))),
    }
}

pub fn parse_scores(text: &str) -> Result<Vec<(String, f64)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let (id, s) = two_fields(line, i + 1)?;
            let score: f64 = s
                .parse()
                .map_err(|_| Error::parse(i + 1, format!("invalid score `{s}`")))?;
            if !score.is_finite() {
                return Err(Error::parse(i + 1, format!("non-finite score `{s}`")));
            }
            Ok((id.to_string(), score))
        })
        .collect()
}

pub fn parse_labels(text: &str) -> Result<Vec<(String, Label)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let (id, l) = two_fields(line, i + 1)?;
            let label = l.parse::<Label>().map_err(|m| Error::parse(i + 1, m))?;
            Ok((id.to_string(), label))
        })
        .collect()
}

/// Joins a score file with its label file by trial id, in score-file order.
pub fn join_scores(scores: Vec<(String, f64)>, labels: Vec<(String, Label)>) -> Result<TrialScores> {
    let mut by_id: HashMap<String, Label> = HashMap::with_capacity(labels.len());
    for (id, label) in labels {
        if by_id.insert(id.clone(), label).is_some() {
            return Err(Error::Input(format!("duplicate trial id `{id}` in labels")));
        }
    }
    if by_id.len() != scores.len() {
        return Err(Error::Input(format!(
            "{} scores but {} labels",
            scores.len(),
            by_id.len()
        )));
    }
    let entries = scores
        .into_iter()
        .map(|(id, score)| {
            let label = *by_id
                .get(&id)
                .ok_or_else(|| Error::Input(format!("no label for trial `{id}`")))?;
            Ok(Trial { id, score, label })
        })
        .collect::<Result<Vec<_>>>()?;
    TrialScores::new(entries)
}

pub fn read_scores(scores_path: &Path, labels_path: &Path) -> Result<TrialScores> {
    let scores = parse_scores(&fs::read_to_string(scores_path)?)?;
    let labels = parse_labels(&fs::read_to_string(labels_path)?)?;
    join_scores(scores, labels)
}
