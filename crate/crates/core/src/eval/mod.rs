//! Countermeasure metrics (equal error rate and minimum normalized tandem
//! detection cost) and score/label file I/O.
//!
//! Higher scores mean "more bona fide". Score files hold `trial_id score`
//! lines, label files `trial_id bonafide|spoof` lines; LF newlines, no
//! header.
//!
//! The default [`TdcfParams`] priors and costs are the ASVspoof challenge
//! protocol constants; the ASV operating point is an illustrative input, as
//! in the official t-DCF tooling.

mod io;
mod metrics;
mod trials;

pub use io::{
    format_labels, format_scores, join_scores, parse_labels, parse_scores, read_scores, write_labels, write_scores,
};
pub use metrics::{compute_eer, compute_min_tdcf, det_curve, OperatingPoint, TdcfParams};
pub use trials::{Label, Trial, TrialScores};
