use super::trials::TrialScores;
use crate::error::{Error, Result};
use crate::keyvalue::KeyValues;

/// One countermeasure operating point: a trial is accepted as bona fide iff
/// `score >= threshold`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    /// Spoof trials accepted / spoof trials.
    pub false_alarm: f64,
    /// Bona fide trials rejected / bona fide trials.
    pub miss: f64,
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a / 2.0 + b / 2.0;
    // adjacent floats: the midpoint rounds onto `a`, which would accept it
    if m <= a {
        b
    } else {
        m
    }
}

/// All distinct operating points in increasing threshold order: `−∞`, the
/// midpoints between adjacent distinct scores, and `+∞`.
pub fn det_curve(scores: &TrialScores) -> Result<Vec<OperatingPoint>> {
    let (bona, spoof) = scores.metric_split()?;
    let (nb, ns) = (bona.len() as f64, spoof.len() as f64);
    let mut all: Vec<(f64, bool)> = bona
        .iter()
        .map(|&s| (s, true))
        .chain(spoof.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut points = Vec::with_capacity(all.len() + 1);
    let (mut rejected_bona, mut rejected_spoof) = (0usize, 0usize);
    points.push(OperatingPoint {
        threshold: f64::NEG_INFINITY,
        false_alarm: 1.0,
        miss: 0.0,
    });
    let mut i = 0;
    while i < all.len() {
        let value = all[i].0;
        while i < all.len() && all[i].0 == value {
            if all[i].1 {
                rejected_bona += 1;
            } else {
                rejected_spoof += 1;
            }
            i += 1;
        }
        let threshold = if i < all.len() {
            midpoint(value, all[i].0)
        } else {
            f64::INFINITY
        };
        points.push(OperatingPoint {
            threshold,
            false_alarm: (spoof.len() - rejected_spoof) as f64 / ns,
            miss: rejected_bona as f64 / nb,
        });
    }
    Ok(points)
}

/// Equal error rate and the threshold where it occurs.
///
/// Takes the first operating point whose miss rate reaches the false-alarm
/// rate; an exact tie is returned as is, otherwise the crossing is linearly
/// interpolated from the previous point.
pub fn compute_eer(scores: &TrialScores) -> Result<(f64, f64)> {
    let det = det_curve(scores)?;
    let (bona, spoof) = scores.metric_split()?;
    let all = || bona.iter().chain(&spoof).copied();
    let (smin, smax) = (
        all().fold(f64::INFINITY, f64::min),
        all().fold(f64::NEG_INFINITY, f64::max),
    );
    // sentinel thresholds are reported as the extreme scores
    let finite = |t: f64| t.clamp(smin, smax);

    let i = det
        .iter()
        .position(|p| p.miss >= p.false_alarm)
        .expect("the +inf point has miss 1 and false alarm 0");
    let b = det[i];
    if b.miss == b.false_alarm {
        return Ok((b.miss, finite(b.threshold)));
    }
    let a = det[i - 1];
    let den = (b.miss - a.miss) + (a.false_alarm - b.false_alarm);
    let eer = (a.false_alarm * b.miss - a.miss * b.false_alarm) / den;
    let s = (a.false_alarm - a.miss) / den;
    let (ta, tb) = (finite(a.threshold), finite(b.threshold));
    Ok((eer, ta + s * (tb - ta)))
}

/// Tandem cost parameters: priors, costs and the fixed ASV operating point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TdcfParams {
    pub p_target: f64,
    pub p_nontarget: f64,
    pub p_spoof: f64,
    pub c_miss: f64,
    pub c_false_alarm: f64,
    pub asv_miss: f64,
    pub asv_false_alarm: f64,
    /// Fraction of spoofed trials the ASV system accepts.
    pub asv_spoof_false_alarm: f64,
}

impl Default for TdcfParams {
    /// Challenge-protocol priors and costs with an illustrative ASV point.
    fn default() -> Self {
        TdcfParams {
            p_target: 0.9405,
            p_nontarget: 0.0095,
            p_spoof: 0.05,
            c_miss: 1.0,
            c_false_alarm: 10.0,
            asv_miss: 0.02,
            asv_false_alarm: 0.02,
            asv_spoof_false_alarm: 0.40,
        }
    }
}

impl TdcfParams {
    pub fn validate(&self) -> Result<()> {
        let priors = [self.p_target, self.p_nontarget, self.p_spoof];
        if priors.iter().any(|p| !(*p > 0.0)) || (priors.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "priors must be positive and sum to 1, got {priors:?}"
            )));
        }
        if !(self.c_miss > 0.0 && self.c_false_alarm > 0.0) {
            return Err(Error::Validation("costs must be positive".into()));
        }
        for (name, r) in [
            ("asv_miss", self.asv_miss),
            ("asv_false_alarm", self.asv_false_alarm),
            ("asv_spoof_false_alarm", self.asv_spoof_false_alarm),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Validation(format!("{name} must be in [0, 1], got {r}")));
            }
        }
        let (c1, c2) = self.weights();
        if !(c1 > 0.0 && c2 > 0.0) {
            return Err(Error::Validation(format!(
                "degenerate ASV operating point: miss weight {c1}, false-alarm weight {c2}"
            )));
        }
        Ok(())
    }

    /// Weights of the CM miss and CM false-alarm rates in the tandem cost.
    pub fn weights(&self) -> (f64, f64) {
        let c1 = self.p_target * self.c_miss * (1.0 - self.asv_miss)
            - self.p_nontarget * self.c_false_alarm * self.asv_false_alarm;
        let c2 = self.c_false_alarm * self.p_spoof * self.asv_spoof_false_alarm;
        (c1, c2)
    }

    /// Reads a `key = value` file; missing keys keep their defaults.
    pub fn from_config_text(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let d = TdcfParams::default();
        let p = TdcfParams {
            p_target: kv.take_or("p_target", d.p_target)?,
            p_nontarget: kv.take_or("p_nontarget", d.p_nontarget)?,
            p_spoof: kv.take_or("p_spoof", d.p_spoof)?,
            c_miss: kv.take_or("c_miss", d.c_miss)?,
            c_false_alarm: kv.take_or("c_false_alarm", d.c_false_alarm)?,
            asv_miss: kv.take_or("asv_miss", d.asv_miss)?,
            asv_false_alarm: kv.take_or("asv_false_alarm", d.asv_false_alarm)?,
            asv_spoof_false_alarm: kv.take_or("asv_spoof_false_alarm", d.asv_spoof_false_alarm)?,
        };
        kv.finish()?;
        p.validate()?;
        Ok(p)
    }
}

/// Minimum normalized tandem detection cost over all CM operating points.
/// The normalizer is the cost of the better trivial CM (accept all or
/// reject all), so the result lies in `[0, 1]`.
pub fn compute_min_tdcf(scores: &TrialScores, params: &TdcfParams) -> Result<f64> {
    params.validate()?;
    let (c1, c2) = params.weights();
    let norm = c1.min(c2);
    let det = det_curve(scores)?;
    Ok(det
        .iter()
        .map(|p| (c1 * p.miss + c2 * p.false_alarm) / norm)
        .fold(f64::INFINITY, f64::min))
}
