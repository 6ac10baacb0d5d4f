//! Deterministic stand-in for self-supervised speech features: a log mel
//! filterbank pushed through a fixed seeded random projection.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::corpus::SAMPLE_RATE;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 25 ms at 16 kHz.
pub const FRAME_LEN: usize = 400;
/// 10 ms at 16 kHz.
pub const HOP: usize = 160;
pub const FFT_LEN: usize = 512;
pub const MEL_BANDS: usize = 40;

// Fixed affine map that puts log band energies of the synthetic corpus
// roughly at zero mean, unit spread.
const LOG_SHIFT: f64 = -0.2;
const LOG_SCALE: f64 = 0.3;

/// Frames produced for `samples` samples, or `None` if shorter than one frame.
pub fn frame_count(samples: usize) -> Option<usize> {
    (samples >= FRAME_LEN).then(|| 1 + (samples - FRAME_LEN) / HOP)
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters on the mel scale, `[bands][FFT_LEN/2 + 1]`.
fn mel_filters(bands: usize) -> Vec<Vec<f64>> {
    let bins = FFT_LEN / 2 + 1;
    let top = hz_to_mel(SAMPLE_RATE / 2.0);
    let edges: Vec<f64> = (0..bands + 2)
        .map(|i| mel_to_hz(top * i as f64 / (bands + 1) as f64))
        .collect();
    (0..bands)
        .map(|b| {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * SAMPLE_RATE / FFT_LEN as f64;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

pub struct FeatureExtractor {
    dim: usize,
    seed: u64,
    window: Vec<f64>,
    filters: Vec<Vec<f64>>,
    /// `[MEL_BANDS × dim]`, row-major.
    projection: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl FeatureExtractor {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("feature width must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (MEL_BANDS as f64).sqrt();
        let projection = (0..MEL_BANDS * dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        let window = (0..FRAME_LEN)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / FRAME_LEN as f64).cos())
            .collect();
        Ok(FeatureExtractor {
            dim,
            seed,
            window,
            filters: mel_filters(MEL_BANDS),
            projection,
            fft: FftPlanner::new().plan_fft_forward(FFT_LEN),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Normalized log mel energies, `[T][MEL_BANDS]`.
    pub fn log_mel(&self, waveform: &[f32]) -> Result<Vec<[f64; MEL_BANDS]>> {
        let frames = frame_count(waveform.len()).ok_or_else(|| {
            Error::Input(format!(
                "waveform has {} samples, need at least {FRAME_LEN}",
                waveform.len()
            ))
        })?;
        let mut buf = vec![Complex::new(0.0, 0.0); FFT_LEN];
        let mut power = vec![0.0; FFT_LEN / 2 + 1];
        let mut out = Vec::with_capacity(frames);
        for f in 0..frames {
            let frame = &waveform[f * HOP..f * HOP + FRAME_LEN];
            for (i, c) in buf.iter_mut().enumerate() {
                *c = match frame.get(i) {
                    Some(&s) => Complex::new(s as f64 * self.window[i], 0.0),
                    None => Complex::new(0.0, 0.0),
                };
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            let mut row = [0.0; MEL_BANDS];
            for (r, filt) in row.iter_mut().zip(&self.filters) {
                let e: f64 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
                *r = ((e + 1e-10).ln() - LOG_SHIFT) * LOG_SCALE;
            }
            out.push(row);
        }
        Ok(out)
    }

    /// `[T × dim]` features for one waveform.
    pub fn extract(&self, waveform: &[f32]) -> Result<Tensor> {
        let mel = self.log_mel(waveform)?;
        let d = self.dim;
        let mut data = vec![0.0; mel.len() * d];
        for (row, m) in data.chunks_mut(d).zip(&mel) {
            for (b, &v) in m.iter().enumerate() {
                let p = &self.projection[b * d..(b + 1) * d];
                for (o, w) in row.iter_mut().zip(p) {
                    *o += v * w;
                }
            }
        }
        Tensor::new(vec![mel.len(), d], data)
    }
}
