use std::f64::consts::PI;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::eval::Label;
use crate::keyvalue::KeyValues;

pub const SAMPLE_RATE: f64 = 16_000.0;

/// Sizes and utterance lengths of a synthetic corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub n_train: usize,
    pub n_dev: usize,
    pub n_eval: usize,
    /// Training length; a quarter of the trials have exactly this length.
    pub nominal_samples: usize,
    pub min_samples: usize,
    pub max_samples: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            n_train: 600,
            n_dev: 200,
            n_eval: 200,
            nominal_samples: 8000,
            min_samples: 4000,
            max_samples: 12000,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_dev == 0 || self.n_eval == 0 {
            return Err(Error::Config("every split needs at least one trial".into()));
        }
        if !(self.min_samples <= self.nominal_samples && self.nominal_samples <= self.max_samples) {
            return Err(Error::Config(format!(
                "need min_samples <= nominal_samples <= max_samples, got {} / {} / {}",
                self.min_samples, self.nominal_samples, self.max_samples
            )));
        }
        if self.min_samples < 400 {
            return Err(Error::Config(
                "utterances must hold at least one 400-sample frame".into(),
            ));
        }
        Ok(())
    }

    /// Reads `key = value` text; missing keys keep the defaults.
    pub fn from_config_text(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let d = CorpusSpec::default();
        let spec = CorpusSpec {
            n_train: kv.take_or("n_train", d.n_train)?,
            n_dev: kv.take_or("n_dev", d.n_dev)?,
            n_eval: kv.take_or("n_eval", d.n_eval)?,
            nominal_samples: kv.take_or("nominal_samples", d.nominal_samples)?,
            min_samples: kv.take_or("min_samples", d.min_samples)?,
            max_samples: kv.take_or("max_samples", d.max_samples)?,
        };
        kv.finish()?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Eval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Eval => "eval",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown split `{s}` (expected train, dev or eval)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub label: Label,
    /// Samples in `[-1, 1]` at 16 kHz.
    pub samples: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub seed: u64,
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub eval: Vec<Utterance>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[Utterance] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Eval => &self.eval,
        }
    }
}

/// Spoofing artifact injected into a synthetic utterance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Artifact {
    /// Band-stop notch removed in the frequency domain.
    Notch,
    /// Amplitude quantized to 4 bits.
    Quantization,
    /// Harmonic phases jump at a fixed period.
    PhaseJumps,
}

struct Voice {
    f0: f64,
    vibrato_rate: f64,
    vibrato_depth: f64,
    vibrato_phase: f64,
    amplitudes: Vec<f64>,
    phases: Vec<f64>,
    envelope: [(f64, f64, f64); 3],
    noise_std: f64,
    peak: f64,
}

impl Voice {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let harmonics = rng.gen_range(3..=8);
        Voice {
            f0: rng.gen_range(90.0..300.0),
            vibrato_rate: rng.gen_range(2.0..6.0),
            vibrato_depth: rng.gen_range(0.0..0.03),
            vibrato_phase: rng.gen_range(0.0..2.0 * PI),
            amplitudes: (1..=harmonics).map(|h| rng.gen_range(0.3..1.0) / h as f64).collect(),
            phases: (0..harmonics).map(|_| rng.gen_range(0.0..2.0 * PI)).collect(),
            envelope: [(); 3].map(|_| {
                (
                    rng.gen_range(0.5..4.0),
                    rng.gen_range(0.0..2.0 * PI),
                    rng.gen_range(0.0..1.0),
                )
            }),
            noise_std: rng.gen_range(0.003..0.02),
            peak: rng.gen_range(0.3..0.8),
        }
    }

    /// Harmonic signal; `jump` returns the phase offset at sample `n`.
    fn render(&self, len: usize, rng: &mut ChaCha8Rng, jump: impl Fn(usize) -> f64) -> Vec<f64> {
        let mut phase = 0.0;
        let dt = 1.0 / SAMPLE_RATE;
        let weight: f64 = self.envelope.iter().map(|e| e.2).sum::<f64>().max(1e-9);
        let mut out: Vec<f64> = (0..len)
            .map(|n| {
                let t = n as f64 * dt;
                let f = self.f0
                    * (1.0 + self.vibrato_depth * (2.0 * PI * self.vibrato_rate * t + self.vibrato_phase).sin());
                phase += 2.0 * PI * f * dt;
                let env = 0.6
                    + 0.4
                        * self
                            .envelope
                            .iter()
                            .map(|(r, p, w)| w * (2.0 * PI * r * t + p).sin())
                            .sum::<f64>()
                        / weight;
                let offset = jump(n);
                env * self
                    .amplitudes
                    .iter()
                    .zip(&self.phases)
                    .enumerate()
                    .map(|(h, (a, p))| a * ((h + 1) as f64 * phase + p + offset).sin())
                    .sum::<f64>()
            })
            .collect();
        let max = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
        let noise = Normal::new(0.0, self.noise_std).unwrap();
        for v in &mut out {
            *v = *v / max * self.peak + noise.sample(rng);
        }
        out
    }
}

fn band_stop(signal: &mut [f64], low_hz: f64, high_hz: f64) {
    let n = signal.len();
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k) as f64 * SAMPLE_RATE / n as f64;
        if (low_hz..=high_hz).contains(&bin) {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    for (v, c) in signal.iter_mut().zip(&buf) {
        *v = c.re / n as f64;
    }
}

/// One synthetic utterance; spoofed trials carry `artifact`.
pub fn synthesize(len: usize, artifact: Option<Artifact>, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let voice = Voice::random(rng);
    let signal = match artifact {
        None => voice.render(len, rng, |_| 0.0),
        Some(Artifact::PhaseJumps) => {
            let period = rng.gen_range(400..1200);
            let step = PI * rng.gen_range(0.5..1.0);
            voice.render(len, rng, move |n| (n / period) as f64 * step)
        }
        Some(Artifact::Notch) => {
            let centre = rng.gen_range(500.0..4000.0);
            let width = rng.gen_range(600.0..1500.0);
            let mut s = voice.render(len, rng, |_| 0.0);
            band_stop(&mut s, centre - width / 2.0, centre + width / 2.0);
            s
        }
        Some(Artifact::Quantization) => voice
            .render(len, rng, |_| 0.0)
            .into_iter()
            .map(|v| ((v * 8.0).round() / 8.0).clamp(-1.0, 7.0 / 8.0))
            .collect(),
    };
    signal.into_iter().map(|v| v.clamp(-1.0, 1.0) as f32).collect()
}

fn generate_split(split: Split, count: usize, spec: &CorpusSpec, rng: &mut ChaCha8Rng) -> Vec<Utterance> {
    (0..count)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Bonafide } else { Label::Spoof };
            let len = if rng.gen_bool(0.25) {
                spec.nominal_samples
            } else {
                rng.gen_range(spec.min_samples..=spec.max_samples)
            };
            let artifact = match label {
                Label::Bonafide => None,
                Label::Spoof => Some(match rng.gen_range(0..3) {
                    0 => Artifact::Notch,
                    1 => Artifact::Quantization,
                    _ => Artifact::PhaseJumps,
                }),
            };
            Utterance {
                id: format!("{}_{i:05}", split.name()),
                label,
                samples: synthesize(len, artifact, rng),
            }
        })
        .collect()
}

/// Deterministic synthetic corpus with alternating bona fide/spoof labels.
pub fn generate_corpus(spec: &CorpusSpec, seed: u64) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Corpus {
        seed,
        train: generate_split(Split::Train, spec.n_train, spec, &mut rng),
        dev: generate_split(Split::Dev, spec.n_dev, spec, &mut rng),
        eval: generate_split(Split::Eval, spec.n_eval, spec, &mut rng),
    })
}

/// Repeats a short waveform end to end, then cuts it to `target` samples.
pub fn pad_or_trim(waveform: &[f32], target: usize) -> Result<Vec<f32>> {
    if waveform.is_empty() {
        return Err(Error::Input("cannot pad an empty waveform".into()));
    }
    Ok(waveform.iter().copied().cycle().take(target).collect())
}

const WAVE_MAGIC: &[u8; 4] = b"SSDW";
const WAVE_VERSION: u32 = 1;

fn write_split(path: &Path, utts: &[Utterance]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(WAVE_MAGIC);
    buf.extend_from_slice(&WAVE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(utts.len() as u32).to_le_bytes());
    for u in utts {
        buf.extend_from_slice(&(u.id.len() as u32).to_le_bytes());
        buf.extend_from_slice(u.id.as_bytes());
        buf.push(match u.label {
            Label::Bonafide => 0,
            Label::Spoof => 1,
        });
        buf.extend_from_slice(&(u.samples.len() as u32).to_le_bytes());
        for s in &u.samples {
            buf.extend_from_slice(&s.to_le_bytes());
        }
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Input("waveform file is truncated".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }
}

fn read_split(path: &Path) -> Result<Vec<Utterance>> {
    let mut data = Vec::new();
    fs::File::open(path)?.read_to_end(&mut data)?;
    let mut r = Reader { data: &data, pos: 0 };
    if r.bytes(4)? != WAVE_MAGIC || r.u32()? != WAVE_VERSION {
        return Err(Error::Input(format!("{} is not a waveform file", path.display())));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u32()? as usize;
        let id = String::from_utf8(r.bytes(n)?.to_vec()).map_err(|_| Error::Input("trial id is not UTF-8".into()))?;
        let label = match r.bytes(1)?[0] {
            0 => Label::Bonafide,
            1 => Label::Spoof,
            other => return Err(Error::Input(format!("bad label byte {other}"))),
        };
        let len = r.u32()? as usize;
        let samples = r
            .bytes(len * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(Utterance { id, label, samples });
    }
    if r.pos != data.len() {
        return Err(Error::Input(format!("trailing bytes in {}", path.display())));
    }
    Ok(out)
}

/// Writes `<split>.wav.bin` and `<split>.labels` for every split.
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for split in Split::ALL {
        let utts = corpus.split(split);
        write_split(&dir.join(format!("{}.wav.bin", split.name())), utts)?;
        let labels: String = utts.iter().map(|u| format!("{} {}\n", u.id, u.label)).collect();
        fs::write(dir.join(format!("{}.labels", split.name())), labels)?;
    }
    fs::write(dir.join("corpus.seed"), format!("{}\n", corpus.seed))?;
    Ok(())
}

pub fn load_split(dir: &Path, split: Split) -> Result<Vec<Utterance>> {
    read_split(&dir.join(format!("{}.wav.bin", split.name())))
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let seed = fs::read_to_string(dir.join("corpus.seed"))?
        .trim()
        .parse()
        .map_err(|_| Error::Input("corpus.seed is not an integer".into()))?;
    Ok(Corpus {
        seed,
        train: load_split(dir, Split::Train)?,
        dev: load_split(dir, Split::Dev)?,
        eval: load_split(dir, Split::Eval)?,
    })
}
