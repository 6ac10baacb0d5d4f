use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::{Averaging, TrainConfig};
use super::corpus::{pad_or_trim, Utterance};
use super::features::FeatureExtractor;
use super::optim::Adam;
use crate::error::{Error, Result};
use crate::eval::Label;
use crate::model::{ForwardCtx, BONAFIDE, SPOOF};
use crate::tensor::{Tape, Tensor};
use crate::SsdModel;

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

/// Stops once the monitored loss has gone `patience` epochs without a
/// strict improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Records one epoch; returns `true` when training should stop.
    pub fn update(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub epoch: usize,
    pub dev_loss: f64,
    pub params: Vec<(String, Tensor)>,
}

/// The `n` lowest dev-loss snapshots; ties keep the earlier epoch.
#[derive(Clone, Debug)]
pub struct TopN {
    n: usize,
    kept: Vec<Snapshot>,
}

impl TopN {
    pub fn new(n: usize) -> Self {
        TopN { n, kept: Vec::new() }
    }

    pub fn offer(&mut self, snap: Snapshot) {
        let pos = self.kept.partition_point(|s| s.dev_loss <= snap.dev_loss);
        if pos < self.n {
            self.kept.insert(pos, snap);
            self.kept.truncate(self.n);
        }
    }

    /// Best first.
    pub fn snapshots(&self) -> &[Snapshot] {
        &self.kept
    }
}

/// Elementwise mean of same-named, same-shaped parameter sets.
pub fn average_params(sets: &[Vec<(String, Tensor)>]) -> Result<Vec<(String, Tensor)>> {
    let first = sets
        .first()
        .ok_or_else(|| Error::Contract("cannot average zero parameter sets".into()))?;
    let k = sets.len() as f64;
    first
        .iter()
        .enumerate()
        .map(|(i, (name, t0))| {
            let mut acc = vec![0.0; t0.numel()];
            for set in sets {
                let (n, t) = set
                    .get(i)
                    .ok_or_else(|| Error::Contract("parameter sets differ in length".into()))?;
                if n != name || t.shape() != t0.shape() {
                    return Err(Error::Contract(format!(
                        "parameter `{n}` does not line up with `{name}`"
                    )));
                }
                for (a, v) in acc.iter_mut().zip(t.data()) {
                    *a += v;
                }
            }
            Ok((
                name.clone(),
                Tensor::new(t0.shape().to_vec(), acc.into_iter().map(|a| a / k).collect())?,
            ))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingLog {
    /// Dev loss of the freshly initialized model.
    pub initial_dev_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
    /// Epochs whose snapshots went into the final checkpoint, best first.
    pub kept_epochs: Vec<usize>,
}

impl TrainingLog {
    pub fn to_text(&self) -> String {
        let mut s = format!("epoch 0 dev_loss {:.6}\n", self.initial_dev_loss);
        for r in &self.epochs {
            s += &format!(
                "epoch {} train_loss {:.6} dev_loss {:.6}\n",
                r.epoch, r.train_loss, r.dev_loss
            );
        }
        s += &format!("stopped_early {}\n", self.stopped_early);
        s += &format!(
            "kept_epochs {}\n",
            self.kept_epochs
                .iter()
                .map(|e| e.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        );
        s
    }
}

/// Fixed-length features and class targets for a set of trials.
pub struct FeatureSet {
    pub features: Vec<Tensor>,
    pub targets: Vec<usize>,
}

pub fn class_index(label: Label) -> usize {
    match label {
        Label::Bonafide => BONAFIDE,
        Label::Spoof => SPOOF,
    }
}

impl FeatureSet {
    pub fn fixed_length(utts: &[Utterance], extractor: &FeatureExtractor, target: usize) -> Result<Self> {
        let features = utts
            .iter()
            .map(|u| extractor.extract(&pad_or_trim(&u.samples, target)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureSet {
            features,
            targets: utts.iter().map(|u| class_index(u.label)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let shape = self.features[idx[0]].shape().to_vec();
        let mut data = Vec::with_capacity(idx.len() * self.features[idx[0]].numel());
        for &i in idx {
            data.extend_from_slice(self.features[i].data());
        }
        let x = Tensor::new(vec![idx.len(), shape[0], shape[1]], data)?;
        Ok((x, idx.iter().map(|&i| self.targets[i]).collect()))
    }
}

/// Mean cross-entropy in evaluation mode.
pub fn mean_loss(model: &SsdModel, set: &FeatureSet, batch_size: usize) -> Result<f64> {
    let order: Vec<usize> = (0..set.len()).collect();
    let mut total = 0.0;
    for chunk in order.chunks(batch_size) {
        let (x, targets) = set.batch(chunk)?;
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, false);
        let xv = tape.constant(x);
        let logits = model.forward(&mut tape, &vars, xv, &mut ForwardCtx::eval())?;
        let loss = tape.cross_entropy(logits, &targets)?;
        total += tape.scalar(loss) * chunk.len() as f64;
    }
    Ok(total / set.len() as f64)
}

fn snapshot(model: &SsdModel, epoch: usize, dev_loss: f64) -> Snapshot {
    Snapshot {
        epoch,
        dev_loss,
        params: model.params().into_iter().map(|(n, t)| (n, t.clone())).collect(),
    }
}

/// Trains on precomputed fixed-length features and returns the averaged
/// checkpoint together with the per-epoch log.
pub fn train_on_features(cfg: &TrainConfig, train: &FeatureSet, dev: &FeatureSet) -> Result<(Checkpoint, TrainingLog)> {
    cfg.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Input("training needs nonempty train and dev splits".into()));
    }
    let mut model = SsdModel::new(cfg.model.clone(), cfg.seed)?;
    let mut adam = Adam::new(
        cfg.adam,
        &model.params().iter().map(|(_, t)| t.numel()).collect::<Vec<_>>(),
    );
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(DROPOUT_STREAM);

    let initial_dev_loss = mean_loss(&model, dev, cfg.batch_size)?;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut top = TopN::new(cfg.top_n);
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, targets) = train.batch(chunk)?;
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, true);
            let xv = tape.constant(x);
            let logits = model.forward(&mut tape, &vars, xv, &mut ForwardCtx::train(&mut dropout_rng))?;
            let loss = tape.cross_entropy(logits, &targets)?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: format!("training loss became {value}"),
                });
            }
            total += value * chunk.len() as f64;
            tape.backward(loss)?;
            let grads: Vec<Tensor> = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();
            adam.step(model.params_mut(), &grads)?;
        }
        let dev_loss = mean_loss(&model, dev, cfg.batch_size)?;
        if !dev_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                message: format!("dev loss became {dev_loss}"),
            });
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            dev_loss,
        });
        top.offer(snapshot(&model, epoch, dev_loss));
        if stopper.update(dev_loss) {
            stopped_early = true;
            break;
        }
    }

    let kept = top.snapshots();
    let best = &kept[0];
    let members = match cfg.averaging {
        Averaging::Params => vec![average_params(
            &kept.iter().map(|s| s.params.clone()).collect::<Vec<_>>(),
        )?],
        Averaging::Scores => kept.iter().map(|s| s.params.clone()).collect(),
    };
    let log = TrainingLog {
        initial_dev_loss,
        epochs,
        stopped_early,
        kept_epochs: kept.iter().map(|s| s.epoch).collect(),
    };
    let ckpt = Checkpoint {
        config: cfg.clone(),
        epoch: best.epoch as u32,
        dev_loss: best.dev_loss,
        members,
    };
    Ok((ckpt, log))
}

/// Extracts features for the train and dev splits, then trains.
pub fn train(cfg: &TrainConfig, train: &[Utterance], dev: &[Utterance]) -> Result<(Checkpoint, TrainingLog)> {
    let extractor = FeatureExtractor::new(cfg.model.projector.input_dim, cfg.feature_seed)?;
    let train = FeatureSet::fixed_length(train, &extractor, cfg.target_samples)?;
    let dev = FeatureSet::fixed_length(dev, &extractor, cfg.target_samples)?;
    train_on_features(cfg, &train, &dev)
}
