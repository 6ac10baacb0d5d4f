use grkan_core::eval::Label;
use grkan_core::harness::features::{frame_count, FRAME_LEN, HOP};
use grkan_core::harness::*;
use grkan_core::model::ProjectorKind;
use grkan_core::{Error, SsdModel, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_spec() -> CorpusSpec {
    CorpusSpec {
        n_train: 24,
        n_dev: 8,
        n_eval: 8,
        nominal_samples: 2000,
        min_samples: 1200,
        max_samples: 3000,
    }
}

fn tiny_config(kind: ProjectorKind) -> TrainConfig {
    let mut cfg = TrainConfig::desk(kind);
    cfg.model.projector.input_dim = 16;
    cfg.model.projector.output_dim = 16;
    cfg.model.conformer.dim = 16;
    cfg.model.conformer.blocks = 1;
    cfg.model.conformer.heads = 2;
    cfg.model.conformer.kernel_size = 3;
    cfg.model.conformer.ff_expansion = 2;
    cfg.max_epochs = 2;
    cfg.batch_size = 8;
    cfg.target_samples = 2000;
    cfg.top_n = 2;
    if let ProjectorKind::GrKan { groups, .. } = &mut cfg.model.projector.kind {
        *groups = 4;
    }
    cfg
}

#[test]
fn corpus_is_deterministic_and_well_formed() {
    let spec = small_spec();
    let a = generate_corpus(&spec, 5).unwrap();
    assert_eq!(a, generate_corpus(&spec, 5).unwrap());
    assert_ne!(a.train[0].samples, generate_corpus(&spec, 6).unwrap().train[0].samples);

    let mut ids = std::collections::HashSet::new();
    for split in Split::ALL {
        let utts = a.split(split);
        let bona = utts.iter().filter(|u| u.label == Label::Bonafide).count();
        assert!((bona as f64 / utts.len() as f64 - 0.5).abs() <= 0.1);
        for u in utts {
            assert!(ids.insert(u.id.clone()), "duplicate id {}", u.id);
            assert!((spec.min_samples..=spec.max_samples).contains(&u.samples.len()));
            assert!(u.samples.iter().all(|s| s.is_finite() && (-1.0..=1.0).contains(s)));
        }
    }
    assert!(a.train.iter().any(|u| u.samples.len() == spec.nominal_samples));
}

#[test]
fn artifacts_change_the_signal() {
    for artifact in [Artifact::Notch, Artifact::Quantization, Artifact::PhaseJumps] {
        let clean = synthesize(4000, None, &mut ChaCha8Rng::seed_from_u64(3));
        let spoof = synthesize(4000, Some(artifact), &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(spoof.len(), 4000);
        assert!(clean.iter().zip(&spoof).any(|(a, b)| a != b), "{artifact:?}");
    }
}

#[test]
fn corpus_spec_validation() {
    let mut spec = small_spec();
    spec.n_dev = 0;
    assert!(matches!(generate_corpus(&spec, 0), Err(Error::Config(_))));
    let mut spec = small_spec();
    spec.min_samples = 5000;
    assert!(spec.validate().is_err());
    let parsed = CorpusSpec::from_config_text("n_train = 10 # fewer\n").unwrap();
    assert_eq!(parsed.n_train, 10);
    assert_eq!(parsed.n_dev, CorpusSpec::default().n_dev);
    assert!(matches!(
        CorpusSpec::from_config_text("n_trian = 10"),
        Err(Error::Parse { line: 1, .. })
    ));
}

#[test]
fn corpus_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&small_spec(), 9).unwrap();
    save_corpus(&corpus, dir.path()).unwrap();
    assert_eq!(load_corpus(dir.path()).unwrap(), corpus);
    let labels = std::fs::read_to_string(dir.path().join("eval.labels")).unwrap();
    let parsed = grkan_core::eval::parse_labels(&labels).unwrap();
    assert_eq!(parsed.len(), corpus.eval.len());

    let path = dir.path().join("dev.wav.bin");
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_split(dir.path(), Split::Dev), Err(Error::Input(_))));
}

#[test]
fn pad_or_trim_contract() {
    let w: Vec<f32> = (0..10).map(|i| i as f32).collect();
    assert_eq!(pad_or_trim(&w, 10).unwrap(), w);
    assert_eq!(pad_or_trim(&w[..5], 10).unwrap(), [&w[..5], &w[..5]].concat());
    assert_eq!(pad_or_trim(&w, 6).unwrap(), w[..6].to_vec());
    assert_eq!(
        pad_or_trim(&w[..3], 7).unwrap(),
        vec![0.0, 1.0, 2.0, 0.0, 1.0, 2.0, 0.0]
    );
    assert!(matches!(pad_or_trim(&[], 4), Err(Error::Input(_))));
}

#[test]
fn feature_framing_and_statistics() {
    let ex = FeatureExtractor::new(32, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let wave: Vec<f32> = (0..4000).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let f = ex.extract(&wave).unwrap();
    assert_eq!(f.shape(), &[1 + (4000 - FRAME_LEN) / HOP, 32]);
    assert_eq!(f, FeatureExtractor::new(32, 11).unwrap().extract(&wave).unwrap());
    assert_ne!(f, FeatureExtractor::new(32, 12).unwrap().extract(&wave).unwrap());

    let doubled = [wave.clone(), wave.clone()].concat();
    assert_eq!(ex.extract(&doubled).unwrap().shape()[0], frame_count(8000).unwrap());
    assert_eq!(frame_count(8000).unwrap(), 48);
    assert_eq!(frame_count(FRAME_LEN), Some(1));

    let n = f.numel() as f64;
    let mean = f.data().iter().sum::<f64>() / n;
    let var = f.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    assert!(f.is_finite());
    assert!(var > 1e-3, "features are nearly constant: var {var}");

    assert!(matches!(ex.extract(&wave[..FRAME_LEN - 1]), Err(Error::Input(_))));
    assert!(FeatureExtractor::new(0, 0).is_err());
}

#[test]
fn config_text_round_trips_and_rejects_mistakes() {
    for kind in ["mlp", "grkan", "kan"] {
        let cfg = TrainConfig::from_config_text(&format!("projector = {kind}\nlr = 0.0005\n")).unwrap();
        assert_eq!(cfg.adam.lr, 5e-4);
        assert_eq!(TrainConfig::from_config_text(&cfg.to_config_text()).unwrap(), cfg);
    }
    let cfg =
        TrainConfig::from_config_text("projector = grkan\ngrkan_groups = 4\ngrkan_init = mlp\naveraging = scores\n")
            .unwrap();
    assert_eq!(cfg.averaging, Averaging::Scores);
    assert!(matches!(
        cfg.model.projector.kind,
        ProjectorKind::GrKan { groups: 4, .. }
    ));

    assert!(matches!(
        TrainConfig::from_config_text("projector = mlp\nbogus = 1\n"),
        Err(Error::Parse { line: 2, .. })
    ));
    assert!(matches!(
        TrainConfig::from_config_text("projector = mlp\ngrkan_groups = 4\n"),
        Err(Error::Config(_))
    ));
    assert!(TrainConfig::from_config_text("lr = 0.1\n").is_err());
    assert!(TrainConfig::from_config_text("projector = mlp\nlr = 0\n").is_err());
    assert!(TrainConfig::from_config_text("projector = mlp\npatience = 0\n").is_err());
    assert!(TrainConfig::from_config_text("projector = mlp\ntarget_samples = 0\n").is_err());
    assert!(TrainConfig::from_config_text("projector = mlp\naveraging = median\n").is_err());
}

#[test]
fn adam_matches_a_scalar_oracle() {
    let cfg = AdamConfig {
        lr: 0.1,
        beta1: 0.8,
        beta2: 0.9,
        eps: 1e-8,
        weight_decay: 0.01,
    };
    let mut p = Tensor::new(vec![2], vec![1.0, -2.0]).unwrap();
    let mut adam = Adam::new(cfg, &[2]);
    let (mut w, mut m, mut v) = ([1.0f64, -2.0], [0.0f64; 2], [0.0f64; 2]);
    for step in 1..=5 {
        let grads = [0.5 * step as f64, -0.3];
        adam.step(vec![&mut p], &[Tensor::new(vec![2], grads.to_vec()).unwrap()])
            .unwrap();
        for i in 0..2 {
            let g = grads[i] + 0.01 * w[i];
            m[i] = 0.8 * m[i] + 0.2 * g;
            v[i] = 0.9 * v[i] + 0.1 * g * g;
            let mh = m[i] / (1.0 - 0.8f64.powi(step));
            let vh = v[i] / (1.0 - 0.9f64.powi(step));
            w[i] -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        for i in 0..2 {
            assert!((p.data()[i] - w[i]).abs() < 1e-14);
        }
    }
    assert!(adam.step(vec![&mut p], &[]).is_err());
}

#[test]
fn early_stopping_contract() {
    let mut s = EarlyStopping::new(1);
    assert!(!s.update(1.0));
    assert!(s.update(1.5));

    // equal loss is not an improvement
    let mut s = EarlyStopping::new(2);
    let stops: Vec<bool> = [3.0, 2.0, 2.0, 1.0, 1.0, 1.0].iter().map(|&l| s.update(l)).collect();
    assert_eq!(stops, [false, false, false, false, false, true]);
    assert_eq!(s.best(), 1.0);
}

fn snap(epoch: usize, loss: f64, value: f64) -> train::Snapshot {
    train::Snapshot {
        epoch,
        dev_loss: loss,
        params: vec![
            ("a".into(), Tensor::new(vec![2], vec![value, -value]).unwrap()),
            ("b".into(), Tensor::scalar(value * 3.0)),
        ],
    }
}

#[test]
fn top_n_keeps_lowest_losses_and_averages_them() {
    let mut top = TopN::new(3);
    for (e, l) in [(1, 0.9), (2, 0.5), (3, 0.7), (4, 0.5), (5, 0.8), (6, 0.4)] {
        top.offer(snap(e, l, e as f64));
    }
    let epochs: Vec<usize> = top.snapshots().iter().map(|s| s.epoch).collect();
    assert_eq!(epochs, [6, 2, 4]);

    let sets: Vec<_> = top.snapshots().iter().map(|s| s.params.clone()).collect();
    let avg = average_params(&sets).unwrap();
    assert_eq!(avg[0].1.data(), &[4.0, -4.0]);
    assert_eq!(avg[1].1.data(), &[12.0]);

    let mut one = TopN::new(1);
    for (e, l) in [(1, 0.9), (2, 0.3), (3, 0.7)] {
        one.offer(snap(e, l, e as f64 + 0.123));
    }
    let single = average_params(&[one.snapshots()[0].params.clone()]).unwrap();
    assert_eq!(single, snap(2, 0.3, 2.123).params);

    assert!(average_params(&[]).is_err());
    let mut renamed = snap(1, 0.0, 1.0).params;
    renamed[0].0 = "z".into();
    assert!(average_params(&[snap(1, 0.0, 1.0).params, renamed]).is_err());
}

#[test]
fn training_is_deterministic_and_checkpoints_round_trip() {
    let corpus = generate_corpus(&small_spec(), 21).unwrap();
    let cfg = tiny_config(ProjectorKind::grkan_default());
    let (a, log) = train(&cfg, &corpus.train, &corpus.dev).unwrap();
    let (b, _) = train(&cfg, &corpus.train, &corpus.dev).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(log.epochs.len(), 2);
    assert_eq!(log.kept_epochs.len(), 2);
    assert!(log.to_text().starts_with("epoch 0 dev_loss"));

    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.ckpt");
    let p2 = dir.path().join("b.ckpt");
    a.save(&p1).unwrap();
    let loaded = Checkpoint::load(&p1).unwrap();
    loaded.save(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert_eq!(loaded, a);

    let before = evaluate(&a, &corpus.eval, EvalMode::Variable).unwrap();
    let after = evaluate(&loaded, &corpus.eval, EvalMode::Variable).unwrap();
    for (x, y) in before.entries().iter().zip(after.entries()) {
        assert_eq!(x.score.to_bits(), y.score.to_bits());
    }
}

#[test]
fn parameter_averaging_is_the_mean_of_kept_snapshots() {
    let corpus = generate_corpus(&small_spec(), 22).unwrap();
    let mut cfg = tiny_config(ProjectorKind::Mlp);
    cfg.averaging = Averaging::Scores;
    let (members, log) = train(&cfg, &corpus.train, &corpus.dev).unwrap();
    assert_eq!(members.members.len(), 2);
    cfg.averaging = Averaging::Params;
    let (averaged, log2) = train(&cfg, &corpus.train, &corpus.dev).unwrap();
    assert_eq!(log, log2);
    assert_eq!(averaged.members.len(), 1);
    for (i, (name, t)) in averaged.members[0].iter().enumerate() {
        let (a, b) = (&members.members[0][i].1, &members.members[1][i].1);
        assert_eq!(name, &members.members[0][i].0);
        for ((m, x), y) in t.data().iter().zip(a.data()).zip(b.data()) {
            assert_eq!(*m, (x + y) / 2.0);
        }
    }
    // score averaging: one score per trial, mean of the members' scores
    let scores = evaluate(&members, &corpus.eval, EvalMode::Fixed).unwrap();
    assert_eq!(scores.len(), corpus.eval.len());
    let models = members.models().unwrap();
    let ex = FeatureExtractor::new(16, cfg.feature_seed).unwrap();
    let single_a = score_trials(&models[..1], &ex, &corpus.eval, EvalMode::Fixed, cfg.target_samples).unwrap();
    let single_b = score_trials(&models[1..], &ex, &corpus.eval, EvalMode::Fixed, cfg.target_samples).unwrap();
    for ((s, a), b) in scores.entries().iter().zip(single_a.entries()).zip(single_b.entries()) {
        assert_eq!(s.score, (a.score + b.score) / 2.0);
    }
}

#[test]
fn fixed_and_variable_modes() {
    let corpus = generate_corpus(&small_spec(), 23).unwrap();
    let cfg = tiny_config(ProjectorKind::Mlp);
    let (ckpt, _) = train(&cfg, &corpus.train, &corpus.dev).unwrap();
    let fix = evaluate(&ckpt, &corpus.eval, EvalMode::Fixed).unwrap();
    let var = evaluate(&ckpt, &corpus.eval, EvalMode::Variable).unwrap();
    assert_eq!(fix.len(), corpus.eval.len());
    assert_eq!(var.len(), corpus.eval.len());
    let mut same_length = 0;
    for ((u, f), v) in corpus.eval.iter().zip(fix.entries()).zip(var.entries()) {
        if u.samples.len() == cfg.target_samples {
            same_length += 1;
            assert_eq!(f.score.to_bits(), v.score.to_bits());
        }
    }
    assert!(same_length > 0);
    assert_eq!(evaluate(&ckpt, &corpus.eval, EvalMode::Fixed).unwrap(), fix);
    assert!(EvalMode::parse("fixed").is_err());
}

#[test]
fn divergence_reports_the_epoch() {
    let cfg = tiny_config(ProjectorKind::Mlp);
    let bad = FeatureSet {
        features: vec![Tensor::full(&[4, 16], f64::NAN); 4],
        targets: vec![0, 1, 0, 1],
    };
    let good = FeatureSet {
        features: vec![Tensor::zeros(&[4, 16]); 2],
        targets: vec![0, 1],
    };
    match train_on_features(&cfg, &bad, &good) {
        Err(Error::Training { epoch, .. }) => assert_eq!(epoch, 1),
        other => panic!("{other:?}"),
    }
    let empty = FeatureSet {
        features: vec![],
        targets: vec![],
    };
    assert!(matches!(train_on_features(&cfg, &empty, &good), Err(Error::Input(_))));
}

#[test]
fn damaged_checkpoints_name_the_field() {
    let cfg = tiny_config(ProjectorKind::Mlp);
    let model = SsdModel::new(cfg.model.clone(), cfg.seed).unwrap();
    let bytes = Checkpoint::from_model(cfg, &model, 3, 0.25).to_bytes();
    assert!(Checkpoint::from_bytes(&bytes).is_ok());

    let field = |b: &[u8]| match Checkpoint::from_bytes(b) {
        Err(Error::Checkpoint { field, .. }) => field,
        other => panic!("{other:?}"),
    };
    let mut b = bytes.clone();
    b[0] = b'X';
    assert_eq!(field(&b), "magic");
    let mut b = bytes.clone();
    b[4] = 9;
    assert_eq!(field(&b), "version");
    // flip one character inside the config text
    let mut b = bytes.clone();
    b[14] ^= 1;
    assert_eq!(field(&b), "digest");
    let mut b = bytes.clone();
    b.push(0);
    assert_eq!(field(&b), "trailer");
    for cut in (0..bytes.len()).step_by(97) {
        assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err());
    }
}
