mod common;

use cmssa::alignment::{complexity_loss, LossWeights};
use cmssa::audit;
use cmssa::caption::CaptionStyle;
use cmssa::encoders::{EncoderConfig, FloatWidth};
use cmssa::experiments::{run_experiment, CaptionVariant, ExperimentData, ExperimentGrid};
use cmssa::metrics::RmaeMode;
use cmssa::pipeline::{
    epoch_order, evaluate_batch, initial_parts, prepare_samples, train_fresh, Sample, TrainConfig, TrainableScope,
    Trainer,
};
use cmssa::Error;

fn small_config() -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        epochs: 2,
        ..TrainConfig::desk()
    }
}

fn samples(f: &common::Fixture) -> Vec<Sample> {
    prepare_samples(&f.manifest, &f.split.train_ids, &EncoderConfig::default()).unwrap()
}

fn trainer(config: &TrainConfig) -> Trainer {
    let (p, b) = initial_parts(EncoderConfig::default(), config).unwrap();
    Trainer::new(config.clone(), p, b).unwrap()
}

#[test]
fn identical_seeds_give_identical_runs() {
    let dir = tempfile::tempdir().unwrap();
    let f = common::fixture(dir.path(), 24);
    let config = small_config();
    let a = train_fresh(&config, &f.manifest, &f.split, EncoderConfig::default()).unwrap();
    let b = train_fresh(&config, &f.manifest, &f.split, EncoderConfig::default()).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.model.encoder.params().tensors(), b.model.encoder.params().tensors());
}

#[test]
fn logged_total_is_weighted_sum_of_branch_losses() {
    let dir = tempfile::tempdir().unwrap();
    let f = common::fixture(dir.path(), 24);
    let config = TrainConfig {
        weights: LossWeights::new(0.3, 0.7).unwrap(),
        ..small_config()
    };
    let data = samples(&f);
    let t = trainer(&config);
    let batch: Vec<&Sample> = data.iter().take(8).collect();
    let e = evaluate_batch(&config, t.params(), t.bank(), &batch).unwrap();
    let mos: Vec<f64> = batch.iter().map(|s| s.mos).collect();
    let ones = vec![1.0; batch.len()];
    // Recompute each branch loss from the reported predictions.
    let l_c = complexity_loss(&e.q_complexity, &mos).unwrap();
    let l_a = complexity_loss(&e.q_align, &ones).unwrap();
    assert!((e.complexity - l_c).abs() < 1e-12);
    assert!((e.align - l_a).abs() < 1e-12);
    assert!((e.total - (0.3 * l_a + 0.7 * l_c)).abs() < 1e-9);

    let mut t = trainer(&config);
    for row in t.train_epoch(&data).unwrap() {
        assert!((row.total - (0.3 * row.align + 0.7 * row.complexity)).abs() < 1e-9);
    }
}

#[test]
fn alpha_zero_log_is_pure_complexity_loss() {
    let dir = tempfile::tempdir().unwrap();
    let f = common::fixture(dir.path(), 24);
    let config = TrainConfig {
        weights: LossWeights::new(0.0, 1.0).unwrap(),
        epochs: 1,
        ..small_config()
    };
    let mut t = trainer(&config);
    for row in t.train_epoch(&samples(&f)).unwrap() {
        assert!(row.align > 0.0);
        assert_eq!(row.total, row.complexity);
    }
}

#[test]
fn steps_count_batches_and_epochs_visit_everything() {
    let dir = tempfile::tempdir().unwrap();
    let f = common::fixture(dir.path(), 30);
    let data = samples(&f);
    let mut t = trainer(&small_config());
    t.run(&data).unwrap();
    let per_epoch = data.len().div_ceil(8);
    assert_eq!(t.log().len(), 2 * per_epoch);
    for (i, row) in t.log().iter().enumerate() {
        assert_eq!(row.step, i);
        assert_eq!(row.epoch, i / per_epoch);
        assert!(row.total.is_finite());
    }
    let mut order = epoch_order(0, 1, data.len());
    order.sort_unstable();
    assert_eq!(order, (0..data.len()).collect::<Vec<_>>());
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let f = common::fixture(dir.path(), 24);
    let data = samples(&f);
    let config = TrainConfig {
        epochs: 4,
        ..small_config()
    };

    let mut straight = trainer(&config);
    straight.run(&data).unwrap();

    let mut first = trainer(&config);
    for _ in 0..3 {
        first.train_epoch(&data).unwrap();
    }
    let state = dir.path().join("state.ckpt");
    first.save_checkpoint(&state).unwrap();
    let mut resumed = Trainer::load_checkpoint(&state, config.clone()).unwrap();
    assert_eq!(resumed.state(), first.state());
    resumed.train_epoch(&data).unwrap();

    assert!(resumed.is_done());
    assert_eq!(resumed.state(), straight.state());
    assert_eq!(resumed.params().tensors(), straight.params().tensors());
    assert_eq!(resumed.bank(), straight.bank());
    assert_eq!(resumed.log(), &straight.log()[straight.log().len() - resumed.log().len()..]);
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config();
    let path = dir.path().join("state.ckpt");
    trainer(&config).save_checkpoint(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    for cut in [4, bytes.len() / 2, bytes.len() - 1] {
        std::fs::write(&path, &bytes[..cut]).unwrap();
        assert!(matches!(
            Trainer::load_checkpoint(&path, config.clone()),
            Err(Error::Checkpoint { .. })
        ));
    }
}

#[test]
fn resume_with_other_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config();
    let path = dir.path().join("state.ckpt");
    trainer(&config).save_checkpoint(&path).unwrap();
    let other = TrainConfig {
        learning_rate: 1e-3,
        ..config
    };
    assert!(matches!(
        Trainer::load_checkpoint(&path, other),
        Err(Error::ConfigMismatch { .. })
    ));
}

#[test]
fn checkpoint_loads_at_either_float_width() {
    let dir = tempfile::tempdir().unwrap();
    let f = common::fixture(dir.path(), 16);
    let outcome = train_fresh(&small_config(), &f.manifest, &f.split, EncoderConfig::default()).unwrap();
    let p64 = dir.path().join("m64.ckpt");
    let p32 = dir.path().join("m32.ckpt");
    outcome.model.save(&p64, FloatWidth::F64).unwrap();
    outcome.model.save(&p32, FloatWidth::F32).unwrap();
    let m64 = cmssa::model::Model::load(&p64).unwrap();
    assert_eq!(m64.encoder.params().tensors(), outcome.model.encoder.params().tensors());
    let m32 = cmssa::model::Model::load(&p32).unwrap();
    for (a, b) in m32.encoder.params().tensors().iter().zip(outcome.model.encoder.params().tensors()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-6 * y.abs().max(1.0));
        }
    }
}

#[test]
fn missing_scene_text_is_rejected_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let f = common::fixture(dir.path(), 16);
    let mut data = samples(&f);
    data[3].scene_text.clear();
    let mut t = trainer(&small_config());
    assert!(matches!(t.run(&data), Err(Error::Invalid(_))));
    assert!(t.log().is_empty());

    let c_only = TrainConfig {
        branch_a_enabled: false,
        ..small_config()
    };
    trainer(&c_only).run(&data).unwrap();
}

#[test]
fn non_finite_loss_stops_without_touching_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let f = common::fixture(dir.path(), 16);
    let data = samples(&f);
    let config = small_config();
    let (mut p, b) = initial_parts(EncoderConfig::default(), &config).unwrap();
    let idx = p.layout().index_of("img.patch.b").unwrap();
    p.tensors_mut()[idx].data_mut()[0] = f64::NAN;
    let mut t = Trainer::new(config, p.clone(), b.clone()).unwrap();
    let batch: Vec<&Sample> = data.iter().take(8).collect();
    assert!(matches!(t.step(&batch), Err(Error::NonFiniteLoss { epoch: 0, step: 0 })));
    assert_eq!(t.bank(), &b);
    let after = t.params().tensors();
    assert!(after[idx].data()[0].is_nan());
    for (i, (x, y)) in after.iter().zip(p.tensors()).enumerate() {
        if i != idx {
            assert_eq!(x, y);
        }
    }
}

#[test]
fn prompts_only_scope_freezes_the_encoders() {
    let dir = tempfile::tempdir().unwrap();
    let f = common::fixture(dir.path(), 16);
    let config = TrainConfig {
        trainable_scope: TrainableScope::PromptsOnly,
        epochs: 1,
        ..small_config()
    };
    let (p, b) = initial_parts(EncoderConfig::default(), &config).unwrap();
    let mut t = Trainer::new(config, p.clone(), b.clone()).unwrap();
    t.run(&samples(&f)).unwrap();
    assert_eq!(t.params().tensors(), p.tensors());
    assert_ne!(t.bank().context, b.context);
}

#[test]
fn sidecar_is_never_read_with_alignment_branch_off() {
    let dir = tempfile::tempdir().unwrap();
    let f = common::fixture(dir.path(), 16);
    let c_only = TrainConfig {
        branch_a_enabled: false,
        epochs: 1,
        ..small_config()
    };
    let grid = ExperimentGrid {
        captions: vec![CaptionVariant {
            source: "template".into(),
            length: CaptionStyle::Medium,
            sidecar: f.paths.sidecar.clone(),
        }],
        ..ExperimentGrid::single(c_only.clone())
    };
    let data = ExperimentData {
        manifest: &f.manifest,
        split: &f.split,
        encoder: EncoderConfig::default(),
        stride: None,
        rmae_mode: RmaeMode::Root,
    };
    audit::start();
    let rows = run_experiment(&grid, &data, &dir.path().join("c.tsv")).unwrap();
    let read = audit::finish();
    assert!(rows[0].report().is_some());
    assert!(!read.is_empty(), "image reads should be recorded");
    assert!(!read.contains(&f.paths.sidecar), "sidecar was read");

    // The same grid with the alignment branch on does read it.
    let both = ExperimentGrid {
        base: TrainConfig {
            branch_a_enabled: true,
            ..c_only
        },
        branches: vec![cmssa::experiments::BranchConfig::Both],
        ..grid
    };
    audit::start();
    run_experiment(&both, &data, &dir.path().join("ca.tsv")).unwrap();
    assert!(audit::finish().contains(&f.paths.sidecar));
}

#[test]
fn weight_extremes_match_single_branch_runs() {
    let dir = tempfile::tempdir().unwrap();
    let f = common::fixture(dir.path(), 24);
    let data = samples(&f);
    let run = |config: TrainConfig| {
        let mut t = trainer(&config);
        t.run(&data).unwrap();
        (t.log().to_vec(), t.params().tensors().to_vec())
    };
    let (a_log, a_params) = run(TrainConfig {
        weights: LossWeights::new(1.0, 0.0).unwrap(),
        ..small_config()
    });
    let (only_log, only_params) = run(TrainConfig {
        weights: LossWeights::new(1.0, 0.0).unwrap(),
        branch_c_enabled: false,
        ..small_config()
    });
    for (x, y) in a_log.iter().zip(&only_log) {
        assert_eq!((x.step, x.total, x.align), (y.step, y.total, y.align));
    }
    assert_eq!(a_params, only_params);
}
