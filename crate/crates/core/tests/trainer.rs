use fanerv_core::checkpoint::Checkpoint;
use fanerv_core::data::{make_mask, synthetic_clip, MaskSpec, VideoClip};
use fanerv_core::losses::LossConfig;
use fanerv_core::model::{normalized_time, Fanerv, ModelConfig};
use fanerv_core::optim::OptimizerConfig;
use fanerv_core::trainer::{
    evaluate, fit, frame_step, mean_metrics, median, metrics_csv, run_ablation, train, FrameMetric, MetricRow, Task,
    TrainConfig, TrainState,
};
use fanerv_core::Error;

fn small_config() -> ModelConfig {
    ModelConfig {
        decoder_strides: vec![2, 2, 2],
        base_channels: 12,
        min_channels: 4,
        embed_channels: 4,
        encoder_channels: 4,
        pe_frequencies: 4,
        temporal_hidden: 16,
        creb_count: 1,
        ..ModelConfig::default()
    }
}

fn clip() -> VideoClip {
    synthetic_clip(4, 32, 48, 7).unwrap()
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        eval_every: 1,
        ..TrainConfig::default()
    }
}

#[test]
fn same_seed_gives_identical_history() {
    let a = fit(&small_config(), &clip(), &Task::Regression, &cfg(2), &LossConfig::default()).unwrap();
    let b = fit(&small_config(), &clip(), &Task::Regression, &cfg(2), &LossConfig::default()).unwrap();
    assert_eq!(metrics_csv(&a.history), metrics_csv(&b.history));
    assert_eq!(a.params, b.params);
    let c = fit(
        &small_config(),
        &clip(),
        &Task::Regression,
        &TrainConfig { seed: 1, ..cfg(2) },
        &LossConfig::default(),
    )
    .unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn training_improves_psnr_with_finite_losses() {
    let state = fit(&small_config(), &clip(), &Task::Regression, &cfg(25), &LossConfig::default()).unwrap();
    let fit_rows: Vec<&MetricRow> = state.history.iter().filter(|r| r.split == "fit").collect();
    assert_eq!(fit_rows.len(), 25);
    assert!(fit_rows.iter().all(|r| r.loss.is_finite() && r.psnr.is_finite()));
    let train_means: Vec<f64> = state
        .history
        .iter()
        .filter(|r| r.split == "train" && r.frame.is_none())
        .map(|r| r.psnr)
        .collect();
    assert_eq!(train_means.len(), 25);
    assert!(train_means[24] > train_means[0], "{train_means:?}");
    assert!(fit_rows[24].loss < fit_rows[0].loss);
    assert_eq!(state.optimizer.steps, 100);
    assert_eq!(state.last_psnr("train"), Some(train_means[24]));
}

#[test]
fn adamw_fallback_trains() {
    let run = TrainConfig {
        optimizer: OptimizerConfig::adamw(),
        ..cfg(3)
    };
    let state = fit(&small_config(), &clip(), &Task::Regression, &run, &LossConfig::default()).unwrap();
    assert!(state.last_psnr("train").unwrap().is_finite());
}

#[test]
fn untrained_model_has_positive_finite_psnr() {
    let model = Fanerv::new(small_config()).unwrap();
    let params = model.init_params(0);
    let rows = evaluate(&model, &params, &clip(), &Task::Regression, &[0, 1, 2, 3], &LossConfig::default()).unwrap();
    for r in rows {
        assert!(r.psnr.is_finite() && r.psnr > 0.0);
        assert!(r.ms_ssim.is_finite());
    }
}

#[test]
fn interpolation_evaluates_every_frame_once() {
    let state = fit(&small_config(), &clip(), &Task::Interpolation, &cfg(1), &LossConfig::default()).unwrap();
    let mut frames: Vec<usize> = state.history.iter().filter_map(|r| r.frame).collect();
    let train: Vec<usize> = state
        .history
        .iter()
        .filter(|r| r.split == "train")
        .filter_map(|r| r.frame)
        .collect();
    assert_eq!(train, vec![0, 2]);
    frames.sort();
    assert_eq!(frames, vec![0, 1, 2, 3]);
    assert_eq!(state.optimizer.steps, 2);
}

#[test]
fn mean_row_is_arithmetic_mean_of_frame_rows() {
    let state = fit(&small_config(), &clip(), &Task::Regression, &cfg(1), &LossConfig::default()).unwrap();
    let frames: Vec<f64> = state.history.iter().filter(|r| r.frame.is_some()).map(|r| r.psnr).collect();
    let mean = state.last_psnr("train").unwrap();
    assert!((mean - frames.iter().sum::<f64>() / frames.len() as f64).abs() < 1e-12);

    let rows = [
        FrameMetric {
            frame: 0,
            psnr: 30.0,
            ms_ssim: 0.9,
        },
        FrameMetric {
            frame: 1,
            psnr: f64::INFINITY,
            ms_ssim: 1.0,
        },
        FrameMetric {
            frame: 2,
            psnr: 40.0,
            ms_ssim: 0.95,
        },
    ];
    let (p, s) = mean_metrics(&rows);
    assert_eq!(p, 35.0);
    assert!((s - 0.95).abs() < 1e-12);
    assert_eq!(mean_metrics(&rows[1..2]).0, f64::INFINITY);
}

#[test]
fn infinite_psnr_is_written_as_inf() {
    let row = MetricRow {
        epoch: 3,
        split: "train".into(),
        frame: Some(1),
        psnr: f64::INFINITY,
        ms_ssim: 1.0,
        loss: f64::NAN,
        lr: 0.0,
    };
    let csv = metrics_csv(&[row.clone()]);
    assert!(csv.starts_with(MetricRow::HEADER));
    assert!(csv.contains("3,train,1,inf,1,"));
    let json = serde_json::to_string(&row).unwrap();
    let back: MetricRow = serde_json::from_str(&json).unwrap();
    assert_eq!(back.psnr, f64::INFINITY);
    assert!(back.loss.is_nan());
}

#[test]
fn checkpoint_round_trip_reproduces_outputs() {
    let task = Task::Regression;
    let state = fit(&small_config(), &clip(), &task, &cfg(2), &LossConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.fanc");
    Checkpoint::from_state(&state, Some(cfg(2)), Some(task.clone())).save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.train, Some(cfg(2)));
    assert_eq!(loaded.task, Some(task.clone()));
    let restored = loaded.into_state().unwrap();
    assert_eq!(restored.params, state.params);
    assert_eq!(restored.optimizer, state.optimizer);
    assert_eq!(restored.epoch, 2);
    assert_eq!(metrics_csv(&restored.history), metrics_csv(&state.history));
    let c = clip();
    for t in 0..c.len() {
        let a = state.model.reconstruct(&state.params, &c.frames[t], normalized_time(t, 4)).unwrap();
        let b = restored.model.reconstruct(&restored.params, &c.frames[t], normalized_time(t, 4)).unwrap();
        assert_eq!(a, b);
    }

    let mut bytes = std::fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n - 3] ^= 0x40;
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Integrity(_))));
    assert!(matches!(Checkpoint::from_bytes(b"NOPE...."), Err(Error::Format(_))));
}

#[test]
fn resumed_training_continues_from_checkpoint() {
    let task = Task::Regression;
    let mut state = fit(&small_config(), &clip(), &task, &cfg(1), &LossConfig::default()).unwrap();
    let bytes = Checkpoint::from_state(&state, None, None).to_bytes().unwrap();
    let mut resumed = Checkpoint::from_bytes(&bytes).unwrap().into_state().unwrap();
    train(&mut state, &clip(), &task, &cfg(1), &LossConfig::default()).unwrap();
    train(&mut resumed, &clip(), &task, &cfg(1), &LossConfig::default()).unwrap();
    assert_eq!(state.params, resumed.params);
    assert_eq!(resumed.epoch, 2);
}

#[test]
fn inpainting_loss_ignores_poisoned_hidden_pixels() {
    let mut c = clip();
    let spec = MaskSpec::Center;
    for (t, f) in c.frames.iter_mut().enumerate() {
        let m = make_mask(&spec, 32, 48, t).unwrap();
        for (i, v) in f.data_mut().iter_mut().enumerate() {
            if !m.visible[i % (32 * 48)] {
                *v = f32::NAN;
            }
        }
    }
    let task = Task::Inpainting { mask: spec };
    let model = Fanerv::new(small_config()).unwrap();
    let params = model.init_params(0);
    for t in 0..c.len() {
        let r = frame_step(&model, &params, &c, &task, t, &LossConfig::default()).unwrap();
        assert!(r.loss.is_finite());
        assert!(r.grads.iter().flatten().all(|g| g.all_finite()));
    }
    let mut state = TrainState::new(model, 0, OptimizerConfig::adan());
    let clean = clip();
    train(&mut state, &clean, &task, &cfg(2), &LossConfig::default()).unwrap();
    assert!(state.last_psnr("train").unwrap().is_finite());
}

#[test]
fn non_finite_loss_aborts_training() {
    let model = Fanerv::new(small_config()).unwrap();
    let mut state = TrainState::new(model, 0, OptimizerConfig::adan());
    let last = state.params.tensors.len() - 1;
    state.params.tensors[last].data_mut().fill(f32::NAN);
    let err = train(&mut state, &clip(), &Task::Regression, &cfg(1), &LossConfig::default()).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { epoch: 1, .. }), "{err}");
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(TrainConfig { lr0: 0.0, ..cfg(1) }.validate().is_err());
    assert!(TrainConfig { epochs: 0, ..cfg(1) }.validate().is_err());
    let wrong = synthetic_clip(2, 30, 48, 0).unwrap();
    assert!(fit(&small_config(), &wrong, &Task::Regression, &cfg(1), &LossConfig::default()).is_err());
}

#[test]
fn ablation_runner_sizes_every_variant() {
    let base = ModelConfig {
        target_params: None,
        ..small_config()
    };
    let flags: Vec<String> = ["wfub", "creb"].iter().map(|s| s.to_string()).collect();
    let rows = run_ablation(
        &base,
        &flags,
        20_000,
        &clip(),
        &TrainConfig {
            eval_every: 100,
            ..cfg(1)
        },
        &LossConfig::default(),
        &[0, 1],
    )
    .unwrap();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert!((r.params as f64 - 20_000.0).abs() <= 600.0, "{} has {}", r.variant, r.params);
        assert_eq!(r.psnr_per_seed.len(), 2);
        assert_eq!(r.psnr_median, median(&r.psnr_per_seed));
    }
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&[4.0, 1.0]), 2.5);
}

#[test]
fn target_psnr_stops_at_first_qualifying_evaluation() {
    let run = TrainConfig {
        eval_every: 2,
        target_psnr: Some(0.0),
        ..cfg(6)
    };
    let state = fit(&small_config(), &clip(), &Task::Regression, &run, &LossConfig::default()).unwrap();
    assert_eq!(state.epoch, 2);
    let unreachable = TrainConfig {
        target_psnr: Some(1e9),
        ..run
    };
    let state = fit(&small_config(), &clip(), &Task::Regression, &unreachable, &LossConfig::default()).unwrap();
    assert_eq!(state.epoch, 6);
}
