mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdanet::data::*;
use sdanet::model::*;
use sdanet::tensor::{Graph, Tensor};
use sdanet::trainer::*;

fn tiny_samples(n: usize, size: usize, seed: u64) -> (tempfile::TempDir, Vec<Sample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let imgs: Vec<_> = (0..n)
        .map(|_| synthetic::dot_crowd(&mut rng, size, 2..=6))
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let index = synthetic::write_dataset(dir.path(), &imgs, &[]).unwrap();
    let samples = DatasetIndex::load(&index)
        .unwrap()
        .load_split(Split::Train, 1, 4.0)
        .unwrap();
    (dir, samples)
}

fn quick_config(steps: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        steps,
        seed,
        model: ModelConfig::tiny(),
        ..TrainConfig::default()
    }
}

#[test]
fn zero_steps_rejected() {
    let (_d, samples) = tiny_samples(1, 16, 0);
    let err = train(&quick_config(0, 0), &samples, &[], &TrainOutput::default()).unwrap_err();
    assert!(matches!(err, TrainError::Config(_)));
}

#[test]
fn empty_dataset_rejected() {
    let err = train(&quick_config(3, 0), &[], &[], &TrainOutput::default()).unwrap_err();
    assert!(matches!(err, TrainError::EmptyDataset));
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let (_d, samples) = tiny_samples(2, 16, 1);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = quick_config(6, 42);
    for dir in [&a, &b] {
        train(
            &cfg,
            &samples,
            &[],
            &TrainOutput {
                dir: Some(dir.path().to_path_buf()),
            },
        )
        .unwrap();
    }
    let ca = std::fs::read(a.path().join(FINAL_CHECKPOINT)).unwrap();
    let cb = std::fs::read(b.path().join(FINAL_CHECKPOINT)).unwrap();
    assert_eq!(ca, cb);

    let other = tempfile::tempdir().unwrap();
    train(
        &quick_config(6, 43),
        &samples,
        &[],
        &TrainOutput {
            dir: Some(other.path().to_path_buf()),
        },
    )
    .unwrap();
    assert_ne!(
        ca,
        std::fs::read(other.path().join(FINAL_CHECKPOINT)).unwrap()
    );
}

#[test]
fn log_and_checkpoints_are_written() {
    let (_d, samples) = tiny_samples(2, 16, 2);
    let out = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        checkpoint_every: 2,
        ..quick_config(5, 3)
    };
    let (params, log) = train(
        &cfg,
        &samples,
        &samples,
        &TrainOutput {
            dir: Some(out.path().to_path_buf()),
        },
    )
    .unwrap();
    assert_eq!(log.steps.len(), 5);
    assert!(log.steps.windows(2).all(|w| w[0].step < w[1].step));
    assert_eq!(
        log.validation.iter().map(|v| v.step).collect::<Vec<_>>(),
        [2, 4, 5]
    );
    assert!(out.path().join("step_0000002.ckpt").exists());
    assert!(out.path().join("step_0000004.ckpt").exists());

    let text = std::fs::read_to_string(out.path().join(LOG_FILE)).unwrap();
    let lines: Vec<serde_json::Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 8);
    assert_eq!(lines[0]["kind"], "step");
    assert!(lines[0]["total"].as_f64().unwrap().is_finite());
    assert_eq!(lines[7]["kind"], "validation");

    // the final checkpoint holds the returned parameters at storage precision
    let loaded = load_checkpoint(&out.path().join(FINAL_CHECKPOINT)).unwrap();
    let mut q = params.clone();
    q.quantize_f32();
    assert_eq!(loaded.tensors(), q.tensors());
}

#[test]
fn config_round_trips_through_json() {
    let cfg = TrainConfig {
        batch_size: 2,
        ..quick_config(10, 9)
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(TrainConfig::load(&path).unwrap(), cfg);

    std::fs::write(&path, r#"{"steps": 7}"#).unwrap();
    let partial = TrainConfig::load(&path).unwrap();
    assert_eq!(partial.steps, 7);
    assert_eq!(partial.lr, 1e-4);

    std::fs::write(&path, "not json").unwrap();
    assert!(matches!(
        TrainConfig::load(&path),
        Err(TrainError::Config(_))
    ));
}

#[test]
fn non_finite_loss_aborts_with_diagnostic() {
    let (_d, mut samples) = tiny_samples(1, 16, 4);
    samples[0].image = samples[0].image.map(|_| f64::NAN);
    let err = train(&quick_config(3, 0), &samples, &[], &TrainOutput::default()).unwrap_err();
    match err {
        TrainError::NonFinite { step, breakdown } => {
            assert_eq!(step, 1);
            assert!(!breakdown.is_finite());
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn every_ablation_trains() {
    let (_d, samples) = tiny_samples(2, 16, 5);
    for cfg in [
        ModelConfig::tiny(),
        ModelConfig {
            use_amg: false,
            ..ModelConfig::tiny()
        },
        ModelConfig {
            use_dense: false,
            ..ModelConfig::tiny()
        },
        ModelConfig {
            use_refine: false,
            ..ModelConfig::tiny()
        },
    ] {
        let train_cfg = TrainConfig {
            model: cfg.clone(),
            ..quick_config(3, 1)
        };
        let (params, log) = train(&train_cfg, &samples, &[], &TrainOutput::default()).unwrap();
        assert_eq!(params.numel(), param_count(&cfg));
        assert!(log.steps.iter().all(|s| s.loss.is_finite()));
    }
}

#[test]
fn save_load_preserves_forward_outputs() {
    let (_d, samples) = tiny_samples(1, 16, 6);
    let (mut params, _) =
        train(&quick_config(4, 2), &samples, &[], &TrainOutput::default()).unwrap();
    params.quantize_f32();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&params, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.config, params.config);

    let outputs = |p: &ModelParams| -> Vec<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(samples[0].image.clone());
        let o = forward(&mut g, p, x).unwrap();
        [
            o.f_m1,
            o.f_m2,
            o.f_g,
            o.f_att.unwrap(),
            o.d_coarse,
            o.d_fine,
        ]
        .iter()
        .map(|&v| g.value(v).clone())
        .collect()
    };
    for (a, b) in outputs(&params).iter().zip(outputs(&loaded)) {
        assert!(common::relative_error(a, &b) <= 1e-6);
    }

    // save -> load -> save is byte-identical
    let again = dir.path().join("m2.ckpt");
    save_checkpoint(&loaded, &again).unwrap();
    assert_eq!(
        std::fs::read(&path).unwrap(),
        std::fs::read(&again).unwrap()
    );
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let params = build_model_seeded(&ModelConfig::tiny(), 0).unwrap();
    let bytes = encode_checkpoint(&params);
    assert!(matches!(
        decode_checkpoint(&bytes[..bytes.len() - 4]),
        Err(CheckpointError::Truncated(_))
    ));
    let mut extra = bytes.clone();
    extra.extend_from_slice(&[0; 4]);
    assert!(matches!(
        decode_checkpoint(&extra),
        Err(CheckpointError::Integrity(_))
    ));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(
        decode_checkpoint(&bad),
        Err(CheckpointError::BadMagic)
    ));

    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header = std::str::from_utf8(&bytes[12..12 + header_len]).unwrap();
    let bumped = header.replace("\"format_version\":1", "\"format_version\":9");
    assert_ne!(bumped, header);
    let mut v9 = bytes[..8].to_vec();
    v9.extend_from_slice(&(bumped.len() as u32).to_le_bytes());
    v9.extend_from_slice(bumped.as_bytes());
    v9.extend_from_slice(&bytes[12 + header_len..]);
    assert!(matches!(
        decode_checkpoint(&v9),
        Err(CheckpointError::Version { found: 9 })
    ));
}
