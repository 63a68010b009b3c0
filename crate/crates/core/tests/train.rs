use std::path::Path;

use banquet::data::{
    extract_all_queries, make_splits, scan_dataset, synth_toy_dataset, AudioBank, Manifest, RoleMap,
    SplitAssignment, StemRoster, SynthConfig,
};
use banquet::dsp::StftConfig;
use banquet::infer::{evaluate, EvalSetup, InferenceConfig, ModelEstimator, QueryMode};
use banquet::model::{BandsConfig, ModelConfig, ParamGroup};
use banquet::query::{cache_embeddings, EmbeddingStore, MockBackend, QueryBank};
use banquet::train::{pretrain_encoder, train, validate, Checkpoint, TrainConfig, TrainData, TrainInit};

struct Fixture {
    _dir: tempfile::TempDir,
    manifest: Manifest,
    splits: SplitAssignment,
    audio: AudioBank,
    queries: QueryBank,
}

impl Fixture {
    fn data(&self) -> TrainData<'_> {
        TrainData {
            manifest: &self.manifest,
            splits: &self.splits,
            audio: &self.audio,
            queries: &self.queries,
            inference: inference(),
        }
    }
}

fn inference() -> InferenceConfig {
    InferenceConfig {
        segment_secs: 1.0,
        hop_secs: 0.5,
        ..InferenceConfig::default()
    }
}

fn model_config() -> ModelConfig {
    ModelConfig {
        sample_rate: 8000,
        channels: 1,
        stft: StftConfig {
            frame_size: 128,
            hop: 32,
            ..StftConfig::default()
        },
        bands: BandsConfig {
            count: 6,
            ..ModelConfig::default().bands
        },
        embed_dim: 8,
        tf_pairs: 1,
        rnn_hidden: 8,
        decoder_hidden: 16,
        query_dim: 784,
        film_hidden: 8,
    }
}

fn train_config() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        pretrain_epochs: 3,
        pairs_per_epoch: 6,
        batch_size: 2,
        lr: 3e-3,
        chunk_secs: 0.5,
        seed: 11,
        validation_query_mode: QueryMode::SameSong,
        ..TrainConfig::default()
    }
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    let synth = SynthConfig {
        songs: 4,
        duration_secs: 1.5,
        sample_rate: 8000,
        channels: 1,
        labels: ["bass_guitar", "lead_male_singer", "lead_female_singer", "full_acoustic_drumkit"]
            .map(String::from)
            .to_vec(),
        min_stems: 3,
        max_stems: 4,
        ..SynthConfig::default()
    };
    synth_toy_dataset(&synth, 5, &root).unwrap();
    let manifest = scan_dataset(&root).unwrap();
    let splits = make_splits(&manifest, 2, 5)
        .unwrap()
        .with_roles(RoleMap {
            train: vec![0],
            validation: vec![1],
            test: vec![1],
        })
        .unwrap();
    let index = extract_all_queries(&manifest, dir.path().join("queries"), 1.0).unwrap();
    let store = EmbeddingStore::new(dir.path().join("emb"));
    cache_embeddings(&index, &MockBackend, &store).unwrap();
    let queries = QueryBank::load(&store, "mock", &index).unwrap();
    let ids: Vec<&str> = manifest.songs.iter().map(|s| s.song_id.as_str()).collect();
    let audio = AudioBank::load(&manifest, ids, 8000, 1).unwrap();
    Fixture {
        _dir: dir,
        manifest,
        splits,
        audio,
        queries,
    }
}

fn bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn schedule_and_step_count() {
    let cfg = TrainConfig {
        lr: 1e-3,
        decay: 0.98,
        pairs_per_epoch: 10,
        batch_size: 4,
        ..TrainConfig::default()
    };
    assert_eq!(cfg.lr_at(0), 1e-3);
    assert!((cfg.lr_at(10) - 1e-3 * 0.98f64.powi(10)).abs() < 1e-18);
    assert_eq!(cfg.steps_per_epoch(), 3);
    assert_eq!(TrainConfig::default().steps_per_epoch(), 2048);
}

#[test]
fn invalid_configs_are_rejected() {
    for cfg in [
        TrainConfig { lr: 0.0, ..train_config() },
        TrainConfig { decay: 1.5, ..train_config() },
        TrainConfig { batch_size: 0, ..train_config() },
    ] {
        assert!(cfg.validate().is_err());
    }
}

#[test]
fn pretraining_reduces_loss_and_transfer_freezes_encoder() {
    let fx = fixture();
    let cfg = TrainConfig {
        pretrain_epochs: 6,
        ..train_config()
    };
    let pre = pretrain_encoder(&model_config(), &cfg, &fx.data(), None).unwrap();
    let losses: Vec<f64> = pre.last.history.iter().map(|r| r.train_loss).collect();
    assert!(losses.iter().all(|l| l.is_finite()));
    assert!(losses.last() < losses.first(), "{losses:?}");
    assert!(pre.last.model.params().count_group(ParamGroup::PretrainHead) > 0);

    let encoder = pre.last.model.params().digest(&ParamGroup::ENCODER).unwrap();
    let frozen = TrainConfig {
        frozen_encoder: true,
        ..train_config()
    };
    let out = train(
        &model_config(),
        &frozen,
        &fx.data(),
        TrainInit::Pretrained(Box::new(pre.last)),
        None,
    )
    .unwrap();
    let model = &out.last.model;
    assert_eq!(model.params().digest(&ParamGroup::ENCODER).unwrap(), encoder);
    assert_eq!(model.params().count_group(ParamGroup::PretrainHead), 0);
    let reloaded = Checkpoint::from_bytes(&out.last.to_bytes().unwrap()).unwrap();
    assert_eq!(reloaded.model.params().count_group(ParamGroup::PretrainHead), 0);
    assert_eq!(reloaded.model.params().digest(&ParamGroup::ENCODER).unwrap(), encoder);
}

#[test]
fn training_is_reproducible_and_resumable() {
    let fx = fixture();
    let cfg = train_config();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    train(&model_config(), &cfg, &fx.data(), TrainInit::Fresh, Some(a.path())).unwrap();
    train(&model_config(), &cfg, &fx.data(), TrainInit::Fresh, Some(b.path())).unwrap();
    for name in ["last.ckpt", "train_log.jsonl"] {
        assert_eq!(bytes(&a.path().join(name)), bytes(&b.path().join(name)), "{name}");
    }

    let one = TrainConfig { epochs: 1, ..cfg.clone() };
    let c = tempfile::tempdir().unwrap();
    let first = train(&model_config(), &one, &fx.data(), TrainInit::Fresh, Some(c.path())).unwrap();
    assert_eq!(first.last.epoch, 1);
    let resumed = train(&model_config(), &cfg, &fx.data(), TrainInit::Resume(Box::new(first.last)), None).unwrap();
    assert_eq!(resumed.last.to_bytes().unwrap(), bytes(&a.path().join("last.ckpt")));
}

#[test]
fn validation_reuses_the_evaluation_path() {
    let fx = fixture();
    let cfg = train_config();
    let out = train(&model_config(), &cfg, &fx.data(), TrainInit::Fresh, None).unwrap();
    let roster = StemRoster::named(&cfg.roster).unwrap();
    let via_trainer = validate(&out.last.model, &fx.data(), &roster, QueryMode::SameSong, cfg.seed).unwrap();
    assert!(!via_trainer.fine.entries.is_empty());

    let songs: Vec<String> = fx
        .splits
        .songs(banquet::data::SplitRole::Validation)
        .into_iter()
        .map(String::from)
        .collect();
    let direct = evaluate(
        &EvalSetup {
            manifest: &fx.manifest,
            audio: &fx.audio,
            queries: &fx.queries,
            songs: songs.clone(),
            query_pool: songs,
            roster,
            mode: QueryMode::SameSong,
            seed: cfg.seed,
        },
        &ModelEstimator {
            model: &out.last.model,
            inference: inference(),
        },
    )
    .unwrap();
    assert_eq!(via_trainer.fine, direct.fine);
    assert_eq!(via_trainer.coarse, direct.coarse);

    let last = out.last.history.last().unwrap();
    let medians: Vec<(String, f64)> = direct.fine.aggregates.iter().map(|(k, q)| (k.clone(), q.q2)).collect();
    assert_eq!(last.validation_medians.clone().into_iter().collect::<Vec<_>>(), medians);
}
