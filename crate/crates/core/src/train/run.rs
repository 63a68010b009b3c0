use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adam::{Adam, StepStats};
use super::checkpoint::{transfer_encoder, Checkpoint};
use super::collapse::detect_collapse;
use super::{EpochRecord, TrainConfig};
use crate::data::taxonomy::vdbo_class;
use crate::data::{
    AudioBank, ChunkPolicy, Manifest, PairSampler, SamplingStrategy, SplitAssignment, SplitRole,
    StemRoster, TrainingExample,
};
use crate::dsp::AudioClip;
use crate::error::{Error, Result};
use crate::infer::{evaluate, EvalSetup, Evaluation, InferenceConfig, ModelEstimator, QueryMode};
use crate::metrics::{separation_loss, MetricReport};
use crate::model::{Banquet, ModelConfig, ModelMode};
use crate::query::QueryBank;

/// Everything the loops read but never modify.
pub struct TrainData<'a> {
    pub manifest: &'a Manifest,
    pub splits: &'a SplitAssignment,
    /// Audio of the training and validation songs at the model rate.
    pub audio: &'a AudioBank,
    pub queries: &'a QueryBank,
    pub inference: InferenceConfig,
}

pub enum TrainInit {
    Fresh,
    /// Copy the encoder of a pretraining checkpoint; heads are discarded.
    Pretrained(Box<Checkpoint>),
    /// Continue a query-model run after its last completed epoch.
    Resume(Box<Checkpoint>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub clipped: bool,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogRecord<'a> {
    Step(&'a StepRecord),
    Epoch(&'a EpochRecord),
}

/// Line-delimited JSON training log.
pub struct TrainLog {
    out: Option<BufWriter<std::fs::File>>,
    path: Option<PathBuf>,
}

impl TrainLog {
    pub fn disabled() -> Self {
        Self { out: None, path: None }
    }

    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            out: Some(BufWriter::new(file)),
            path: Some(path),
        })
    }

    fn write(&mut self, record: &LogRecord<'_>) -> Result<()> {
        if let Some(out) = &mut self.out {
            let path = self.path.as_deref().unwrap_or(Path::new("log"));
            serde_json::to_writer(&mut *out, record)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
            out.flush().map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

pub struct TrainOutcome {
    /// State after the last completed epoch.
    pub last: Checkpoint,
    pub best_epoch: Option<usize>,
    pub best_score: Option<f64>,
}

pub fn config_hash(model: &ModelConfig, train: &TrainConfig) -> Result<String> {
    let json = serde_json::to_vec(&(model, train))?;
    Ok(hex::encode(Sha256::digest(json)))
}

fn improves_on(score: Option<f64>, best: Option<(usize, Option<f64>)>) -> bool {
    match (score, best) {
        (_, None) => true,
        (Some(s), Some((_, Some(b)))) => s > b,
        (_, Some((_, None))) => true,
        (None, Some((_, Some(_)))) => false,
    }
}

fn role_songs(splits: &SplitAssignment, role: SplitRole) -> Vec<String> {
    splits.songs(role).into_iter().map(String::from).collect()
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

fn stack_clips(model: &Banquet, clips: &[&AudioClip]) -> Result<Tensor> {
    let len = clips[0].len();
    let values: Vec<f32> = clips.iter().flat_map(|c| c.samples().iter().copied().collect::<Vec<_>>()).collect();
    model.batch_tensor(values, clips.len(), len)
}

fn optimize(
    model: &Banquet,
    adam: &mut Adam,
    loss: &Tensor,
    lr: f64,
    epoch: usize,
    step: usize,
) -> Result<StepRecord> {
    let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    let non_finite = |detail: String| Error::NonFiniteLoss { epoch, step, detail };
    if !value.is_finite() {
        return Err(non_finite(format!("loss is {value}")));
    }
    let grads = loss.backward()?;
    let StepStats { grad_norm, clipped } = adam.step(model.params(), &grads, lr)?;
    if !grad_norm.is_finite() {
        return Err(non_finite(format!("gradient norm is {grad_norm} at loss {value}")));
    }
    Ok(StepRecord {
        epoch,
        step,
        loss: value,
        lr,
        grad_norm,
        clipped,
    })
}

fn chunk_policy(model: &Banquet, cfg: &TrainConfig) -> ChunkPolicy {
    let mut policy = ChunkPolicy::new((cfg.chunk_secs * model.config().sample_rate as f64).round() as usize);
    policy.ladder = cfg.ladder.clone();
    policy.augment = cfg.augmentation;
    policy
}

fn batch_loss(model: &Banquet, batch: &[TrainingExample], queries: &QueryBank, cfg: &TrainConfig) -> Result<Tensor> {
    let mixture = stack_clips(model, &batch.iter().map(|e| &e.mixture).collect::<Vec<_>>())?;
    let target = stack_clips(model, &batch.iter().map(|e| &e.target).collect::<Vec<_>>())?;
    let mut pooled = Vec::new();
    for e in batch {
        pooled.extend_from_slice(queries.get(&e.query.song_id, &e.query.label)?);
    }
    let dim = pooled.len() / batch.len();
    let q = Tensor::from_vec(pooled, (batch.len(), dim), model.params().device())?.to_dtype(model.dtype())?;
    let est = model.forward(&mixture, &q)?;
    let (t_re, t_im) = model.analyze(&target)?;
    separation_loss(&est, &target, &t_re, &t_im, &cfg.loss)
}

/// Mean over roster stems of the median fine-level SNR; stems without
/// finite entries are left out.
pub fn validation_score(report: &MetricReport, roster: &StemRoster) -> Option<f64> {
    let medians: Vec<f64> = roster.labels.iter().filter_map(|s| report.median(s)).collect();
    (!medians.is_empty()).then(|| medians.iter().sum::<f64>() / medians.len() as f64)
}

/// Separate every validation song with the evaluation code path.
pub fn validate(model: &Banquet, data: &TrainData<'_>, roster: &StemRoster, mode: QueryMode, seed: u64) -> Result<Evaluation> {
    let songs = role_songs(data.splits, SplitRole::Validation);
    let setup = EvalSetup {
        manifest: data.manifest,
        audio: data.audio,
        queries: data.queries,
        songs: songs.clone(),
        query_pool: songs,
        roster: roster.clone(),
        mode,
        seed,
    };
    evaluate(
        &setup,
        &ModelEstimator {
            model,
            inference: data.inference,
        },
    )
}

fn save_to(dir: Option<&Path>, name: &str, ck: &Checkpoint) -> Result<()> {
    if let Some(dir) = dir {
        ck.save(dir.join(name))?;
    }
    Ok(())
}

/// Query-conditioned training with per-epoch validation. Writes `last.ckpt`,
/// `best.ckpt` and `train_log.jsonl` under `out_dir` when given.
pub fn train(
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    data: &TrainData<'_>,
    init: TrainInit,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let roster = StemRoster::named(&cfg.roster)?;
    let hash = config_hash(model_config, cfg)?;
    let (mut model, mut adam, start, mut history) = match init {
        TrainInit::Fresh => (Banquet::new(model_config.clone(), ModelMode::Query, cfg.seed)?, Adam::new(cfg.adam), 0, Vec::new()),
        TrainInit::Pretrained(ck) => {
            let mut model = Banquet::new(model_config.clone(), ModelMode::Query, cfg.seed)?;
            transfer_encoder(&ck.model, &mut model)?;
            (model, Adam::new(cfg.adam), 0, Vec::new())
        }
        TrainInit::Resume(ck) => {
            if ck.model.mode() != &ModelMode::Query {
                return Err(Error::Checkpoint("cannot resume query training from a pretraining checkpoint".into()));
            }
            let adam = ck.optimizer.unwrap_or_else(|| Adam::new(cfg.adam));
            (ck.model, adam, ck.epoch, ck.history)
        }
    };
    model.set_frozen_encoder(cfg.frozen_encoder);
    adam.config = cfg.adam;

    let train_songs = role_songs(data.splits, SplitRole::Train);
    let mut sampler = PairSampler::new(data.audio, data.manifest, &train_songs, &roster, 0)?;
    sampler.chunk = chunk_policy(&model, cfg);
    sampler.strategy = if cfg.balanced {
        SamplingStrategy::Balanced
    } else {
        SamplingStrategy::Default
    };
    let do_validate = cfg.validate && !role_songs(data.splits, SplitRole::Validation).is_empty();
    let mut log = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            TrainLog::create(dir.join("train_log.jsonl"))?
        }
        None => TrainLog::disabled(),
    };
    // unscored epochs lose to scored ones
    let mut best: Option<(usize, Option<f64>)> = None;
    for r in &history {
        if improves_on(r.validation_score, best) {
            best = Some((r.epoch, r.validation_score));
        }
    }

    for epoch in start..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut rng = epoch_rng(cfg.seed, epoch);
        let mut pairs = 0;
        let mut loss_sum = 0.0;
        let steps = cfg.steps_per_epoch();
        for step in 0..steps {
            let n = cfg.batch_size.min(cfg.pairs_per_epoch - pairs);
            let batch = (0..n).map(|_| sampler.sample(&mut rng)).collect::<Result<Vec<_>>>()?;
            pairs += n;
            let loss = batch_loss(&model, &batch, data.queries, cfg)?;
            let rec = optimize(&model, &mut adam, &loss, lr, epoch, step)?;
            loss_sum += rec.loss * n as f64;
            log.write(&LogRecord::Step(&rec))?;
        }
        debug_assert_eq!(pairs, cfg.pairs_per_epoch);

        let mut record = EpochRecord {
            epoch,
            lr,
            steps,
            pairs,
            train_loss: loss_sum / pairs as f64,
            validation_score: None,
            validation_medians: BTreeMap::new(),
            collapsed: Vec::new(),
        };
        if do_validate {
            let eval = validate(&model, data, &roster, cfg.validation_query_mode, cfg.seed)?;
            record.validation_score = validation_score(&eval.fine, &roster);
            record.validation_medians = eval.fine.aggregates.iter().map(|(k, q)| (k.clone(), q.q2)).collect();
            record.collapsed = detect_collapse(&eval.levels, &cfg.collapse)
                .into_iter()
                .filter(|v| v.collapsed)
                .map(|v| v.stem)
                .collect();
        }
        tracing::info!(epoch, loss = record.train_loss, score = ?record.validation_score, "epoch done");
        log.write(&LogRecord::Epoch(&record))?;
        let improved = improves_on(record.validation_score, best);
        let collapsed = record.collapsed.clone();
        history.push(record);
        let ck = Checkpoint {
            model: model.clone(),
            optimizer: Some(adam.clone()),
            epoch: epoch + 1,
            config_hash: hash.clone(),
            history: history.clone(),
        };
        save_to(out_dir, "last.ckpt", &ck)?;
        if improved {
            best = Some((epoch, history.last().and_then(|r| r.validation_score)));
            save_to(out_dir, "best.ckpt", &ck)?;
        }
        if cfg.collapse.abort && !collapsed.is_empty() {
            return Err(Error::Collapse {
                epoch,
                stems: collapsed,
            });
        }
    }
    Ok(TrainOutcome {
        last: Checkpoint {
            model,
            optimizer: Some(adam),
            epoch: cfg.epochs.max(start),
            config_hash: hash,
            history,
        },
        best_epoch: best.map(|b| b.0),
        best_score: best.and_then(|b| b.1),
    })
}

/// Shared-encoder pretraining with one decoder head per VDBO stem and the
/// losses of all heads summed.
pub fn pretrain_encoder(
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    data: &TrainData<'_>,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mode = ModelMode::vdbo();
    let ModelMode::Pretrain { stems: heads } = mode.clone() else {
        unreachable!("vdbo mode is a pretraining mode")
    };
    let hash = config_hash(model_config, cfg)?;
    let model = Banquet::new(model_config.clone(), mode, cfg.seed)?;
    let mut adam = Adam::new(cfg.adam);
    let policy = chunk_policy(&model, cfg);
    let songs: Vec<String> = role_songs(data.splits, SplitRole::Train)
        .into_iter()
        .filter(|s| data.audio.song(s).is_some())
        .collect();
    if songs.is_empty() {
        return Err(Error::Config("pretraining needs at least one training song with audio".into()));
    }
    let mut log = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            TrainLog::create(dir.join("pretrain_log.jsonl"))?
        }
        None => TrainLog::disabled(),
    };
    let mut history = Vec::new();
    for epoch in 0..cfg.pretrain_epochs {
        let lr = cfg.lr_at(epoch);
        let mut rng = epoch_rng(cfg.seed, epoch);
        let (mut pairs, mut loss_sum) = (0, 0.0);
        let steps = cfg.steps_per_epoch();
        for step in 0..steps {
            let n = cfg.batch_size.min(cfg.pairs_per_epoch - pairs);
            let mut mixtures = Vec::with_capacity(n);
            let mut targets: Vec<Vec<AudioClip>> = vec![Vec::with_capacity(n); heads.len()];
            for _ in 0..n {
                let song = data.audio.song(songs.choose(&mut rng).expect("non-empty")).expect("filtered");
                let chunk = policy.choose_chunk(&song.mixture(), &mut rng)?;
                let stems = policy.chunk_stems(song, chunk.offset, &mut rng);
                let classes = song
                    .stems
                    .iter()
                    .map(|(r, _)| vdbo_class(&r.fine_label))
                    .collect::<Result<Vec<_>>>()?;
                mixtures.push(AudioClip::sum(&stems)?);
                for (h, head) in heads.iter().enumerate() {
                    let mut t = AudioClip::zeros(stems[0].channels(), stems[0].len(), stems[0].sample_rate());
                    for (clip, class) in stems.iter().zip(&classes) {
                        if class == head {
                            t.add_assign(clip)?;
                        }
                    }
                    targets[h].push(t);
                }
            }
            pairs += n;
            let x = stack_clips(&model, &mixtures.iter().collect::<Vec<_>>())?;
            let outputs = model.multi_decode(&x)?;
            let mut total: Option<Tensor> = None;
            for (est, t) in outputs.iter().zip(&targets) {
                let wave = stack_clips(&model, &t.iter().collect::<Vec<_>>())?;
                let (re, im) = model.analyze(&wave)?;
                let l = separation_loss(est, &wave, &re, &im, &cfg.loss)?;
                total = Some(match total {
                    Some(acc) => (acc + l)?,
                    None => l,
                });
            }
            let loss = total.expect("at least one head");
            let rec = optimize(&model, &mut adam, &loss, lr, epoch, step)?;
            loss_sum += rec.loss * n as f64;
            log.write(&LogRecord::Step(&rec))?;
        }
        let record = EpochRecord {
            epoch,
            lr,
            steps,
            pairs,
            train_loss: loss_sum / pairs as f64,
            validation_score: None,
            validation_medians: BTreeMap::new(),
            collapsed: Vec::new(),
        };
        log.write(&LogRecord::Epoch(&record))?;
        history.push(record);
        save_to(
            out_dir,
            "pretrain.ckpt",
            &Checkpoint {
                model: model.clone(),
                optimizer: Some(adam.clone()),
                epoch: epoch + 1,
                config_hash: hash.clone(),
                history: history.clone(),
            },
        )?;
    }
    Ok(TrainOutcome {
        last: Checkpoint {
            model,
            optimizer: Some(adam),
            epoch: cfg.pretrain_epochs,
            config_hash: hash,
            history,
        },
        best_epoch: None,
        best_score: None,
    })
}
