use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use banquet::config::Config;
use banquet::data::{
    conform, extract_all_queries, make_splits, scan_dataset, synth_toy_dataset, AudioBank, Manifest,
    QueryIndex, SplitAssignment, SplitRole, StemRoster,
};
use banquet::dsp::{load_audio, save_audio};
use banquet::infer::{
    evaluate as run_evaluation, separate_track, EvalSetup, ModelEstimator, OracleEstimator, QueryMode,
    StemEstimator, ZeroEstimator,
};
use banquet::metrics::MetricReport;
use banquet::query::{backend_from_name, cache_embeddings, embed_query, EmbeddingStore, QueryBank};
use banquet::train::{pretrain_encoder, train as run_training, Checkpoint, TrainData, TrainInit};
use banquet::{Error, Result};
use serde_json::{json, Value};

use crate::{EvaluateArgs, ReportArgs, SeparateArgs, SynthArgs, TrainArgs};

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    Checkpoint::load(path)
}

fn require(path: PathBuf, producer: &str) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::Config(format!(
            "{} does not exist; run `banquet {producer}` first",
            path.display()
        )))
    }
}

struct Workspace {
    manifest: Manifest,
    splits: SplitAssignment,
    queries: QueryBank,
}

fn workspace(cfg: &Config) -> Result<Workspace> {
    let manifest = Manifest::load(require(cfg.manifest_path(), "scan")?)?;
    let splits = SplitAssignment::load(require(cfg.splits_path(), "split")?)?.with_roles(cfg.splits.roles.clone())?;
    let index = QueryIndex::load(require(cfg.query_index_path(), "extract-queries")?)?;
    let store = EmbeddingStore::new(cfg.embeddings_dir());
    let queries = QueryBank::load(&store, &cfg.query.backend, &index)?;
    Ok(Workspace {
        manifest,
        splits,
        queries,
    })
}

fn role_songs(splits: &SplitAssignment, roles: &[SplitRole]) -> Vec<String> {
    let set: BTreeSet<&str> = roles.iter().flat_map(|r| splits.songs(*r)).collect();
    set.into_iter().map(String::from).collect()
}

pub fn synth_data(mut cfg: Config, a: SynthArgs) -> Result<Value> {
    if let Some(n) = a.songs {
        cfg.synth.songs = n;
    }
    if let Some(d) = a.duration {
        cfg.synth.duration_secs = d;
    }
    if let Some(sr) = a.sample_rate {
        cfg.synth.sample_rate = sr;
    }
    let cfg = cfg.resolve()?;
    let root = &cfg.paths.data_root;
    synth_toy_dataset(&cfg.synth, cfg.seed, root)?;
    cfg.write_resolved(root)?;
    Ok(json!({ "command": "synth-data", "data_root": root, "songs": cfg.synth.songs }))
}

pub fn scan(cfg: Config) -> Result<Value> {
    let manifest = scan_dataset(&cfg.paths.data_root)?;
    for w in &manifest.warnings {
        tracing::warn!("{w}");
    }
    manifest.save(cfg.manifest_path())?;
    cfg.write_resolved(&cfg.paths.work_dir)?;
    Ok(json!({
        "command": "scan",
        "manifest": cfg.manifest_path(),
        "songs": manifest.songs.len(),
        "orphans": manifest.orphans,
        "warnings": manifest.warnings,
    }))
}

pub fn split(cfg: Config) -> Result<Value> {
    let manifest = Manifest::load(require(cfg.manifest_path(), "scan")?)?;
    let splits = make_splits(&manifest, cfg.splits.k, cfg.seed)?.with_roles(cfg.splits.roles.clone())?;
    splits.save(cfg.splits_path())?;
    cfg.write_resolved(&cfg.paths.work_dir)?;
    let sizes: Vec<usize> = (0..splits.k)
        .map(|f| splits.folds.values().filter(|&&v| v == f).count())
        .collect();
    Ok(json!({ "command": "split", "splits": cfg.splits_path(), "fold_sizes": sizes }))
}

pub fn extract_queries(cfg: Config) -> Result<Value> {
    let manifest = Manifest::load(require(cfg.manifest_path(), "scan")?)?;
    let index = extract_all_queries(&manifest, cfg.queries_dir(), cfg.query.window_secs)?;
    index.save(cfg.query_index_path())?;
    cfg.write_resolved(&cfg.paths.work_dir)?;
    let padded = index.entries.iter().filter(|e| e.padded).count();
    Ok(json!({
        "command": "extract-queries",
        "index": cfg.query_index_path(),
        "queries": index.entries.len(),
        "padded": padded,
    }))
}

pub fn embed_queries(cfg: Config) -> Result<Value> {
    let backend = backend_from_name(&cfg.query.backend, cfg.query.weights.clone())?;
    let index = QueryIndex::load(require(cfg.query_index_path(), "extract-queries")?)?;
    let store = EmbeddingStore::new(cfg.embeddings_dir());
    let summary = cache_embeddings(&index, backend.as_ref(), &store)?;
    cfg.write_resolved(&cfg.paths.work_dir)?;
    Ok(json!({
        "command": "embed-queries",
        "backend": backend.id(),
        "store": store.root(),
        "computed": summary.computed,
        "skipped": summary.skipped,
    }))
}

fn load_audio_bank(ws: &Workspace, songs: &[String], rate: u32, channels: usize) -> Result<AudioBank> {
    AudioBank::load(&ws.manifest, songs.iter().map(String::as_str), rate, channels)
}

pub fn pretrain(cfg: Config, out: PathBuf) -> Result<Value> {
    let ws = workspace(&cfg)?;
    let songs = role_songs(&ws.splits, &[SplitRole::Train]);
    let audio = load_audio_bank(&ws, &songs, cfg.model.sample_rate, cfg.model.channels)?;
    let data = TrainData {
        manifest: &ws.manifest,
        splits: &ws.splits,
        audio: &audio,
        queries: &ws.queries,
        inference: cfg.inference,
    };
    cfg.write_resolved(&out)?;
    let outcome = pretrain_encoder(&cfg.model, &cfg.train, &data, Some(&out))?;
    Ok(json!({
        "command": "pretrain",
        "checkpoint": out.join("pretrain.ckpt"),
        "epochs": outcome.last.epoch,
        "final_loss": outcome.last.history.last().map(|r| r.train_loss),
    }))
}

pub fn train(mut cfg: Config, a: TrainArgs) -> Result<Value> {
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(r) = a.roster {
        cfg.train.roster = r;
    }
    cfg.train.frozen_encoder |= a.frozen_encoder;
    cfg.train.augmentation.enabled |= a.augment;
    cfg.train.balanced |= a.balanced;
    let cfg = cfg.resolve()?;
    let out = a.out.unwrap_or_else(|| cfg.runs_dir().join("train"));
    let (init, model_cfg) = match (a.pretrained, a.resume) {
        (Some(p), _) => (TrainInit::Pretrained(Box::new(load_checkpoint(&p)?)), cfg.model.clone()),
        (None, Some(r)) => {
            let ck = load_checkpoint(&r)?;
            let model_cfg = ck.model.config().clone();
            (TrainInit::Resume(Box::new(ck)), model_cfg)
        }
        (None, None) => (TrainInit::Fresh, cfg.model.clone()),
    };
    let ws = workspace(&cfg)?;
    let songs = role_songs(&ws.splits, &[SplitRole::Train, SplitRole::Validation]);
    let audio = load_audio_bank(&ws, &songs, model_cfg.sample_rate, model_cfg.channels)?;
    let data = TrainData {
        manifest: &ws.manifest,
        splits: &ws.splits,
        audio: &audio,
        queries: &ws.queries,
        inference: cfg.inference,
    };
    cfg.write_resolved(&out)?;
    let outcome = run_training(&model_cfg, &cfg.train, &data, init, Some(&out))?;
    Ok(json!({
        "command": "train",
        "last": out.join("last.ckpt"),
        "best": out.join("best.ckpt"),
        "epochs": outcome.last.epoch,
        "best_epoch": outcome.best_epoch,
        "best_score": outcome.best_score,
    }))
}

pub fn separate(cfg: Config, a: SeparateArgs) -> Result<Value> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let model = &ck.model;
    let backend = backend_from_name(&cfg.query.backend, cfg.query.weights.clone())?;
    let pooled = embed_query(&load_audio(&a.query)?, backend.as_ref())?.pooled();
    let mixture = load_audio(&a.mixture)?;
    let input_len = mixture.len();
    let mixture = conform(mixture, model.config().sample_rate, model.config().channels)?;
    let estimate = separate_track(model, &mixture, &pooled, &cfg.inference)?;
    save_audio(&a.out, &estimate)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        cfg.write_resolved(dir)?;
    }
    Ok(json!({
        "command": "separate",
        "out": a.out,
        "input_samples": input_len,
        "output_samples": estimate.len(),
        "sample_rate": estimate.sample_rate(),
    }))
}

pub fn evaluate(mut cfg: Config, a: EvaluateArgs) -> Result<Value> {
    if let Some(s) = &a.split {
        cfg.eval.split = s.parse()?;
    }
    if let Some(p) = &a.policy {
        cfg.eval.policy = p.parse::<QueryMode>()?;
    }
    if let Some(r) = a.roster {
        cfg.eval.roster = Some(r);
    }
    let cfg = cfg.resolve()?;
    let checkpoint = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let model_cfg = checkpoint
        .as_ref()
        .map(|c| c.model.config().clone())
        .unwrap_or_else(|| cfg.model.clone());
    let estimator: Box<dyn StemEstimator + '_> = match (a.estimator.as_str(), &checkpoint) {
        ("model", Some(ck)) => Box::new(ModelEstimator {
            model: &ck.model,
            inference: cfg.inference,
        }),
        ("model", None) => return Err(Error::InvalidArgument("evaluate needs --checkpoint".into())),
        ("oracle", _) => Box::new(OracleEstimator),
        ("zero", _) => Box::new(ZeroEstimator),
        (other, _) => {
            return Err(Error::InvalidArgument(format!(
                "unknown estimator `{other}` (expected model, oracle or zero)"
            )))
        }
    };
    let roster = StemRoster::named(cfg.eval.roster.as_deref().unwrap_or(&cfg.train.roster))?;
    let ws = workspace(&cfg)?;
    let songs = role_songs(&ws.splits, &[cfg.eval.split]);
    let audio = load_audio_bank(&ws, &songs, model_cfg.sample_rate, model_cfg.channels)?;
    let setup = EvalSetup {
        manifest: &ws.manifest,
        audio: &audio,
        queries: &ws.queries,
        songs: songs.clone(),
        query_pool: songs,
        roster,
        mode: cfg.eval.policy,
        seed: cfg.seed,
    };
    let result = run_evaluation(&setup, estimator.as_ref())?;
    let split_name = serde_json::to_value(cfg.eval.split)?;
    let out = a.out.unwrap_or_else(|| {
        cfg.reports_dir().join(format!(
            "{}-{}",
            split_name.as_str().unwrap_or("split"),
            cfg.eval.policy.as_str()
        ))
    });
    write_json(&out.join("fine.json"), &result.fine)?;
    write_json(&out.join("coarse.json"), &result.coarse)?;
    write_json(&out.join("queries.json"), &result.queries)?;
    cfg.write_resolved(&out)?;
    let medians: serde_json::Map<String, Value> = result
        .fine
        .aggregates
        .iter()
        .map(|(k, q)| (k.clone(), json!(q.q2)))
        .collect();
    Ok(json!({
        "command": "evaluate",
        "out": out,
        "entries": result.fine.entries.len(),
        "excluded": result.fine.excluded.len(),
        "medians": medians,
    }))
}

/// Fixed-width quartile table of a metric report.
pub fn render_report(report: &MetricReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "quantile rule: {}", report.quantile_rule);
    let _ = writeln!(s, "{:<28} {:>5} {:>9} {:>9} {:>9}", "stem", "n", "Q1", "Q2", "Q3");
    for (stem, q) in &report.aggregates {
        let _ = writeln!(s, "{stem:<28} {:>5} {:>9.3} {:>9.3} {:>9.3}", q.count, q.q1, q.q2, q.q3);
    }
    for (stem, reason) in &report.omitted {
        let _ = writeln!(s, "{stem:<28} omitted: {reason}");
    }
    let _ = writeln!(s, "excluded entries: {}", report.excluded.len());
    s
}

pub fn report(a: ReportArgs) -> Result<Value> {
    if !a.input.is_file() {
        return Err(Error::NotFound(a.input));
    }
    let text = std::fs::read_to_string(&a.input).map_err(|e| Error::Io {
        path: a.input.clone(),
        source: e,
    })?;
    let report: MetricReport = serde_json::from_str(&text)?;
    let table = render_report(&report);
    match a.out {
        Some(out) => {
            std::fs::write(&out, &table).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            Ok(json!({ "command": "report", "out": out }))
        }
        None => Ok(Value::String(table)),
    }
}
