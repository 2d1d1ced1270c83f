//! End-to-end drivers: synthetic data, episode building, training,
//! evaluation and episode-count sweeps.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{
    majority_sense_predict, ne_finetune_and_predict, ne_train, nearest_neighbor_predict,
};
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{
    build_episode_set, dataset_stats, generate_synthetic_corpus, load_corpus, save_corpus, Corpus,
    DatasetStats, Episode, EpisodeSet, Manifest,
};
use crate::error::{Error, Result};
use crate::eval::{aggregate, macro_f1, EvalReport, WordScore};
use crate::meta::{meta_predict, meta_train, write_log, LogEntry, MetaConfig, Method, TaskData};

fn required<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::Config(format!("`{key}` must be set")))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::file(path, e))
}

/// Writes the fully resolved configuration of `command` into `out_dir` as
/// `config.<command>.toml`.
pub fn write_resolved_config(cfg: &RunConfig, command: &str) -> Result<PathBuf> {
    let path = cfg.out_dir.join(format!("config.{command}.toml"));
    write_file(&path, cfg.resolved()?.to_toml()?.as_bytes())?;
    Ok(path)
}

/// Generates a synthetic corpus into the `corpus` and `embeddings` paths.
pub fn cmd_synth(cfg: &RunConfig) -> Result<Corpus> {
    let corpus = generate_synthetic_corpus(&cfg.synthetic())?;
    let ann = required(&cfg.corpus, "corpus")?;
    let emb = required(&cfg.embeddings, "embeddings")?;
    for p in [ann, emb] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        }
    }
    save_corpus(&corpus, ann, emb)?;
    Ok(corpus)
}

pub fn load_run_corpus(cfg: &RunConfig) -> Result<Corpus> {
    load_corpus(
        required(&cfg.corpus, "corpus")?,
        required(&cfg.embeddings, "embeddings")?,
    )
}

/// Builds the episode manifest and writes it together with its statistics
/// table.
pub fn cmd_build_data(cfg: &RunConfig) -> Result<(Manifest, DatasetStats)> {
    let corpus = load_run_corpus(cfg)?;
    let (manifest, set) = build_episode_set(&corpus, &cfg.build())?;
    let out = required(&cfg.manifest, "manifest")?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    manifest.save(out)?;
    let all: Vec<Episode> = set.all().cloned().collect();
    let stats = dataset_stats(cfg.support_size, &all);
    write_file(
        &out.with_extension("stats.txt"),
        stats.to_table().as_bytes(),
    )?;
    Ok((manifest, stats))
}

/// Episodes from the configured manifest, or built on the fly when none is
/// set.
pub fn load_episodes(cfg: &RunConfig, corpus: &Corpus) -> Result<EpisodeSet> {
    match &cfg.manifest {
        Some(p) if p.exists() => Manifest::load(p)?.resolve(corpus),
        Some(p) => Err(Error::file(
            p,
            std::io::Error::new(std::io::ErrorKind::NotFound, "manifest not found"),
        )),
        None => Ok(build_episode_set(corpus, &cfg.build())?.1),
    }
}

pub fn tasks_of(corpus: &Corpus, episodes: &[Episode]) -> Vec<TaskData> {
    episodes
        .iter()
        .map(|e| TaskData::from_episode(corpus, e))
        .collect()
}

/// Trains `method` for one seed on `train`, early stopping on `val`.
pub fn train_one(
    mc: &MetaConfig,
    corpus: &Corpus,
    train: &[Episode],
    val: &[Episode],
    seed: u64,
) -> Result<(Checkpoint, Vec<LogEntry>)> {
    match mc.method {
        Method::Meta(_) => {
            let out = meta_train(
                mc,
                corpus.embedding_dim(),
                &tasks_of(corpus, train),
                &tasks_of(corpus, val),
                seed,
            )?;
            Ok((
                Checkpoint {
                    method: mc.method,
                    theta: out.theta,
                    global: None,
                },
                out.log,
            ))
        }
        Method::NeBaseline => {
            let out = ne_train(mc, corpus, train, val, seed)?;
            Ok((
                Checkpoint {
                    method: mc.method,
                    theta: out.model.theta,
                    global: Some(out.model.global),
                },
                out.log,
            ))
        }
        other => Err(Error::Config(format!("{other} has nothing to train"))),
    }
}

pub fn checkpoint_path(cfg: &RunConfig, seed: u64) -> PathBuf {
    cfg.out_dir.join(format!("checkpoint-seed{seed}.bin"))
}

/// Trains one model per seed, writing checkpoints and JSONL logs into
/// `out_dir`.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let mc = cfg.meta_config()?;
    if !mc.method.is_trainable() {
        return Err(Error::Config(format!("{} has nothing to train", mc.method)));
    }
    let corpus = load_run_corpus(cfg)?;
    let set = load_episodes(cfg, &corpus)?;
    write_resolved_config(cfg, "train")?;
    let mut written = Vec::new();
    for &seed in &mc.seeds {
        let (ck, log) = train_one(&mc, &corpus, &set.train, &set.val, seed)?;
        let path = checkpoint_path(cfg, seed);
        ck.save(&path)?;
        let mut buf = Vec::new();
        write_log(&log, &mut buf)?;
        write_file(
            &cfg.out_dir.join(format!("train-log-seed{seed}.jsonl")),
            &buf,
        )?;
        written.push(path);
    }
    Ok(written)
}

/// Query predictions for every episode.
pub fn predict_episodes(
    mc: &MetaConfig,
    corpus: &Corpus,
    episodes: &[Episode],
    checkpoint: Option<&Checkpoint>,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let tasks = tasks_of(corpus, episodes);
    match mc.method {
        Method::MajoritySense => episodes.iter().map(majority_sense_predict).collect(),
        Method::NearestNeighbor => tasks.iter().map(nearest_neighbor_predict).collect(),
        Method::NeBaseline => {
            let model = checkpoint
                .and_then(Checkpoint::ne_model)
                .ok_or_else(|| Error::Config("ne-baseline needs a trained checkpoint".into()))?;
            episodes
                .iter()
                .zip(&tasks)
                .map(|(ep, t)| ne_finetune_and_predict(&model, ep, t, mc, seed))
                .collect()
        }
        m @ Method::Meta(_) => {
            let theta = checkpoint.map(|c| &c.theta);
            meta_predict(m, theta, &tasks, mc, seed)
        }
        m @ Method::EpisodicFineTune(_) => meta_predict(m, None, &tasks, mc, seed),
    }
}

/// Word scores of one seed.
pub fn evaluate_seed(
    mc: &MetaConfig,
    corpus: &Corpus,
    episodes: &[Episode],
    checkpoint: Option<&Checkpoint>,
    seed: u64,
) -> Result<Vec<WordScore>> {
    let preds = predict_episodes(mc, corpus, episodes, checkpoint, seed)?;
    episodes
        .iter()
        .zip(&preds)
        .map(|(ep, pred)| {
            let classes: Vec<usize> = (0..ep.n_classes()).collect();
            Ok(WordScore {
                word: ep.words.join("+"),
                n_senses: ep.query_sense_count(),
                macro_f1: macro_f1(&ep.query_labels(), pred, &classes)?,
                seed,
            })
        })
        .collect()
}

fn load_checkpoint(cfg: &RunConfig, mc: &MetaConfig, seed: u64) -> Result<Option<Checkpoint>> {
    if !mc.method.needs_checkpoint() {
        return Ok(None);
    }
    let path = cfg
        .checkpoint
        .clone()
        .unwrap_or_else(|| checkpoint_path(cfg, seed));
    let ck = Checkpoint::load(&path)?;
    if ck.method != mc.method {
        return Err(Error::Config(format!(
            "{} holds a {} model, not {}",
            path.display(),
            ck.method,
            mc.method
        )));
    }
    Ok(Some(ck))
}

/// Evaluates on the meta-test episodes for every seed and writes
/// `report.json` and `report.csv` into `out_dir`.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    let mc = cfg.meta_config()?;
    let corpus = load_run_corpus(cfg)?;
    let set = load_episodes(cfg, &corpus)?;
    let mut scores = Vec::new();
    for &seed in &mc.seeds {
        let ck = load_checkpoint(cfg, &mc, seed)?;
        scores.extend(evaluate_seed(&mc, &corpus, &set.test, ck.as_ref(), seed)?);
    }
    let report = aggregate(&mc.method.to_string(), &scores);
    write_resolved_config(cfg, "eval")?;
    write_file(
        &cfg.out_dir.join("report.json"),
        report.to_json()?.as_bytes(),
    )?;
    write_file(&cfg.out_dir.join("report.csv"), report.to_csv().as_bytes())?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub episodes: usize,
    pub mean: f64,
    pub std: f64,
}

/// Score as a function of the number of meta-training episodes. Each count
/// trains from scratch on the first `count` episodes of the pool with the
/// same seeds; a count of 0 evaluates the untrained initialization.
pub fn episode_count_sweep(
    mc: &MetaConfig,
    corpus: &Corpus,
    set: &EpisodeSet,
    counts: &[usize],
) -> Result<Vec<SweepRow>> {
    if counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "sweep counts must be strictly ascending".into(),
        ));
    }
    if let Some(&max) = counts.last().filter(|&&c| c > set.train.len()) {
        return Err(Error::Config(format!(
            "sweep count {max} exceeds the {} episodes in the pool",
            set.train.len()
        )));
    }
    if !mc.method.is_trainable() {
        return Err(Error::Config(format!("cannot sweep {}", mc.method)));
    }
    counts
        .iter()
        .map(|&n| {
            let mut scores = Vec::new();
            for &seed in &mc.seeds {
                let (ck, _) = train_one(mc, corpus, &set.train[..n], &set.val, seed)?;
                scores.extend(evaluate_seed(mc, corpus, &set.test, Some(&ck), seed)?);
            }
            let r = aggregate(&mc.method.to_string(), &scores);
            Ok(SweepRow {
                episodes: n,
                mean: r.mean,
                std: r.std,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("episodes,mean,std\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.episodes, r.mean, r.std);
    }
    out
}

/// Runs the sweep over `sweep_counts` and writes `sweep.json` and
/// `sweep.csv` into `out_dir`.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    let mc = cfg.meta_config()?;
    let corpus = load_run_corpus(cfg)?;
    let set = load_episodes(cfg, &corpus)?;
    let rows = episode_count_sweep(&mc, &corpus, &set, &cfg.sweep_counts)?;
    write_resolved_config(cfg, "sweep")?;
    write_file(
        &cfg.out_dir.join("sweep.json"),
        (serde_json::to_string_pretty(&rows)? + "\n").as_bytes(),
    )?;
    write_file(&cfg.out_dir.join("sweep.csv"), sweep_csv(&rows).as_bytes())?;
    Ok(rows)
}
