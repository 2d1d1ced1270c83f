//! Flat run configuration shared by the command-line tool and the bindings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{BuildConfig, SyntheticConfig, DEFAULT_SPLIT_RATIOS};
use crate::error::{Error, Result};
use crate::meta::{MetaConfig, MetaMethod, Method};
use crate::nn::Activation;

/// Every knob of a run. Unset hyperparameters fall back to the preset of the
/// chosen method; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub method: Method,

    pub corpus: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,

    pub support_size: usize,
    pub words_per_episode: Option<usize>,
    pub n_train_episodes: usize,
    pub data_seed: u64,

    pub learner_lr: Option<f64>,
    pub output_lr: Option<f64>,
    pub meta_lr: Option<f64>,
    pub inner_steps: Option<usize>,
    pub test_inner_steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub create_graph: Option<bool>,
    pub adapt_top_only: Option<bool>,
    pub hidden_dim: Option<usize>,
    pub activation: Option<Activation>,
    pub lr_decay: Option<bool>,
    pub ne_batch_size: Option<usize>,
    pub ne_mask_test: Option<bool>,
    pub seeds: Option<Vec<u64>>,

    pub sweep_counts: Vec<usize>,

    pub synth_words: usize,
    pub synth_sense_counts: Vec<usize>,
    pub synth_sentences_per_sense: usize,
    pub synth_dim: usize,
    pub synth_separation: f64,
    pub synth_sigma: f64,
    pub synth_informative_dim: Option<usize>,
    pub synth_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SyntheticConfig::default();
        Self {
            method: Method::Meta(MetaMethod::ProtoNet),
            corpus: None,
            embeddings: None,
            manifest: None,
            checkpoint: None,
            out_dir: PathBuf::from("runs"),
            support_size: 8,
            words_per_episode: None,
            n_train_episodes: 10_000,
            data_seed: 0,
            learner_lr: None,
            output_lr: None,
            meta_lr: None,
            inner_steps: None,
            test_inner_steps: None,
            batch_size: None,
            max_epochs: None,
            patience: None,
            create_graph: None,
            adapt_top_only: None,
            hidden_dim: None,
            activation: None,
            lr_decay: None,
            ne_batch_size: None,
            ne_mask_test: None,
            seeds: None,
            sweep_counts: vec![0, 500, 1000, 2000, 5000, 10_000],
            synth_words: synth.n_words,
            synth_sense_counts: synth.sense_counts,
            synth_sentences_per_sense: synth.sentences_per_sense,
            synth_dim: synth.embedding_dim,
            synth_separation: synth.cluster_separation,
            synth_sigma: synth.noise_sigma,
            synth_informative_dim: synth.informative_dim,
            synth_seed: synth.seed,
        }
    }
}

fn toml_error(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string().trim_end().to_string())
}

impl RunConfig {
    /// Parses TOML text, then applies `key=value` overrides in order. Override
    /// values are TOML literals; anything that does not parse as one is taken
    /// as a bare string.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(toml_error)?;
        for kv in overrides {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
            let key = key.trim();
            let parsed = format!("v = {}", value.trim())
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(value.trim().to_string()));
            table.insert(key.to_string(), parsed);
        }
        let cfg: Self = table.try_into().map_err(toml_error)?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::file(p, e))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    /// Method hyperparameters: the preset for `method` with every set field
    /// applied on top, validated.
    pub fn meta_config(&self) -> Result<MetaConfig> {
        let mut c = MetaConfig::preset(self.method, self.support_size);
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = self.$f.clone() { c.$f = v; } )* };
        }
        take!(
            words_per_episode,
            learner_lr,
            output_lr,
            meta_lr,
            inner_steps,
            batch_size,
            max_epochs,
            patience,
            create_graph,
            adapt_top_only,
            hidden_dim,
            activation,
            lr_decay,
            ne_batch_size,
            ne_mask_test,
            seeds
        );
        c.test_inner_steps = self.test_inner_steps;
        c.validate()?;
        Ok(c)
    }

    /// The same configuration with every defaulted hyperparameter spelled
    /// out.
    pub fn resolved(&self) -> Result<Self> {
        let m = self.meta_config()?;
        Ok(Self {
            words_per_episode: Some(m.words_per_episode),
            learner_lr: Some(m.learner_lr),
            output_lr: Some(m.output_lr),
            meta_lr: Some(m.meta_lr),
            inner_steps: Some(m.inner_steps),
            test_inner_steps: m.test_inner_steps,
            batch_size: Some(m.batch_size),
            max_epochs: Some(m.max_epochs),
            patience: Some(m.patience),
            create_graph: Some(m.create_graph),
            adapt_top_only: Some(m.adapt_top_only),
            hidden_dim: Some(m.hidden_dim),
            activation: Some(m.activation),
            lr_decay: Some(m.lr_decay),
            ne_batch_size: Some(m.ne_batch_size),
            ne_mask_test: Some(m.ne_mask_test),
            seeds: Some(m.seeds),
            ..self.clone()
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(toml_error)
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            n_words: self.synth_words,
            sense_counts: self.synth_sense_counts.clone(),
            sentences_per_sense: self.synth_sentences_per_sense,
            embedding_dim: self.synth_dim,
            cluster_separation: self.synth_separation,
            noise_sigma: self.synth_sigma,
            informative_dim: self.synth_informative_dim,
            seed: self.synth_seed,
            ..SyntheticConfig::default()
        }
    }

    pub fn build(&self) -> BuildConfig {
        BuildConfig {
            support_size: self.support_size,
            words_per_episode: self
                .words_per_episode
                .unwrap_or(BuildConfig::new(self.support_size).words_per_episode),
            n_train_episodes: self.n_train_episodes,
            split_ratios: DEFAULT_SPLIT_RATIOS,
            seed: self.data_seed,
        }
    }
}
