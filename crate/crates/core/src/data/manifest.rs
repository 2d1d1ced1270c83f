use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::corpus::{Corpus, Instance};
use super::episode::{
    build_eval_episodes, Episode, Item, RejectionCounts, Split, TrainEpisodeSampler,
};
use super::split::{split_words, WordSplit, DEFAULT_SPLIT_RATIOS};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

/// Settings that fully determine an episode set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub support_size: usize,
    pub words_per_episode: usize,
    pub n_train_episodes: usize,
    pub split_ratios: [f64; 3],
    pub seed: u64,
}

impl BuildConfig {
    /// Two words per episode for `|S| = 4`, four otherwise.
    pub fn new(support_size: usize) -> Self {
        Self {
            support_size,
            words_per_episode: if support_size <= 4 { 2 } else { 4 },
            n_train_episodes: 10_000,
            split_ratios: DEFAULT_SPLIT_RATIOS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestItem {
    pub sentence_id: String,
    pub index: usize,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEpisode {
    pub id: usize,
    pub split: Split,
    pub words: Vec<String>,
    pub label_map: BTreeMap<String, usize>,
    pub support: Vec<ManifestItem>,
    pub query: Vec<ManifestItem>,
}

/// Serialized episode set: enough to replay an experiment exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub build: BuildConfig,
    pub words: WordSplit,
    pub rejections: BTreeMap<Split, RejectionCounts>,
    pub episodes: Vec<ManifestEpisode>,
}

/// Episodes resolved against a corpus, grouped by split.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeSet {
    pub train: Vec<Episode>,
    pub val: Vec<Episode>,
    pub test: Vec<Episode>,
}

impl EpisodeSet {
    pub fn all(&self) -> impl Iterator<Item = &Episode> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

/// Splits the words, samples the meta-training pool and builds one evaluation
/// episode per validation and test word.
pub fn build_episode_set(corpus: &Corpus, cfg: &BuildConfig) -> Result<(Manifest, EpisodeSet)> {
    let words = split_words(&corpus.word_ids(), cfg.split_ratios, cfg.seed)?;
    let mut sampler = TrainEpisodeSampler::new(
        corpus,
        &words.train,
        cfg.support_size,
        cfg.words_per_episode,
        cfg.seed.wrapping_add(1),
    )?;
    let train = (0..cfg.n_train_episodes)
        .map(|_| sampler.sample())
        .collect::<Result<Vec<_>>>()?;
    let (val, val_rej) = build_eval_episodes(
        corpus,
        &words.val,
        cfg.support_size,
        Split::MetaVal,
        cfg.seed.wrapping_add(2),
        train.len(),
    )?;
    let (test, test_rej) = build_eval_episodes(
        corpus,
        &words.test,
        cfg.support_size,
        Split::MetaTest,
        cfg.seed.wrapping_add(3),
        train.len() + val.len(),
    )?;
    let set = EpisodeSet { train, val, test };
    let mut rejections = BTreeMap::new();
    rejections.insert(Split::MetaVal, val_rej);
    rejections.insert(Split::MetaTest, test_rej);
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        build: cfg.clone(),
        words,
        rejections,
        episodes: set.all().map(|e| to_manifest(corpus, e)).collect(),
    };
    Ok((manifest, set))
}

fn to_manifest(corpus: &Corpus, ep: &Episode) -> ManifestEpisode {
    let item = |it: &Item| ManifestItem {
        sentence_id: corpus.sentence(it.instance.sentence).sentence_id.clone(),
        index: it.instance.token_index,
        label: it.label,
    };
    ManifestEpisode {
        id: ep.id,
        split: ep.split,
        words: ep.words.clone(),
        label_map: ep.label_map(),
        support: ep.support.iter().map(item).collect(),
        query: ep.query.iter().map(item).collect(),
    }
}

impl Manifest {
    /// Resolves sentence ids against `corpus` and re-checks every episode.
    pub fn resolve(&self, corpus: &Corpus) -> Result<EpisodeSet> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::format(
                "manifest",
                "version",
                format!("unsupported version {}", self.version),
            ));
        }
        let mut set = EpisodeSet::default();
        for me in &self.episodes {
            let n = me.label_map.len();
            let mut senses = vec![None; n];
            for (sense, &label) in &me.label_map {
                if label >= n || senses[label].is_some() {
                    return Err(Error::format(
                        "manifest",
                        format!("episode {}", me.id),
                        "label_map is not a bijection onto 0..C-1",
                    ));
                }
                senses[label] = Some(sense.clone());
            }
            let items = |list: &[ManifestItem]| -> Result<Vec<Item>> {
                list.iter()
                    .map(|mi| {
                        let sentence = corpus.sentence_index(&mi.sentence_id).ok_or_else(|| {
                            Error::format(
                                "manifest",
                                format!("episode {}", me.id),
                                format!("unknown sentence id {:?}", mi.sentence_id),
                            )
                        })?;
                        Ok(Item {
                            instance: Instance {
                                sentence,
                                token_index: mi.index,
                            },
                            label: mi.label,
                        })
                    })
                    .collect()
            };
            let ep = Episode {
                id: me.id,
                split: me.split,
                words: me.words.clone(),
                senses: senses.into_iter().map(|s| s.expect("checked")).collect(),
                support: items(&me.support)?,
                query: items(&me.query)?,
            };
            ep.validate(corpus)?;
            match ep.split {
                Split::MetaTrain => set.train.push(ep),
                Split::MetaVal => set.val.push(ep),
                Split::MetaTest => set.test.push(ep),
            }
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = BufWriter::new(f);
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::file(path, e))?;
        serde_json::from_reader(BufReader::new(f)).map_err(|e| {
            Error::format(
                path.display().to_string(),
                format!("line {} column {}", e.line(), e.column()),
                e.to_string(),
            )
        })
    }
}
