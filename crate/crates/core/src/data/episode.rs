//! Episode construction.
//!
//! Meta-training episodes mix `r` words: each contributes
//! `min(floor(S / r), senses(word))` senses and the `S` support slots are dealt
//! round-robin over the chosen (word, sense) pairs, so class sizes differ by at
//! most one. The query set mirrors the support allocation with fresh
//! instances. Labels are a fresh random bijection per episode.
//!
//! Evaluation episodes hold a single word: `S` support sentences drawn at
//! random, and every remaining occurrence whose sense appears in the support
//! as the query. Episodes whose query covers fewer than two senses are
//! rejected.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{Corpus, Instance, WordEntry};
use crate::error::{Error, Result};

pub const MAX_SAMPLING_RETRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    MetaTrain,
    MetaVal,
    MetaTest,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::MetaTrain => "meta-train",
            Split::MetaVal => "meta-val",
            Split::MetaTest => "meta-test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Item {
    pub instance: Instance,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: usize,
    pub split: Split,
    pub words: Vec<String>,
    /// `senses[label]` is the sense id carrying that local label.
    pub senses: Vec<String>,
    pub support: Vec<Item>,
    pub query: Vec<Item>,
}

impl Episode {
    pub fn n_classes(&self) -> usize {
        self.senses.len()
    }

    pub fn label_of(&self, sense: &str) -> Option<usize> {
        self.senses.iter().position(|s| s == sense)
    }

    pub fn label_map(&self) -> BTreeMap<String, usize> {
        self.senses
            .iter()
            .enumerate()
            .map(|(l, s)| (s.clone(), l))
            .collect()
    }

    pub fn support_labels(&self) -> Vec<usize> {
        self.support.iter().map(|i| i.label).collect()
    }

    pub fn query_labels(&self) -> Vec<usize> {
        self.query.iter().map(|i| i.label).collect()
    }

    pub fn support_instances(&self) -> impl Iterator<Item = Instance> + '_ {
        self.support.iter().map(|i| i.instance)
    }

    pub fn query_instances(&self) -> impl Iterator<Item = Instance> + '_ {
        self.query.iter().map(|i| i.instance)
    }

    pub fn support_sense_count(&self) -> usize {
        self.support
            .iter()
            .map(|i| i.label)
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub fn query_sense_count(&self) -> usize {
        self.query
            .iter()
            .map(|i| i.label)
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Sentence indices used anywhere in the episode.
    pub fn sentences(&self) -> BTreeSet<usize> {
        self.support
            .iter()
            .chain(&self.query)
            .map(|i| i.instance.sentence)
            .collect()
    }

    /// Checks the structural invariants against the corpus: the label map is
    /// a bijection, every item's label matches its annotated sense, and no
    /// instance is both support and query.
    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        let fail = |msg: String| Err(Error::Sampling(format!("episode {}: {msg}", self.id)));
        let distinct: HashSet<&String> = self.senses.iter().collect();
        if distinct.len() != self.senses.len() {
            return fail("label map is not injective".into());
        }
        for item in self.support.iter().chain(&self.query) {
            let Some(sense) = corpus.sense_at(item.instance) else {
                return fail(format!("{:?} is not an annotated target", item.instance));
            };
            if self.senses.get(item.label).map(String::as_str) != Some(sense) {
                return fail(format!(
                    "label {} does not match sense {sense:?}",
                    item.label
                ));
            }
        }
        let support: HashSet<Instance> = self.support_instances().collect();
        if self.query_instances().any(|q| support.contains(&q)) {
            return fail("support and query share an instance".into());
        }
        Ok(())
    }
}

fn usable_senses(entry: &WordEntry, min_instances: usize) -> Vec<&String> {
    entry
        .instances
        .iter()
        .filter(|(_, v)| v.len() >= min_instances)
        .map(|(s, _)| s)
        .collect()
}

/// Streams meta-training episodes from a fixed word set.
pub struct TrainEpisodeSampler<'a> {
    corpus: &'a Corpus,
    words: Vec<&'a WordEntry>,
    support_size: usize,
    words_per_episode: usize,
    rng: ChaCha8Rng,
    next_id: usize,
}

impl<'a> TrainEpisodeSampler<'a> {
    pub fn new(
        corpus: &'a Corpus,
        words: &[String],
        support_size: usize,
        words_per_episode: usize,
        seed: u64,
    ) -> Result<Self> {
        if words_per_episode == 0 || words_per_episode > support_size {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= r <= S, got r={words_per_episode}, S={support_size}"
            )));
        }
        let per_word = support_size / words_per_episode;
        let mut eligible = Vec::new();
        for w in words {
            let entry = corpus
                .word(w)
                .ok_or_else(|| Error::InvalidArgument(format!("word {w:?} not in corpus")))?;
            if usable_senses(entry, 2).len() >= per_word.min(entry.n_senses()) {
                eligible.push(entry);
            }
        }
        if eligible.len() < words_per_episode {
            return Err(Error::Sampling(format!(
                "only {} eligible meta-train words, need {words_per_episode}",
                eligible.len()
            )));
        }
        Ok(Self {
            corpus,
            words: eligible,
            support_size,
            words_per_episode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_id: 0,
        })
    }

    pub fn with_first_id(mut self, id: usize) -> Self {
        self.next_id = id;
        self
    }

    pub fn eligible_words(&self) -> usize {
        self.words.len()
    }

    pub fn sample(&mut self) -> Result<Episode> {
        let s = self.support_size;
        let r = self.words_per_episode;
        for _ in 0..MAX_SAMPLING_RETRIES {
            let chosen: Vec<&WordEntry> = index::sample(&mut self.rng, self.words.len(), r)
                .into_iter()
                .map(|i| self.words[i])
                .collect();
            let per_word: Vec<usize> = chosen.iter().map(|w| (s / r).min(w.n_senses())).collect();
            let n_pairs: usize = per_word.iter().sum();
            let max_slots = s.div_ceil(n_pairs);

            let mut pairs: Vec<(&WordEntry, &String)> = Vec::with_capacity(n_pairs);
            let mut ok = true;
            for (w, &k) in chosen.iter().zip(&per_word) {
                let usable = usable_senses(w, 2 * max_slots);
                if usable.len() < k {
                    ok = false;
                    break;
                }
                for &sense in usable.choose_multiple(&mut self.rng, k) {
                    pairs.push((w, sense));
                }
            }
            if !ok {
                continue;
            }

            pairs.shuffle(&mut self.rng);
            let mut labels: Vec<usize> = (0..n_pairs).collect();
            labels.shuffle(&mut self.rng);

            let mut senses = vec![String::new(); n_pairs];
            let mut support = Vec::with_capacity(s);
            let mut query = Vec::with_capacity(s);
            for (i, (w, sense)) in pairs.iter().enumerate() {
                let count = s / n_pairs + usize::from(i < s % n_pairs);
                let label = labels[i];
                senses[label] = (*sense).clone();
                let pool = &w.instances[*sense];
                let picks = index::sample(&mut self.rng, pool.len(), 2 * count);
                for (j, p) in picks.into_iter().enumerate() {
                    let item = Item {
                        instance: pool[p],
                        label,
                    };
                    if j < count {
                        support.push(item);
                    } else {
                        query.push(item);
                    }
                }
            }
            support.shuffle(&mut self.rng);
            query.shuffle(&mut self.rng);

            let mut words: Vec<String> = chosen.iter().map(|w| w.word.clone()).collect();
            words.sort();
            let id = self.next_id;
            self.next_id += 1;
            return Ok(Episode {
                id,
                split: Split::MetaTrain,
                words,
                senses,
                support,
                query,
            });
        }
        Err(Error::Sampling(format!(
            "no feasible episode after {MAX_SAMPLING_RETRIES} attempts (S={s}, r={r})"
        )))
    }

    pub fn corpus(&self) -> &Corpus {
        self.corpus
    }
}

/// One meta-training episode from a dedicated seed.
pub fn sample_train_episode(
    corpus: &Corpus,
    words: &[String],
    support_size: usize,
    words_per_episode: usize,
    seed: u64,
) -> Result<Episode> {
    TrainEpisodeSampler::new(corpus, words, support_size, words_per_episode, seed)?.sample()
}

/// Why a word produced no evaluation episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    /// More senses than support slots.
    TooManySenses { senses: usize },
    /// Not enough sentences for a support set plus a query.
    TooFewSentences { sentences: usize },
    /// The query covers fewer than two senses.
    QueryUnderTwoSenses,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionCounts {
    pub too_many_senses: usize,
    pub too_few_sentences: usize,
    pub query_under_two_senses: usize,
}

impl RejectionCounts {
    pub fn record(&mut self, r: Rejection) {
        match r {
            Rejection::TooManySenses { .. } => self.too_many_senses += 1,
            Rejection::TooFewSentences { .. } => self.too_few_sentences += 1,
            Rejection::QueryUnderTwoSenses => self.query_under_two_senses += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.too_many_senses + self.too_few_sentences + self.query_under_two_senses
    }

    pub fn merge(&mut self, other: &RejectionCounts) {
        self.too_many_senses += other.too_many_senses;
        self.too_few_sentences += other.too_few_sentences;
        self.query_under_two_senses += other.query_under_two_senses;
    }
}

/// Occurrences of `word` in sentence `sentence`, with their senses.
fn occurrences<'c>(
    corpus: &'c Corpus,
    word: &'c str,
    sentence: usize,
) -> impl Iterator<Item = (Instance, &'c str)> + 'c {
    corpus
        .sentence(sentence)
        .targets
        .iter()
        .filter(move |t| t.word == word)
        .map(move |t| {
            (
                Instance {
                    sentence,
                    token_index: t.index,
                },
                t.sense.as_str(),
            )
        })
}

pub fn build_eval_episode_with(
    corpus: &Corpus,
    word: &WordEntry,
    support_size: usize,
    rng: &mut impl Rng,
) -> std::result::Result<Episode, Rejection> {
    if word.n_senses() > support_size {
        return Err(Rejection::TooManySenses {
            senses: word.n_senses(),
        });
    }
    let n = word.sentences.len();
    if n < support_size + 1 {
        return Err(Rejection::TooFewSentences { sentences: n });
    }
    let picked: BTreeSet<usize> = index::sample(rng, n, support_size).into_iter().collect();

    let mut support_raw = Vec::new();
    let mut query_raw = Vec::new();
    for (k, &si) in word.sentences.iter().enumerate() {
        let dest = if picked.contains(&k) {
            &mut support_raw
        } else {
            &mut query_raw
        };
        dest.extend(occurrences(corpus, &word.word, si));
    }
    let support_senses: BTreeSet<&str> = support_raw.iter().map(|(_, s)| *s).collect();
    query_raw.retain(|(_, s)| support_senses.contains(s));
    let query_senses: BTreeSet<&str> = query_raw.iter().map(|(_, s)| *s).collect();
    if query_senses.len() < 2 {
        return Err(Rejection::QueryUnderTwoSenses);
    }

    let mut senses: Vec<String> = support_senses.iter().map(|s| s.to_string()).collect();
    senses.shuffle(rng);
    let label = |s: &str| {
        senses
            .iter()
            .position(|x| x == s)
            .expect("sense in support")
    };
    let support = support_raw
        .iter()
        .map(|&(instance, s)| Item {
            instance,
            label: label(s),
        })
        .collect();
    let query = query_raw
        .iter()
        .map(|&(instance, s)| Item {
            instance,
            label: label(s),
        })
        .collect();
    Ok(Episode {
        id: 0,
        split: Split::MetaTest,
        words: vec![word.word.clone()],
        senses,
        support,
        query,
    })
}

pub fn build_eval_episode(
    corpus: &Corpus,
    word: &WordEntry,
    support_size: usize,
    seed: u64,
) -> std::result::Result<Episode, Rejection> {
    build_eval_episode_with(
        corpus,
        word,
        support_size,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
}

/// One evaluation episode per word, words taken in sorted order.
pub fn build_eval_episodes(
    corpus: &Corpus,
    words: &[String],
    support_size: usize,
    split: Split,
    seed: u64,
    first_id: usize,
) -> Result<(Vec<Episode>, RejectionCounts)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sorted: Vec<&String> = words.iter().collect();
    sorted.sort();
    let mut episodes = Vec::new();
    let mut rejected = RejectionCounts::default();
    for w in sorted {
        let entry = corpus
            .word(w)
            .ok_or_else(|| Error::InvalidArgument(format!("word {w:?} not in corpus")))?;
        match build_eval_episode_with(corpus, entry, support_size, &mut rng) {
            Ok(mut ep) => {
                ep.id = first_id + episodes.len();
                ep.split = split;
                episodes.push(ep);
            }
            Err(r) => rejected.record(r),
        }
    }
    Ok((episodes, rejected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::corpus::{AnnotatedSentence, Target};
    use crate::tensor::Matrix;

    /// Builds a one-token-per-sentence corpus from (word, sense) labels.
    fn corpus_of(sentences: &[(&str, &str)]) -> Corpus {
        let rows = sentences
            .iter()
            .enumerate()
            .map(|(i, (w, s))| AnnotatedSentence {
                sentence_id: format!("s{i}"),
                n_tokens: 1,
                targets: vec![Target {
                    index: 0,
                    word: w.to_string(),
                    sense: s.to_string(),
                }],
                embeddings: Matrix::filled(1, 2, i as f64),
            })
            .collect();
        Corpus::new(rows, 2).unwrap()
    }

    fn many(word: &str, senses: &[&str], per_sense: usize) -> Vec<(String, String)> {
        senses
            .iter()
            .flat_map(|s| (0..per_sense).map(move |_| (word.to_string(), format!("{word}.{s}"))))
            .collect()
    }

    fn build(pairs: Vec<(String, String)>) -> Corpus {
        let refs: Vec<(&str, &str)> = pairs
            .iter()
            .map(|(a, b)| (a.as_str(), b.as_str()))
            .collect();
        corpus_of(&refs)
    }

    #[test]
    fn s8_r4_gives_four_words_two_senses_one_each() {
        let mut pairs = Vec::new();
        for w in 0..6 {
            pairs.extend(many(&format!("w{w}"), &["a", "b", "c"], 4));
        }
        let corpus = build(pairs);
        let words = corpus.word_ids();
        let ep = sample_train_episode(&corpus, &words, 8, 4, 3).unwrap();
        assert_eq!(ep.words.len(), 4);
        assert_eq!(ep.n_classes(), 8);
        assert_eq!(ep.support.len(), 8);
        assert_eq!(ep.query.len(), 8);
        let mut counts = [0; 8];
        for it in &ep.support {
            counts[it.label] += 1;
        }
        assert!(counts.iter().all(|&c| c == 1));
        for w in &ep.words {
            let n = ep
                .senses
                .iter()
                .filter(|s| s.starts_with(&format!("{w}.")))
                .count();
            assert_eq!(n, 2);
        }
        ep.validate(&corpus).unwrap();
    }

    #[test]
    fn single_sense_word_contributes_one_sense() {
        let mut pairs = many("solo", &["x"], 10);
        pairs.extend(many("pair", &["a", "b"], 10));
        let corpus = build(pairs);
        let ep = sample_train_episode(&corpus, &corpus.word_ids(), 4, 2, 0).unwrap();
        let solo = ep.senses.iter().filter(|s| s.starts_with("solo.")).count();
        assert_eq!(solo, 1);
        assert_eq!(ep.n_classes(), 3);
        assert_eq!(ep.support.len(), 4);
    }

    #[test]
    fn same_sense_can_change_label_across_episodes() {
        let corpus = build(many("w", &["a", "b"], 6));
        let mut sampler = TrainEpisodeSampler::new(&corpus, &corpus.word_ids(), 2, 1, 11).unwrap();
        let labels: BTreeSet<usize> = (0..50)
            .map(|_| sampler.sample().unwrap().label_of("w.a").unwrap())
            .collect();
        assert_eq!(labels.len(), 2);
    }

    #[test]
    fn too_few_words_is_an_error() {
        let corpus = build(many("w", &["a", "b"], 6));
        assert!(TrainEpisodeSampler::new(&corpus, &corpus.word_ids(), 8, 4, 0).is_err());
    }

    #[test]
    fn starved_pairs_fail_after_retries() {
        // Only one instance per sense: no pair can fill a support and a query slot.
        let corpus = build(vec![("w".into(), "w.a".into()), ("w".into(), "w.b".into())]);
        assert!(sample_train_episode(&corpus, &corpus.word_ids(), 2, 1, 0).is_err());
    }

    #[test]
    fn eval_episode_excludes_query_senses_missing_from_support() {
        // 4 sentences of sense a, 1 of sense c; S = 4 means c can never be in
        // support and a query: it is either in support or excluded.
        let mut pairs = many("w", &["a"], 4);
        pairs.extend(many("w", &["b"], 3));
        pairs.push(("w".into(), "w.c".into()));
        let corpus = build(pairs);
        let entry = corpus.word("w").unwrap();
        for seed in 0..40 {
            if let Ok(ep) = build_eval_episode(&corpus, entry, 4, seed) {
                assert_eq!(ep.support.len(), 4);
                let support: BTreeSet<usize> = ep.support_labels().into_iter().collect();
                assert!(ep.query_labels().iter().all(|l| support.contains(l)));
                assert!(ep.query_sense_count() >= 2);
                ep.validate(&corpus).unwrap();
            }
        }
    }

    #[test]
    fn eval_single_sense_query_rejected() {
        let mut pairs = many("w", &["a"], 4);
        pairs.extend(many("w", &["b"], 1));
        let corpus = build(pairs);
        let entry = corpus.word("w").unwrap();
        // Five sentences, S = 4: the query is one sentence, hence one sense.
        for seed in 0..10 {
            assert_eq!(
                build_eval_episode(&corpus, entry, 4, seed).unwrap_err(),
                Rejection::QueryUnderTwoSenses
            );
        }
    }

    #[test]
    fn eval_preconditions_reject() {
        let corpus = build(many("w", &["a", "b", "c"], 1));
        let entry = corpus.word("w").unwrap();
        assert_eq!(
            build_eval_episode(&corpus, entry, 2, 0).unwrap_err(),
            Rejection::TooManySenses { senses: 3 }
        );
        assert_eq!(
            build_eval_episode(&corpus, entry, 3, 0).unwrap_err(),
            Rejection::TooFewSentences { sentences: 3 }
        );
    }

    #[test]
    fn eval_two_senses_six_sentences_matches_brute_force() {
        // Senses by sentence: a a a b b b. Enumerate every 4-subset as the
        // support: the episode is accepted iff the 2 leftover sentences carry
        // distinct senses (both also appear in the support).
        let corpus = build(many("w", &["a", "b"], 3));
        let entry = corpus.word("w").unwrap();
        let senses = ["a", "a", "a", "b", "b", "b"];
        let mut accepted_subsets = 0;
        let mut total = 0;
        for mask in 0u32..64 {
            if mask.count_ones() != 4 {
                continue;
            }
            total += 1;
            let rest: BTreeSet<&str> = (0..6)
                .filter(|i| mask & (1 << i) == 0)
                .map(|i| senses[i])
                .collect();
            if rest.len() == 2 {
                accepted_subsets += 1;
            }
        }
        assert_eq!((accepted_subsets, total), (9, 15));
        // The builder's decision agrees with the oracle on each draw.
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let picked: BTreeSet<usize> = index::sample(&mut rng, 6, 4).into_iter().collect();
            let rest: BTreeSet<&str> = (0..6)
                .filter(|i| !picked.contains(i))
                .map(|i| senses[i])
                .collect();
            let out = build_eval_episode(&corpus, entry, 4, seed);
            assert_eq!(out.is_ok(), rest.len() == 2, "seed {seed}");
            if let Ok(ep) = out {
                assert_eq!((ep.support.len(), ep.query.len()), (4, 2));
            }
        }
    }
}
