use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// One annotated occurrence of a target word inside a sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub index: usize,
    pub word: String,
    pub sense: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedSentence {
    pub sentence_id: String,
    pub n_tokens: usize,
    pub targets: Vec<Target>,
    /// `n_tokens × embedding_dim`
    pub embeddings: Matrix,
}

/// A (sentence, token) position in a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Instance {
    pub sentence: usize,
    pub token_index: usize,
}

/// Everything the corpus knows about one target word.
#[derive(Debug, Clone, PartialEq)]
pub struct WordEntry {
    pub word: String,
    /// Sense inventory, sorted.
    pub senses: Vec<String>,
    /// Annotated occurrences grouped by sense, in corpus order.
    pub instances: BTreeMap<String, Vec<Instance>>,
    /// Indices of the sentences containing the word, ascending.
    pub sentences: Vec<usize>,
}

impl WordEntry {
    pub fn n_senses(&self) -> usize {
        self.senses.len()
    }

    pub fn n_instances(&self) -> usize {
        self.instances.values().map(Vec::len).sum()
    }
}

/// Annotated sentences with per-token embeddings, indexed by word.
#[derive(Debug, Clone)]
pub struct Corpus {
    sentences: Vec<AnnotatedSentence>,
    embedding_dim: usize,
    words: BTreeMap<String, WordEntry>,
    by_id: HashMap<String, usize>,
    sense_word: HashMap<String, String>,
}

impl Corpus {
    pub fn new(sentences: Vec<AnnotatedSentence>, embedding_dim: usize) -> Result<Self> {
        if embedding_dim == 0 {
            return Err(Error::InvalidArgument(
                "embedding_dim must be positive".into(),
            ));
        }
        let mut by_id = HashMap::with_capacity(sentences.len());
        let mut sense_word: HashMap<String, String> = HashMap::new();
        let mut grouped: BTreeMap<String, BTreeMap<String, Vec<Instance>>> = BTreeMap::new();
        let mut word_sentences: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();

        for (si, s) in sentences.iter().enumerate() {
            let ctx =
                |msg: String| Error::format("corpus", format!("sentence {:?}", s.sentence_id), msg);
            if by_id.insert(s.sentence_id.clone(), si).is_some() {
                return Err(ctx("duplicate sentence_id".into()));
            }
            if s.embeddings.shape() != (s.n_tokens, embedding_dim) {
                return Err(ctx(format!(
                    "embedding block is {:?}, expected {:?}",
                    s.embeddings.shape(),
                    (s.n_tokens, embedding_dim)
                )));
            }
            for t in &s.targets {
                if t.index >= s.n_tokens {
                    return Err(ctx(format!(
                        "target index {} out of range for {} tokens",
                        t.index, s.n_tokens
                    )));
                }
                match sense_word.get(&t.sense) {
                    Some(w) if *w != t.word => {
                        return Err(ctx(format!(
                            "sense {:?} used by both {w:?} and {:?}",
                            t.sense, t.word
                        )));
                    }
                    Some(_) => {}
                    None => {
                        sense_word.insert(t.sense.clone(), t.word.clone());
                    }
                }
                grouped
                    .entry(t.word.clone())
                    .or_default()
                    .entry(t.sense.clone())
                    .or_default()
                    .push(Instance {
                        sentence: si,
                        token_index: t.index,
                    });
                word_sentences.entry(t.word.clone()).or_default().insert(si);
            }
        }

        let words = grouped
            .into_iter()
            .map(|(word, instances)| {
                let sentences = word_sentences
                    .remove(&word)
                    .unwrap_or_default()
                    .into_iter()
                    .collect();
                let entry = WordEntry {
                    word: word.clone(),
                    senses: instances.keys().cloned().collect(),
                    instances,
                    sentences,
                };
                (word, entry)
            })
            .collect();

        Ok(Self {
            sentences,
            embedding_dim,
            words,
            by_id,
            sense_word,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn sentences(&self) -> &[AnnotatedSentence] {
        &self.sentences
    }

    pub fn sentence(&self, index: usize) -> &AnnotatedSentence {
        &self.sentences[index]
    }

    pub fn sentence_index(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn words(&self) -> &BTreeMap<String, WordEntry> {
        &self.words
    }

    pub fn word(&self, word: &str) -> Option<&WordEntry> {
        self.words.get(word)
    }

    pub fn word_of_sense(&self, sense: &str) -> Option<&str> {
        self.sense_word.get(sense).map(String::as_str)
    }

    pub fn word_ids(&self) -> Vec<String> {
        self.words.keys().cloned().collect()
    }

    /// Sense annotated at an instance, if the position is a target.
    pub fn sense_at(&self, inst: Instance) -> Option<&str> {
        self.sentences
            .get(inst.sentence)?
            .targets
            .iter()
            .find(|t| t.index == inst.token_index)
            .map(|t| t.sense.as_str())
    }

    pub fn token_embedding(&self, inst: Instance) -> &[f64] {
        self.sentences[inst.sentence]
            .embeddings
            .row(inst.token_index)
    }

    /// Stacks the token embeddings of `instances` into an `n × dim` matrix.
    pub fn gather(&self, instances: impl IntoIterator<Item = Instance>) -> Matrix {
        let mut data = Vec::new();
        let mut n = 0;
        for inst in instances {
            data.extend_from_slice(self.token_embedding(inst));
            n += 1;
        }
        Matrix::new(n, self.embedding_dim, data).expect("rows have embedding_dim entries")
    }
}
