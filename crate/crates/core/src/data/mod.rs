//! Corpus model, file formats, word splits and episode construction.

mod corpus;
mod episode;
pub mod formats;
mod manifest;
mod split;
mod stats;
mod synthetic;

pub use corpus::{AnnotatedSentence, Corpus, Instance, Target, WordEntry};
pub use episode::{
    build_eval_episode, build_eval_episode_with, build_eval_episodes, sample_train_episode,
    Episode, Item, Rejection, RejectionCounts, Split, TrainEpisodeSampler, MAX_SAMPLING_RETRIES,
};
pub use formats::{load_corpus, save_corpus};
pub use manifest::{
    build_episode_set, BuildConfig, EpisodeSet, Manifest, ManifestEpisode, ManifestItem,
    MANIFEST_VERSION,
};
pub use split::{split_words, WordSplit, DEFAULT_SPLIT_RATIOS};
pub use stats::{dataset_stats, DatasetStats, SplitStats};
pub use synthetic::{generate_synthetic_corpus, SyntheticConfig};
