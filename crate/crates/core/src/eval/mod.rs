//! Macro-F1 scoring and report aggregation.

mod metrics;
mod report;

pub use metrics::macro_f1;
pub use report::{
    aggregate, EvalReport, HistogramBin, SeedMean, SenseGroup, WordScore, HISTOGRAM_BINS,
};
