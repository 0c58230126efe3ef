pub mod baselines;
pub mod corpus;
pub mod error;
pub mod harness;
pub mod inference;
pub mod paraphrase;
pub mod scoring;
pub mod store;

pub use corpus::{RawRecord, SplitSample};
pub use error::{ErrorClass, Result, SmiError};
pub use harness::{Label, ScoredSet};
pub use inference::{Decision, PValueSeries, SmiConfig, Verdict};
pub use scoring::{Metric, SequenceScore, TokenScore, Variant};
