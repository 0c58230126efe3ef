use serde::{Deserialize, Serialize};

use super::{Capability, SequenceScore, Variant};
use crate::store::JsonlCache;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub model_id: String,
    pub sample_id: String,
    pub variant: Variant,
    pub capability: Capability,
}

/// Sequence scores keyed by model, sample, variant and capability.
pub type ScoreCache = JsonlCache<CacheKey, SequenceScore>;
