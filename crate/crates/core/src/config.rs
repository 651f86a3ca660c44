//! Engine configuration, one JSON document with every tunable constant.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::query::QueryConfig;
use crate::scalar::Scalar;
use crate::spatial::SpatialWeights;
use crate::temporal::TemporalWeights;

pub const DEFAULT_MAX_POINTS: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", default, deny_unknown_fields)]
pub struct EngineConfig<T: Scalar> {
    pub spatial: SpatialWeights<T>,
    pub temporal: TemporalWeights<T>,
    pub query: QueryConfig<T>,
    /// Per-node point budget after uniform subsampling.
    pub max_points: usize,
    /// Retention cap on stored frames; `None` keeps full history.
    pub max_frames: Option<usize>,
    /// Centroid tolerance (meters) used when scoring nodes against ground truth.
    pub centroid_tolerance: T,
}

impl<T: Scalar> Default for EngineConfig<T> {
    fn default() -> Self {
        Self {
            spatial: SpatialWeights::default(),
            temporal: TemporalWeights::default(),
            query: QueryConfig::default(),
            max_points: DEFAULT_MAX_POINTS,
            max_frames: None,
            centroid_tolerance: T::lit(0.05),
        }
    }
}

impl<T: Scalar> EngineConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.spatial.validate()?;
        self.temporal.validate()?;
        self.query.validate()?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}
