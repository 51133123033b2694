//! Behaviors: each maps the current belief to a control input.

pub mod coverage;
pub mod entropy;
pub mod inspect;
pub mod nav;
pub mod search;
pub mod stairs;

pub use coverage::{CoverageConfig, CoverageGrid, CoveragePlanner, CoverageStep};
pub use entropy::{categorical_entropy, entropy_objective, gaussian_entropy_2d};
pub use inspect::{Inspect, InspectConfig, InspectStatus};
pub use nav::{NavMap, PathTracker, TrackingGains};
pub use search::{
    ActiveSearch, PlannerConfig, SearchContext, SearchReport, SearchStats, SearchStatus,
};
pub use stairs::{ClimbConfig, ClimbPhase, ClimbStairs};
