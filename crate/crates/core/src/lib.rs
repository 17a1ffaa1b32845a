//! Bucketized evaluation of knowledge-graph completion systems.
//!
//! The pipeline is: load triples and training statistics ([`data`]), read a
//! system-output file ([`sysout`], or convert a library dump with
//! [`adapters`]), assign records to buckets ([`bucketizer`]), and compute
//! per-bucket ranking metrics ([`metrics`]) with error bars
//! ([`confidence`]). [`analysis`] ties these together into single-system
//! reports and multi-system comparisons.

pub mod adapters;
pub mod analysis;
pub mod bucketizer;
pub mod confidence;
pub mod data;
pub mod metrics;
pub mod sysout;

pub use analysis::{ComparisonReport, SingleAnalysisReport};
pub use data::{EntityId, GraphStats, RelationId, Triple, TripleSet, Vocabulary};
pub use metrics::{Metric, TieStrategy};
pub use sysout::{Direction, ExampleRecord, SystemHeader, SystemOutput};
