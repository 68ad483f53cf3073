//! Streaming deterministic Dendritic Cell Algorithm with segmented analysis.
//!
//! The pipeline is: event stream ([`stream_io`]) → DC population
//! ([`engine`]) → processed records → segmentation and per-type Kα scoring
//! ([`segmentation`]) → summary statistics and t-tests ([`stats`]).
//! [`datagen`] produces seeded synthetic scenarios to feed it.
//!
//! ```
//! use dcaseg::datagen::{bundled_scenario_syn_scan, generate};
//! use dcaseg::engine::{run_stream, PopulationConfig};
//! use dcaseg::segmentation::{analyze, SegmenterConfig};
//!
//! let mut spec = bundled_scenario_syn_scan();
//! spec.duration_ticks = 120;
//! spec.phases.clear();
//! let scenario = generate(&spec).unwrap();
//! let run = run_stream(PopulationConfig::default(), &scenario.events).unwrap();
//! let reports = analyze(&run.records, &SegmenterConfig::abs(500), run.final_tick).unwrap();
//! assert!(!reports.is_empty());
//! ```

pub mod cli;
pub mod datagen;
pub mod engine;
pub mod segmentation;
pub mod signal;
pub mod special;
pub mod stats;
pub mod stream_io;

pub use engine::{run_stream, Engine, PopulationConfig, ProcessedRecord};
pub use segmentation::{analyze, compute_k_alpha, SegmentReport, SegmentationMode, SegmenterConfig};
pub use signal::{transform_signals, AntigenEvent, AntigenType, Event, SignalInstance, WeightMatrix};
