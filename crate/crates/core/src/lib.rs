//! Online change-point detection over sequences of sensor similarity
//! networks, with post-alarm isolation of the anomalous sensors.
//!
//! The pipeline is: observation frames feed a [`stream::WindowBank`], each
//! tick yields a [`snapshot::SimilaritySnapshot`], and the
//! [`detector::DetectorState`] raises an alarm once the largest node
//! statistic crosses the threshold. [`isolation`] then splits the alarm-time
//! network into normal and anomalous groups.

pub mod bounds;
pub mod cli;
pub mod datagen;
pub mod detector;
pub mod experiments;
pub mod isolation;
pub mod montecarlo;
pub mod seed;
pub mod similarity;
pub mod snapshot;
pub mod stream;

pub use detector::{DetectorState, Monitor, RunSettings, Stopping};
pub use similarity::SimilarityKind;
pub use snapshot::{EdgeMask, SimilaritySnapshot};
pub use stream::{ObservationFrame, WindowBank};
