pub mod data;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod imageio;
pub mod infer;
pub mod labelgen;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod plot;
pub mod preset;
pub mod train;

pub use error::{Result, SodError};
pub use grid::{DetailLabel, DistanceField, GrayMask, Grid, GroundTruth};
pub use preset::{ArchToggles, Cascade, LossFlags, Preset};
