pub mod error;
pub mod events;
pub mod grid;
pub mod integrate;
pub mod metrics;
pub mod trajectory;
pub mod voxel;
pub mod warp;
pub mod kplane;
pub mod corr;
pub mod config;
pub mod testbed;
pub mod pipeline;
pub mod io;

pub use error::{Error, Result};
pub use events::{ContrastThresholds, Event, EventStream, Polarity};
pub use grid::{FlowField, Frame, FrameSequence, Grid};
pub use pipeline::{decompress, DecompressionConfig, DecompressionResult, Decompressor};
pub use testbed::{SceneKind, SceneSpec};
