//! Point-cloud ingestion and synthesis: PLY read/write (geometry only)
//! and a clustered synthetic generator for desk-scale corpora.

pub mod ply;
pub mod synth;

pub use ply::{read_ply, write_ply, PlyMode, RawCloud};
pub use synth::{generate, SyntheticSpec};
