//! Embedding atlas engine: ingest, 2-D projection, tile pyramid, vector
//! search and the store layout they share.

pub mod format;
pub mod index;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod projection;
pub mod search;
pub mod store;
pub mod synth;
pub mod tiling;
pub mod validate;
