//! Toy point-set networks: the flow extractor and the multi-level cloud
//! embedder, plus their parameter file format.

pub mod checkpoint;
mod embedder;
mod flow_extractor;
mod mlp;

pub use embedder::{EmbedderParams, EmbedderSpec, EmbedderVars, EmbeddingPyramid};
pub use flow_extractor::{FlowExtractorParams, FlowExtractorSpec, FlowVars, GlobalPool};
pub use mlp::{Linear, Mlp};
