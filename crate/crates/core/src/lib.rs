//! Block-wise learned compression of truncated signed distance fields (TSDFs).
//!
//! Volumes are cut into 16³ blocks of normalized distances. Each block is
//! encoded into a short code vector by a PCA basis, an MLP autoencoder, or one
//! of two combinations of both. The codes double as shape descriptors, which
//! [`selector`] uses to decompress only blocks that resemble a target shape.
//! [`tracker`] aligns depth frames against a (decoded) volume so map quality
//! can be scored by trajectory error.

pub mod autoencoder;
mod binio;
pub mod block;
pub mod codec;
pub mod container;
pub mod error;
pub mod hybrid;
pub mod ingest;
pub mod pca;
pub mod render;
pub mod selector;
pub mod shapes;
pub mod tracker;
pub mod volume;

pub use block::{Block, BlockIndex, BLOCK_EDGE, BLOCK_LEN};
pub use codec::{BlockCodec, CodeVector, Codec, CodecKind};
pub use error::{Error, Result};
pub use volume::TsdfVolume;
