//! Neural-network substrate on candle tensors.

pub mod attention;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod params;

pub use attention::{CrossBlock, Encoder, MultiHeadAttention, SelfBlock};
pub use layers::{FeedForward, LayerNorm, Linear};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Builder, Init, ParamStore};
