//! Neural-network building blocks on top of candle tensors.

pub mod conv;
pub mod layers;
pub mod params;

pub use layers::{frame_mask, key_padding_bias, sigmoid, sinusoidal_table, softmax_last, Attention, Conv2d, EncoderLayer, FeedForward, Gru, LayerNorm, Linear};
pub use params::{Init, ParamSet, Params};
