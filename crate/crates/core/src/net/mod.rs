//! Network graph: an encoder of conv/ReLU/max-pool macro-layers with an
//! inner-product classifier head, and mirrored decoding pathways (stacked or
//! per-macro-layer) that unpool with known or fixed switches.

mod checkpoint;
mod config;
mod graph;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Manifest, MANIFEST};
pub use config::{Geometry, HeadSpec, InitSpec, MacroLayerSpec, NetworkConfig, OutputNonlinearity, SwitchMode, Variant};
pub use graph::{
    backward, backward_for, decode_from, encode, forward, forward_with_targets, reconstruction_terms, ForwardRecord,
    Losses,
};
pub use params::{
    build_network, copy_layerwise_into_stacked, decoder_name, decoder_specs, encoder_name, head_name, Gradients, Group,
    Param, ParameterStore, TrainMask,
};
