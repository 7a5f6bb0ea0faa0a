//! The expert-aggregation network.

pub mod config;
pub mod erea;

pub use config::{ModelConfig, EXPERTS};
pub use erea::{
    cam_attention, flip_align, flip_align_tensor, gate_aggregate, split_quadrants, Erea, ExpertHead, ModelOutput,
    Quadrant,
};
