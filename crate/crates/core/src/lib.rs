//! Measures the visual gap between two image domains, narrows it with a
//! cycle-consistent image translator, and scores the downstream effect on
//! semantic segmentation.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod gap;
pub mod imgproc;
pub mod segmetrics;
pub mod experiments;
pub mod segnet;
pub mod toydata;
pub mod translator;

pub use autodiff::{Activation, AdamState, Graph, LossKind, NodeId, Tensor};
pub use error::{Error, Result};

/// Fixed label vocabulary; every label map and logit head uses these 8
/// classes in this order.
pub const NUM_CLASSES: usize = 8;
pub const CLASS_NAMES: [&str; NUM_CLASSES] =
    ["background", "leaf", "pepper", "peduncle", "stem", "shoot", "wire", "cut"];
