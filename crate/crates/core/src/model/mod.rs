pub mod config;
pub mod graph;
pub mod verify;
pub mod weights;

pub use config::ModelConfig;
pub use graph::{build_model, reparameterize_model, ConvUnit, DetectHead, HeadOutput, Model, Node, Op};
pub use verify::{compare_modes, verify_fusion, Equivalence};
pub use weights::{decode_weights, encode_weights, load_weights, read_header, save_weights};
