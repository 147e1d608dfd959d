//! The network: configuration, parameters, routing and layers.

mod cab;
mod carsa;
pub mod config;
mod glu;
mod layer;
mod network;
pub mod router;
pub mod weights;

pub use cab::channel_attention;
pub use carsa::{CarsaOptions, CarsaOutput, CarsaParams};
pub use config::{ModelConfig, SelectionStrategy};
pub use glu::conv_glu;
pub use layer::{hierarchical_layer, LayerOutput};
pub use network::{himosa_forward, infer, ForwardOptions, ForwardOutput, LayerRoutes};
pub use router::{mix_seed, route_scores, select_from_scores, select_tokens, ExpertSelection, RouterSelection};
pub use weights::{layer_prefix, param_specs, BoundWeights, HimosaWeights, Init, ParamSpec};
