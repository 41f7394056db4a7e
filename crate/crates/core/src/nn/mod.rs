//! Networks, parameter vectors and the optimizer.

pub mod adam;
pub mod mlp;
pub mod params;
pub mod policy;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use mlp::{Forward, Gradients, HeadGroup, MultiHeadMlp, NetError, NetworkSpec, OutputActivation};
pub use params::{average, NamedTensor, ParamBlock, ParamError, ParamLayout, ParamVector};
pub use policy::{
    log_density, sample_reparam, variance_from_tanh, Critic, GaussianPolicy, GaussianPolicyOutput, NetWidths,
};
