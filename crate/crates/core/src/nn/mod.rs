//! Dense networks with hand-written gradients, Adam, and flat-parameter
//! utilities. All arithmetic is `f64`.

mod adam;
mod mlp;
mod params;
pub mod real;

pub use adam::{AdamConfig, AdamState};
pub use mlp::{
    batch_from_rows, ForwardCache, HiddenActivation, MlpNet, MlpSpec, NetCheckpoint,
    OutputActivation, LAYER_NORM_EPS,
};
pub use params::{
    average, perturb, polyak_track, polyak_track_in_place, LayerSlots, ParamLayout, ParamVector,
    Segment, Tensor, TensorRole,
};
pub(crate) use params::pairwise_mean;
