//! Minimal neural-network toolkit: a differentiable tape, parameter store,
//! layers and the Adam optimizer. Everything runs in `f64` on one thread so
//! results are bit-reproducible.

mod adam;
mod layers;
mod params;
mod tape;

pub use adam::Adam;
pub use layers::{Conv1d, Linear, Lstm};
pub use params::{glorot, ParamId, Params};
pub use tape::{instance_norm_forward, Graph, Mat, ParamGrads, Var};

#[cfg(test)]
mod gradcheck;
