//! Layer kernels. Each forward/backward pair is a pure function of its
//! inputs; [`crate::tape::Tape`] records them for reverse-mode use.

pub mod agc;
pub mod batchnorm;
pub mod conv;
pub mod pool;
pub mod relu;
pub mod xent;

pub use agc::{agc_backward, agc_forward, AgcGrads, AgcParams};
pub use batchnorm::{BnContext, BnMode, BnParams};
pub use conv::{conv2d, conv2d_backward, Padding};
pub use pool::{maxpool2x2, unpool2x2, PoolIndices};
pub use relu::{relu, relu_backward};
pub use xent::{weighted_softmax_xent, LabelMap, IGNORE_LABEL};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Checks that a per-channel vector has exactly `channels` finite entries.
pub(crate) fn check_channel_vec<T: Real>(name: &str, v: &Tensor<T>, channels: usize) -> Result<()> {
    if v.len() != channels {
        return Err(Error::shape(format!(
            "{name} has {} entries, expected {channels}",
            v.len()
        )));
    }
    if !v.all_finite() {
        return Err(Error::NonFinite(name.to_string()));
    }
    Ok(())
}
