//! Differentiable numeric core: tensors, parameter sets, a reverse-mode tape
//! with hand-derived adjoints, finite-difference checking and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod gru;
pub mod kernels;
pub mod ops;
pub mod params;
pub mod pool;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{Graph, TcnLayer, Var, PROB_CLAMP};
pub use ops::{bce_l2_loss, dense, dilated_conv1d, relu, sigmoid, softmax};
pub use params::{Grads, Param, ParamId, ParamSet};
pub use tensor::Tensor;

/// Runs a [`gru::gru_forward`] pass over a channel-major sequence using the
/// packed GRU parameters `{prefix}.w_x`, `{prefix}.w_h`, `{prefix}.bias`.
pub fn gru_seq(x: &Tensor, params: &ParamSet, prefix: &str, hidden_dim: usize) -> crate::Result<Vec<f64>> {
    if hidden_dim == 0 {
        return Err(crate::Error::invalid("hidden_dim must be positive"));
    }
    let get = |n: &str| {
        params
            .by_name(&format!("{prefix}.{n}"))
            .ok_or_else(|| crate::Error::Checkpoint(format!("missing `{prefix}.{n}`")))
    };
    let (wx, wh, b) = (get("w_x")?, get("w_h")?, get("bias")?);
    if x.shape().len() != 2 || wx.value.shape() != [3 * hidden_dim, x.dim(0)] || wh.value.shape() != [3 * hidden_dim, hidden_dim] {
        return Err(crate::Error::shape("gru_seq: parameter shapes do not match input/hidden_dim"));
    }
    let w = gru::GruWeights {
        w_x: wx.value.data(),
        w_h: wh.value.data(),
        b: b.value.data(),
        input: x.dim(0),
        hidden: hidden_dim,
    };
    Ok(gru::gru_forward(x.data(), x.dim(1), w).0)
}
