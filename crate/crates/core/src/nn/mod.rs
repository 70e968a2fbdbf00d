//! Layer forward/backward passes, weight initialization and the optimizer.
//!
//! Layers are free functions over [`Tensor`]s rather than stateful objects:
//! the forward call returns a cache and the backward call consumes it.

mod activation;
mod adam;
mod conv;
mod cost;
mod fc;
mod init;
mod pool;

pub use activation::{relu, relu_backward, tanh_backward, tanh_op};
pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use conv::{
    conv2d_backward, conv2d_forward, deconv2d_backward, deconv2d_forward, ConvCache, DeconvCache,
};
pub use cost::{layer_cost, LayerCost};
pub use fc::{fc_backward, fc_forward, FcCache};
pub use init::xavier_init;
pub use pool::{maxpool2d_backward, maxpool2d_forward, PoolCache};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tensor, Window};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Deconv,
    MaxPool,
    Fc,
    Relu,
    Tanh,
}

/// Static description of one layer.
///
/// `in_channels`/`out_channels` double as feature counts for fully-connected
/// layers; `window` is `None` for everything except conv, deconv and maxpool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub window: Option<Window>,
    pub has_bias: bool,
}

impl LayerSpec {
    pub fn conv(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Self {
        Self {
            kind: LayerKind::Conv,
            in_channels,
            out_channels,
            window: Some(Window::new(kernel, stride, pad)),
            has_bias: true,
        }
    }

    pub fn deconv(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Self {
        Self {
            kind: LayerKind::Deconv,
            ..Self::conv(in_channels, out_channels, kernel, stride, pad)
        }
    }

    pub fn fc(in_features: usize, out_features: usize) -> Self {
        Self {
            kind: LayerKind::Fc,
            in_channels: in_features,
            out_channels: out_features,
            window: None,
            has_bias: true,
        }
    }

    /// 2×2 max-pool with stride 2.
    pub fn maxpool(channels: usize) -> Self {
        Self {
            kind: LayerKind::MaxPool,
            in_channels: channels,
            out_channels: channels,
            window: Some(Window::new((2, 2), (2, 2), (0, 0))),
            has_bias: false,
        }
    }

    pub fn relu(channels: usize) -> Self {
        Self::activation(LayerKind::Relu, channels)
    }

    pub fn tanh(channels: usize) -> Self {
        Self::activation(LayerKind::Tanh, channels)
    }

    fn activation(kind: LayerKind, channels: usize) -> Self {
        Self {
            kind,
            in_channels: channels,
            out_channels: channels,
            window: None,
            has_bias: false,
        }
    }

    pub fn without_bias(mut self) -> Self {
        self.has_bias = false;
        self
    }

    pub fn has_params(&self) -> bool {
        matches!(self.kind, LayerKind::Conv | LayerKind::Deconv | LayerKind::Fc)
    }

    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        let (cin, cout) = (self.in_channels, self.out_channels);
        match (self.kind, self.window) {
            (LayerKind::Conv, Some(w)) => Some(vec![cout, cin, w.kernel.0, w.kernel.1]),
            // Stored like the convolution it transposes: [in, out, kh, kw].
            (LayerKind::Deconv, Some(w)) => Some(vec![cin, cout, w.kernel.0, w.kernel.1]),
            (LayerKind::Fc, _) => Some(vec![cout, cin]),
            _ => None,
        }
    }

    pub fn bias_shape(&self) -> Option<Vec<usize>> {
        (self.has_params() && self.has_bias).then(|| vec![self.out_channels])
    }

    /// Fan-in and fan-out used by Xavier initialization.
    pub fn fans(&self) -> Option<(usize, usize)> {
        let (cin, cout) = (self.in_channels, self.out_channels);
        match (self.kind, self.window) {
            (LayerKind::Conv | LayerKind::Deconv, Some(w)) => {
                let k = w.kernel.0 * w.kernel.1;
                Some((cin * k, cout * k))
            }
            (LayerKind::Fc, _) => Some((cin, cout)),
            _ => None,
        }
    }

    /// Per-sample output shape for a per-sample input shape (`[C, H, W]`
    /// for spatial layers, `[n]` for fully-connected ones).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self.kind {
            LayerKind::Fc => {
                let n: usize = input.iter().product();
                if n != self.in_channels {
                    return Err(Error::Dimension(format!(
                        "fc layer expects {} inputs, got shape {input:?}",
                        self.in_channels
                    )));
                }
                Ok(vec![self.out_channels])
            }
            LayerKind::Relu | LayerKind::Tanh => Ok(input.to_vec()),
            LayerKind::Conv | LayerKind::Deconv | LayerKind::MaxPool => {
                let [c, h, w] = input else {
                    return Err(Error::Dimension(format!(
                        "{:?} expects a [C, H, W] input, got {input:?}",
                        self.kind
                    )));
                };
                if *c != self.in_channels {
                    return Err(Error::Dimension(format!(
                        "{:?} expects {} channels, got {c}",
                        self.kind, self.in_channels
                    )));
                }
                let win = self.window()?;
                let (ho, wo) = match self.kind {
                    LayerKind::Deconv => win.transposed_output_size(*h, *w)?,
                    LayerKind::MaxPool => pool::pooled_size(*h, *w)?,
                    _ => win.output_size(*h, *w)?,
                };
                Ok(vec![self.out_channels, ho, wo])
            }
        }
    }

    pub(crate) fn window(&self) -> Result<Window> {
        self.window.ok_or_else(|| {
            Error::Config(format!("{:?} layer has no window geometry", self.kind))
        })
    }

    pub(crate) fn expect_kind(&self, kind: LayerKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Config(format!(
                "expected a {kind:?} layer spec, got {:?}",
                self.kind
            )));
        }
        Ok(())
    }
}

/// Gradients returned by a parameterized layer's backward pass.
#[derive(Clone, Debug)]
pub struct ParamGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}
