use crate::error::Result;
use crate::nn::{LayerKind, LayerSpec};

/// Parameter and arithmetic-operation counts of one layer on one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub params: u64,
    pub ops: u64,
}

/// Counts weights (plus biases) and operations for a per-sample input shape.
///
/// An output of a dot-product layer over `k` inputs costs `k` multiplies and
/// `k − 1` additions, plus one addition for the bias. A 2×1 kernel therefore
/// costs 3 operations per output pixel.
pub fn layer_cost(spec: &LayerSpec, input_shape: &[usize]) -> Result<LayerCost> {
    let out = spec.output_shape(input_shape)?;
    let out_count: u64 = out.iter().map(|&d| d as u64).product();
    let weights = spec
        .weight_shape()
        .map(|s| s.iter().map(|&d| d as u64).product())
        .unwrap_or(0u64);
    let biases = spec
        .bias_shape()
        .map(|s| s.iter().map(|&d| d as u64).product())
        .unwrap_or(0u64);
    let bias_op = u64::from(spec.has_params() && spec.has_bias);
    let ops = match spec.kind {
        LayerKind::Conv => {
            let w = spec.window()?;
            let k = (spec.in_channels * w.kernel.0 * w.kernel.1) as u64;
            out_count * (2 * k - 1 + bias_op)
        }
        LayerKind::Fc => {
            let k = spec.in_channels as u64;
            out_count * (2 * k - 1 + bias_op)
        }
        LayerKind::Deconv => {
            // Every input activation is scattered through the full kernel.
            let in_count: u64 = input_shape.iter().map(|&d| d as u64).product();
            let w = spec.window()?;
            let k = (spec.out_channels * w.kernel.0 * w.kernel.1) as u64;
            2 * in_count * k + bias_op * out_count
        }
        // Three comparisons pick the max of a 2×2 block.
        LayerKind::MaxPool => out_count * 3,
        LayerKind::Relu | LayerKind::Tanh => out_count,
    };
    Ok(LayerCost {
        params: weights + biases,
        ops,
    })
}
