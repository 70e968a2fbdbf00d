use crate::error::{Error, Result};
use crate::nn::{LayerKind, LayerSpec, ParamGrads};
use crate::tensor::{col2im_into, gemm, gemm_nt, gemm_tn, im2col_into, Element, Tensor};

/// Saved state from [`conv2d_forward`]: the unfolded input of every batch item.
#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    input_shape: [usize; 4],
    output_hw: (usize, usize),
    cols: Vec<T>,
}

/// Saved state from [`deconv2d_forward`].
#[derive(Clone, Debug)]
pub struct DeconvCache<T> {
    input: Tensor<T>,
    output_hw: (usize, usize),
}

fn dims4<T: Element>(x: &Tensor<T>, what: &str) -> Result<[usize; 4]> {
    x.expect_ndim(4, what)?;
    let s = x.shape();
    Ok([s[0], s[1], s[2], s[3]])
}

fn check_params<T: Element>(spec: &LayerSpec, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<()> {
    let ws = spec.weight_shape().expect("parameterized layer");
    w.expect_shape(&ws)?;
    match (spec.bias_shape(), b) {
        (Some(bs), Some(b)) => b.expect_shape(&bs),
        (None, None) => Ok(()),
        (Some(_), None) => Err(Error::Dimension(format!(
            "{:?} layer declares a bias but none was supplied",
            spec.kind
        ))),
        (None, Some(_)) => Err(Error::Dimension(format!(
            "{:?} layer is bias-free but a bias was supplied",
            spec.kind
        ))),
    }
}

fn add_bias<T: Element>(y: &mut [T], b: Option<&Tensor<T>>, plane: usize) {
    if let Some(b) = b {
        for (chan, &bias) in y.chunks_mut(plane).zip(b.data().iter().cycle()) {
            for v in chan {
                *v += bias;
            }
        }
    }
}

fn bias_grad<T: Element>(spec: &LayerSpec, gy: &[T], plane: usize) -> Option<Tensor<T>> {
    spec.has_bias.then(|| {
        let c = spec.out_channels;
        let mut gb = vec![T::zero(); c];
        for (i, chan) in gy.chunks(plane).enumerate() {
            gb[i % c] += chan.iter().copied().sum::<T>();
        }
        Tensor::new(vec![c], gb).expect("bias length matches channels")
    })
}

/// 2-D cross-correlation with zero padding; weights are `[C'×C×kh×kw]`.
pub fn conv2d_forward<T: Element>(
    x: &Tensor<T>,
    spec: &LayerSpec,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<(Tensor<T>, ConvCache<T>)> {
    spec.expect_kind(LayerKind::Conv)?;
    check_params(spec, w, b)?;
    let [batch, c, h, wd] = dims4(x, "conv input")?;
    if c != spec.in_channels {
        return Err(Error::Dimension(format!(
            "conv expects {} input channels, got {c}",
            spec.in_channels
        )));
    }
    let win = spec.window()?;
    let (ho, wo) = win.output_size(h, wd)?;
    let rows = c * win.kernel.0 * win.kernel.1;
    let ncol = ho * wo;
    let cout = spec.out_channels;

    let mut cols = vec![T::zero(); batch * rows * ncol];
    let mut y = vec![T::zero(); batch * cout * ncol];
    let in_len = c * h * wd;
    for n in 0..batch {
        let col = &mut cols[n * rows * ncol..(n + 1) * rows * ncol];
        im2col_into(&x.data()[n * in_len..(n + 1) * in_len], (c, h, wd), &win, (ho, wo), col);
        gemm(w.data(), col, &mut y[n * cout * ncol..(n + 1) * cout * ncol], cout, rows, ncol);
    }
    add_bias(&mut y, b, ncol);
    let out = Tensor::new(vec![batch, cout, ho, wo], y)?;
    Ok((
        out,
        ConvCache {
            input_shape: [batch, c, h, wd],
            output_hw: (ho, wo),
            cols,
        },
    ))
}

pub fn conv2d_backward<T: Element>(
    grad_y: &Tensor<T>,
    cache: &ConvCache<T>,
    spec: &LayerSpec,
    w: &Tensor<T>,
) -> Result<ParamGrads<T>> {
    spec.expect_kind(LayerKind::Conv)?;
    let [batch, c, h, wd] = cache.input_shape;
    let (ho, wo) = cache.output_hw;
    let cout = spec.out_channels;
    grad_y.expect_shape(&[batch, cout, ho, wo])?;
    w.expect_shape(&spec.weight_shape().expect("conv has weights"))?;
    let win = spec.window()?;
    let rows = c * win.kernel.0 * win.kernel.1;
    let ncol = ho * wo;
    let in_len = c * h * wd;

    let mut gw = vec![T::zero(); cout * rows];
    let mut gx = vec![T::zero(); batch * in_len];
    let mut gcols = vec![T::zero(); rows * ncol];
    for n in 0..batch {
        let gy = &grad_y.data()[n * cout * ncol..(n + 1) * cout * ncol];
        let col = &cache.cols[n * rows * ncol..(n + 1) * rows * ncol];
        gemm_nt(gy, col, &mut gw, cout, ncol, rows);
        gcols.fill(T::zero());
        gemm_tn(w.data(), gy, &mut gcols, rows, cout, ncol);
        col2im_into(&gcols, (c, h, wd), &win, (ho, wo), &mut gx[n * in_len..(n + 1) * in_len]);
    }
    Ok(ParamGrads {
        input: Tensor::new(vec![batch, c, h, wd], gx)?,
        weight: Tensor::new(w.shape().to_vec(), gw)?,
        bias: bias_grad(spec, grad_y.data(), ncol),
    })
}

/// Transposed convolution: the adjoint of [`conv2d_forward`]'s input map.
/// Weights are `[C×C'×kh×kw]` and `H' = (H−1)·sh − 2·ph + kh`.
pub fn deconv2d_forward<T: Element>(
    x: &Tensor<T>,
    spec: &LayerSpec,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<(Tensor<T>, DeconvCache<T>)> {
    spec.expect_kind(LayerKind::Deconv)?;
    check_params(spec, w, b)?;
    let [batch, cin, h, wd] = dims4(x, "deconv input")?;
    if cin != spec.in_channels {
        return Err(Error::Dimension(format!(
            "deconv expects {} input channels, got {cin}",
            spec.in_channels
        )));
    }
    let win = spec.window()?;
    let (ho, wo) = win.transposed_output_size(h, wd)?;
    let cout = spec.out_channels;
    let rows = cout * win.kernel.0 * win.kernel.1;
    let plane_in = h * wd;
    let out_len = cout * ho * wo;

    let mut y = vec![T::zero(); batch * out_len];
    let mut cols = vec![T::zero(); rows * plane_in];
    for n in 0..batch {
        let xb = &x.data()[n * cin * plane_in..(n + 1) * cin * plane_in];
        cols.fill(T::zero());
        gemm_tn(w.data(), xb, &mut cols, rows, cin, plane_in);
        col2im_into(&cols, (cout, ho, wo), &win, (h, wd), &mut y[n * out_len..(n + 1) * out_len]);
    }
    add_bias(&mut y, b, ho * wo);
    Ok((
        Tensor::new(vec![batch, cout, ho, wo], y)?,
        DeconvCache {
            input: x.clone(),
            output_hw: (ho, wo),
        },
    ))
}

pub fn deconv2d_backward<T: Element>(
    grad_y: &Tensor<T>,
    cache: &DeconvCache<T>,
    spec: &LayerSpec,
    w: &Tensor<T>,
) -> Result<ParamGrads<T>> {
    spec.expect_kind(LayerKind::Deconv)?;
    let [batch, cin, h, wd] = dims4(&cache.input, "cached deconv input")?;
    let (ho, wo) = cache.output_hw;
    let cout = spec.out_channels;
    grad_y.expect_shape(&[batch, cout, ho, wo])?;
    w.expect_shape(&spec.weight_shape().expect("deconv has weights"))?;
    let win = spec.window()?;
    let rows = cout * win.kernel.0 * win.kernel.1;
    let plane_in = h * wd;
    let out_len = cout * ho * wo;

    let mut gx = vec![T::zero(); batch * cin * plane_in];
    let mut gw = vec![T::zero(); cin * rows];
    let mut gcols = vec![T::zero(); rows * plane_in];
    for n in 0..batch {
        let gy = &grad_y.data()[n * out_len..(n + 1) * out_len];
        im2col_into(gy, (cout, ho, wo), &win, (h, wd), &mut gcols);
        gemm(w.data(), &gcols, &mut gx[n * cin * plane_in..(n + 1) * cin * plane_in], cin, rows, plane_in);
        let xb = &cache.input.data()[n * cin * plane_in..(n + 1) * cin * plane_in];
        gemm_nt(xb, &gcols, &mut gw, cin, plane_in, rows);
    }
    Ok(ParamGrads {
        input: Tensor::new(vec![batch, cin, h, wd], gx)?,
        weight: Tensor::new(w.shape().to_vec(), gw)?,
        bias: bias_grad(spec, grad_y.data(), ho * wo),
    })
}
