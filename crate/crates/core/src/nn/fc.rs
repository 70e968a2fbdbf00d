use crate::error::{Error, Result};
use crate::nn::{LayerKind, LayerSpec, ParamGrads};
use crate::tensor::{gemm, gemm_nt, gemm_tn, Element, Tensor};

#[derive(Clone, Debug)]
pub struct FcCache<T> {
    input: Tensor<T>,
}

/// Affine map `y = x·Wᵀ + b` over a `[B×n_in]` batch; `W` is `[n_out×n_in]`.
pub fn fc_forward<T: Element>(
    x: &Tensor<T>,
    spec: &LayerSpec,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<(Tensor<T>, FcCache<T>)> {
    spec.expect_kind(LayerKind::Fc)?;
    x.expect_ndim(2, "fc input")?;
    let (batch, nin) = (x.shape()[0], x.shape()[1]);
    let nout = spec.out_channels;
    if nin != spec.in_channels {
        return Err(Error::Dimension(format!(
            "fc expects {} input features, got {nin}",
            spec.in_channels
        )));
    }
    w.expect_shape(&[nout, nin])?;
    let mut y = vec![T::zero(); batch * nout];
    gemm_nt(x.data(), w.data(), &mut y, batch, nin, nout);
    match (spec.has_bias, b) {
        (true, Some(b)) => {
            b.expect_shape(&[nout])?;
            for row in y.chunks_mut(nout) {
                for (v, &bias) in row.iter_mut().zip(b.data()) {
                    *v += bias;
                }
            }
        }
        (false, None) => {}
        _ => {
            return Err(Error::Dimension(
                "fc bias presence does not match its layer spec".into(),
            ))
        }
    }
    Ok((
        Tensor::new(vec![batch, nout], y)?,
        FcCache { input: x.clone() },
    ))
}

pub fn fc_backward<T: Element>(
    grad_y: &Tensor<T>,
    cache: &FcCache<T>,
    spec: &LayerSpec,
    w: &Tensor<T>,
) -> Result<ParamGrads<T>> {
    spec.expect_kind(LayerKind::Fc)?;
    let (batch, nin) = (cache.input.shape()[0], cache.input.shape()[1]);
    let nout = spec.out_channels;
    grad_y.expect_shape(&[batch, nout])?;
    w.expect_shape(&[nout, nin])?;
    let mut gx = vec![T::zero(); batch * nin];
    gemm(grad_y.data(), w.data(), &mut gx, batch, nout, nin);
    let mut gw = vec![T::zero(); nout * nin];
    gemm_tn(grad_y.data(), cache.input.data(), &mut gw, nout, batch, nin);
    let bias = spec.has_bias.then(|| {
        let mut gb = vec![T::zero(); nout];
        for row in grad_y.data().chunks(nout) {
            for (g, &v) in gb.iter_mut().zip(row) {
                *g += v;
            }
        }
        Tensor::new(vec![nout], gb).expect("bias length")
    });
    Ok(ParamGrads {
        input: Tensor::new(vec![batch, nin], gx)?,
        weight: Tensor::new(vec![nout, nin], gw)?,
        bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{assert_close, numeric};
    use crate::nn::layer_cost;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weights_pass_through() {
        let spec = LayerSpec::fc(3, 3);
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0]).unwrap();
        let (y, _) = fc_forward(&x, &spec, &Tensor::identity(3), Some(&Tensor::zeros(&[3]))).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn huge_dense_layer_parameter_count() {
        let spec = LayerSpec::fc(320 * 280, 319 * 280).without_bias();
        let cost = layer_cost(&spec, &[320 * 280]).unwrap();
        assert!(cost.params > 8_000_000_000);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rand = |s: &[usize]| Tensor::from_fn(s, |_| rng.gen_range(-1.0..1.0));
            let spec = LayerSpec::fc(5, 4);
            let (x, w, b, proj) = (rand(&[3, 5]), rand(&[4, 5]), rand(&[4]), rand(&[3, 4]));
            let (_, cache) = fc_forward(&x, &spec, &w, Some(&b)).unwrap();
            let g = fc_backward(&proj, &cache, &spec, &w).unwrap();
            let loss = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
                fc_forward(x, &spec, w, Some(b)).unwrap().0.dot(&proj).unwrap()
            };
            assert_close(g.input.data(), &numeric(&x, |x| loss(x, &w, &b)), 1e-4);
            assert_close(g.weight.data(), &numeric(&w, |w| loss(&x, w, &b)), 1e-4);
            assert_close(g.bias.unwrap().data(), &numeric(&b, |b| loss(&x, &w, b)), 1e-4);
        }
    }

    #[test]
    fn wrong_feature_count() {
        let spec = LayerSpec::fc(3, 2);
        let x = Tensor::<f64>::zeros(&[1, 4]);
        assert!(fc_forward(&x, &spec, &Tensor::zeros(&[2, 4]), Some(&Tensor::zeros(&[2]))).is_err());
    }
}
