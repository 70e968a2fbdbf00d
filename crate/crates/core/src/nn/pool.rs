use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Flat input index of the maximum of every pooling block.
#[derive(Clone, Debug)]
pub struct PoolCache {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

pub(crate) fn pooled_size(h: usize, w: usize) -> Result<(usize, usize)> {
    if !h.is_multiple_of(2) || !w.is_multiple_of(2) || h == 0 || w == 0 {
        return Err(Error::Config(format!(
            "2x2 max-pool needs even spatial dims, got {h}x{w}"
        )));
    }
    Ok((h / 2, w / 2))
}

/// 2×2, stride-2 max-pooling over a `[B×C×H×W]` tensor. Ties resolve to the
/// first element of the block in row-major order.
pub fn maxpool2d_forward<T: Element>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolCache)> {
    x.expect_ndim(4, "max-pool input")?;
    let s = x.shape();
    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
    let (ho, wo) = pooled_size(h, w)?;
    let data = x.data();
    let mut y = Vec::with_capacity(planes * ho * wo);
    let mut argmax = Vec::with_capacity(planes * ho * wo);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                y.push(data[best]);
                argmax.push(best);
            }
        }
    }
    let out = Tensor::new(vec![s[0], s[1], ho, wo], y)?;
    Ok((
        out,
        PoolCache {
            input_shape: s.to_vec(),
            argmax,
        },
    ))
}

pub fn maxpool2d_backward<T: Element>(grad_y: &Tensor<T>, cache: &PoolCache) -> Result<Tensor<T>> {
    if grad_y.len() != cache.argmax.len() {
        return Err(Error::Dimension(format!(
            "max-pool gradient of shape {:?} does not match {} pooled outputs",
            grad_y.shape(),
            cache.argmax.len()
        )));
    }
    let mut gx = Tensor::zeros(&cache.input_shape);
    let out = gx.data_mut();
    for (&idx, &g) in cache.argmax.iter().zip(grad_y.data()) {
        out[idx] += g;
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{assert_close, numeric};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_block_max() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 3.0, 2.0, 4.0]).unwrap();
        let (y, _) = maxpool2d_forward(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn ties_route_to_first_element() {
        let x = Tensor::<f64>::filled(&[1, 1, 4, 4], 2.5);
        let (y, cache) = maxpool2d_forward(&x).unwrap();
        let gx = maxpool2d_backward(&Tensor::filled(y.shape(), 1.0), &cache).unwrap();
        #[rustfmt::skip]
        let expect = [
            1.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
            1.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
        ];
        assert_eq!(gx.data(), &expect);
    }

    #[test]
    fn odd_dims_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 1, 3, 4]);
        assert!(matches!(maxpool2d_forward(&x), Err(Error::Config(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Distinct values spaced far apart so no block has a near-tie.
            let mut vals: Vec<f64> = (0..128).map(|i| i as f64 * 0.01).collect();
            vals.shuffle(&mut rng);
            let x = Tensor::new(vec![1, 2, 8, 8], vals).unwrap();
            let (y, cache) = maxpool2d_forward(&x).unwrap();
            let proj = Tensor::from_fn(y.shape(), |i| (i as f64 * 0.37).sin());
            let gx = maxpool2d_backward(&proj, &cache).unwrap();
            let num = numeric(&x, |x| maxpool2d_forward(x).unwrap().0.dot(&proj).unwrap());
            assert_close(gx.data(), &num, 1e-4);
        }
    }

    #[test]
    fn preserves_batch_and_channels() {
        let x = Tensor::<f32>::zeros(&[3, 5, 6, 4]);
        let (y, _) = maxpool2d_forward(&x).unwrap();
        assert_eq!(y.shape(), &[3, 5, 3, 2]);
    }
}
