use rand::Rng;

use crate::tensor::{Element, Tensor};

/// Xavier/Glorot uniform initialization on the open interval `(−a, a)` with
/// `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_init<T: Element, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let limit = T::of(bound);
    Tensor::from_fn(shape, |_| loop {
        // Rounding to a narrower float can land exactly on the bound.
        let v = T::of(rng.gen_range(-bound..bound));
        if v.abs() < limit {
            break v;
        }
    })
}
