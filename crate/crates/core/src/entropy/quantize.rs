use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;

use crate::network::Real;

/// `U(-0.5, 0.5)` noise of the given shape, drawn row-major.
pub fn uniform_noise<F: Real, R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<F> {
    Array2::from_shape_simple_fn((rows, cols), || F::of(rng.random_range(-0.5..0.5)))
}

/// Training-time quantization proxy `z + u`. Its gradient w.r.t. `z` is the
/// identity, so callers pass latent gradients straight through.
pub fn noisy_quantize<F: Real, R: Rng>(z: ArrayView1<F>, rng: &mut R) -> Array1<F> {
    z.mapv(|v| v + F::of(rng.random_range(-0.5..0.5)))
}

/// Rounds half away from zero. Values beyond `i32` saturate; the coder
/// escapes anything outside the table range anyway.
pub fn hard_quantize<F: Real>(z: ArrayView1<F>) -> Vec<i32> {
    z.iter()
        .map(|v| {
            let r = v.round().f64();
            if r.is_nan() {
                0
            } else {
                r.clamp(i32::MIN as f64, i32::MAX as f64) as i32
            }
        })
        .collect()
}
