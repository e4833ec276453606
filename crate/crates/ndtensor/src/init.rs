use crate::rng::RngState;
use crate::tensor::Tensor;

/// Half-width `sqrt(6 / (fan_in + fan_out))` of the Xavier-uniform range.
///
/// Shapes are read as `[fan_in, fan_out, receptive...]`; a 1-D shape uses its
/// length for both fans.
pub fn xavier_bound(shape: &[usize]) -> f64 {
    let (fan_in, fan_out) = match shape {
        [] => (1, 1),
        [n] => (*n, *n),
        [a, b, rest @ ..] => {
            let r: usize = rest.iter().product();
            (a * r, b * r)
        }
    };
    (6.0 / (fan_in + fan_out).max(1) as f64).sqrt()
}

pub fn xavier_uniform(shape: &[usize], rng: &mut RngState) -> Tensor {
    let a = xavier_bound(shape);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(-a, a)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches length")
}
