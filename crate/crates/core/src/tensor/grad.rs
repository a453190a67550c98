use super::Tensor;

/// Central-difference gradient of a scalar function, one element at a time.
pub fn finite_diff_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`; zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|v| v * v).sum::<f64>().sqrt());
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}
