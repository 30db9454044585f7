#![allow(dead_code)]

use ckdyn::tensor::Tensor;

/// `|a - b| / (|a| + |b|)` in the Euclidean norm; zero when both vanish.
pub fn rel_err(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let diff = a.sub(b).unwrap().norm();
    let scale = a.norm() + b.norm();
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(x: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let mut data = x.data().to_vec();
        data[i] = x.data()[i] + h;
        let up = f(&Tensor::new(x.shape().to_vec(), data.clone()).unwrap());
        data[i] = x.data()[i] - h;
        let down = f(&Tensor::new(x.shape().to_vec(), data).unwrap());
        out.push((up - down) / (2.0 * h));
    }
    Tensor::new(x.shape().to_vec(), out).unwrap()
}

pub fn mnist_fixture_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-10k")
}
