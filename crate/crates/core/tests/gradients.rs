//! Analytic gradients against central finite differences in FP64.

use numdev::attention::{BlockGeometry, Variant};
use numdev::linalg::Matrix;
use numdev::numerics::{Arithmetic, FloatFormat};
use numdev::trainer::{backward, forward_loss, KernelChoice, TaskSpec, ToyModel};

fn task() -> TaskSpec {
    TaskSpec {
        vocab: 6,
        seq_len: 5,
        head_dim: 4,
        classes: 3,
        examples: 6,
        batch_size: 6,
        ..TaskSpec::default()
    }
}

fn with_entry(model: &ToyModel, tensor: usize, idx: usize, delta: f64) -> ToyModel {
    let tensors = model
        .tensors()
        .iter()
        .enumerate()
        .map(|(i, (name, m))| {
            let mut data = m.as_slice().to_vec();
            if i == tensor {
                data[idx] += delta;
            }
            let m = Matrix::from_vec(m.rows(), m.cols(), data, FloatFormat::FP64).unwrap();
            (name.to_string(), m)
        })
        .collect();
    ToyModel::from_tensors(tensors).unwrap()
}

fn check(variant: Variant) {
    let task = task();
    let data = task.dataset();
    let model = ToyModel::init(&task, 11, 0.7, FloatFormat::FP64).unwrap();
    let kernel = KernelChoice {
        variant,
        geometry: BlockGeometry::new(2, 2).unwrap(),
        arith: Arithmetic::per_op(FloatFormat::FP64),
    };
    let (_, acts) = forward_loss(&model, &data, kernel).unwrap();
    let grads = backward(&model, &acts, kernel.arith).unwrap();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (t, (name, g)) in grads.tensors().iter().enumerate() {
        for idx in 0..g.as_slice().len() {
            let up = forward_loss(&with_entry(&model, t, idx, h), &data, kernel).unwrap().0;
            let down = forward_loss(&with_entry(&model, t, idx, -h), &data, kernel).unwrap().0;
            let numeric = (up - down) / (2.0 * h);
            let analytic = g.as_slice()[idx];
            let err = (numeric - analytic).abs() / (1e-4 + numeric.abs().max(analytic.abs()));
            assert!(err < 1e-5, "{name}[{idx}]: analytic {analytic} numeric {numeric}");
            worst = worst.max(err);
        }
    }
    assert!(worst.is_finite());
}

#[test]
fn baseline_gradients_match_finite_differences() {
    check(Variant::Baseline);
}

#[test]
fn flash_gradients_match_finite_differences() {
    check(Variant::Flash);
}
