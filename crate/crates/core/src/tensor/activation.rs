use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum Activation {
    Relu,
    /// `x·sigmoid(x)`.
    Swish,
    /// Leaky slope for negative inputs: a single shared value, or one value per
    /// position of the innermost axis.
    Prelu(Vec<f32>),
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

pub fn activate(input: &Tensor, kind: &Activation) -> Tensor {
    let mut out = input.clone();
    activate_in_place(&mut out, kind);
    out
}

/// # Panics
///
/// If a per-feature PReLU slope does not match the innermost extent.
pub fn activate_in_place(t: &mut Tensor, kind: &Activation) {
    let inner = *t.shape().last().expect("tensor has at least one axis");
    match kind {
        Activation::Relu => t.data_mut().iter_mut().for_each(|v| *v = v.max(0.0)),
        Activation::Swish => t.data_mut().iter_mut().for_each(|v| *v *= sigmoid(*v)),
        Activation::Prelu(slope) => {
            assert!(
                slope.len() == 1 || slope.len() == inner,
                "prelu slope length {} does not match feature extent {inner}",
                slope.len()
            );
            for row in t.data_mut().chunks_exact_mut(inner) {
                for (i, v) in row.iter_mut().enumerate() {
                    if *v < 0.0 {
                        *v *= slope[if slope.len() == 1 { 0 } else { i }];
                    }
                }
            }
        }
    }
}
