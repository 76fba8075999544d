//! Plain SGD with global-norm gradient clipping.

use crate::error::{numerical, Result};
use crate::tensor::ParameterSet;

pub const DEFAULT_CLIP_NORM: f64 = 5.0;

/// Outcome of one [`sgd_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// Factor applied to every gradient (1 when no clipping happened).
    pub clip_scale: f64,
}

/// Applies `value -= lr * scale * grad` to every trainable entry and zeroes
/// all gradients. Non-trainable entries are left alone.
///
/// A non-finite gradient aborts the step before any value changes; the
/// gradients are still cleared.
pub fn sgd_step(params: &mut ParameterSet, learning_rate: f64, clip_norm: f64) -> Result<StepStats> {
    let ids: alloc::vec::Vec<_> = params.ids().collect();
    let mut sq = 0.0;
    for &id in &ids {
        if !params.is_trainable(id) {
            continue;
        }
        if let Some(g) = params.get(id).grad() {
            if let Some(pos) = g.iter().position(|x| !x.is_finite()) {
                let msg = numerical!("non-finite gradient in `{}` at index {pos}", params.name(id));
                params.zero_grad();
                return Err(msg);
            }
            sq += g.iter().map(|x| x * x).sum::<f64>();
        }
    }
    let grad_norm = libm::sqrt(sq);
    let clip_scale = if grad_norm > clip_norm { clip_norm / grad_norm } else { 1.0 };
    let step = learning_rate * clip_scale;
    for &id in &ids {
        if !params.is_trainable(id) {
            continue;
        }
        let tensor = params.get_mut(id);
        let Some(g) = tensor.grad().map(|g| g.to_vec()) else { continue };
        for (v, d) in tensor.values_mut().iter_mut().zip(g) {
            *v -= step * d;
        }
    }
    params.zero_grad();
    Ok(StepStats { grad_norm, clip_scale })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use alloc::vec;

    #[test]
    fn single_value_update() {
        let mut set = ParameterSet::new();
        let id = set.add("w", Tensor::new(&[1], vec![1.0]).unwrap()).unwrap();
        set.get_mut(id).accumulate_grad(&[0.5]);
        sgd_step(&mut set, 0.1, f64::INFINITY).unwrap();
        assert_eq!(set.get(id).values(), &[0.95]);
        assert_eq!(set.get(id).grad().unwrap(), &[0.0]);
    }

    #[test]
    fn clipping_scales_gradient() {
        let mut set = ParameterSet::new();
        let id = set.add("w", Tensor::new(&[2], vec![0.0, 0.0]).unwrap()).unwrap();
        set.get_mut(id).accumulate_grad(&[6.0, 8.0]);
        let stats = sgd_step(&mut set, 1.0, 1.0).unwrap();
        assert_eq!(stats.grad_norm, 10.0);
        assert!((stats.clip_scale - 0.1).abs() < 1e-15);
        let v = set.get(id).values();
        assert!((v[0] + 0.6).abs() < 1e-15 && (v[1] + 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_values() {
        let mut set = ParameterSet::new();
        let id = set.add("w", Tensor::new(&[2], vec![0.3, -0.7]).unwrap()).unwrap();
        set.get_mut(id).accumulate_grad(&[0.0, 0.0]);
        sgd_step(&mut set, 0.5, 5.0).unwrap();
        assert_eq!(set.get(id).values(), &[0.3, -0.7]);
    }

    #[test]
    fn frozen_entries_untouched() {
        let mut set = ParameterSet::new();
        let a = set.add("a", Tensor::new(&[1], vec![1.0]).unwrap()).unwrap();
        let b = set.add("b", Tensor::new(&[1], vec![1.0]).unwrap()).unwrap();
        set.set_trainable(b, false);
        set.get_mut(a).accumulate_grad(&[1.0]);
        set.get_mut(b).accumulate_grad(&[1.0]);
        sgd_step(&mut set, 0.5, 5.0).unwrap();
        assert_eq!(set.get(a).values(), &[0.5]);
        assert_eq!(set.get(b).values(), &[1.0]);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut set = ParameterSet::new();
        let id = set.add("w", Tensor::new(&[2], vec![1.0, 1.0]).unwrap()).unwrap();
        set.get_mut(id).accumulate_grad(&[0.1, f64::NAN]);
        let err = sgd_step(&mut set, 0.1, 5.0).unwrap_err();
        assert!(matches!(err, crate::Error::Numerical(ref m) if m.contains("`w`") && m.contains("index 1")));
        assert_eq!(set.get(id).values(), &[1.0, 1.0]);
    }
}
