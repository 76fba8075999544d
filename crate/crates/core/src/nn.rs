//! Network building blocks: the gated recurrent unit, softmax and
//! cross-entropy, and seeded initialization.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{config, usage, Result};
use crate::graph::{kernel, Compute, Eval};
use crate::tensor::{ParamId, ParameterSet, Tensor};
use crate::Rng;

/// Lower bound applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Half-width of the uniform weight initializer.
pub const INIT_SCALE: f64 = 0.08;

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(usage!("softmax of an empty vector"));
    }
    Ok(kernel::softmax(logits))
}

/// `−ln predicted[target]`, with the probability floored at [`PROB_FLOOR`].
pub fn cross_entropy(predicted: &[f64], target: usize) -> Result<f64> {
    let p = predicted
        .get(target)
        .ok_or_else(|| usage!("target index {target} outside distribution of size {}", predicted.len()))?;
    Ok(-libm::log(p.max(PROB_FLOOR)))
}

pub fn sigmoid(x: f64) -> f64 {
    kernel::sigmoid(x)
}

/// Seeded parameter initializer: weights uniform in ±[`INIT_SCALE`], biases zero.
pub struct Init<'r> {
    rng: &'r mut Rng,
}

impl<'r> Init<'r> {
    pub fn new(rng: &'r mut Rng) -> Self {
        Self { rng }
    }

    pub fn weights(&mut self, shape: &[usize]) -> Result<Tensor> {
        let n = shape.iter().product();
        let values = (0..n).map(|_| self.rng.gen_range(-INIT_SCALE..INIT_SCALE)).collect();
        Tensor::new(shape, values)
    }

    pub fn bias(&mut self, len: usize) -> Result<Tensor> {
        Tensor::zeros(&[len])
    }
}

/// Parameter handles of one GRU layer.
///
/// Update gate `z`, reset gate `r`, candidate `n`:
///
/// ```text
/// z  = σ(W_z x + U_z h + b_z)
/// r  = σ(W_r x + U_r h + b_r)
/// n  = tanh(W_n x + U_n (r ⊙ h) + b_n)
/// h' = (1 − z) ⊙ h + z ⊙ n
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gru {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_update: ParamId,
    pub u_update: ParamId,
    pub b_update: ParamId,
    pub w_reset: ParamId,
    pub u_reset: ParamId,
    pub b_reset: ParamId,
    pub w_cand: ParamId,
    pub u_cand: ParamId,
    pub b_cand: ParamId,
}

impl Gru {
    /// Registers the nine tensors under `prefix.*`.
    pub fn register(
        set: &mut ParameterSet,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        init: &mut Init<'_>,
    ) -> Result<Self> {
        let mut w = |set: &mut ParameterSet, name: &str| -> Result<ParamId> {
            set.add(&format!("{prefix}.{name}"), init.weights(&[hidden_dim, input_dim])?)
        };
        let w_update = w(set, "w_update")?;
        let w_reset = w(set, "w_reset")?;
        let w_cand = w(set, "w_cand")?;
        let mut u = |set: &mut ParameterSet, name: &str| -> Result<ParamId> {
            set.add(&format!("{prefix}.{name}"), init.weights(&[hidden_dim, hidden_dim])?)
        };
        let u_update = u(set, "u_update")?;
        let u_reset = u(set, "u_reset")?;
        let u_cand = u(set, "u_cand")?;
        let b = |set: &mut ParameterSet, name: &str| -> Result<ParamId> {
            set.add(&format!("{prefix}.{name}"), Tensor::zeros(&[hidden_dim])?)
        };
        let b_update = b(set, "b_update")?;
        let b_reset = b(set, "b_reset")?;
        let b_cand = b(set, "b_cand")?;
        Ok(Self {
            input_dim,
            hidden_dim,
            w_update,
            u_update,
            b_update,
            w_reset,
            u_reset,
            b_reset,
            w_cand,
            u_cand,
            b_cand,
        })
    }

    /// Looks up an existing layer by prefix and checks its shapes.
    pub fn bind(set: &ParameterSet, prefix: &str) -> Result<Self> {
        let id = |name: &str| {
            set.id(&format!("{prefix}.{name}"))
                .ok_or_else(|| config!("missing parameter `{prefix}.{name}`"))
        };
        let gru = Self {
            input_dim: set.get(id("w_update")?).cols(),
            hidden_dim: set.get(id("w_update")?).rows(),
            w_update: id("w_update")?,
            u_update: id("u_update")?,
            b_update: id("b_update")?,
            w_reset: id("w_reset")?,
            u_reset: id("u_reset")?,
            b_reset: id("b_reset")?,
            w_cand: id("w_cand")?,
            u_cand: id("u_cand")?,
            b_cand: id("b_cand")?,
        };
        gru.check(set)?;
        Ok(gru)
    }

    pub fn check(&self, set: &ParameterSet) -> Result<()> {
        let (h, i) = (self.hidden_dim, self.input_dim);
        for id in [self.w_update, self.w_reset, self.w_cand] {
            if set.get(id).shape() != [h, i] {
                return Err(config!("`{}` must be {h}x{i}", set.name(id)));
            }
        }
        for id in [self.u_update, self.u_reset, self.u_cand] {
            if set.get(id).shape() != [h, h] {
                return Err(config!("`{}` must be {h}x{h}", set.name(id)));
            }
        }
        for id in [self.b_update, self.b_reset, self.b_cand] {
            if set.get(id).shape() != [h] {
                return Err(config!("`{}` must have length {h}", set.name(id)));
            }
        }
        Ok(())
    }

    /// One recurrence step on any [`Compute`] backend.
    pub fn step<C: Compute>(&self, c: &mut C, prev: &C::V, input: &C::V) -> C::V {
        let gate = |c: &mut C, w, u, b, h: &C::V| {
            let wx = c.matvec(w, input);
            let uh = c.matvec(u, h);
            let bias = c.param(b);
            let s = c.add(&wx, &uh);
            c.add(&s, &bias)
        };
        let z_pre = gate(c, self.w_update, self.u_update, self.b_update, prev);
        let z = c.sigmoid(&z_pre);
        let r_pre = gate(c, self.w_reset, self.u_reset, self.b_reset, prev);
        let r = c.sigmoid(&r_pre);
        let reset_prev = c.mul(&r, prev);
        let n_pre = gate(c, self.w_cand, self.u_cand, self.b_cand, &reset_prev);
        let n = c.tanh(&n_pre);
        let delta = c.sub(&n, prev);
        let moved = c.mul(&z, &delta);
        c.add(prev, &moved)
    }
}

/// Plain-vector GRU step with dimension checks.
pub fn gru_step(prev_state: &[f64], input: &[f64], params: &ParameterSet, gru: &Gru) -> Result<Vec<f64>> {
    if prev_state.len() != gru.hidden_dim || input.len() != gru.input_dim {
        return Err(config!(
            "gru_step expects state {} and input {}, got {} and {}",
            gru.hidden_dim,
            gru.input_dim,
            prev_state.len(),
            input.len()
        ));
    }
    let mut e = Eval::new(params);
    Ok(gru.step(&mut e, &prev_state.to_vec(), &input.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::gradcheck::grad_check;
    use crate::seeded_rng;

    fn layer(seed: u64, input: usize, hidden: usize) -> (ParameterSet, Gru) {
        let mut rng = seeded_rng(seed);
        let mut set = ParameterSet::new();
        let gru = Gru::register(&mut set, "gru", input, hidden, &mut Init::new(&mut rng)).unwrap();
        (set, gru)
    }

    #[test]
    fn zero_params_zero_state_gives_zero() {
        let (mut set, gru) = layer(1, 3, 4);
        for id in set.ids().collect::<Vec<_>>() {
            set.get_mut(id).values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let out = gru_step(&[0.0; 4], &[0.3, -0.2, 0.9], &set, &gru).unwrap();
        assert_eq!(out, alloc::vec![0.0; 4]);
    }

    #[test]
    fn output_shape_and_range() {
        let (set, gru) = layer(2, 3, 4);
        let out = gru_step(&[0.9, -0.9, 0.5, 0.0], &[5.0, -5.0, 2.0], &set, &gru).unwrap();
        assert_eq!(out.len(), 4);
        assert!(out.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let (set, gru) = layer(3, 3, 4);
        assert!(matches!(gru_step(&[0.0; 3], &[0.0; 3], &set, &gru), Err(crate::Error::Config(_))));
        assert!(matches!(gru_step(&[0.0; 4], &[0.0; 2], &set, &gru), Err(crate::Error::Config(_))));
    }

    #[test]
    fn negative_update_bias_keeps_previous_state() {
        let (mut set, gru) = layer(4, 3, 4);
        for id in [gru.w_update, gru.u_update] {
            set.get_mut(id).values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        for bias in [-6.0, -8.0, -12.0] {
            set.get_mut(gru.b_update).values_mut().iter_mut().for_each(|v| *v = bias);
            let prev = [0.5, -0.4, 0.3, 0.2];
            let mut e = Eval::new(&set);
            let pre = e.param(gru.b_update);
            let z = e.sigmoid(&pre);
            assert!(z.iter().all(|zi| 1.0 - zi >= 0.99));
            let out = gru_step(&prev, &[1.0, 1.0, 1.0], &set, &gru).unwrap();
            for (o, p) in out.iter().zip(prev) {
                assert!((o - p).abs() < 0.01 * 2.0);
            }
        }
    }

    #[test]
    fn gru_gradient_matches_finite_differences() {
        let (set, gru) = layer(42, 3, 4);
        let report = grad_check(
            &set,
            |g: &mut Graph<'_>| {
                let h0 = g.constant(alloc::vec![0.1, -0.2, 0.3, 0.05]);
                let x = g.constant(alloc::vec![0.7, -0.4, 0.2]);
                let h1 = gru.step(g, &h0, &x);
                let h2 = gru.step(g, &h1, &x);
                let w = g.constant(alloc::vec![1.0, -2.0, 0.5, 3.0]);
                Ok(g.dot(&h2, &w))
            },
            1e-5,
            usize::MAX,
            &mut seeded_rng(42),
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }

    #[test]
    fn softmax_cases() {
        let s = softmax(&[0.0, 0.0, 0.0]).unwrap();
        assert!(s.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
        let s = softmax(&[1000.0, 0.0]).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-15 && s[1] >= 0.0 && s[1] < 1e-300);
        let s = softmax(&[libm::log(1.0), libm::log(2.0), libm::log(3.0)]).unwrap();
        for (p, want) in s.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((p - want).abs() <= 1e-12);
        }
        assert!(softmax(&[]).is_err());
        let s = softmax(&[-1000.0, 1000.0, 3.0]).unwrap();
        assert!((s.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn cross_entropy_cases() {
        assert!(cross_entropy(&[1.0, 0.0, 0.0], 0).unwrap().abs() < 1e-15);
        let uniform = [0.125; 8];
        assert!((cross_entropy(&uniform, 5).unwrap() - libm::log(8.0)).abs() < 1e-15);
        assert!((cross_entropy(&[0.5, 0.5], 1).unwrap() - libm::log(2.0)).abs() < 1e-15);
        assert_eq!(cross_entropy(&[1.0, 0.0], 1).unwrap(), -libm::log(PROB_FLOOR));
        assert!(cross_entropy(&[0.5, 0.5], 2).is_err());
    }
}
