//! Central-difference verification of tape gradients.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{numerical, usage, Result};
use crate::graph::{Graph, Var};
use crate::tensor::ParameterSet;
use crate::Rng;

/// Gradients smaller than this fraction of the loss (or of 1, whichever is
/// larger) are measured against that floor instead of their own magnitude:
/// a central difference cannot resolve them more finely.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares the tape gradient of `loss` against central differences on up to
/// `sample_count` randomly chosen trainable coordinates.
pub fn grad_check<F>(
    params: &ParameterSet,
    loss: F,
    step: f64,
    sample_count: usize,
    rng: &mut Rng,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(usage!("finite-difference step must be positive"));
    }
    let (base_loss, analytic) = {
        let mut g = Graph::new(params);
        let out = loss(&mut g)?;
        let value = g.scalar(out);
        if !value.is_finite() {
            return Err(numerical!("loss is not finite at the base point"));
        }
        (value, g.backward(out))
    };
    let floor = RELATIVE_FLOOR * base_loss.abs().max(1.0);

    let mut coords: Vec<_> = params
        .ids()
        .filter(|&id| params.is_trainable(id))
        .flat_map(|id| (0..params.get(id).len()).map(move |i| (id, i)))
        .collect();
    coords.shuffle(rng);
    coords.truncate(sample_count);

    let mut probe = params.clone();
    let eval = |p: &ParameterSet| -> Result<f64> {
        let mut g = Graph::new(p);
        let out = loss(&mut g)?;
        Ok(g.scalar(out))
    };
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, checked: coords.len() };
    for (id, i) in coords {
        let base = params.get(id).values()[i];
        probe.get_mut(id).values_mut()[i] = base + step;
        let plus = eval(&probe)?;
        probe.get_mut(id).values_mut()[i] = base - step;
        let minus = eval(&probe)?;
        probe.get_mut(id).values_mut()[i] = base;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(numerical!("non-finite loss when perturbing `{}`[{i}]", params.name(id)));
        }
        let numeric = (plus - minus) / (2.0 * step);
        let exact = analytic.get(id).map_or(0.0, |g| g[i]);
        let diff = (numeric - exact).abs();
        let err = diff / numeric.abs().max(exact.abs()).max(floor);
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((String::from(params.name(id)), i));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Compute;
    use crate::seeded_rng;
    use crate::tensor::Tensor;
    use alloc::vec;

    #[test]
    fn quadratic_is_exact() {
        let mut set = ParameterSet::new();
        let w = set.add("w", Tensor::new(&[2, 2], vec![0.3, -1.2, 2.0, 0.7]).unwrap()).unwrap();
        let report = grad_check(
            &set,
            |g| {
                let v = g.param(w);
                Ok(g.dot(&v, &v))
            },
            1e-5,
            4,
            &mut seeded_rng(0),
        )
        .unwrap();
        assert_eq!(report.checked, 4);
        assert!(report.max_rel_error <= 1e-7, "{report:?}");
    }

    #[test]
    fn constant_loss_has_zero_error() {
        let mut set = ParameterSet::new();
        set.add("w", Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        let report = grad_check(&set, |g| Ok(g.constant(vec![4.2])), 1e-5, 10, &mut seeded_rng(0)).unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn non_finite_loss_names_coordinate() {
        let mut set = ParameterSet::new();
        let w = set.add("w", Tensor::new(&[1], vec![0.0]).unwrap()).unwrap();
        let err = grad_check(
            &set,
            |g| {
                let v = g.param(w);
                let value = g.value(&v)[0];
                Ok(g.constant(vec![if value > 0.0 { f64::INFINITY } else { 0.0 }]))
            },
            1e-5,
            1,
            &mut seeded_rng(0),
        )
        .unwrap_err();
        assert!(matches!(err, crate::Error::Numerical(ref m) if m.contains("`w`[0]")));
    }
}
