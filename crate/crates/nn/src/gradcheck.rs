//! Central-difference gradient verification.

use crate::error::{NnError, Result};
use crate::param::Param;

/// A differentiable scalar loss over a set of parameters.
pub trait Objective {
    fn parameters(&mut self) -> Vec<&mut Param>;

    /// True when the forward pass draws random numbers (active dropout).
    fn is_stochastic(&self) -> bool;

    fn loss(&mut self) -> Result<f64>;

    /// Zeroes gradients, then runs forward and backward, leaving the analytic
    /// gradient in every `Param::grad`.
    fn loss_and_grad(&mut self) -> Result<f64>;
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// `(parameter name, flat index, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Compares analytic gradients with `(f(theta + eps) - f(theta - eps)) / 2 eps`.
///
/// `max_per_param` limits how many entries of each parameter are probed
/// (evenly strided); `None` probes every trainable entry. Frozen embedding
/// rows are skipped because they are not trainable.
pub fn gradient_check<O: Objective + ?Sized>(
    objective: &mut O,
    epsilon: f64,
    max_per_param: Option<usize>,
) -> Result<GradCheckReport> {
    if objective.is_stochastic() {
        return Err(NnError::NonDeterministic(
            "dropout is active; switch to inference mode or disable dropout".into(),
        ));
    }
    objective.loss_and_grad()?;
    let analytic: Vec<(String, Vec<f64>, Vec<usize>)> = objective
        .parameters()
        .into_iter()
        .map(|p| {
            let probe: Vec<usize> = (0..p.len()).filter(|&i| !p.is_frozen_entry(i)).collect();
            let probe = match max_per_param {
                Some(k) if probe.len() > k && k > 0 => {
                    let stride = probe.len() as f64 / k as f64;
                    (0..k).map(|j| probe[(j as f64 * stride) as usize]).collect()
                }
                _ => probe,
            };
            (p.name.clone(), p.grad.iter().copied().collect(), probe)
        })
        .collect();

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        worst: None,
    };
    for (pi, (name, grads, probe)) in analytic.iter().enumerate() {
        for &idx in probe {
            let original = nudge(objective, pi, idx, None);
            nudge(objective, pi, idx, Some(original + epsilon));
            let plus = objective.loss()?;
            nudge(objective, pi, idx, Some(original - epsilon));
            let minus = objective.loss()?;
            nudge(objective, pi, idx, Some(original));
            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = relative_error(grads[idx], numeric);
            report.checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                if err >= report.max_relative_error {
                    report.worst = Some((name.clone(), idx, grads[idx], numeric));
                }
            }
        }
    }
    Ok(report)
}

/// Reads (and optionally overwrites) one flat entry of parameter `pi`.
fn nudge<O: Objective + ?Sized>(objective: &mut O, pi: usize, idx: usize, set: Option<f64>) -> f64 {
    let mut params = objective.parameters();
    let slot = params[pi]
        .value
        .as_slice_mut()
        .expect("parameters are stored in standard layout");
    let old = slot[idx];
    if let Some(v) = set {
        slot[idx] = v;
    }
    old
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::dense::Dense;
    use crate::param::HasParams;
    use ndarray::{array, Array2};

    /// Squared error of a linear layer: quadratic in every parameter.
    struct Linear {
        layer: Dense,
        x: Array2<f64>,
        target: Array2<f64>,
    }

    impl Objective for Linear {
        fn parameters(&mut self) -> Vec<&mut Param> {
            self.layer.params_mut()
        }
        fn is_stochastic(&self) -> bool {
            false
        }
        fn loss(&mut self) -> Result<f64> {
            let y = self.layer.apply(&self.x)?;
            Ok((&y - &self.target).mapv(|v| v * v).sum())
        }
        fn loss_and_grad(&mut self) -> Result<f64> {
            self.layer.zero_grad();
            let y = self.layer.forward(&self.x)?;
            let diff = &y - &self.target;
            self.layer.backward(&(&diff * 2.0))?;
            Ok(diff.mapv(|v| v * v).sum())
        }
    }

    #[test]
    fn linear_model_is_exact() {
        let mut obj = Linear {
            layer: Dense::from_weights(
                array![[0.3, -0.2], [0.1, 0.5], [-0.7, 0.2]],
                array![[0.05, -0.1]],
                Activation::Identity,
            ),
            x: array![[1.0, 2.0, -1.0], [0.5, -0.3, 0.8]],
            target: array![[0.2, 0.1], [-0.4, 0.9]],
        };
        let report = gradient_check(&mut obj, 1e-5, None).unwrap();
        assert_eq!(report.checked, 8);
        assert!(report.max_relative_error < 1e-9, "{report:?}");
    }

    struct Noisy;
    impl Objective for Noisy {
        fn parameters(&mut self) -> Vec<&mut Param> {
            vec![]
        }
        fn is_stochastic(&self) -> bool {
            true
        }
        fn loss(&mut self) -> Result<f64> {
            Ok(0.0)
        }
        fn loss_and_grad(&mut self) -> Result<f64> {
            Ok(0.0)
        }
    }

    #[test]
    fn refuses_stochastic_objectives() {
        assert!(matches!(
            gradient_check(&mut Noisy, 1e-5, None),
            Err(NnError::NonDeterministic(_))
        ));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }
}
