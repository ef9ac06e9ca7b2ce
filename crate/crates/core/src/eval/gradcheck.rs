//! Central finite-difference verification of analytic gradients.

use std::fmt;

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::net::{backward, forward, forward_with_targets, Gradients, Group, NetworkConfig, ParameterStore};
use crate::rng::stream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    pub h: f64,
    pub tolerance: f64,
    /// Coordinates sampled per tensor; `None` checks every coordinate.
    pub samples: Option<usize>,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            h: 1e-5,
            tolerance: 1e-4,
            samples: Some(200),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateError {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Outcome for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub group: Group,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a ReLU kink or flipped a
    /// pooling switch.
    pub excluded: usize,
    /// Set when the tensor has no path to the loss and its analytic gradient
    /// is identically zero; such tensors are not differenced.
    pub zero_gradient: bool,
    pub worst: Option<CoordinateError>,
}

impl TensorCheck {
    pub fn max_rel_err(&self) -> f64 {
        self.worst.map_or(0.0, |w| w.rel_err)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.max_rel_err() <= self.tolerance)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.tensors.iter().map(TensorCheck::max_rel_err).fold(0.0, f64::max)
    }

    /// Largest relative error within `group`, or `None` if every tensor of
    /// the group was skipped.
    pub fn group_max(&self, group: Group) -> Option<f64> {
        self.tensors
            .iter()
            .filter(|t| t.group == group && !t.zero_gradient)
            .map(TensorCheck::max_rel_err)
            .reduce(f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TensorCheck> {
        self.tensors.iter().filter(|t| t.max_rel_err() > self.tolerance)
    }

    /// Fails with the worst offending coordinates unless every tensor passed.
    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            return Ok(self);
        }
        let worst: Vec<String> = self.failures().map(|t| t.to_string()).collect();
        Err(Error::InvalidState(format!(
            "gradient check failed at tolerance {:e}: {}",
            self.tolerance,
            worst.join("; ")
        )))
    }
}

impl fmt::Display for TensorCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.zero_gradient {
            return write!(f, "{:<24} {:<8} zero-gradient, skipped", self.name, self.group.name());
        }
        write!(
            f,
            "{:<24} {:<8} checked={:<4} excluded={:<3} max_rel_err={:.3e}",
            self.name,
            self.group.name(),
            self.checked,
            self.excluded,
            self.max_rel_err()
        )?;
        if let Some(w) = self.worst {
            write!(
                f,
                " worst[{}] analytic={:.6e} numeric={:.6e}",
                w.index, w.analytic, w.numeric
            )?;
        }
        Ok(())
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.tensors {
            let mark = if t.max_rel_err() <= self.tolerance { "ok  " } else { "FAIL" };
            writeln!(f, "{mark} {t}")?;
        }
        write!(
            f,
            "{} max_rel_err={:.3e} tolerance={:.1e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_rel_err(),
            self.tolerance
        )
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Checks the gradients computed by backward against central differences
/// of the total loss.
pub fn gradcheck(
    store: &ParameterStore<f64>,
    config: &NetworkConfig,
    x: &Tensor<f64>,
    labels: &[usize],
    options: &GradcheckOptions,
) -> Result<GradcheckReport> {
    let record = forward(store, config, x, labels)?;
    let analytic = backward(&record, store, config)?;
    check_gradients(store, config, x, labels, &analytic, options)
}

/// Compares `analytic` against central differences of the total loss.
/// Reconstruction targets are held at their unperturbed values, since the
/// loss treats them as constants.
pub fn check_gradients(
    store: &ParameterStore<f64>,
    config: &NetworkConfig,
    x: &Tensor<f64>,
    labels: &[usize],
    analytic: &Gradients<f64>,
    options: &GradcheckOptions,
) -> Result<GradcheckReport> {
    if !(options.h > 0.0) {
        return Err(Error::InvalidArgument(format!("step {} must be positive", options.h)));
    }
    let base = forward(store, config, x, labels)?;
    let targets: Vec<Tensor<f64>> = base.activations[..config.depth()].to_vec();
    let pattern = base.activation_pattern();
    let mut work = store.clone();

    let eval = |work: &ParameterStore<f64>| -> Result<(f64, bool)> {
        let r = forward_with_targets(work, config, x, labels, Some(&targets))?;
        Ok((r.losses.total, r.activation_pattern() == pattern))
    };

    let mut tensors = Vec::with_capacity(store.len());
    for (k, p) in store.params().iter().enumerate() {
        let grad = analytic.get(k);
        let mut check = TensorCheck {
            name: p.name.clone(),
            group: p.group,
            checked: 0,
            excluded: 0,
            zero_gradient: false,
            worst: None,
        };
        let unreachable = p.group == Group::Decoder && (config.lambda == 0.0 || !config.variant.has_decoder());
        if unreachable && grad.data().iter().all(|&g| g == 0.0) {
            check.zero_gradient = true;
            tensors.push(check);
            continue;
        }
        let len = p.value.len();
        let coords: Vec<usize> = match options.samples {
            Some(s) if s < len => {
                let mut v = sample(&mut stream(options.seed, &[k as u64]), len, s).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        for idx in coords {
            let orig = p.value.data()[idx];
            work.params_mut()[k].value.data_mut()[idx] = orig + options.h;
            let (plus, same_plus) = eval(&work)?;
            work.params_mut()[k].value.data_mut()[idx] = orig - options.h;
            let (minus, same_minus) = eval(&work)?;
            work.params_mut()[k].value.data_mut()[idx] = orig;
            if !(same_plus && same_minus) {
                check.excluded += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * options.h);
            let a = grad.data()[idx];
            let e = rel_err(a, numeric);
            check.checked += 1;
            if check.worst.is_none_or(|w| e > w.rel_err) {
                check.worst = Some(CoordinateError {
                    index: idx,
                    analytic: a,
                    numeric,
                    rel_err: e,
                });
            }
        }
        tensors.push(check);
    }
    Ok(GradcheckReport {
        tolerance: options.tolerance,
        tensors,
    })
}
