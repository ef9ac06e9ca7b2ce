use log::{info, warn};

use super::log::{MetricsLog, MetricsRow, ValidationRow};
use super::sgd::{sgd_step_scaled, SgdConfig};
use crate::data::{augment_batch, AugmentSpec, BatchSchedule, Dataset};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::net::{
    backward_for, copy_layerwise_into_stacked, forward, Group, NetworkConfig, ParameterStore, TrainMask, Variant,
};
use crate::rng::{derive_seed, stream};
use crate::tensor::{Real, Tensor};

/// Optimiser settings and seeds for the training phases. Phase 1 is the
/// initialisation of the encoder and head (fresh or from a classifier).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPlan {
    /// Layerwise decoder pretraining.
    pub step2: SgdConfig,
    /// Rate multipliers for the decoder of each macro-layer during step 2;
    /// empty means 1 for all.
    pub step2_layer_lr: Vec<f64>,
    /// Stacked decoder finetuning.
    pub step3: SgdConfig,
    /// Joint finetuning of every pathway.
    pub step4: SgdConfig,
    pub seed: u64,
    /// Training-time augmentation; evaluation never augments.
    pub augment: Option<AugmentSpec>,
    /// Abort when the loss exceeds this multiple of the phase's first loss.
    pub divergence_factor: f64,
    /// Evaluate on the validation set every this many iterations (0: never).
    pub validate_every: u64,
    /// Call [`Observer::checkpoint`] every this many iterations (0: never).
    pub checkpoint_every: u64,
}

impl TrainPlan {
    /// Plan with batch sizes 16 (steps 2 and 3) and 64 (step 4), and a step-4
    /// rate one tenth of the pretraining rate.
    pub fn new(lr: f64, iterations: u64, seed: u64) -> Self {
        TrainPlan {
            step2: SgdConfig::new(lr, 16, iterations),
            step2_layer_lr: Vec::new(),
            step3: SgdConfig::new(lr, 16, iterations),
            step4: SgdConfig::new(lr * 0.1, 64, iterations),
            seed,
            augment: None,
            divergence_factor: 1e3,
            validate_every: 0,
            checkpoint_every: 0,
        }
    }

    pub fn sgd(&self, phase: u8) -> Option<&SgdConfig> {
        match phase {
            2 => Some(&self.step2),
            3 => Some(&self.step3),
            4 => Some(&self.step4),
            _ => None,
        }
    }
}

pub struct TrainData<'a, T> {
    pub train: &'a Dataset<T>,
    pub validation: Option<&'a Dataset<T>>,
}

/// Where a phase (re)starts. `initial_loss` anchors the divergence check.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Progress {
    pub iteration: u64,
    pub initial_loss: Option<f64>,
}

/// Hooks into a running phase. All methods default to doing nothing.
pub trait Observer<T: Real> {
    /// Before the first iteration, after any initialisation the phase does.
    fn phase_start(&mut self, _phase: u8, _store: &ParameterStore<T>, _progress: &Progress) -> Result<()> {
        Ok(())
    }

    fn iteration(&mut self, _row: &MetricsRow) -> Result<()> {
        Ok(())
    }

    fn validation(&mut self, _row: &ValidationRow) -> Result<()> {
        Ok(())
    }

    /// Every `checkpoint_every` iterations, after the update; `progress`
    /// names the next iteration to run.
    fn checkpoint(&mut self, _phase: u8, _store: &ParameterStore<T>, _progress: &Progress) -> Result<()> {
        Ok(())
    }
}

/// An observer that ignores everything.
pub struct Silent;

impl<T: Real> Observer<T> for Silent {}

struct Phase<'a> {
    number: u8,
    config: NetworkConfig,
    sgd: &'a SgdConfig,
    mask: TrainMask,
    layer_lr: &'a [f64],
}

fn phase_name(phase: u8) -> String {
    format!("step{phase}")
}

fn run_phase<T: Real>(
    store: &mut ParameterStore<T>,
    phase: Phase<'_>,
    data: &TrainData<'_, T>,
    plan: &TrainPlan,
    resume: Progress,
    observer: &mut dyn Observer<T>,
) -> Result<MetricsLog> {
    phase.sgd.validate()?;
    if !(plan.divergence_factor >= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "divergence factor must be at least 1, got {}",
            plan.divergence_factor
        )));
    }
    store.check_compatible(&phase.config)?;
    data.train.check_labels(phase.config.classes())?;
    let config = &phase.config;
    store.set_trainable(phase.mask);
    if resume.iteration == 0 {
        store.reset_velocities();
    }
    observer.phase_start(phase.number, store, &resume)?;

    let mut log = MetricsLog::new(config.depth());
    let mut schedule = BatchSchedule::new(
        data.train.len(),
        phase.sgd.batch_size,
        derive_seed(plan.seed, &[phase.number as u64]),
    )?;
    let mut initial = resume.initial_loss;
    let multiplier = |group: Group, layer: Option<usize>| match (group, layer) {
        (Group::Decoder, Some(l)) => phase.layer_lr.get(l).copied().unwrap_or(1.0),
        _ => 1.0,
    };

    for t in resume.iteration..phase.sgd.iterations {
        let (_, idx) = schedule.indices(t);
        let (mut x, y) = data.train.gather(idx)?;
        if let Some(spec) = &plan.augment {
            x = augment_batch(&x, spec, &mut stream(plan.seed, &[phase.number as u64, t]))?;
        }
        let record = forward(store, config, &x, &y)?;
        let losses = record.losses.clone();
        let first = *initial.get_or_insert(losses.total);
        let limit = plan.divergence_factor * first;
        if !losses.total.is_finite() || losses.total > limit {
            return Err(Error::Diverged {
                phase: phase_name(phase.number),
                iter: t,
                loss: losses.total,
                limit,
            });
        }
        let grads = backward_for(&record, store, config, phase.mask)?;
        drop(record);
        let lr = phase.sgd.lr_at(t);
        sgd_step_scaled(store, &grads, phase.sgd, lr, |p| multiplier(p.group, p.macro_layer))?;

        let row = MetricsRow {
            iter: t,
            phase: phase.number,
            loss_total: losses.total,
            loss_cls: losses.classification,
            recon: losses.recon_raw,
            lr,
        };
        observer.iteration(&row)?;
        log.rows.push(row);

        let done = t + 1;
        if plan.validate_every > 0 && done % plan.validate_every == 0 {
            if let Some(v) = data.validation {
                let report = evaluate(store, config, v, 256, 1)?;
                let row = ValidationRow {
                    iter: t,
                    phase: phase.number,
                    top1: report.top1,
                    recon_l2: report.mean_recon_l2_per_sample,
                };
                info!(
                    "{} iter {done}: validation top1 {:.4}, recon {:.4}",
                    phase_name(phase.number),
                    row.top1,
                    row.recon_l2
                );
                observer.validation(&row)?;
                log.validation.push(row);
            }
        }
        if plan.checkpoint_every > 0 && done % plan.checkpoint_every == 0 {
            let progress = Progress {
                iteration: done,
                initial_loss: initial,
            };
            observer.checkpoint(phase.number, store, &progress)?;
        }
    }
    store.set_completed_phase(phase.number);
    Ok(log)
}

fn require_decoder<T: Real>(store: &ParameterStore<T>, what: &str) -> Result<()> {
    if store.has_decoder() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{what} needs decoder parameters")))
    }
}

/// A copy of `store` to hold the layerwise decoders trained in step 2.
pub fn layerwise_store<T: Real>(store: &ParameterStore<T>) -> Result<ParameterStore<T>> {
    require_decoder(store, "layerwise pretraining")?;
    let mut lw = store.clone();
    lw.set_completed_phase(0);
    Ok(lw)
}

/// Step 2: trains every per-macro-layer decoder of `layerwise` against the
/// frozen encoder. The variant is forced to layerwise and `λ` to 1, so the
/// optimised objective is the layerwise reconstruction loss.
pub fn run_step2_layerwise<T: Real>(
    layerwise: &mut ParameterStore<T>,
    config: &NetworkConfig,
    data: &TrainData<'_, T>,
    plan: &TrainPlan,
    resume: Progress,
    observer: &mut dyn Observer<T>,
) -> Result<MetricsLog> {
    require_decoder(layerwise, "step 2")?;
    let mut effective = config.with_variant(Variant::SaeLayerwise);
    effective.lambda = 1.0;
    let phase = Phase {
        number: 2,
        config: effective,
        sgd: &plan.step2,
        mask: TrainMask::DECODER_ONLY,
        layer_lr: &plan.step2_layer_lr,
    };
    run_phase(layerwise, phase, data, plan, resume, observer)
}

/// Step 3: initialises the stacked decoder from the step-2 decoders and
/// finetunes it alone under the configured variant's loss (with `λ = 1`).
/// Does nothing for the layerwise variant. When resuming past iteration 0
/// the decoder is not re-initialised and `layerwise` may be `None`.
pub fn run_step3_stacked<T: Real>(
    store: &mut ParameterStore<T>,
    layerwise: Option<&ParameterStore<T>>,
    config: &NetworkConfig,
    data: &TrainData<'_, T>,
    plan: &TrainPlan,
    resume: Progress,
    observer: &mut dyn Observer<T>,
) -> Result<MetricsLog> {
    match config.variant {
        Variant::SaeLayerwise => {
            info!("step 3 skipped for the layerwise variant");
            return Ok(MetricsLog::new(config.depth()));
        }
        Variant::Baseline => return Err(Error::InvalidConfig("step 3 needs a decoder variant".into())),
        Variant::SaeFirst | Variant::SaeAll => {}
    }
    require_decoder(store, "step 3")?;
    if resume.iteration == 0 {
        let lw = layerwise
            .filter(|lw| lw.completed_phase() >= 2)
            .ok_or_else(|| Error::InvalidState("step 3 requires the decoders trained in step 2".into()))?;
        copy_layerwise_into_stacked(lw, store)?;
    }
    let mut effective = config.clone();
    effective.lambda = 1.0;
    let phase = Phase {
        number: 3,
        config: effective,
        sgd: &plan.step3,
        mask: TrainMask::DECODER_ONLY,
        layer_lr: &[],
    };
    run_phase(store, phase, data, plan, resume, observer)
}

/// Step 4: optimises `C + λU` over every parameter. For the baseline
/// variant this is plain classifier training.
pub fn run_step4_joint<T: Real>(
    store: &mut ParameterStore<T>,
    config: &NetworkConfig,
    data: &TrainData<'_, T>,
    plan: &TrainPlan,
    resume: Progress,
    observer: &mut dyn Observer<T>,
) -> Result<MetricsLog> {
    let phase = Phase {
        number: 4,
        config: config.clone(),
        sgd: &plan.step4,
        mask: TrainMask::ALL,
        layer_lr: &[],
    };
    run_phase(store, phase, data, plan, resume, observer)
}

/// Loss weights that make every reconstruction term equal `target` on the
/// probe batch: `γ_l = target / ‖â_l − a_l‖²`. A term that is already zero
/// gets weight 0.
pub fn balance_gammas<T: Real>(
    store: &ParameterStore<T>,
    config: &NetworkConfig,
    x: &Tensor<T>,
    labels: &[usize],
    target: f64,
) -> Result<Vec<f64>> {
    if !config.variant.has_decoder() {
        return Err(Error::InvalidConfig("balancing needs a decoder variant".into()));
    }
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::InvalidArgument(format!("target magnitude must be positive, got {target}")));
    }
    let record = forward(store, config, x, labels)?;
    Ok(record
        .losses
        .recon_raw
        .iter()
        .enumerate()
        .map(|(l, &raw)| {
            if raw > 0.0 {
                target / raw
            } else {
                warn!("reconstruction term {l} is zero on the probe batch; its weight is set to 0");
                0.0
            }
        })
        .collect())
}
