//! eval, invert and gradcheck, plus helpers shared with training.

use std::path::Path;

use anyhow::Context;
use log::{info, warn};
use swwae::data::{load_idx, Dataset};
use swwae::eval::{evaluate, gradcheck, invert_from_layer, write_inversion, GradcheckOptions};
use swwae::net::{build_network, load_checkpoint, Group, Manifest, NetworkConfig, ParameterStore, SwitchMode, Variant};
use swwae::tensor::gaussian_init;
use swwae::{Precision, Real};

use crate::config::RunConfig;
use crate::{CliError, Split, SwitchArg};

pub struct Splits<T> {
    pub train: Dataset<T>,
    pub test: Option<Dataset<T>>,
}

pub fn load_data<T: Real>(cfg: &RunConfig) -> anyhow::Result<Splits<T>> {
    let d = &cfg.data;
    let train = load_idx::<T>(&d.train_images, &d.train_labels)?;
    if let (Some(i), Some(l)) = (&d.test_images, &d.test_labels) {
        return Ok(Splits {
            train,
            test: Some(load_idx(i, l)?),
        });
    }
    if d.holdout == 0 {
        return Ok(Splits { train, test: None });
    }
    if d.holdout >= train.len() {
        return Err(CliError::Config(format!(
            "data.holdout = {} leaves no training images out of {}",
            d.holdout,
            train.len()
        ))
        .into());
    }
    let (train, test) = train.split_at(train.len() - d.holdout)?;
    Ok(Splits {
        train,
        test: Some(test),
    })
}

pub fn format_gammas(g: &[f64]) -> String {
    g.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(",")
}

pub fn parse_gammas(s: &str) -> anyhow::Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad loss weight `{v}` in checkpoint")))
        .collect()
}

/// Loads a checkpoint written for this config. Weights balanced by an
/// earlier run are taken from the manifest.
pub fn open_checkpoint<T: Real>(
    cfg: &RunConfig,
    dir: &Path,
) -> anyhow::Result<(ParameterStore<T>, Manifest, NetworkConfig)> {
    let manifest_path = dir.join(swwae::net::MANIFEST);
    if !manifest_path.is_file() {
        return Err(CliError::MissingCheckpoint(dir.to_path_buf()).into());
    }
    let manifest = Manifest::read(&manifest_path)?;
    let expected = cfg.config_hash()?;
    match manifest.get("config_hash") {
        Some(h) if h == expected => {}
        other => {
            return Err(CliError::Config(format!(
                "checkpoint {} was written for config hash {}, this config hashes to {expected}",
                dir.display(),
                other.unwrap_or("(none)")
            ))
            .into())
        }
    }
    let gammas = match manifest.get("gammas") {
        Some(g) if cfg.auto_gammas() => Some(parse_gammas(g)?),
        _ => None,
    };
    if cfg.auto_gammas() && gammas.is_none() {
        warn!("checkpoint carries no balanced loss weights; using 1 for every macro-layer");
    }
    let net = cfg.network_config(gammas.as_deref())?;
    let (store, manifest) = load_checkpoint::<T>(dir, &net)?;
    Ok((store, manifest, net))
}

/// Fresh parameters, with encoder and head taken from `train.init_from`
/// when set.
pub fn initial_store<T: Real>(cfg: &RunConfig, net: &NetworkConfig) -> anyhow::Result<ParameterStore<T>> {
    let mut store = build_network::<T>(net, cfg.seed)?;
    if let Some(dir) = &cfg.train.init_from {
        if !dir.join(swwae::net::MANIFEST).is_file() {
            return Err(CliError::MissingCheckpoint(dir.clone()).into());
        }
        let source = [Variant::Baseline, Variant::SaeFirst, Variant::SaeLayerwise]
            .into_iter()
            .find_map(|v| load_checkpoint::<T>(dir, &net.with_variant(v)).ok())
            .map(|(s, _)| s)
            .ok_or_else(|| CliError::Config(format!("{} does not fit this network", dir.display())))?;
        store.copy_group_from(&source, Group::Encoder)?;
        store.copy_group_from(&source, Group::Head)?;
        info!("encoder and head initialised from {}", dir.display());
    }
    Ok(store)
}

fn pick_split<T>(splits: Splits<T>, split: Split) -> anyhow::Result<Dataset<T>> {
    match split {
        Split::Train => Ok(splits.train),
        Split::Test => splits.test.ok_or_else(|| {
            CliError::Config("no test split: set data.test_images/test_labels or data.holdout".into()).into()
        }),
    }
}

pub fn cmd_eval(config: &Path, checkpoint: &Path, split: Split) -> anyhow::Result<()> {
    let cfg = RunConfig::load(config)?;
    match cfg.precision()? {
        Precision::F32 => eval_impl::<f32>(&cfg, checkpoint, split),
        Precision::F64 => eval_impl::<f64>(&cfg, checkpoint, split),
    }
}

fn eval_impl<T: Real>(cfg: &RunConfig, checkpoint: &Path, split: Split) -> anyhow::Result<()> {
    let (store, _, net) = open_checkpoint::<T>(cfg, checkpoint)?;
    let data = pick_split(load_data::<T>(cfg)?, split)?;
    let k = 5.min(net.classes());
    let report = evaluate(&store, &net, &data, 256, k)?;
    print!("{}", report.render());
    let name = match split {
        Split::Train => "eval-train.txt",
        Split::Test => "eval-test.txt",
    };
    std::fs::create_dir_all(&cfg.out_dir)?;
    report.write(&cfg.out_dir.join(name))?;
    Ok(())
}

pub fn cmd_invert(config: &Path, checkpoint: &Path, layer: usize, switches: SwitchArg, out: &Path) -> anyhow::Result<()> {
    let cfg = RunConfig::load(config)?;
    let mode = match switches {
        SwitchArg::Known => SwitchMode::Known,
        SwitchArg::Fixed => SwitchMode::Fixed,
    };
    match cfg.precision()? {
        Precision::F32 => invert_impl::<f32>(&cfg, checkpoint, layer, mode, out),
        Precision::F64 => invert_impl::<f64>(&cfg, checkpoint, layer, mode, out),
    }
}

fn invert_impl<T: Real>(
    cfg: &RunConfig,
    checkpoint: &Path,
    layer: usize,
    mode: SwitchMode,
    out: &Path,
) -> anyhow::Result<()> {
    let (store, _, net) = open_checkpoint::<T>(cfg, checkpoint)?;
    let splits = load_data::<T>(cfg)?;
    let data = match splits.test {
        Some(t) => t,
        None => {
            warn!("no test split configured; inverting training images");
            splits.train
        }
    };
    let (report, grid) = invert_from_layer(&store, &net, layer, &data, mode, 256, 8)?;
    write_inversion(&report, &grid, out)?;
    print!("{}", report.render());
    Ok(())
}

/// The built-in network every gradient check runs on.
pub fn tiny_config(variant: Variant, mode: SwitchMode) -> NetworkConfig {
    let mut cfg = NetworkConfig::simple([1, 8, 8], &[4, 4], 3, 10, variant);
    cfg.switch_mode = mode;
    cfg.lambda = 0.5;
    cfg.gammas = vec![1.0, 0.3];
    cfg
}

pub fn cmd_gradcheck(config: Option<&Path>, tolerance: f64) -> anyhow::Result<bool> {
    if !(tolerance > 0.0) {
        return Err(CliError::Config(format!("tolerance must be positive, got {tolerance}")).into());
    }
    let seed = match config {
        Some(p) => RunConfig::load(p)?.seed,
        None => 0,
    };
    let options = GradcheckOptions {
        tolerance,
        seed,
        ..GradcheckOptions::default()
    };
    let x = gaussian_init::<f64>(&[2, 1, 8, 8], 1.0, seed ^ 17)?.map(|v| v.abs());
    let labels = [3, 8];
    let mut all = true;
    for variant in [Variant::SaeFirst, Variant::SaeAll, Variant::SaeLayerwise] {
        for mode in [SwitchMode::Fixed, SwitchMode::Known] {
            let net = tiny_config(variant, mode);
            let store = build_network::<f64>(&net, seed)?;
            let report = gradcheck(&store, &net, &x, &labels, &options)?;
            println!("== {} / {} switches", variant.name(), mode_name(mode));
            println!("{report}");
            for group in [Group::Encoder, Group::Head, Group::Decoder] {
                if let Some(e) = report.group_max(group) {
                    println!("   {:<8} worst rel err {e:.3e}", group.name());
                }
            }
            all &= report.passed();
        }
    }
    println!("gradcheck {}", if all { "PASSED" } else { "FAILED" });
    Ok(all)
}

pub fn mode_name(mode: SwitchMode) -> &'static str {
    match mode {
        SwitchMode::Known => "known",
        SwitchMode::Fixed => "fixed",
    }
}
