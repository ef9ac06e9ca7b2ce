//! The `train` command: phase sequencing, checkpoints, resume and metrics files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use log::info;
use swwae::data::Dataset;
use swwae::net::{save_checkpoint, Group, Manifest, NetworkConfig, ParameterStore, Variant};
use swwae::train::{
    balance_gammas, layerwise_store, run_step2_layerwise, run_step3_stacked, run_step4_joint, MetricsLog, MetricsRow,
    Observer, Progress, TrainData, TrainPlan, ValidationRow,
};
use swwae::{Precision, Real};

use crate::commands::{format_gammas, initial_store, load_data, open_checkpoint, Splits};
use crate::config::RunConfig;
use crate::{CliError, PhaseArg};

pub fn cmd_train(config: &Path, phase: PhaseArg, resume: Option<&Path>) -> anyhow::Result<()> {
    let cfg = RunConfig::load(config)?;
    match cfg.precision()? {
        Precision::F32 => {
            let splits = load_data::<f32>(&cfg)?;
            Trainer::new(&cfg, splits.train.len())?.run(&splits, phase, resume)
        }
        Precision::F64 => {
            let splits = load_data::<f64>(&cfg)?;
            Trainer::new(&cfg, splits.train.len())?.run(&splits, phase, resume)
        }
    }
}

fn phases(variant: Variant, arg: PhaseArg) -> anyhow::Result<Vec<u8>> {
    let list = match arg {
        PhaseArg::Two => vec![2],
        PhaseArg::Three => vec![3],
        PhaseArg::Four => vec![4],
        PhaseArg::All if variant.has_decoder() => vec![2, 3, 4],
        PhaseArg::All => vec![4],
    };
    if !variant.has_decoder() && list != [4] {
        return Err(CliError::Config("phases 2 and 3 train decoders; the baseline variant has none".into()).into());
    }
    Ok(list)
}

fn unix_time() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Data lines of an existing CSV whose first column is below `iter`.
fn lines_before(path: &Path, iter: u64) -> anyhow::Result<Vec<String>> {
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .filter(|l| l.split(',').next().and_then(|v| v.parse::<u64>().ok()).is_some_and(|i| i < iter))
        .map(str::to_owned)
        .collect())
}

/// Accumulates the metrics of one phase and writes periodic checkpoints.
struct PhaseFiles<'a> {
    phase: u8,
    depth: usize,
    started: u64,
    metrics_path: PathBuf,
    validation_path: PathBuf,
    kept_metrics: Vec<String>,
    kept_validation: Vec<String>,
    rows: Vec<MetricsRow>,
    validation: Vec<ValidationRow>,
    checkpoints: &'a Path,
    hash: &'a str,
    extra: Manifest,
}

impl<'a> PhaseFiles<'a> {
    fn new(run: &'a Trainer<'_>, phase: u8, depth: usize, resume: &Progress, extra: Manifest) -> anyhow::Result<Self> {
        let metrics_path = run.cfg.out_dir.join(format!("metrics-phase{phase}.csv"));
        let validation_path = run.cfg.out_dir.join(format!("validation-phase{phase}.csv"));
        let (kept_metrics, kept_validation) = if resume.iteration > 0 {
            (
                lines_before(&metrics_path, resume.iteration)?,
                lines_before(&validation_path, resume.iteration)?,
            )
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(PhaseFiles {
            phase,
            depth,
            started: unix_time(),
            metrics_path,
            validation_path,
            kept_metrics,
            kept_validation,
            rows: Vec::new(),
            validation: Vec::new(),
            checkpoints: &run.checkpoints,
            hash: &run.hash,
            extra,
        })
    }

    fn flush(&self) -> anyhow::Result<()> {
        let log = MetricsLog {
            depth: self.depth,
            rows: Vec::new(),
            validation: Vec::new(),
        };
        let mut s = String::new();
        writeln!(s, "# swwae train phase {} started at unix time {}", self.phase, self.started)?;
        writeln!(s, "{}", log.header())?;
        for l in &self.kept_metrics {
            writeln!(s, "{l}")?;
        }
        for r in &self.rows {
            writeln!(s, "{}", MetricsLog::row_line(r))?;
        }
        std::fs::write(&self.metrics_path, s).with_context(|| format!("writing {}", self.metrics_path.display()))?;

        if !self.validation.is_empty() || !self.kept_validation.is_empty() {
            let fresh = MetricsLog {
                depth: self.depth,
                rows: Vec::new(),
                validation: self.validation.clone(),
            }
            .validation_csv();
            let mut lines = fresh.lines();
            let mut s = String::new();
            writeln!(s, "{}", lines.next().unwrap_or_default())?;
            for l in self.kept_validation.iter().map(String::as_str).chain(lines) {
                writeln!(s, "{l}")?;
            }
            std::fs::write(&self.validation_path, s)?;
        }
        Ok(())
    }
}

impl<T: Real> Observer<T> for PhaseFiles<'_> {
    fn iteration(&mut self, row: &MetricsRow) -> swwae::Result<()> {
        self.rows.push(row.clone());
        Ok(())
    }

    fn validation(&mut self, row: &ValidationRow) -> swwae::Result<()> {
        self.validation.push(row.clone());
        Ok(())
    }

    fn checkpoint(&mut self, phase: u8, store: &ParameterStore<T>, progress: &Progress) -> swwae::Result<()> {
        let dir = self.checkpoints.join(format!("phase{phase}-iter{}", progress.iteration));
        let mut m = self.extra.clone();
        m.insert("phase", phase);
        m.insert("iteration", progress.iteration);
        if let Some(l) = progress.initial_loss {
            m.insert("initial_loss", format!("{l:e}"));
        }
        save_checkpoint(store, self.hash, &dir, &m)?;
        self.flush().map_err(|e| swwae::Error::InvalidState(format!("{e:#}")))?;
        info!("checkpoint {}", dir.display());
        Ok(())
    }
}

struct Trainer<'a> {
    cfg: &'a RunConfig,
    hash: String,
    checkpoints: PathBuf,
    plan: TrainPlan,
    net: NetworkConfig,
    gammas: Option<Vec<f64>>,
}

impl<'a> Trainer<'a> {
    fn new(cfg: &'a RunConfig, train_len: usize) -> anyhow::Result<Self> {
        let plan = cfg.plan(train_len)?;
        let net = cfg.network_config(None)?;
        let gammas = (!cfg.auto_gammas()).then(|| net.gammas.clone());
        Ok(Trainer {
            hash: cfg.config_hash()?,
            checkpoints: cfg.out_dir.join("checkpoints"),
            cfg,
            plan,
            net,
            gammas,
        })
    }

    fn manifest(&self, store_kind: &str) -> Manifest {
        let mut m = Manifest::new();
        m.insert("store", store_kind);
        m.insert("seed", self.cfg.seed);
        m.insert("variant", self.net.variant.name());
        if let Some(g) = &self.gammas {
            m.insert("gammas", format_gammas(g));
        }
        m
    }

    fn adopt_gammas(&mut self, net: NetworkConfig) {
        self.gammas = Some(net.gammas.clone());
        self.net = net;
    }

    fn save_final<T: Real>(&self, store: &ParameterStore<T>, name: &str, kind: &str, phase: u8, iterations: u64) -> anyhow::Result<()> {
        let mut m = self.manifest(kind);
        m.insert("phase", phase);
        m.insert("iteration", iterations);
        let dir = self.checkpoints.join(name);
        save_checkpoint(store, &self.hash, &dir, &m)?;
        info!("phase {phase} finished; checkpoint {}", dir.display());
        Ok(())
    }

    fn open<T: Real>(&mut self, name: &str) -> anyhow::Result<ParameterStore<T>> {
        let (store, _, net) = open_checkpoint::<T>(self.cfg, &self.checkpoints.join(name))?;
        if self.cfg.auto_gammas() {
            self.adopt_gammas(net);
        }
        Ok(store)
    }

    /// Balances `"auto"` loss weights on the first training images.
    fn ensure_gammas<T: Real>(&mut self, store: &ParameterStore<T>, train: &Dataset<T>) -> anyhow::Result<()> {
        if self.gammas.is_some() || !self.net.variant.has_decoder() {
            return Ok(());
        }
        let n = train.len().min(64);
        let (x, y) = train.gather(&(0..n).collect::<Vec<_>>())?;
        let g = balance_gammas(store, &self.net, &x, &y, self.cfg.network.gamma_target)?;
        info!("balanced loss weights: {}", format_gammas(&g));
        self.net.gammas = g.clone();
        self.gammas = Some(g);
        Ok(())
    }

    fn run<T: Real>(mut self, splits: &Splits<T>, arg: PhaseArg, resume: Option<&Path>) -> anyhow::Result<()> {
        std::fs::create_dir_all(&self.checkpoints)?;
        let mut todo = phases(self.net.variant, arg)?;
        let mut resumed: Option<(u8, Progress, ParameterStore<T>)> = None;
        if let Some(dir) = resume {
            let (store, m, net) = open_checkpoint::<T>(self.cfg, dir)?;
            let phase: u8 = m.parse("phase").map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
            let iteration: u64 = m.parse("iteration").map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
            let initial_loss = m.get("initial_loss").map(str::parse::<f64>).transpose()?;
            let Some(pos) = todo.iter().position(|&p| p == phase) else {
                return Err(CliError::Config(format!(
                    "checkpoint {} is from phase {phase}, which this invocation does not run",
                    dir.display()
                ))
                .into());
            };
            todo.drain(..pos);
            if self.cfg.auto_gammas() {
                self.adopt_gammas(net);
            }
            info!("resuming phase {phase} at iteration {iteration}");
            resumed = Some((
                phase,
                Progress {
                    iteration,
                    initial_loss,
                },
                store,
            ));
        }

        let validation = if self.plan.validate_every > 0 { splits.test.as_ref() } else { None };
        let mut main: Option<ParameterStore<T>> = None;
        let mut layerwise: Option<ParameterStore<T>> = None;
        for phase in todo {
            let (progress, resumed_store) = match resumed.take() {
                Some((p, progress, store)) if p == phase => (progress, Some(store)),
                other => {
                    resumed = other;
                    (Progress::default(), None)
                }
            };
            let data = TrainData {
                train: &splits.train,
                validation,
            };
            match phase {
                2 => {
                    let mut lw = match resumed_store {
                        Some(s) => s,
                        None => {
                            let init = initial_store::<T>(self.cfg, &self.net)?;
                            self.ensure_gammas(&init, &splits.train)?;
                            layerwise_store(&init)?
                        }
                    };
                    let mut files = PhaseFiles::new(&self, 2, self.net.depth(), &progress, self.manifest("layerwise"))?;
                    let result = run_step2_layerwise(&mut lw, &self.net, &data, &self.plan, progress, &mut files);
                    files.flush()?;
                    result?;
                    self.save_final(&lw, "layerwise", "layerwise", 2, self.plan.step2.iterations)?;
                    let mut m = initial_store::<T>(self.cfg, &self.net)?;
                    if self.net.variant == Variant::SaeLayerwise {
                        m.copy_group_from(&lw, Group::Decoder)?;
                    }
                    m.set_completed_phase(2);
                    self.save_final(&m, "after-phase2", "main", 2, self.plan.step2.iterations)?;
                    main = Some(m);
                    layerwise = Some(lw);
                }
                3 => {
                    if self.net.variant == Variant::SaeLayerwise {
                        info!("phase 3 skipped: the layerwise decoders are used as trained in phase 2");
                        continue;
                    }
                    let mut m = match (resumed_store, main.take()) {
                        (Some(s), _) | (None, Some(s)) => s,
                        (None, None) => self.open("after-phase2")?,
                    };
                    let lw = if progress.iteration == 0 && layerwise.is_none() {
                        Some(self.open("layerwise")?)
                    } else {
                        layerwise.take()
                    };
                    let mut files = PhaseFiles::new(&self, 3, self.net.depth(), &progress, self.manifest("main"))?;
                    let result = run_step3_stacked(&mut m, lw.as_ref(), &self.net, &data, &self.plan, progress, &mut files);
                    files.flush()?;
                    result?;
                    self.save_final(&m, "after-phase3", "main", 3, self.plan.step3.iterations)?;
                    main = Some(m);
                }
                4 => {
                    let mut m = match (resumed_store, main.take()) {
                        (Some(s), _) | (None, Some(s)) => s,
                        (None, None) => self.phase4_start()?,
                    };
                    self.ensure_gammas(&m, &splits.train)?;
                    let mut files = PhaseFiles::new(&self, 4, self.net.depth(), &progress, self.manifest("main"))?;
                    let result = run_step4_joint(&mut m, &self.net, &data, &self.plan, progress, &mut files);
                    files.flush()?;
                    result?;
                    self.save_final(&m, "after-phase4", "main", 4, self.plan.step4.iterations)?;
                    main = Some(m);
                }
                _ => unreachable!("phases are 2, 3 and 4"),
            }
        }
        Ok(())
    }

    /// Parameters left by the latest earlier phase, or fresh ones.
    fn phase4_start<T: Real>(&mut self) -> anyhow::Result<ParameterStore<T>> {
        for name in ["after-phase3", "after-phase2"] {
            if self.checkpoints.join(name).join(swwae::net::MANIFEST).is_file() {
                info!("phase 4 starts from {name}");
                return self.open(name);
            }
        }
        info!("phase 4 starts from freshly initialised parameters");
        initial_store::<T>(self.cfg, &self.net)
    }
}
