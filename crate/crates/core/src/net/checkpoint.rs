//! Checkpoints: a directory holding one SWTN file per parameter value and
//! velocity, plus a `manifest` text file of `key=value` lines.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::config::NetworkConfig;
use super::params::{build_network, ParameterStore};
use crate::error::{Error, Result};
use crate::tensor::{snapshot, Real};

pub const MANIFEST: &str = "manifest";
const FORMAT: &str = "swwae-checkpoint-1";

/// Ordered `key=value` pairs. Keys may not contain `=` or newlines.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest(BTreeMap<String, String>);

impl Manifest {
    pub fn new() -> Self {
        Manifest::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl Display) {
        self.0.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    /// Parses the value under `key`, failing with a format error when it is
    /// missing or malformed.
    pub fn parse<V: FromStr>(&self, key: &str) -> Result<V> {
        let raw = self.get(key).ok_or_else(|| Error::Format {
            what: "manifest",
            reason: format!("missing key {key}"),
        })?;
        raw.parse().map_err(|_| Error::Format {
            what: "manifest",
            reason: format!("cannot parse {key}={raw}"),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn render(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
                what: "manifest",
                reason: format!("line {} has no '='", n + 1),
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Manifest(map))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Manifest::from_text(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render())?;
        Ok(())
    }
}

fn file_name(param: &str, part: &str) -> String {
    format!("{param}.{part}.swtn")
}

/// Writes every value and velocity of `store` into `dir` (created if absent),
/// then the manifest: `extra` merged with the format tag, `config_hash`,
/// precision, completed phase and the parameter list.
pub fn save_checkpoint<T: Real>(store: &ParameterStore<T>, config_hash: &str, dir: &Path, extra: &Manifest) -> Result<()> {
    fs::create_dir_all(dir)?;
    for p in store.params() {
        snapshot::save(&p.value, &dir.join(file_name(&p.name, "value")))?;
        snapshot::save(&p.velocity, &dir.join(file_name(&p.name, "velocity")))?;
    }
    let mut m = extra.clone();
    m.insert("format", FORMAT);
    m.insert("config_hash", config_hash);
    m.insert("precision", T::PRECISION.name());
    m.insert("completed_phase", store.completed_phase());
    let names: Vec<&str> = store.params().iter().map(|p| p.name.as_str()).collect();
    m.insert("params", names.join(","));
    m.write(&dir.join(MANIFEST))
}

/// Restores a store laid out for `config`. The caller decides what to do
/// with the manifest's `config_hash`.
pub fn load_checkpoint<T: Real>(dir: &Path, config: &NetworkConfig) -> Result<(ParameterStore<T>, Manifest)> {
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.is_file() {
        return Err(Error::Load {
            path: manifest_path,
            offset: 0,
            reason: "checkpoint manifest not found".into(),
        });
    }
    let m = Manifest::read(&manifest_path)?;
    let bad = |reason: String| Error::Format {
        what: "checkpoint",
        reason,
    };
    if m.get("format") != Some(FORMAT) {
        return Err(bad(format!("unsupported format {:?}", m.get("format"))));
    }
    if m.get("precision") != Some(T::PRECISION.name()) {
        return Err(bad(format!(
            "checkpoint precision {:?}, expected {}",
            m.get("precision"),
            T::PRECISION.name()
        )));
    }
    let mut store = build_network::<T>(config, 0)?;
    let expected: Vec<&str> = store.params().iter().map(|p| p.name.as_str()).collect();
    let listed: Vec<&str> = m.get("params").unwrap_or("").split(',').filter(|s| !s.is_empty()).collect();
    if listed != expected {
        return Err(Error::InvalidConfig(format!(
            "checkpoint holds parameters [{}], configuration needs [{}]",
            listed.join(","),
            expected.join(",")
        )));
    }
    let phase: u8 = m.parse("completed_phase")?;
    for p in store.params_mut() {
        let value = snapshot::load::<T>(&dir.join(file_name(&p.name, "value")))?;
        let velocity = snapshot::load::<T>(&dir.join(file_name(&p.name, "velocity")))?;
        if value.shape() != p.value.shape() || velocity.shape() != p.value.shape() {
            return Err(Error::InvalidConfig(format!(
                "{} has shape {:?} in the checkpoint, configuration needs {:?}",
                p.name,
                value.dims(),
                p.value.dims()
            )));
        }
        p.value = value;
        p.velocity = velocity;
    }
    store.set_completed_phase(phase);
    Ok((store, m))
}
