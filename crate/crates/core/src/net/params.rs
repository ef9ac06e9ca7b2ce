use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest, Sha256};

use super::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::layers::ConvSpec;
use crate::tensor::{Real, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    Encoder,
    Head,
    Decoder,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Encoder, Group::Head, Group::Decoder];

    pub fn name(self) -> &'static str {
        match self {
            Group::Encoder => "encoder",
            Group::Head => "head",
            Group::Decoder => "decoder",
        }
    }
}

/// Which parameter groups the optimizer may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainMask {
    pub encoder: bool,
    pub head: bool,
    pub decoder: bool,
}

impl TrainMask {
    pub const ALL: TrainMask = TrainMask {
        encoder: true,
        head: true,
        decoder: true,
    };
    pub const NONE: TrainMask = TrainMask {
        encoder: false,
        head: false,
        decoder: false,
    };
    pub const DECODER_ONLY: TrainMask = TrainMask {
        encoder: false,
        head: false,
        decoder: true,
    };
    pub const CLASSIFIER_ONLY: TrainMask = TrainMask {
        encoder: true,
        head: true,
        decoder: false,
    };

    pub fn allows(self, group: Group) -> bool {
        match group {
            Group::Encoder => self.encoder,
            Group::Head => self.head,
            Group::Decoder => self.decoder,
        }
    }
}

impl Default for TrainMask {
    fn default() -> Self {
        TrainMask::ALL
    }
}

/// One named parameter tensor with its momentum buffer.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub group: Group,
    /// 0-based macro-layer for encoder and decoder tensors.
    pub macro_layer: Option<usize>,
    pub value: Tensor<T>,
    pub velocity: Tensor<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Slot {
    pub weight: usize,
    pub bias: Option<usize>,
}

/// Positions of each layer's tensors inside the flat parameter list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    /// `enc[l][i]`: conv `i` of macro-layer `l`.
    pub enc: Vec<Vec<Slot>>,
    pub head: Vec<Slot>,
    /// `dec[l][i]`: the deconv paired with `enc[l][i]`. Empty without decoder.
    pub dec: Vec<Vec<Slot>>,
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// All trainable tensors of a network: encoder `φ`, classifier head and
/// (unless the variant is baseline) decoder `ψ`, each with a velocity.
///
/// Every mutable access bumps a generation counter, and clones receive a new
/// identity, so a [`ForwardRecord`](super::ForwardRecord) can detect that it
/// no longer describes the store it is used with.
#[derive(Debug)]
pub struct ParameterStore<T> {
    params: Vec<Param<T>>,
    pub(crate) layout: Layout,
    mask: TrainMask,
    completed_phase: u8,
    id: u64,
    generation: u64,
}

impl<T: Real> Clone for ParameterStore<T> {
    fn clone(&self) -> Self {
        ParameterStore {
            params: self.params.clone(),
            layout: self.layout.clone(),
            mask: self.mask,
            completed_phase: self.completed_phase,
            id: fresh_id(),
            generation: 0,
        }
    }
}

/// Per-tensor seed, so a tensor's initial value depends only on the run seed
/// and its name.
fn tensor_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

pub fn encoder_name(l: usize, i: usize, part: &str) -> String {
    format!("enc.{l}.conv{i}.{part}")
}

pub fn decoder_name(l: usize, i: usize, part: &str) -> String {
    format!("dec.{l}.deconv{i}.{part}")
}

pub fn head_name(j: usize, part: &str) -> String {
    format!("head.fc{j}.{part}")
}

/// Deconv specs of decoder macro-layer `l` in application order: the
/// transposes of the encoder's convs, last conv first.
pub fn decoder_specs(config: &NetworkConfig, l: usize) -> Vec<ConvSpec> {
    config.macro_layers[l].convs.iter().rev().copied().collect()
}

/// Name, group, shape and initial stddev (`None` for zeros) of one tensor.
pub(crate) struct ParamSpec {
    pub name: String,
    pub group: Group,
    pub macro_layer: Option<usize>,
    pub dims: Vec<usize>,
    pub std: Option<f64>,
}

/// Every tensor `config` requires, in store order, and the layout indexing them.
pub(crate) fn param_specs(config: &NetworkConfig) -> Result<(Vec<ParamSpec>, Layout)> {
    let geometry = config.validate()?;
    let mut specs = Vec::new();
    let mut push = |name: String, group, macro_layer, dims: Vec<usize>, std| {
        specs.push(ParamSpec {
            name,
            group,
            macro_layer,
            dims,
            std,
        });
        specs.len() - 1
    };
    let conv_std = |fan_in: usize| config.init.conv_std.unwrap_or_else(|| (2.0 / fan_in as f64).sqrt());

    let mut enc = Vec::new();
    for (l, layer) in config.macro_layers.iter().enumerate() {
        let mut slots = Vec::new();
        for (i, spec) in layer.convs.iter().enumerate() {
            let std = Some(conv_std(spec.fan_in()));
            let weight = push(encoder_name(l, i, "weight"), Group::Encoder, Some(l), spec.weight_dims().to_vec(), std);
            let bias = spec
                .has_bias
                .then(|| push(encoder_name(l, i, "bias"), Group::Encoder, Some(l), vec![spec.out_channels], None));
            slots.push(Slot { weight, bias });
        }
        enc.push(slots);
    }

    let mut head = Vec::new();
    let mut width = geometry.head_in;
    let widths: Vec<usize> = config.head.hidden.iter().copied().chain([config.head.classes]).collect();
    for (j, &out) in widths.iter().enumerate() {
        let weight = push(head_name(j, "weight"), Group::Head, None, vec![out, width], Some(config.init.dense_std));
        let bias = Some(push(head_name(j, "bias"), Group::Head, None, vec![out], None));
        head.push(Slot { weight, bias });
        width = out;
    }

    let mut dec = Vec::new();
    if config.variant.has_decoder() {
        for (l, layer) in config.macro_layers.iter().enumerate() {
            let mut slots = Vec::new();
            for (i, spec) in layer.convs.iter().enumerate() {
                let std = Some(conv_std(spec.transposed_fan_in()));
                let weight = push(decoder_name(l, i, "weight"), Group::Decoder, Some(l), spec.weight_dims().to_vec(), std);
                let bias = spec
                    .has_bias
                    .then(|| push(decoder_name(l, i, "bias"), Group::Decoder, Some(l), vec![spec.in_channels], None));
                slots.push(Slot { weight, bias });
            }
            dec.push(slots);
        }
    }
    Ok((specs, Layout { enc, head, dec }))
}

/// Allocates and initialises every parameter of `config`. Conv and deconv
/// weights are Gaussian with stddev `sqrt(2 / fan_in)` (or the configured
/// override), inner-product weights use the configured dense stddev, biases
/// and velocities start at zero.
pub fn build_network<T: Real>(config: &NetworkConfig, seed: u64) -> Result<ParameterStore<T>> {
    let (specs, layout) = param_specs(config)?;
    let mut params = Vec::with_capacity(specs.len());
    for s in specs {
        let shape = Shape::new(s.dims)?;
        let value = match s.std {
            Some(std) => Tensor::gaussian(&shape, std, tensor_seed(seed, &s.name))?,
            None => Tensor::zeros(&shape),
        };
        params.push(Param {
            name: s.name,
            group: s.group,
            macro_layer: s.macro_layer,
            velocity: Tensor::zeros(&shape),
            value,
        });
    }
    Ok(ParameterStore {
        params,
        layout,
        mask: TrainMask::ALL,
        completed_phase: 0,
        id: fresh_id(),
        generation: 0,
    })
}

impl<T: Real> ParameterStore<T> {
    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    /// Mutable access to every tensor. Invalidates outstanding forward records.
    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        self.generation += 1;
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn value(&self, index: usize) -> &Tensor<T> {
        &self.params[index].value
    }

    pub fn has_decoder(&self) -> bool {
        !self.layout.dec.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.layout.enc.len()
    }

    pub fn mask(&self) -> TrainMask {
        self.mask
    }

    pub fn set_trainable(&mut self, mask: TrainMask) {
        self.mask = mask;
    }

    pub fn is_trainable(&self, index: usize) -> bool {
        self.mask.allows(self.params[index].group)
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Highest training phase (2, 3 or 4) that has run to completion on this
    /// store; 0 for a fresh one.
    pub fn completed_phase(&self) -> u8 {
        self.completed_phase
    }

    pub fn set_completed_phase(&mut self, phase: u8) {
        self.completed_phase = phase;
    }

    pub fn reset_velocities(&mut self) {
        for p in self.params_mut() {
            p.velocity.data_mut().fill(T::zero());
        }
    }

    /// Total number of scalar parameters in `group`.
    pub fn count(&self, group: Group) -> usize {
        self.params.iter().filter(|p| p.group == group).map(|p| p.value.len()).sum()
    }

    /// Copies the values of every tensor in `group` from `source`, which must
    /// hold tensors of the same names and shapes.
    pub fn copy_group_from(&mut self, source: &ParameterStore<T>, group: Group) -> Result<()> {
        let pairs = matching_pairs(source, self, group)?;
        let params = self.params_mut();
        for (src, dst) in pairs {
            params[dst].value = source.params[src].value.clone();
        }
        Ok(())
    }

    /// Checks that this store holds the tensors `config` requires. A store
    /// with a decoder also serves the baseline variant.
    pub fn check_compatible(&self, config: &NetworkConfig) -> Result<()> {
        let (specs, layout) = param_specs(config)?;
        let mismatch = |what: String| Err(Error::InvalidConfig(what));
        if config.variant.has_decoder() && !self.has_decoder() {
            return mismatch(format!("variant {} needs decoder parameters", config.variant.name()));
        }
        if layout.enc != self.layout.enc || layout.head != self.layout.head {
            return mismatch("parameter layout differs from the configuration".into());
        }
        for s in &specs {
            match self.get(&s.name) {
                Some(p) if p.value.dims() == s.dims => {}
                _ => {
                    return mismatch(format!(
                        "parameter {} {:?} does not match the store",
                        s.name, s.dims
                    ))
                }
            }
        }
        Ok(())
    }
}

fn matching_pairs<T: Real>(source: &ParameterStore<T>, target: &ParameterStore<T>, group: Group) -> Result<Vec<(usize, usize)>> {
    let src: Vec<usize> = (0..source.params.len()).filter(|&i| source.params[i].group == group).collect();
    let dst: Vec<usize> = (0..target.params.len()).filter(|&i| target.params[i].group == group).collect();
    if src.len() != dst.len() {
        return Err(Error::InvalidConfig(format!(
            "{} groups hold {} and {} tensors",
            group.name(),
            src.len(),
            dst.len()
        )));
    }
    for (&s, &d) in src.iter().zip(&dst) {
        let (a, b) = (&source.params[s], &target.params[d]);
        if a.name != b.name || a.value.shape() != b.value.shape() {
            return Err(Error::InvalidConfig(format!(
                "cannot copy {} {:?} into {} {:?}",
                a.name,
                a.value.dims(),
                b.name,
                b.value.dims()
            )));
        }
    }
    Ok(src.into_iter().zip(dst).collect())
}

/// Initialises the stacked decoder of `stacked` from the per-macro-layer
/// decoders of `layerwise`. The two layouts coincide, so decoder macro-layer
/// `l` of the stacked pathway receives exactly sub-pathway `l`.
pub fn copy_layerwise_into_stacked<T: Real>(layerwise: &ParameterStore<T>, stacked: &mut ParameterStore<T>) -> Result<()> {
    if !layerwise.has_decoder() || !stacked.has_decoder() {
        return Err(Error::InvalidConfig("both stores need decoder parameters".into()));
    }
    stacked.copy_group_from(layerwise, Group::Decoder)
}

/// One gradient tensor per parameter, in store order.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub(crate) tensors: Vec<Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_for(store: &ParameterStore<T>) -> Self {
        Gradients {
            tensors: store.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    pub fn get(&self, index: usize) -> &Tensor<T> {
        &self.tensors[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Tensor<T> {
        &mut self.tensors[index]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.tensors.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::config::Variant;

    fn toy(variant: Variant) -> NetworkConfig {
        NetworkConfig::simple([1, 8, 8], &[4, 4], 3, 10, variant)
    }

    #[test]
    fn decoder_mirrors_encoder() {
        let mut cfg = toy(Variant::SaeAll);
        cfg.macro_layers[1].convs.push(ConvSpec::new(4, 6, 3, 1, 1));
        let specs = decoder_specs(&cfg, 1);
        assert_eq!(specs, vec![ConvSpec::new(4, 6, 3, 1, 1), ConvSpec::new(4, 4, 3, 1, 1)]);
        let store = build_network::<f64>(&cfg, 1).unwrap();
        assert_eq!(store.get("dec.1.deconv1.weight").unwrap().value.dims(), &[6, 4, 3, 3]);
        assert_eq!(store.get("dec.1.deconv1.bias").unwrap().value.dims(), &[4]);
        assert_eq!(store.get("dec.0.deconv0.bias").unwrap().value.dims(), &[1]);
    }

    #[test]
    fn deterministic_and_shared_init() {
        let a = build_network::<f64>(&toy(Variant::SaeAll), 5).unwrap();
        let b = build_network::<f64>(&toy(Variant::SaeAll), 5).unwrap();
        let base = build_network::<f64>(&toy(Variant::Baseline), 5).unwrap();
        for (p, q) in a.params().iter().zip(b.params()) {
            assert_eq!(p.value, q.value);
        }
        assert!(!base.has_decoder());
        for p in base.params() {
            assert_eq!(a.get(&p.name).unwrap().value, p.value);
        }
        assert_ne!(a.id(), b.id());
        assert_ne!(a.clone().id(), a.id());
    }

    #[test]
    fn fan_in_scaling() {
        // fan_in = 4 * 5 * 5 = 100
        let mut cfg = NetworkConfig::simple([4, 20, 20], &[400], 5, 10, Variant::Baseline);
        cfg.macro_layers[0].convs[0].pad = 2;
        let store = build_network::<f64>(&cfg, 3).unwrap();
        let w = store.get("enc.0.conv0.weight").unwrap().value.data();
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std / 0.02f64.sqrt() - 1.0).abs() < 0.05, "std {std}");
    }

    #[test]
    fn copy_is_idempotent_and_guarded() {
        let layerwise = build_network::<f64>(&toy(Variant::SaeLayerwise), 1).unwrap();
        let mut stacked = build_network::<f64>(&toy(Variant::SaeAll), 2).unwrap();
        copy_layerwise_into_stacked(&layerwise, &mut stacked).unwrap();
        let once = stacked.clone();
        copy_layerwise_into_stacked(&layerwise, &mut stacked).unwrap();
        for ((p, q), r) in once.params().iter().zip(stacked.params()).zip(layerwise.params()) {
            assert_eq!(p.value, q.value);
            if p.group == Group::Decoder {
                assert_eq!(q.value, r.value);
            }
        }
        let other = build_network::<f64>(&NetworkConfig::simple([1, 8, 8], &[4, 5], 3, 10, Variant::SaeLayerwise), 1).unwrap();
        assert!(matches!(
            copy_layerwise_into_stacked(&other, &mut stacked),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn mutation_bumps_generation() {
        let mut s = build_network::<f64>(&toy(Variant::SaeFirst), 1).unwrap();
        let g = s.generation();
        s.params_mut();
        assert!(s.generation() > g);
    }
}
