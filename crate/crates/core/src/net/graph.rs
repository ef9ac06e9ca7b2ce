use super::config::{NetworkConfig, OutputNonlinearity, SwitchMode, Variant};
use super::params::{Gradients, ParameterStore, Slot, TrainMask};
use crate::error::{Error, Result};
use crate::layers::{
    conv2d_backward, conv2d_forward, deconv2d_backward, deconv2d_forward, inner_product_backward,
    inner_product_forward, maxpool_backward, maxpool_forward, relu_backward, relu_forward, softmax_xent,
    unpool_backward, unpool_forward, weighted_l2_loss, ConvSpec, LayerGrad, PoolSpec, SwitchMap, Switches,
};
use crate::tensor::{sum_sq_diff, Real, Shape, Tensor};

/// Loss bookkeeping of one forward pass. All values are batch means.
#[derive(Debug, Clone, PartialEq)]
pub struct Losses {
    pub classification: f64,
    /// `‖â_l − a_l‖²` per boundary `l = 0 .. L-1`, unweighted. Zeros for the
    /// baseline variant.
    pub recon_raw: Vec<f64>,
    /// `γ_l‖â_l − a_l‖²` for the terms that enter `U`, zero otherwise.
    pub recon_weighted: Vec<f64>,
    /// `U`, reported even when `λ = 0`.
    pub unsupervised: f64,
    /// `C + λU` (just `C` for the baseline variant).
    pub total: f64,
}

/// Input and pre-activation of one conv, deconv or inner-product layer.
#[derive(Debug, Clone)]
struct LayerCache<T> {
    input: Tensor<T>,
    preact: Tensor<T>,
    relu: bool,
}

/// Everything a forward pass produces, plus the intermediates its backward
/// pass needs.
#[derive(Debug, Clone)]
pub struct ForwardRecord<T> {
    store_id: u64,
    generation: u64,
    variant: Variant,
    switch_mode: SwitchMode,
    lambda: f64,
    /// `a_0 .. a_L`: the input followed by each macro-layer's pooled output.
    pub activations: Vec<Tensor<T>>,
    /// `a_{L+1}`: the classifier's logits.
    pub logits: Tensor<T>,
    /// Switches recorded by each macro-layer's pooling.
    pub switches: Vec<SwitchMap>,
    /// `â_0 .. â_{L-1}`; empty for the baseline variant.
    pub reconstructions: Vec<Tensor<T>>,
    pub losses: Losses,
    enc: Vec<Vec<LayerCache<T>>>,
    head: Vec<LayerCache<T>>,
    /// Decoder caches per macro-layer, in application order.
    dec: Vec<Vec<LayerCache<T>>>,
    /// `∂(γ_l‖â_l − a_l‖²)/∂â_l` for the terms that enter `U`.
    recon_grads: Vec<Option<Tensor<T>>>,
    cls_grad: Tensor<T>,
}

impl<T: Real> ForwardRecord<T> {
    /// A fingerprint of every ReLU on/off state and pooling switch. Two
    /// parameter settings with equal patterns lie in the same smooth piece of
    /// the loss.
    pub fn activation_pattern(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let caches = self.enc.iter().flatten().chain(&self.head).chain(self.dec.iter().flatten());
        for c in caches.filter(|c| c.relu) {
            out.extend(c.preact.data().iter().map(|&v| u8::from(v > T::zero())));
        }
        for s in &self.switches {
            out.extend(s.indices.iter().flat_map(|i| i.to_le_bytes()));
        }
        out
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].dims()[0]
    }

    /// Per-sample `‖â_l − a_l‖²`, independent of how samples were batched.
    pub fn per_sample_recon(&self, l: usize) -> Vec<f64> {
        let Some(hat) = self.reconstructions.get(l) else {
            return vec![0.0; self.batch_size()];
        };
        let a = &self.activations[l];
        let per = a.len() / self.batch_size();
        hat.data()
            .chunks(per)
            .zip(a.data().chunks(per))
            .map(|(p, t)| p.iter().zip(t).map(|(&x, &y)| (x.as_f64() - y.as_f64()).powi(2)).sum())
            .collect()
    }
}

fn conv_layer<T: Real>(
    store: &ParameterStore<T>,
    slot: Slot,
    spec: &ConvSpec,
    input: &Tensor<T>,
    transposed: bool,
    relu: bool,
) -> Result<(Tensor<T>, LayerCache<T>)> {
    let w = store.value(slot.weight);
    let b = slot.bias.map(|i| store.value(i));
    let preact = if transposed {
        deconv2d_forward(input, w, b, spec)?
    } else {
        conv2d_forward(input, w, b, spec)?
    };
    let out = if relu { relu_forward(&preact) } else { preact.clone() };
    Ok((
        out,
        LayerCache {
            input: input.clone(),
            preact,
            relu,
        },
    ))
}

fn encode_macro<T: Real>(
    store: &ParameterStore<T>,
    config: &NetworkConfig,
    l: usize,
    input: &Tensor<T>,
) -> Result<(Tensor<T>, SwitchMap, Vec<LayerCache<T>>)> {
    let layer = &config.macro_layers[l];
    let mut h = input.clone();
    let mut caches = Vec::with_capacity(layer.convs.len());
    for (i, spec) in layer.convs.iter().enumerate() {
        let (out, cache) = conv_layer(store, store.layout.enc[l][i], spec, &h, false, true)?;
        caches.push(cache);
        h = out;
    }
    let (pooled, switches) = maxpool_forward(&h, &layer.pool)?;
    Ok((pooled, switches, caches))
}

fn switches_for<'a>(mode: SwitchMode, map: &'a SwitchMap) -> Switches<'a> {
    match mode {
        SwitchMode::Known => Switches::Known(map),
        SwitchMode::Fixed => Switches::Fixed,
    }
}

fn unpooled_shape<T: Real>(input: &Tensor<T>, pool: &PoolSpec) -> Result<Shape> {
    let d = input.dims();
    Shape::new(vec![d[0], d[1], d[2] * pool.kernel_h, d[3] * pool.kernel_w])
}

/// `f_l^dec`: unpool, then the mirrored deconvs with ReLU after each, except
/// that the image-producing deconv uses the configured output nonlinearity.
fn decode_macro<T: Real>(
    store: &ParameterStore<T>,
    config: &NetworkConfig,
    l: usize,
    input: &Tensor<T>,
    switches: Switches<'_>,
) -> Result<(Tensor<T>, Vec<LayerCache<T>>)> {
    let layer = &config.macro_layers[l];
    let mut h = unpool_forward(input, switches, &layer.pool, &unpooled_shape(input, &layer.pool)?)?;
    let mut caches = Vec::with_capacity(layer.convs.len());
    for i in (0..layer.convs.len()).rev() {
        let relu = !(l == 0 && i == 0 && config.decoder_output == OutputNonlinearity::Linear);
        let (out, cache) = conv_layer(store, store.layout.dec[l][i], &layer.convs[i], &h, true, relu)?;
        caches.push(cache);
        h = out;
    }
    Ok((h, caches))
}

fn check_input<T: Real>(config: &NetworkConfig, x: &Tensor<T>) -> Result<()> {
    let [c, h, w] = config.input;
    let n = x.dims().first().copied().unwrap_or(0);
    if x.dims() != [n, c, h, w] {
        return Err(Error::shape("forward", &[n, c, h, w], x.dims()));
    }
    Ok(())
}

/// Encoder activations `a_0 .. a_level` and the switches of the first
/// `level` macro-layers.
pub fn encode<T: Real>(
    store: &ParameterStore<T>,
    config: &NetworkConfig,
    x: &Tensor<T>,
    level: usize,
) -> Result<(Vec<Tensor<T>>, Vec<SwitchMap>)> {
    check_input(config, x)?;
    if level > config.depth() {
        return Err(Error::InvalidArgument(format!(
            "level {level} exceeds the {} macro-layers",
            config.depth()
        )));
    }
    let mut acts = vec![x.clone()];
    let mut switches = Vec::new();
    for l in 0..level {
        let (a, s, _) = encode_macro(store, config, l, &acts[l])?;
        acts.push(a);
        switches.push(s);
    }
    Ok((acts, switches))
}

/// Runs the stacked decoder from `a_level` down to the image. `switches`
/// must hold at least `level` maps; they are ignored in fixed mode.
pub fn decode_from<T: Real>(
    store: &ParameterStore<T>,
    config: &NetworkConfig,
    level: usize,
    top: &Tensor<T>,
    switches: &[SwitchMap],
    mode: SwitchMode,
) -> Result<Tensor<T>> {
    if level > 0 && !store.has_decoder() {
        return Err(Error::InvalidConfig("store has no decoder parameters".into()));
    }
    if switches.len() < level {
        return Err(Error::InvalidArgument(format!(
            "{} switch maps for level {level}",
            switches.len()
        )));
    }
    let mut h = top.clone();
    for l in (0..level).rev() {
        h = decode_macro(store, config, l, &h, switches_for(mode, &switches[l]))?.0;
    }
    Ok(h)
}

type Terms<T> = (Vec<f64>, Vec<f64>, Vec<Option<Tensor<T>>>);

fn recon_terms<T: Real>(config: &NetworkConfig, hats: &[Tensor<T>], targets: &[Tensor<T>]) -> Result<Terms<T>> {
    let depth = config.depth();
    if hats.len() != depth || targets.len() < depth {
        return Err(Error::InvalidArgument(format!(
            "{} reconstructions and {} targets for {depth} macro-layers",
            hats.len(),
            targets.len()
        )));
    }
    let mut raw = vec![0.0; depth];
    let mut weighted = vec![0.0; depth];
    let mut grads = vec![None; depth];
    for l in 0..depth {
        let batch = hats[l].dims()[0] as f64;
        raw[l] = sum_sq_diff(&hats[l], &targets[l])? / batch;
        if config.variant != Variant::SaeFirst || l == 0 {
            let (loss, grad) = weighted_l2_loss(&hats[l], &targets[l], config.gammas[l])?;
            weighted[l] = loss;
            grads[l] = Some(grad);
        }
    }
    Ok((raw, weighted, grads))
}

/// Raw `‖â_l − a_l‖²` and weighted `γ_l‖â_l − a_l‖²` terms (batch means) for
/// given reconstructions and targets. The first variant weights only the
/// image-level term.
pub fn reconstruction_terms<T: Real>(
    config: &NetworkConfig,
    hats: &[Tensor<T>],
    targets: &[Tensor<T>],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !config.variant.has_decoder() {
        return Err(Error::InvalidConfig("the baseline has no reconstruction terms".into()));
    }
    let (raw, weighted, _) = recon_terms(config, hats, targets)?;
    Ok((raw, weighted))
}

pub fn forward<T: Real>(
    store: &ParameterStore<T>,
    config: &NetworkConfig,
    x: &Tensor<T>,
    labels: &[usize],
) -> Result<ForwardRecord<T>> {
    forward_with_targets(store, config, x, labels, None)
}

/// Forward pass whose reconstruction targets are `targets[l]` instead of
/// `a_l`. Gradients never flow through targets, so holding them fixed makes
/// the loss a function whose derivative is exactly what backward computes.
pub fn forward_with_targets<T: Real>(
    store: &ParameterStore<T>,
    config: &NetworkConfig,
    x: &Tensor<T>,
    labels: &[usize],
    targets: Option<&[Tensor<T>]>,
) -> Result<ForwardRecord<T>> {
    store.check_compatible(config)?;
    check_input(config, x)?;
    let depth = config.depth();

    let mut activations = vec![x.clone()];
    let mut switches = Vec::with_capacity(depth);
    let mut enc = Vec::with_capacity(depth);
    for l in 0..depth {
        let (a, s, caches) = encode_macro(store, config, l, &activations[l])?;
        activations.push(a);
        switches.push(s);
        enc.push(caches);
    }

    let mut head = Vec::new();
    let mut h = activations[depth].clone();
    let last = store.layout.head.len() - 1;
    for (j, slot) in store.layout.head.iter().enumerate() {
        let bias = store.value(slot.bias.expect("head layers have biases"));
        let preact = inner_product_forward(&h, store.value(slot.weight), bias)?;
        let relu = j < last;
        let out = if relu { relu_forward(&preact) } else { preact.clone() };
        head.push(LayerCache { input: h, preact, relu });
        h = out;
    }
    let logits = h;
    let (classification, cls_grad) = softmax_xent(&logits, labels)?;

    let mut reconstructions = Vec::new();
    let mut dec = Vec::new();
    let mut recon_raw = vec![0.0; depth];
    let mut recon_weighted = vec![0.0; depth];
    let mut recon_grads = vec![None; depth];
    if config.variant.has_decoder() {
        let mut hats: Vec<Option<Tensor<T>>> = vec![None; depth];
        let mut caches: Vec<Vec<LayerCache<T>>> = vec![Vec::new(); depth];
        if config.variant.is_stacked() {
            let mut hat = activations[depth].clone();
            for l in (0..depth).rev() {
                let (out, c) = decode_macro(store, config, l, &hat, switches_for(config.switch_mode, &switches[l]))?;
                caches[l] = c;
                hats[l] = Some(out.clone());
                hat = out;
            }
        } else {
            for l in 0..depth {
                let (out, c) = decode_macro(
                    store,
                    config,
                    l,
                    &activations[l + 1],
                    switches_for(config.switch_mode, &switches[l]),
                )?;
                caches[l] = c;
                hats[l] = Some(out);
            }
        }
        reconstructions = hats.into_iter().map(|h| h.expect("every level decoded")).collect();
        dec = caches;

        let targets = targets.unwrap_or(&activations[..depth]);
        (recon_raw, recon_weighted, recon_grads) = recon_terms(config, &reconstructions, targets)?;
    }
    let unsupervised: f64 = recon_weighted.iter().sum();
    let total = if config.variant.has_decoder() {
        classification + config.lambda * unsupervised
    } else {
        classification
    };

    Ok(ForwardRecord {
        store_id: store.id(),
        generation: store.generation(),
        variant: config.variant,
        switch_mode: config.switch_mode,
        lambda: config.lambda,
        activations,
        logits,
        switches,
        reconstructions,
        losses: Losses {
            classification,
            recon_raw,
            recon_weighted,
            unsupervised,
            total,
        },
        enc,
        head,
        dec,
        recon_grads,
        cls_grad,
    })
}

fn accumulate<T: Real>(grads: &mut Gradients<T>, slot: Slot, lg: &LayerGrad<T>) -> Result<()> {
    if let Some(gw) = &lg.grad_weights {
        grads.get_mut(slot.weight).add_assign(gw)?;
    }
    if let (Some(i), Some(gb)) = (slot.bias, &lg.grad_bias) {
        grads.get_mut(i).add_assign(gb)?;
    }
    Ok(())
}

fn add_into<T: Real>(acc: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<()> {
    match acc {
        Some(a) => a.add_assign(&g),
        None => {
            *acc = Some(g);
            Ok(())
        }
    }
}

/// Gradient with respect to the decoder input of macro-layer `l`, adding the
/// decoder's parameter gradients into `grads`.
fn decode_backward<T: Real>(
    store: &ParameterStore<T>,
    config: &NetworkConfig,
    record: &ForwardRecord<T>,
    l: usize,
    grad_out: Tensor<T>,
    grads: &mut Gradients<T>,
) -> Result<Tensor<T>> {
    let layer = &config.macro_layers[l];
    let caches = &record.dec[l];
    let mut g = grad_out;
    // caches run last conv first, so walking them backwards visits conv 0 first
    for (i, cache) in caches.iter().rev().enumerate() {
        if cache.relu {
            g = relu_backward(&g, &cache.preact)?;
        }
        let slot = store.layout.dec[l][i];
        let lg = deconv2d_backward(&cache.input, store.value(slot.weight), &layer.convs[i], &g)?;
        accumulate(grads, slot, &lg)?;
        g = lg.grad_input;
    }
    unpool_backward(&g, switches_for(config.switch_mode, &record.switches[l]), &layer.pool)
}

pub fn backward<T: Real>(record: &ForwardRecord<T>, store: &ParameterStore<T>, config: &NetworkConfig) -> Result<Gradients<T>> {
    backward_for(record, store, config, TrainMask::ALL)
}

/// Like [`backward`], but only guarantees gradients for the groups in
/// `wanted`; work that feeds no wanted group is skipped and those gradients
/// are left at zero.
pub fn backward_for<T: Real>(
    record: &ForwardRecord<T>,
    store: &ParameterStore<T>,
    config: &NetworkConfig,
    wanted: TrainMask,
) -> Result<Gradients<T>> {
    if record.store_id != store.id() || record.generation != store.generation() {
        return Err(Error::InvalidState(
            "forward record was produced by a different or since-modified parameter store".into(),
        ));
    }
    if record.variant != config.variant || record.switch_mode != config.switch_mode || record.lambda != config.lambda {
        return Err(Error::InvalidState("forward record was produced under a different configuration".into()));
    }
    let depth = config.depth();
    let mut grads = Gradients::zeros_for(store);
    // gradient arriving at a_1 .. a_L (index l holds ∂/∂a_l)
    let mut g_act: Vec<Option<Tensor<T>>> = vec![None; depth + 1];

    let need_encoder = wanted.encoder;
    if wanted.head || need_encoder {
        let mut g = record.cls_grad.clone();
        for (j, cache) in record.head.iter().enumerate().rev() {
            if cache.relu {
                g = relu_backward(&g, &cache.preact)?;
            }
            let slot = store.layout.head[j];
            let lg = inner_product_backward(&cache.input, store.value(slot.weight), &g)?;
            accumulate(&mut grads, slot, &lg)?;
            g = lg.grad_input;
        }
        g_act[depth] = Some(g);
    }

    let decoder_live = config.variant.has_decoder() && config.lambda != 0.0 && (wanted.decoder || need_encoder);
    if decoder_live {
        let lambda = T::of(config.lambda);
        let scaled = |l: usize| {
            record.recon_grads[l].as_ref().map(|g| {
                let mut g = g.clone();
                g.scale(lambda);
                g
            })
        };
        if config.variant.is_stacked() {
            let mut g: Option<Tensor<T>> = None;
            for l in 0..depth {
                if let Some(rg) = scaled(l) {
                    add_into(&mut g, rg)?;
                }
                if let Some(up) = g.take() {
                    g = Some(decode_backward(store, config, record, l, up, &mut grads)?);
                }
            }
            if let Some(top) = g {
                add_into(&mut g_act[depth], top)?;
            }
        } else {
            for l in 0..depth {
                if let Some(rg) = scaled(l) {
                    let up = decode_backward(store, config, record, l, rg, &mut grads)?;
                    add_into(&mut g_act[l + 1], up)?;
                }
            }
        }
    }

    if need_encoder {
        for l in (0..depth).rev() {
            let Some(g) = g_act[l + 1].take() else {
                continue;
            };
            let caches = &record.enc[l];
            let mut g = maxpool_backward(&g, &record.switches[l], caches.last().expect("convs").preact.shape())?;
            for (i, cache) in caches.iter().enumerate().rev() {
                g = relu_backward(&g, &cache.preact)?;
                let slot = store.layout.enc[l][i];
                let lg = conv2d_backward(&cache.input, store.value(slot.weight), &config.macro_layers[l].convs[i], &g)?;
                accumulate(&mut grads, slot, &lg)?;
                g = lg.grad_input;
            }
            if l > 0 {
                add_into(&mut g_act[l], g)?;
            }
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::params::build_network;
    use crate::tensor::gaussian_init;

    fn toy(variant: Variant) -> NetworkConfig {
        NetworkConfig::simple([1, 8, 8], &[4, 4], 3, 10, variant)
    }

    fn batch() -> (Tensor<f64>, Vec<usize>) {
        let x = gaussian_init::<f64>(&[3, 1, 8, 8], 1.0, 11).unwrap().map(|v| v.abs());
        (x, vec![1, 7, 3])
    }

    #[test]
    fn baseline_has_no_unsupervised_term() {
        let cfg = toy(Variant::Baseline);
        let store = build_network::<f64>(&cfg, 1).unwrap();
        let (x, y) = batch();
        let r = forward(&store, &cfg, &x, &y).unwrap();
        assert_eq!(r.losses.unsupervised, 0.0);
        assert_eq!(r.losses.total, r.losses.classification);
        assert!(r.reconstructions.is_empty());
    }

    #[test]
    fn total_is_c_plus_lambda_u() {
        let (x, y) = batch();
        for variant in [Variant::SaeFirst, Variant::SaeAll, Variant::SaeLayerwise] {
            let mut cfg = toy(variant);
            cfg.lambda = 0.37;
            let store = build_network::<f64>(&cfg, 2).unwrap();
            let r = forward(&store, &cfg, &x, &y).unwrap();
            let l = &r.losses;
            assert!(l.unsupervised > 0.0);
            assert_eq!(l.total, l.classification + 0.37 * l.unsupervised);
            assert_eq!(r.reconstructions[0].dims(), x.dims());
            assert_eq!(r.reconstructions[1].dims(), r.activations[1].dims());
        }
    }

    #[test]
    fn zero_lambda_kills_decoder_gradients() {
        let mut cfg = toy(Variant::SaeAll);
        cfg.lambda = 0.0;
        let store = build_network::<f64>(&cfg, 2).unwrap();
        let (x, y) = batch();
        let r = forward(&store, &cfg, &x, &y).unwrap();
        assert_eq!(r.losses.total, r.losses.classification);
        assert!(r.losses.unsupervised > 0.0);
        let g = backward(&r, &store, &cfg).unwrap();
        for (p, gt) in store.params().iter().zip(g.iter()) {
            if p.name.starts_with("dec.") {
                assert!(gt.data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn stale_record_is_rejected() {
        let cfg = toy(Variant::SaeFirst);
        let mut store = build_network::<f64>(&cfg, 2).unwrap();
        let (x, y) = batch();
        let r = forward(&store, &cfg, &x, &y).unwrap();
        let other = store.clone();
        assert!(matches!(backward(&r, &other, &cfg), Err(Error::InvalidState(_))));
        store.params_mut();
        assert!(matches!(backward(&r, &store, &cfg), Err(Error::InvalidState(_))));
    }

    #[test]
    fn stacked_top_equals_encoder_top() {
        let cfg = toy(Variant::SaeAll);
        let store = build_network::<f64>(&cfg, 3).unwrap();
        let (x, y) = batch();
        let r = forward(&store, &cfg, &x, &y).unwrap();
        let (acts, sw) = encode(&store, &cfg, &x, 2).unwrap();
        assert_eq!(acts[2], r.activations[2]);
        let xhat = decode_from(&store, &cfg, 2, &acts[2], &sw, SwitchMode::Known).unwrap();
        assert_eq!(xhat, r.reconstructions[0]);
    }

    #[test]
    fn rejects_wrong_input_geometry() {
        let cfg = toy(Variant::Baseline);
        let store = build_network::<f64>(&cfg, 1).unwrap();
        let x = Tensor::<f64>::filled([1, 1, 6, 6], 0.0).unwrap();
        assert!(matches!(forward(&store, &cfg, &x, &[0]), Err(Error::ShapeMismatch { .. })));
    }
}
