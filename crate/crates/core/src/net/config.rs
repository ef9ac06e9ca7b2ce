use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::layers::{ConvSpec, PoolSpec};

/// Which auxiliary decoding pathway is attached to the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Classifier only, no decoder.
    Baseline,
    /// Stacked decoder from the top pooled features, image-level loss only.
    SaeFirst,
    /// Stacked decoder with a loss at every macro-layer boundary.
    SaeAll,
    /// One independent decoder per macro-layer, each inverting its own clean
    /// encoder input.
    SaeLayerwise,
}

impl Variant {
    pub fn has_decoder(self) -> bool {
        self != Variant::Baseline
    }

    pub fn is_stacked(self) -> bool {
        matches!(self, Variant::SaeFirst | Variant::SaeAll)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::SaeFirst => "sae-first",
            Variant::SaeAll => "sae-all",
            Variant::SaeLayerwise => "sae-layerwise",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SwitchMode {
    Fixed,
    Known,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputNonlinearity {
    #[default]
    Linear,
    Relu,
}

/// A group of conv+ReLU layers closed by one max-pooling layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroLayerSpec {
    pub convs: Vec<ConvSpec>,
    pub pool: PoolSpec,
}

/// Inner-product layers on top of the last macro-layer. Hidden layers are
/// followed by ReLU; the final layer produces `classes` logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub hidden: Vec<usize>,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    /// Overrides the `sqrt(2 / fan_in)` stddev of conv and deconv weights.
    pub conv_std: Option<f64>,
    /// Stddev of inner-product weights.
    pub dense_std: f64,
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec {
            conv_std: None,
            dense_std: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// `(channels, height, width)` of one input image.
    pub input: [usize; 3],
    pub macro_layers: Vec<MacroLayerSpec>,
    pub head: HeadSpec,
    pub variant: Variant,
    pub switch_mode: SwitchMode,
    /// Weight of the unsupervised term in `C + λ·U`.
    pub lambda: f64,
    /// Per-boundary reconstruction weights `γ_0 .. γ_{L-1}`.
    pub gammas: Vec<f64>,
    pub decoder_output: OutputNonlinearity,
    pub init: InitSpec,
}

/// Activation shapes `(c, h, w)` of one sample through the encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Geometry {
    /// `a_0 .. a_L`: the input, then each macro-layer's pooled output.
    pub activations: Vec<[usize; 3]>,
    /// For macro-layer `l` (0-based), the input of each conv followed by the
    /// output of the last conv (the pooling input).
    pub conv_io: Vec<Vec<[usize; 3]>>,
    pub head_in: usize,
}

impl NetworkConfig {
    pub fn depth(&self) -> usize {
        self.macro_layers.len()
    }

    pub fn classes(&self) -> usize {
        self.head.classes
    }

    /// Checks channel chaining, spatial divisibility and loss weights, and
    /// returns the activation geometry.
    pub fn validate(&self) -> Result<Geometry> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.macro_layers.is_empty() {
            return bad("at least one macro-layer is required".into());
        }
        if self.input.contains(&0) {
            return bad(format!("input extents must be positive, got {:?}", self.input));
        }
        if self.gammas.len() != self.depth() {
            return bad(format!(
                "{} loss weights given for {} macro-layers",
                self.gammas.len(),
                self.depth()
            ));
        }
        if let Some(g) = self.gammas.iter().find(|g| !(**g >= 0.0 && g.is_finite())) {
            return bad(format!("loss weights must be finite and >= 0, got {g}"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if self.head.classes == 0 || self.head.hidden.contains(&0) {
            return bad("head layer widths must be positive".into());
        }
        if !(self.init.dense_std > 0.0) || self.init.conv_std.is_some_and(|s| !(s > 0.0)) {
            return bad("initialisation stddevs must be positive".into());
        }

        let [mut c, mut h, mut w] = self.input;
        let mut activations = vec![self.input];
        let mut conv_io = Vec::new();
        for (l, layer) in self.macro_layers.iter().enumerate() {
            if layer.convs.is_empty() {
                return bad(format!("macro-layer {} has no conv layers", l + 1));
            }
            let mut io = vec![[c, h, w]];
            for (i, conv) in layer.convs.iter().enumerate() {
                if conv.in_channels != c {
                    return bad(format!(
                        "macro-layer {} conv {}: expects {} input channels, receives {c}",
                        l + 1,
                        i + 1,
                        conv.in_channels
                    ));
                }
                let (oh, ow) = conv
                    .output_extent(h, w)
                    .map_err(|e| Error::InvalidConfig(format!("macro-layer {} conv {}: {e}", l + 1, i + 1)))?;
                // the transposed conv must map the output extent back exactly
                let back = conv.transposed_extent(oh, ow)?;
                if back != (h, w) {
                    return bad(format!(
                        "macro-layer {} conv {}: {h}x{w} -> {oh}x{ow} is not invertible by its transpose",
                        l + 1,
                        i + 1
                    ));
                }
                (c, h, w) = (conv.out_channels, oh, ow);
                io.push([c, h, w]);
            }
            let (ph, pw) = layer
                .pool
                .output_extent(h, w)
                .map_err(|e| Error::InvalidConfig(format!("macro-layer {} pooling: {e}", l + 1)))?;
            (h, w) = (ph, pw);
            activations.push([c, h, w]);
            conv_io.push(io);
        }
        Ok(Geometry {
            activations,
            conv_io,
            head_in: c * h * w,
        })
    }

    /// Hex SHA-256 of the canonical JSON encoding, truncated to 16 bytes.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        let digest = Sha256::digest(&bytes);
        digest[..16].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Copy with a different variant.
    pub fn with_variant(&self, variant: Variant) -> Self {
        NetworkConfig {
            variant,
            ..self.clone()
        }
    }

    /// `L` macro-layers of one `k×k` stride-1 "same" conv each followed by
    /// 2×2 pooling, with a linear classifier. Handy for tests and examples.
    pub fn simple(input: [usize; 3], channels: &[usize], kernel: usize, classes: usize, variant: Variant) -> Self {
        let mut prev = input[0];
        let macro_layers = channels
            .iter()
            .map(|&out| {
                let spec = ConvSpec::new(prev, out, kernel, 1, kernel / 2);
                prev = out;
                MacroLayerSpec {
                    convs: vec![spec],
                    pool: PoolSpec::square(2),
                }
            })
            .collect();
        NetworkConfig {
            input,
            macro_layers,
            head: HeadSpec {
                hidden: vec![],
                classes,
            },
            variant,
            switch_mode: SwitchMode::Known,
            lambda: 1.0,
            gammas: vec![1.0; channels.len()],
            decoder_output: OutputNonlinearity::Linear,
            init: InitSpec::default(),
        }
    }
}
