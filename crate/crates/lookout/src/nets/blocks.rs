//! The trainable blocks. All image tensors are NCHW.

use candle_core::{Tensor, D};

use super::arch::Architecture;
use super::layers::{max_pool2, sigmoid, AdaptiveAvgPool, Conv2d, ConvTranspose2d, Dense, LINEAR_GAIN, RELU_GAIN};
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Channels of a matrix view fed to the upsampler: RGB + occupancy fraction.
pub const VIEW_CHANNELS: usize = 4;
/// Retina input planes: RGB, is-full-res, is-valid.
pub const RETINA_CHANNELS: usize = 5;

struct DoubleConv {
    a: Conv2d,
    b: Conv2d,
}

impl DoubleConv {
    fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize) -> Result<Self> {
        Ok(Self {
            a: Conv2d::new(store, &format!("{name}.conv0"), inputs, outputs, 3, RELU_GAIN)?,
            b: Conv2d::new(store, &format!("{name}.conv1"), outputs, outputs, 3, RELU_GAIN)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.a.forward(x)?.relu()?;
        Ok(self.b.forward(&h)?.relu()?)
    }
}

/// U-Net style glimpse super-resolution.
pub struct LocalNet {
    encoder: Vec<DoubleConv>,
    bottleneck: DoubleConv,
    decoder: Vec<(ConvTranspose2d, DoubleConv)>,
    head: Conv2d,
}

impl LocalNet {
    pub const PREFIX: &'static str = "local";

    pub fn new(store: &mut ParamStore, arch: &Architecture) -> Result<Self> {
        let p = Self::PREFIX;
        let mut encoder = Vec::new();
        let mut inputs = RETINA_CHANNELS;
        for (i, &c) in arch.local_stages.iter().enumerate() {
            encoder.push(DoubleConv::new(store, &format!("{p}.enc{i}"), inputs, c)?);
            inputs = c;
        }
        let bottleneck = DoubleConv::new(store, &format!("{p}.bottleneck"), inputs, arch.local_bottleneck)?;
        let mut decoder = Vec::new();
        let mut below = arch.local_bottleneck;
        for (i, &c) in arch.local_stages.iter().enumerate().rev() {
            let up = ConvTranspose2d::new(store, &format!("{p}.dec{i}.up"), below, c)?;
            let convs = DoubleConv::new(store, &format!("{p}.dec{i}"), 2 * c, c)?;
            decoder.push((up, convs));
            below = c;
        }
        let head = Conv2d::new(store, &format!("{p}.head"), below, 3, 1, LINEAR_GAIN)?;
        Ok(Self {
            encoder,
            bottleneck,
            decoder,
            head,
        })
    }

    /// `x`: (B, 5, n, n) → (reconstruction (B, 3, n, n), bottleneck).
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut h = x.clone();
        for stage in &self.encoder {
            h = stage.forward(&h)?;
            skips.push(h.clone());
            h = max_pool2(&h)?;
        }
        let bottleneck = self.bottleneck.forward(&h)?;
        h = bottleneck.clone();
        for ((up, convs), skip) in self.decoder.iter().zip(skips.iter().rev()) {
            let u = up.forward(&h)?.relu()?;
            h = convs.forward(&Tensor::cat(&[&u, skip], 1)?)?;
        }
        Ok((sigmoid(&self.head.forward(&h)?)?, bottleneck))
    }
}

/// 1×1 convolution followed by adaptive average pooling and flattening.
pub struct Descriptor {
    conv: Conv2d,
    pool: AdaptiveAvgPool,
}

impl Descriptor {
    pub const PREFIX: &'static str = "descriptor";
    pub const CLASS_PREFIX: &'static str = "class_features";

    pub fn new(store: &mut ParamStore, arch: &Architecture, prefix: &str) -> Result<Self> {
        let conv = Conv2d::new(
            store,
            &format!("{prefix}.conv"),
            arch.local_bottleneck,
            arch.descriptor_channels,
            1,
            LINEAR_GAIN,
        )?;
        let side = arch.bottleneck_side();
        let pool = AdaptiveAvgPool::new(side, side, arch.descriptor_grid, store)?;
        Ok(Self { conv, pool })
    }

    /// (B, C, s, s) → (B, features_per_slot)
    pub fn forward(&self, bottleneck: &Tensor) -> Result<Tensor> {
        self.pool.forward(&self.conv.forward(bottleneck)?)
    }
}

/// Coarse panorama estimate decoded from the fit-in feature vector.
pub struct BackgroundNet {
    fc0: Dense,
    fc1: Dense,
    dims: (usize, usize),
}

impl BackgroundNet {
    pub const PREFIX: &'static str = "background";

    pub fn new(store: &mut ParamStore, arch: &Architecture) -> Result<Self> {
        let p = Self::PREFIX;
        let dims = arch.background_dims();
        Ok(Self {
            fc0: Dense::new(
                store,
                &format!("{p}.fc0"),
                arch.vector_len(),
                arch.background_hidden,
                RELU_GAIN,
            )?,
            fc1: Dense::new(
                store,
                &format!("{p}.fc1"),
                arch.background_hidden,
                3 * dims.0 * dims.1,
                LINEAR_GAIN,
            )?,
            dims,
        })
    }

    /// (B, L) → (B, 3, h0, w0)
    pub fn forward(&self, vector: &Tensor) -> Result<Tensor> {
        let b = vector.dim(0)?;
        let h = self.fc0.forward(vector)?.relu()?;
        let y = sigmoid(&self.fc1.forward(&h)?)?;
        Ok(y.reshape((b, 3, self.dims.0, self.dims.1))?)
    }
}

struct UpStage {
    up: Option<ConvTranspose2d>,
    convs: DoubleConv,
    head: Conv2d,
}

/// Four-stage upsampler with fit-in matrix skip connections. Stage 0 works at
/// the background's own size; every later stage doubles the resolution.
pub struct UpsamplerNet {
    stages: Vec<UpStage>,
}

impl UpsamplerNet {
    pub const PREFIX: &'static str = "upsampler";

    pub fn new(store: &mut ParamStore, arch: &Architecture) -> Result<Self> {
        let p = Self::PREFIX;
        let mut stages = Vec::new();
        let mut prev: Option<usize> = None;
        for (k, &c) in arch.upsampler_channels.iter().enumerate() {
            let (up, inputs) = match prev {
                None => (None, 3 + VIEW_CHANNELS),
                Some(pc) => (
                    Some(ConvTranspose2d::new(store, &format!("{p}.stage{k}.up"), pc, c)?),
                    c + VIEW_CHANNELS,
                ),
            };
            let convs = DoubleConv::new(store, &format!("{p}.stage{k}"), inputs, c)?;
            let head = Conv2d::new(store, &format!("{p}.stage{k}.head"), c, 3, 1, LINEAR_GAIN)?;
            stages.push(UpStage { up, convs, head });
            prev = Some(c);
        }
        Ok(Self { stages })
    }

    /// `views[k]`: (B, 4, h_k, w_k), coarsest first. Returns one
    /// reconstruction per scale, coarsest first.
    pub fn forward(&self, background: &Tensor, views: &[Tensor]) -> Result<Vec<Tensor>> {
        if views.len() != self.stages.len() {
            return Err(Error::Invalid(format!(
                "upsampler needs {} matrix views, got {}",
                self.stages.len(),
                views.len()
            )));
        }
        let mut out = Vec::with_capacity(views.len());
        let mut h = background.clone();
        for (stage, view) in self.stages.iter().zip(views) {
            let x = match &stage.up {
                None => h.clone(),
                Some(up) => up.forward(&h)?.relu()?,
            };
            h = stage.convs.forward(&Tensor::cat(&[&x, view], 1)?)?;
            out.push(sigmoid(&stage.head.forward(&h)?)?);
        }
        Ok(out)
    }
}

/// Two fully connected layers with a rectifier in between.
pub struct Mlp {
    fc0: Dense,
    fc1: Dense,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, prefix: &str, inputs: usize, hidden: usize, outputs: usize) -> Result<Self> {
        Ok(Self {
            fc0: Dense::new(store, &format!("{prefix}.fc0"), inputs, hidden, RELU_GAIN)?,
            fc1: Dense::new(store, &format!("{prefix}.fc1"), hidden, outputs, LINEAR_GAIN)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc1.forward(&self.fc0.forward(x)?.relu()?)
    }
}

/// VGG-style backbone: blocks of 3×3 convolutions each closed by a 2× max-pool,
/// then three fully connected layers.
pub struct Vgg {
    blocks: Vec<Vec<Conv2d>>,
    fcs: [Dense; 3],
}

impl Vgg {
    pub fn new(store: &mut ParamStore, arch: &Architecture, prefix: &str, classes: usize) -> Result<Self> {
        let g = arch.geometry();
        let mut blocks = Vec::new();
        let mut inputs = 3;
        for (i, (&c, &n)) in arch.vgg_channels.iter().zip(&arch.vgg_convs).enumerate() {
            let mut convs = Vec::new();
            for j in 0..n {
                convs.push(Conv2d::new(
                    store,
                    &format!("{prefix}.block{i}.conv{j}"),
                    inputs,
                    c,
                    3,
                    RELU_GAIN,
                )?);
                inputs = c;
            }
            blocks.push(convs);
        }
        let shrink = 1 << arch.vgg_channels.len();
        let flat = inputs * (g.height() / shrink) * (g.width() / shrink);
        let fcs = [
            Dense::new(store, &format!("{prefix}.fc0"), flat, arch.vgg_hidden, RELU_GAIN)?,
            Dense::new(
                store,
                &format!("{prefix}.fc1"),
                arch.vgg_hidden,
                arch.vgg_hidden,
                RELU_GAIN,
            )?,
            Dense::new(store, &format!("{prefix}.fc2"), arch.vgg_hidden, classes, LINEAR_GAIN)?,
        ];
        Ok(Self { blocks, fcs })
    }

    /// (B, 3, H, W) → (B, classes)
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for block in &self.blocks {
            for conv in block {
                h = conv.forward(&h)?.relu()?;
            }
            h = max_pool2(&h)?;
        }
        let mut h = h.flatten_from(1)?;
        h = self.fcs[0].forward(&h)?.relu()?;
        h = self.fcs[1].forward(&h)?.relu()?;
        self.fcs[2].forward(&h)
    }
}

/// Mean softmax cross-entropy terms per row: `-log softmax(logits)[label]`.
pub fn sparse_cross_entropy(logits: &Tensor, labels: &[u32]) -> Result<Tensor> {
    let lsm = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    let idx = Tensor::from_slice(labels, (labels.len(), 1), logits.device())?;
    Ok(lsm.gather(&idx, 1)?.squeeze(1)?.neg()?)
}

/// Per-row cross-entropy against target distributions of the same shape.
pub fn distribution_cross_entropy(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let lsm = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    Ok((lsm * targets)?.sum(1)?.neg()?)
}
