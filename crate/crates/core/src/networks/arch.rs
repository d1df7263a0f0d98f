//! Parameter layouts and forward passes for each model family.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::layers::{conv, instance_norm, lrelu, rrdb};
use super::ModelState;
use crate::error::{Error, Result};
use crate::tensor::pixel_unshuffle_tensor;

/// RRDB generator, also used as the autoencoder decoder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub num_rrdb_blocks: usize,
    pub base_channels: usize,
    pub growth_channels: usize,
    pub scale: usize,
}

impl GeneratorConfig {
    /// Desk-scale default: 4 blocks, 32 base and 16 growth channels.
    pub fn desk(scale: usize) -> Self {
        Self {
            num_rrdb_blocks: 4,
            base_channels: 32,
            growth_channels: 16,
            scale,
        }
    }
}

/// Lightweight encoder: two from-RGB convs, pixel-unshuffle, two RRDBs, two to-RGB convs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub scale: usize,
    pub rrdb_channels: usize,
}

impl EncoderConfig {
    pub const NUM_RRDB_BLOCKS: usize = 2;

    /// Channels produced by the second from-RGB conv, before unshuffling.
    pub fn pre_unshuffle_channels(&self) -> usize {
        self.rrdb_channels / (self.scale * self.scale)
    }

    fn growth_channels(&self) -> usize {
        (self.rrdb_channels / 2).max(1)
    }
}

/// Patch discriminator with instance normalization and two stride-2 stages.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub base_channels: usize,
    pub patch: usize,
}

impl DiscriminatorConfig {
    pub const MIN_PATCH: usize = 8;
    const DOWNSAMPLE: usize = 4;

    /// Side length of the logit map for a `patch × patch` input.
    pub fn logit_side(&self) -> usize {
        self.patch / Self::DOWNSAMPLE
    }
}

/// Fixed random conv stack used as the default perceptual feature extractor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorConfig {
    /// Output channels of each 3×3 conv layer.
    pub channels: Vec<usize>,
    /// Indices of layers that downsample by 2.
    pub stride2_layers: Vec<usize>,
    /// Layers whose activations enter the loss.
    pub feature_layers: Vec<usize>,
    pub seed: u64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            channels: vec![16, 16, 32, 32, 64],
            stride2_layers: vec![1, 3],
            feature_layers: vec![1, 3, 4],
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Generator(GeneratorConfig),
    Encoder(EncoderConfig),
    Discriminator(DiscriminatorConfig),
    Extractor(ExtractorConfig),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Init {
    /// Kaiming-normal (fan-in, leaky-relu gain) times a scale.
    KaimingNormal(f64),
    /// PyTorch's default conv init, `U(-1/√fan_in, 1/√fan_in)`.
    DefaultUniform,
    Zeros,
}

#[derive(Clone, Debug)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    pub fan_in: usize,
}

struct Layout(Vec<ParamSpec>);

impl Layout {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, init: Init) {
        let fan_in = cin * 9;
        let bias_init = match init {
            Init::KaimingNormal(_) => Init::Zeros,
            other => other,
        };
        self.0.push(ParamSpec {
            name: format!("{name}.weight"),
            shape: vec![cout, cin, 3, 3],
            init,
            fan_in,
        });
        self.0.push(ParamSpec {
            name: format!("{name}.bias"),
            shape: vec![cout],
            init: bias_init,
            fan_in,
        });
    }

    fn rrdb(&mut self, name: &str, nf: usize, gc: usize) {
        for r in 1..=3 {
            for i in 1..=5 {
                let cin = nf + (i - 1) * gc;
                let cout = if i == 5 { nf } else { gc };
                self.conv(&format!("{name}.rdb{r}.conv{i}"), cin, cout, Init::KaimingNormal(0.1));
            }
        }
    }
}

/// Factorization of the scale into ×2 and ×3 nearest-upsampling stages.
pub(crate) fn upsample_stages(scale: usize) -> Result<Vec<usize>> {
    let mut rest = scale;
    let mut stages = Vec::new();
    for f in [2, 3] {
        while rest % f == 0 {
            stages.push(f);
            rest /= f;
        }
    }
    if rest != 1 {
        return Err(Error::InvalidArgument(format!(
            "scale {scale} is not a product of 2s and 3s"
        )));
    }
    Ok(stages)
}

fn positive(what: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::InvalidArgument(format!("{what} must be positive")));
    }
    Ok(())
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Generator(c) => {
                positive("num_rrdb_blocks", c.num_rrdb_blocks)?;
                positive("base_channels", c.base_channels)?;
                positive("growth_channels", c.growth_channels)?;
                positive("scale", c.scale)?;
                upsample_stages(c.scale)?;
            }
            ModelConfig::Encoder(c) => {
                positive("scale", c.scale)?;
                positive("rrdb_channels", c.rrdb_channels)?;
                let s2 = c.scale * c.scale;
                if c.rrdb_channels % s2 != 0 {
                    return Err(Error::InvalidArgument(format!(
                        "encoder rrdb_channels {} must be divisible by scale² = {s2}",
                        c.rrdb_channels
                    )));
                }
            }
            ModelConfig::Discriminator(c) => {
                positive("base_channels", c.base_channels)?;
                if c.patch < DiscriminatorConfig::MIN_PATCH
                    || c.patch % DiscriminatorConfig::DOWNSAMPLE != 0
                {
                    return Err(Error::InvalidArgument(format!(
                        "discriminator patch {} must be a multiple of {} and at least {}",
                        c.patch,
                        DiscriminatorConfig::DOWNSAMPLE,
                        DiscriminatorConfig::MIN_PATCH
                    )));
                }
            }
            ModelConfig::Extractor(c) => {
                if c.channels.is_empty() || c.channels.contains(&0) {
                    return Err(Error::InvalidArgument("extractor channels must be positive".into()));
                }
                if c.feature_layers.is_empty()
                    || c.feature_layers.iter().chain(&c.stride2_layers).any(|&i| i >= c.channels.len())
                {
                    return Err(Error::InvalidArgument("extractor layer index out of range".into()));
                }
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::Generator(_) => "generator",
            ModelConfig::Encoder(_) => "encoder",
            ModelConfig::Discriminator(_) => "discriminator",
            ModelConfig::Extractor(_) => "extractor",
        }
    }

    pub(crate) fn layout(&self) -> Result<Vec<ParamSpec>> {
        self.validate()?;
        let mut l = Layout(Vec::new());
        match self {
            ModelConfig::Generator(c) => {
                let nf = c.base_channels;
                l.conv("conv_first", 3, nf, Init::DefaultUniform);
                for b in 0..c.num_rrdb_blocks {
                    l.rrdb(&format!("body.{b}"), nf, c.growth_channels);
                }
                l.conv("conv_body", nf, nf, Init::DefaultUniform);
                for i in 0..upsample_stages(c.scale)?.len() {
                    l.conv(&format!("conv_up{i}"), nf, nf, Init::DefaultUniform);
                }
                l.conv("conv_hr", nf, nf, Init::DefaultUniform);
                l.conv("conv_last", nf, 3, Init::DefaultUniform);
            }
            ModelConfig::Encoder(c) => {
                let nf = c.rrdb_channels;
                l.conv("conv_in1", 3, nf, Init::DefaultUniform);
                l.conv("conv_in2", nf, c.pre_unshuffle_channels(), Init::DefaultUniform);
                for b in 0..EncoderConfig::NUM_RRDB_BLOCKS {
                    l.rrdb(&format!("body.{b}"), nf, c.growth_channels());
                }
                l.conv("conv_out1", nf, nf, Init::DefaultUniform);
                l.conv("conv_out2", nf, 3, Init::DefaultUniform);
            }
            ModelConfig::Discriminator(c) => {
                let nf = c.base_channels;
                let chans = [(3, nf), (nf, nf), (nf, 2 * nf), (2 * nf, 2 * nf), (2 * nf, 4 * nf)];
                for (i, (cin, cout)) in chans.into_iter().enumerate() {
                    l.conv(&format!("conv{i}"), cin, cout, Init::KaimingNormal(1.0));
                }
                l.conv("conv_out", 4 * nf, 1, Init::KaimingNormal(1.0));
            }
            ModelConfig::Extractor(c) => {
                let mut cin = 3;
                for (i, &cout) in c.channels.iter().enumerate() {
                    l.conv(&format!("conv{i}"), cin, cout, Init::KaimingNormal(1.0));
                    cin = cout;
                }
            }
        }
        Ok(l.0)
    }
}

fn check_input(x: &Tensor, what: &str) -> Result<(usize, usize)> {
    let dims = x.dims();
    if dims.len() != 4 || dims[1] != 3 {
        return Err(Error::Dimension(format!(
            "{what} expects a [N,3,H,W] batch, got {dims:?}"
        )));
    }
    Ok((dims[2], dims[3]))
}

pub(crate) fn forward(state: &ModelState, x: &Tensor) -> Result<Tensor> {
    match state.config() {
        ModelConfig::Generator(c) => generator_forward(state, c, x),
        ModelConfig::Encoder(c) => encoder_forward(state, c, x),
        ModelConfig::Discriminator(c) => discriminator_forward(state, c, x),
        ModelConfig::Extractor(c) => {
            let feats = extractor_features(state, c, x)?;
            Ok(feats.last().cloned().expect("at least one feature layer"))
        }
    }
}

fn generator_forward(state: &ModelState, c: &GeneratorConfig, x: &Tensor) -> Result<Tensor> {
    check_input(x, "generator")?;
    let feat = conv(state, "conv_first", x, 1)?;
    let mut body = feat.clone();
    for b in 0..c.num_rrdb_blocks {
        body = rrdb(state, &format!("body.{b}"), &body)?;
    }
    let mut feat = (feat + conv(state, "conv_body", &body, 1)?)?;
    for (i, f) in upsample_stages(c.scale)?.into_iter().enumerate() {
        let (_, _, h, w) = feat.dims4()?;
        feat = feat.upsample_nearest2d(h * f, w * f)?;
        feat = lrelu(&conv(state, &format!("conv_up{i}"), &feat, 1)?)?;
    }
    let hr = lrelu(&conv(state, "conv_hr", &feat, 1)?)?;
    conv(state, "conv_last", &hr, 1)
}

fn encoder_forward(state: &ModelState, c: &EncoderConfig, x: &Tensor) -> Result<Tensor> {
    let (h, w) = check_input(x, "encoder")?;
    if h % c.scale != 0 || w % c.scale != 0 {
        return Err(Error::Dimension(format!(
            "encoder input {h}x{w} is not divisible by scale {}",
            c.scale
        )));
    }
    let f = lrelu(&conv(state, "conv_in1", x, 1)?)?;
    let f = conv(state, "conv_in2", &f, 1)?;
    let feat = pixel_unshuffle_tensor(&f, c.scale)?;
    let mut body = feat.clone();
    for b in 0..EncoderConfig::NUM_RRDB_BLOCKS {
        body = rrdb(state, &format!("body.{b}"), &body)?;
    }
    let out = lrelu(&conv(state, "conv_out1", &(feat + body)?, 1)?)?;
    conv(state, "conv_out2", &out, 1)
}

fn discriminator_forward(state: &ModelState, c: &DiscriminatorConfig, x: &Tensor) -> Result<Tensor> {
    let (h, w) = check_input(x, "discriminator")?;
    if h != c.patch || w != c.patch {
        return Err(Error::Dimension(format!(
            "discriminator built for {0}x{0} patches, got {h}x{w}",
            c.patch
        )));
    }
    let mut f = lrelu(&conv(state, "conv0", x, 1)?)?;
    for (i, stride) in [(1, 2), (2, 1), (3, 2), (4, 1)] {
        f = lrelu(&instance_norm(&conv(state, &format!("conv{i}"), &f, stride)?)?)?;
    }
    conv(state, "conv_out", &f, 1)
}

pub(crate) fn extractor_features(
    state: &ModelState,
    c: &ExtractorConfig,
    x: &Tensor,
) -> Result<Vec<Tensor>> {
    check_input(x, "feature extractor")?;
    let mut f = x.clone();
    let mut out = Vec::with_capacity(c.feature_layers.len());
    for i in 0..c.channels.len() {
        let stride = if c.stride2_layers.contains(&i) { 2 } else { 1 };
        f = lrelu(&conv(state, &format!("conv{i}"), &f, stride)?)?;
        if c.feature_layers.contains(&i) {
            out.push(f.clone());
        }
    }
    Ok(out)
}
