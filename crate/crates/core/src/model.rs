//! Generator and discriminator.
//!
//! Generator layout for input `[N, 3, H, W]` and base width `C`:
//!
//! ```text
//! stem    conv3x3/2 (3 -> C), relu, conv3x3/2 (C -> C), relu        H/4 x W/4
//! context 7 residual blocks, dilations 1, 1, 2, 4, 8, 16, 1:
//!         x + attention(conv_d(relu(conv_d(x))))
//! head    [nearest x2, conv3x3 (C -> C), relu] x 2                   H x W
//! out     conv3x3 (C -> 3), sigmoid
//! ```
//!
//! Channel attention gates each feature map by
//! `s = sigmoid(W_up relu(W_down gap(x)))` with `W_down: C -> C/r`.
//!
//! The trainable scalar count is
//! `153 C^2 + 14 C^2 / r + 79 C + 7 C / r + 3`
//! (41,359 for the default `C = 16, r = 4`).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ConvSpec, Graph, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Dilation of both convolutions in each of the seven context blocks.
pub const DILATIONS: [usize; 7] = [1, 1, 2, 4, 8, 16, 1];

/// Spatial reduction of the generator stem.
pub const DOWNSCALE: usize = 4;

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Xavier { fan_in: usize, fan_out: usize },
    Zeros,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub init: Init,
}

/// Named trainable arrays in declaration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

/// Graph handles for every parameter of a store, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    /// Handles in the store's declaration order, e.g. leaves created by hand.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: impl Into<Vec<usize>>, init: Init) -> ParamId {
        let shape = shape.into();
        let n = shape.iter().product();
        self.params.push(Param {
            name: name.into(),
            shape,
            data: vec![0.0; n],
            init,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    /// Values of the `index`-th parameter in declaration order.
    pub fn data_mut(&mut self, index: usize) -> &mut [f32] {
        &mut self.params[index].data
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// `(name, shape, count)` per parameter.
    pub fn table(&self) -> Vec<(String, Vec<usize>, usize)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.shape.clone(), p.data.len()))
            .collect()
    }

    /// FNV-1a over names, shapes and value bits.
    pub fn fingerprint(&self) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(PRIME);
            }
        };
        for p in &self.params {
            eat(p.name.as_bytes());
            for &d in &p.shape {
                eat(&(d as u64).to_le_bytes());
            }
            for v in &p.data {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }

    /// Replace the values of parameter `name`.
    pub fn load(&mut self, name: &str, data: &[f32]) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::invalid("parameter", format!("unknown parameter `{name}`")))?;
        let p = &mut self.params[id.0];
        if p.data.len() != data.len() {
            return Err(Error::shape(
                "load",
                format!("`{name}` has {} values, got {}", p.data.len(), data.len()),
            ));
        }
        p.data.copy_from_slice(data);
        Ok(())
    }

    /// Xavier-uniform weights `U(-a, a)`, `a = sqrt(6 / (fan_in + fan_out))`,
    /// zero biases. Parameters are drawn in declaration order from one stream.
    pub fn xavier_init(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut self.params {
            match p.init {
                Init::Zeros => p.data.iter_mut().for_each(|v| *v = 0.0),
                Init::Xavier { fan_in, fan_out } => {
                    let a = Float::sqrt(6.0 / (fan_in + fan_out) as f64) as f32;
                    for v in &mut p.data {
                        *v = rng.random_range(-a..a);
                    }
                }
            }
        }
    }

    pub fn zero(&mut self) {
        for p in &mut self.params {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Put every parameter on `g`, trainable or as constants.
    pub fn bind<T: Real>(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        Bound(
            self.params
                .iter()
                .map(|p| {
                    let t = Tensor::new(p.shape.clone(), p.data.iter().map(|&v| T::of_f32(v)).collect())
                        .expect("store keeps shapes consistent");
                    g.leaf(t, trainable)
                })
                .collect(),
        )
    }

    /// Gradients for each parameter after `g.backward`, zero where none reached.
    pub fn collect_grads<T: Real>(&self, g: &Graph<T>, bound: &Bound) -> Vec<Vec<f32>> {
        self.params
            .iter()
            .zip(bound.vars())
            .map(|(p, &v)| match g.grad(v) {
                Some(t) => t.data().iter().map(|x| x.as_f32()).collect(),
                None => vec![0.0; p.data.len()],
            })
            .collect()
    }
}

pub fn count_params(store: &ParamStore) -> usize {
    store.count()
}

pub fn xavier_init(store: &mut ParamStore, seed: u64) {
    store.xavier_init(seed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv2d {
    pub fn new(store: &mut ParamStore, name: &str, spec: ConvSpec) -> Result<Self> {
        spec.validate()?;
        let kk = spec.kernel_size * spec.kernel_size;
        let weight = store.add(
            format!("{name}.weight"),
            spec.weight_shape(),
            Init::Xavier {
                fan_in: spec.in_channels * kk,
                fan_out: spec.out_channels * kk,
            },
        );
        let bias = store.add(format!("{name}.bias"), [spec.out_channels], Init::Zeros);
        Ok(Self { spec, weight, bias })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.conv2d(x, p.var(self.weight), Some(p.var(self.bias)), self.spec)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_features: usize, out_features: usize) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            [out_features, in_features],
            Init::Xavier {
                fan_in: in_features,
                fan_out: out_features,
            },
        );
        let bias = store.add(format!("{name}.bias"), [out_features], Init::Zeros);
        Self {
            in_features,
            out_features,
            weight,
            bias,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.linear(x, p.var(self.weight), Some(p.var(self.bias)))
    }
}

/// Squeeze-and-excitation style channel gate.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelAttention {
    pub channels: usize,
    pub reduction: usize,
    pub down: Linear,
    pub up: Linear,
}

impl ChannelAttention {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || channels == 0 || channels % reduction != 0 {
            return Err(Error::invalid(
                "channel attention",
                format!("reduction {reduction} must be positive and divide the channel count {channels}"),
            ));
        }
        let hidden = channels / reduction;
        let down = Linear::new(store, &format!("{name}.down"), channels, hidden);
        let up = Linear::new(store, &format!("{name}.up"), hidden, channels);
        Ok(Self {
            channels,
            reduction,
            down,
            up,
        })
    }

    /// Per-channel scales `[N, C]`, each in (0, 1).
    pub fn gate<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let z = g.global_avg_pool(x)?;
        let d = self.down.forward(g, p, z)?;
        let d = g.relu(d);
        let u = self.up.forward(g, p, d)?;
        Ok(g.sigmoid(u))
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let s = self.gate(g, p, x)?;
        g.mul(x, s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock {
    pub dilation: usize,
    pub conv_a: Conv2d,
    pub conv_b: Conv2d,
    pub attention: ChannelAttention,
}

impl ResidualBlock {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, reduction: usize, dilation: usize) -> Result<Self> {
        let spec = ConvSpec::same(channels, channels, 3, dilation);
        Ok(Self {
            dilation,
            conv_a: Conv2d::new(store, &format!("{name}.conv_a"), spec)?,
            conv_b: Conv2d::new(store, &format!("{name}.conv_b"), spec)?,
            attention: ChannelAttention::new(store, &format!("{name}.attention"), channels, reduction)?,
        })
    }

    /// Residual branch only: attention applied to the second convolution.
    pub fn branch<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = self.conv_a.forward(g, p, x)?;
        let y = g.relu(y);
        let y = self.conv_b.forward(g, p, y)?;
        self.attention.forward(g, p, y)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let b = self.branch(g, p, x)?;
        g.add(x, b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GeneratorConfig {
    /// Base channel width `C`.
    pub width: usize,
    /// Attention reduction ratio `r`.
    pub reduction: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { width: 16, reduction: 4 }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.reduction == 0 || self.width % self.reduction != 0 {
            return Err(Error::invalid(
                "generator config",
                format!("reduction {} must divide width {}", self.reduction, self.width),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    config: GeneratorConfig,
    params: ParamStore,
    stem: [Conv2d; 2],
    blocks: Vec<ResidualBlock>,
    head: [Conv2d; 2],
    out: Conv2d,
}

impl Generator {
    /// Zero-initialized generator.
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let c = config.width;
        let mut s = ParamStore::new();
        let stem = [
            Conv2d::new(&mut s, "stem.0", ConvSpec::downsample(3, c))?,
            Conv2d::new(&mut s, "stem.1", ConvSpec::downsample(c, c))?,
        ];
        let blocks = DILATIONS
            .iter()
            .enumerate()
            .map(|(i, &d)| ResidualBlock::new(&mut s, &format!("blocks.{i}"), c, config.reduction, d))
            .collect::<Result<Vec<_>>>()?;
        let head = [
            Conv2d::new(&mut s, "head.0", ConvSpec::same(c, c, 3, 1))?,
            Conv2d::new(&mut s, "head.1", ConvSpec::same(c, c, 3, 1))?,
        ];
        let out = Conv2d::new(&mut s, "out", ConvSpec::same(c, 3, 3, 1))?;
        Ok(Self {
            config,
            params: s,
            stem,
            blocks,
            head,
            out,
        })
    }

    /// Xavier-initialized generator.
    pub fn with_seed(config: GeneratorConfig, seed: u64) -> Result<Self> {
        let mut g = Self::new(config)?;
        g.params.xavier_init(seed);
        Ok(g)
    }

    pub fn config(&self) -> GeneratorConfig {
        self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn blocks(&self) -> &[ResidualBlock] {
        &self.blocks
    }

    pub fn dilations(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.dilation).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn stem_forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, input: Var) -> Result<Var> {
        let [_, c, h, w] = g.value(input).dims4("generator")?;
        if c != 3 {
            return Err(Error::shape("generator", format!("expected 3 input channels, got {c}")));
        }
        if h == 0 || w == 0 || h % DOWNSCALE != 0 || w % DOWNSCALE != 0 {
            return Err(Error::invalid(
                "generator input",
                format!("spatial dims {h}x{w} must be positive multiples of {DOWNSCALE}; pad or crop the image first"),
            ));
        }
        let mut x = input;
        for conv in &self.stem {
            x = conv.forward(g, p, x)?;
            x = g.relu(x);
        }
        Ok(x)
    }

    pub fn context_forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        self.blocks.iter().try_fold(x, |x, b| b.forward(g, p, x))
    }

    pub fn head_forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let mut x = x;
        for conv in &self.head {
            x = g.upsample_nearest2x(x)?;
            x = conv.forward(g, p, x)?;
            x = g.relu(x);
        }
        let x = self.out.forward(g, p, x)?;
        Ok(g.sigmoid(x))
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, input: Var) -> Result<Var> {
        let x = self.stem_forward(g, p, input)?;
        let x = self.context_forward(g, p, x)?;
        self.head_forward(g, p, x)
    }

    /// Gradient-free forward pass.
    pub fn forward_tensor(&self, input: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(input.clone());
        let y = self.forward(&mut g, &p, x)?;
        Ok(g.value(y).clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DiscriminatorConfig {
    /// Channels of the first stage; each later stage doubles.
    pub width: usize,
    pub stages: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { width: 16, stages: 4 }
    }
}

/// Strided conv stack with leaky ReLU, global average pooling and a linear
/// head producing one raw score per image.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    params: ParamStore,
    stages: Vec<Conv2d>,
    score: Linear,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig) -> Result<Self> {
        if config.width == 0 || config.stages == 0 {
            return Err(Error::invalid("discriminator config", "width and stages must be positive"));
        }
        let mut s = ParamStore::new();
        let mut stages = Vec::with_capacity(config.stages);
        let mut cin = 3;
        for i in 0..config.stages {
            let cout = config.width << i;
            stages.push(Conv2d::new(&mut s, &format!("stages.{i}"), ConvSpec::downsample(cin, cout))?);
            cin = cout;
        }
        let score = Linear::new(&mut s, "score", cin, 1);
        Ok(Self {
            config,
            params: s,
            stages,
            score,
        })
    }

    pub fn with_seed(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        let mut d = Self::new(config)?;
        d.params.xavier_init(seed);
        Ok(d)
    }

    pub fn config(&self) -> DiscriminatorConfig {
        self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// `[N, 3, H, W] -> [N, 1]` raw scores.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, input: Var) -> Result<Var> {
        let [_, c, _, _] = g.value(input).dims4("discriminator")?;
        if c != 3 {
            return Err(Error::shape("discriminator", format!("expected 3 input channels, got {c}")));
        }
        let mut x = input;
        for conv in &self.stages {
            x = conv.forward(g, p, x)?;
            x = g.leaky_relu(x, LEAKY_SLOPE);
        }
        let z = g.global_avg_pool(x)?;
        self.score.forward(g, p, z)
    }

    pub fn forward_tensor(&self, input: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(input.clone());
        let y = self.forward(&mut g, &p, x)?;
        Ok(g.value(y).clone())
    }
}

/// Side of the square input region seen by one output of a stack of
/// `k x k` stride-1 convolutions, `convs_per_dilation` per dilation entry.
pub fn receptive_field(dilations: &[usize], convs_per_dilation: usize, kernel_size: usize) -> usize {
    1 + dilations
        .iter()
        .map(|d| convs_per_dilation * (kernel_size - 1) * d)
        .sum::<usize>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_conv_count() {
        let mut s = ParamStore::new();
        Conv2d::new(&mut s, "c", ConvSpec::same(3, 16, 3, 1)).unwrap();
        assert_eq!(s.count(), 448);
    }

    #[test]
    fn attention_rejects_indivisible() {
        let mut s = ParamStore::new();
        assert!(ChannelAttention::new(&mut s, "a", 6, 4).is_err());
        assert!(GeneratorConfig { width: 6, reduction: 4 }.validate().is_err());
    }

    #[test]
    fn names_are_unique() {
        let g = Generator::new(GeneratorConfig::default()).unwrap();
        let names: Vec<&str> = g.params().params().iter().map(|p| p.name.as_str()).collect();
        let mut sorted = names.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
    }

    #[test]
    fn receptive_field_of_context_chain() {
        assert_eq!(receptive_field(&DILATIONS, 2, 3), 133);
    }

    #[test]
    fn load_checks_length() {
        let mut d = Discriminator::new(DiscriminatorConfig::default()).unwrap();
        assert!(d.params_mut().load("score.bias", &[1.0]).is_ok());
        assert!(d.params_mut().load("score.bias", &[1.0, 2.0]).is_err());
        assert!(d.params_mut().load("nope", &[1.0]).is_err());
    }
}
