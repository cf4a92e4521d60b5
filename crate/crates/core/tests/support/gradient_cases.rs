// Finite-difference cases, one suite per differentiable operation, model
// block and loss. Shared by the gradient test target and the acceptance run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reflectnet_core::autodiff::{ConvSpec, Graph, Var};
use reflectnet_core::gradcheck::{check, Report, Tolerance};
use reflectnet_core::loss::{
    adversarial_losses, gradient_loss, perceptual_loss, pixel_loss, total_loss, LossComponents, LossWeights,
    ToyExtractor,
};
use reflectnet_core::model::{
    Bound, ChannelAttention, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, ParamStore,
    ResidualBlock,
};
use reflectnet_core::{Result, Tensor};

pub const CASES: usize = 20;
const H: f64 = 1e-6;

pub struct Suite {
    pub name: &'static str,
    pub run: fn(u64) -> Result<Report>,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Values with magnitude in [0.05, 1] and random sign, away from kinks at 0.
fn away(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = r.random_range(0.05..1.0);
        if r.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

fn uniform(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| r.random_range(lo..hi))
}

fn nchw(r: &mut ChaCha8Rng) -> Vec<usize> {
    vec![r.random_range(1..3), r.random_range(1..4), r.random_range(2..6), r.random_range(2..6)]
}

/// `mean(y * w)` for a fixed random `w`, so every output element matters.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut r = rng(seed ^ 0x9E37_79B9);
    let w = g.constant(uniform(&mut r, g.shape(y), -1.0, 1.0));
    let p = g.mul(y, w)?;
    g.mean(p)
}

fn all(inputs: &[Tensor<f64>], seed: u64, f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>) -> Result<Report> {
    sampled(inputs, seed, usize::MAX, f)
}

/// Like [`all`] but probing at most `limit` random elements per input.
fn sampled(
    inputs: &[Tensor<f64>],
    seed: u64,
    limit: usize,
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
) -> Result<Report> {
    let mut pick = rng(seed ^ 0x51C7);
    check(
        inputs,
        |g, v| {
            let y = f(g, v)?;
            if g.value(y).numel() == 1 {
                Ok(y)
            } else {
                project(g, y, seed)
            }
        },
        H,
        Tolerance::default(),
        |_, n| (n > limit).then(|| (0..limit).map(|_| pick.random_range(0..n)).collect()),
    )
}

fn unary(seed: u64, f: fn(&mut Graph<f64>, Var) -> Var) -> Result<Report> {
    let mut r = rng(seed);
    let s = nchw(&mut r);
    all(&[away(&mut r, &s)], seed, |g, v| Ok(f(g, v[0])))
}

/// Second operand shape: equal, scalar, or per-channel `[N, C]`.
fn binary(seed: u64, f: fn(&mut Graph<f64>, Var, Var) -> Result<Var>) -> Result<Report> {
    let mut r = rng(seed);
    let s = nchw(&mut r);
    let other = match seed % 3 {
        0 => s.clone(),
        1 => vec![],
        _ => vec![s[0], s[1]],
    };
    let a = away(&mut r, &s);
    let b = away(&mut r, &other);
    let flip = r.random::<bool>();
    all(&[a, b], seed, move |g, v| if flip { f(g, v[1], v[0]) } else { f(g, v[0], v[1]) })
}

fn conv(seed: u64) -> Result<Report> {
    let mut r = rng(seed);
    let k = [1, 3, 5][r.random_range(0..3)];
    let spec = ConvSpec {
        in_channels: r.random_range(1..4),
        out_channels: r.random_range(1..4),
        kernel_size: k,
        dilation: r.random_range(1..3),
        stride: r.random_range(1..3),
        padding: r.random_range(0..3),
    };
    let reach = (k - 1) * spec.dilation + 1;
    let lo = reach.saturating_sub(2 * spec.padding).max(1);
    let shape = [r.random_range(1..3), spec.in_channels, r.random_range(lo..lo + 4), r.random_range(lo..lo + 4)];
    let x = away(&mut r, &shape);
    let w = away(&mut r, &spec.weight_shape());
    let b = away(&mut r, &[spec.out_channels]);
    let with_bias = seed % 2 == 0;
    all(&[x, w, b], seed, move |g, v| g.conv2d(v[0], v[1], with_bias.then_some(v[2]), spec))
}

fn linear(seed: u64) -> Result<Report> {
    let mut r = rng(seed);
    let (n, i, o) = (r.random_range(1..4), r.random_range(1..6), r.random_range(1..6));
    let ins = [away(&mut r, &[n, i]), away(&mut r, &[o, i]), away(&mut r, &[o])];
    let with_bias = seed % 2 == 0;
    all(&ins, seed, move |g, v| g.linear(v[0], v[1], with_bias.then_some(v[2])))
}

fn pool(seed: u64) -> Result<Report> {
    let mut r = rng(seed);
    let s = nchw(&mut r);
    all(&[away(&mut r, &s)], seed, |g, v| g.global_avg_pool(v[0]))
}

fn upsample(seed: u64) -> Result<Report> {
    let mut r = rng(seed);
    let s = nchw(&mut r);
    all(&[away(&mut r, &s)], seed, |g, v| g.upsample_nearest2x(v[0]))
}

fn log(seed: u64) -> Result<Report> {
    let mut r = rng(seed);
    let s = nchw(&mut r);
    all(&[uniform(&mut r, &s, 0.1, 3.0)], seed, |g, v| Ok(g.log(v[0])))
}

fn scale(seed: u64) -> Result<Report> {
    let mut r = rng(seed);
    let s = nchw(&mut r);
    let c = r.random_range(-3.0..3.0);
    all(&[away(&mut r, &s)], seed, move |g, v| Ok(g.scale(v[0], c)))
}

fn leaky(seed: u64) -> Result<Report> {
    let mut r = rng(seed);
    let s = nchw(&mut r);
    let slope = r.random_range(0.01..0.5);
    all(&[away(&mut r, &s)], seed, move |g, v| Ok(g.leaky_relu(v[0], slope)))
}

fn reduction(seed: u64, f: fn(&mut Graph<f64>, Var) -> Result<Var>) -> Result<Report> {
    let mut r = rng(seed);
    let s = nchw(&mut r);
    all(&[away(&mut r, &s)], seed, move |g, v| f(g, v[0]))
}

/// Zero biases behind dead ReLUs put pre-activations exactly on the kink,
/// where central differences are meaningless; nudge every value off it.
fn jitter(store: &mut ParamStore, seed: u64) {
    let mut r = rng(seed ^ 0x7177);
    for i in 0..store.len() {
        store.data_mut(i).iter_mut().for_each(|v| *v += r.random_range(-0.1..0.1));
    }
}

/// Inputs are `[x, params...]`; probe up to 3 elements per parameter and 12 of `x`.
fn model<F>(seed: u64, x: Tensor<f64>, store: &ParamStore, f: F) -> Result<Report>
where
    F: Fn(&mut Graph<f64>, Var, &Bound) -> Result<Var>,
{
    let mut store = store.clone();
    jitter(&mut store, seed);
    let mut inputs = vec![x];
    for p in store.params() {
        inputs.push(Tensor::new(p.shape.clone(), p.data.iter().map(|&v| v as f64).collect())?);
    }
    let mut pick = rng(seed ^ 0x51C7);
    check(
        &inputs,
        |g, v| {
            let bound = Bound::from_vars(v[1..].to_vec());
            let y = f(g, v[0], &bound)?;
            project(g, y, seed)
        },
        H,
        Tolerance::default(),
        |k, n| {
            let m = if k == 0 { 12 } else { 3 };
            (n > m).then(|| (0..m).map(|_| pick.random_range(0..n)).collect())
        },
    )
}

fn attention(seed: u64) -> Result<Report> {
    let mut r = rng(seed);
    let (c, red) = [(4, 2), (6, 3), (8, 4), (4, 1)][r.random_range(0..4)];
    let mut s = ParamStore::new();
    let a = ChannelAttention::new(&mut s, "a", c, red)?;
    s.xavier_init(seed);
    let x = away(&mut r, &[2, c, 3, 4]);
    model(seed, x, &s, move |g, x, p| a.forward(g, p, x))
}

fn residual(seed: u64) -> Result<Report> {
    let mut r = rng(seed);
    let d = [1, 2, 4][r.random_range(0..3)];
    let mut s = ParamStore::new();
    let b = ResidualBlock::new(&mut s, "b", 4, 2, d)?;
    s.xavier_init(seed);
    let x = away(&mut r, &[1, 4, 6, 6]);
    model(seed, x, &s, move |g, x, p| b.forward(g, p, x))
}

fn generator(seed: u64) -> Result<Report> {
    let mut r = rng(seed);
    let net = Generator::with_seed(GeneratorConfig { width: 4, reduction: 2 }, seed)?;
    let x = uniform(&mut r, &[1, 3, 8, 8], 0.0, 1.0);
    model(seed, x, &net.params().clone(), move |g, x, p| net.forward(g, p, x))
}

fn discriminator(seed: u64) -> Result<Report> {
    let mut r = rng(seed);
    let net = Discriminator::with_seed(DiscriminatorConfig { width: 4, stages: 3 }, seed)?;
    let x = uniform(&mut r, &[2, 3, 8, 8], 0.0, 1.0);
    model(seed, x, &net.params().clone(), move |g, x, p| net.forward(g, p, x))
}

fn images(r: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> [Tensor<f64>; 2] {
    [uniform(r, &[n, 3, h, w], 0.0, 1.0), uniform(r, &[n, 3, h, w], 0.0, 1.0)]
}

fn pixel(seed: u64) -> Result<Report> {
    let mut r = rng(seed);
    let (h, w) = (r.random_range(2..7), r.random_range(2..7));
    all(&images(&mut r, 2, h, w), seed, |g, v| pixel_loss(g, v[0], v[1]))
}

fn extractor(seed: u64) -> ToyExtractor {
    let mut ex = ToyExtractor::new(seed);
    jitter(ex.params_mut(), seed);
    ex
}

fn perceptual(seed: u64) -> Result<Report> {
    let mut r = rng(seed);
    let ex = extractor(seed);
    sampled(&images(&mut r, 1, 16, 16), seed, 64, move |g, v| perceptual_loss(g, v[0], v[1], &ex))
}

fn gradient(seed: u64) -> Result<Report> {
    let mut r = rng(seed);
    let (h, w) = (r.random_range(2..7), r.random_range(2..7));
    all(&images(&mut r, 2, h, w), seed, |g, v| gradient_loss(g, v[0], v[1]))
}

fn scores(r: &mut ChaCha8Rng) -> [Tensor<f64>; 2] {
    let n = r.random_range(1..6);
    [uniform(r, &[n, 1], -4.0, 4.0), uniform(r, &[n, 1], -4.0, 4.0)]
}

fn adversarial_g(seed: u64) -> Result<Report> {
    let mut r = rng(seed);
    all(&scores(&mut r), seed, |g, v| Ok(adversarial_losses(g, v[0], v[1])?.0))
}

fn adversarial_d(seed: u64) -> Result<Report> {
    let mut r = rng(seed);
    all(&scores(&mut r), seed, |g, v| Ok(adversarial_losses(g, v[0], v[1])?.1))
}

fn total(seed: u64) -> Result<Report> {
    let mut r = rng(seed);
    let w = LossWeights {
        pixel: r.random_range(0.0..2.0),
        perceptual: r.random_range(0.0..2.0),
        gradient: r.random_range(0.0..2.0),
        adversarial: r.random_range(0.0..2.0),
    };
    let ex = extractor(seed);
    let [p, t] = images(&mut r, 2, 16, 16);
    let [sr, sf] = scores(&mut r);
    sampled(&[p, t, sr, sf], seed, 64, move |g, v| {
        let c = LossComponents {
            pixel: pixel_loss(g, v[0], v[1])?,
            perceptual: perceptual_loss(g, v[0], v[1], &ex)?,
            gradient: gradient_loss(g, v[0], v[1])?,
            adversarial: adversarial_losses(g, v[2], v[3])?.0,
        };
        total_loss(g, c, &w)
    })
}

pub fn suites() -> Vec<Suite> {
    vec![
        Suite { name: "conv2d", run: conv },
        Suite { name: "linear", run: linear },
        Suite { name: "global_avg_pool", run: pool },
        Suite { name: "upsample_nearest2x", run: upsample },
        Suite { name: "relu", run: |s| unary(s, |g, x| g.relu(x)) },
        Suite { name: "leaky_relu", run: leaky },
        Suite { name: "sigmoid", run: |s| unary(s, |g, x| g.sigmoid(x)) },
        Suite { name: "log_sigmoid", run: |s| unary(s, |g, x| g.log_sigmoid(x)) },
        Suite { name: "log", run: log },
        Suite { name: "scale", run: scale },
        Suite { name: "neg", run: |s| unary(s, |g, x| g.neg(x)) },
        Suite { name: "add", run: |s| binary(s, |g, a, b| g.add(a, b)) },
        Suite { name: "sub", run: |s| binary(s, |g, a, b| g.sub(a, b)) },
        Suite { name: "mul", run: |s| binary(s, |g, a, b| g.mul(a, b)) },
        Suite { name: "mean", run: |s| reduction(s, |g, x| g.mean(x)) },
        Suite { name: "abs_mean", run: |s| reduction(s, |g, x| g.abs_mean(x)) },
        Suite { name: "square_mean", run: |s| reduction(s, |g, x| g.square_mean(x)) },
        Suite { name: "diff_x", run: |s| reduction(s, |g, x| g.diff_x(x)) },
        Suite { name: "diff_y", run: |s| reduction(s, |g, x| g.diff_y(x)) },
        Suite { name: "channel_attention", run: attention },
        Suite { name: "residual_block", run: residual },
        Suite { name: "generator", run: generator },
        Suite { name: "discriminator", run: discriminator },
        Suite { name: "pixel_loss", run: pixel },
        Suite { name: "perceptual_loss", run: perceptual },
        Suite { name: "gradient_loss", run: gradient },
        Suite { name: "adversarial_g", run: adversarial_g },
        Suite { name: "adversarial_d", run: adversarial_d },
        Suite { name: "total_loss", run: total },
    ]
}

pub struct Summary {
    pub cases: usize,
    pub probes: usize,
    pub kinks: usize,
}

/// Run every case of every suite; `Err` lists the failing cases.
pub fn run_all() -> std::result::Result<Summary, Vec<String>> {
    let mut failures = Vec::new();
    let mut sum = Summary { cases: 0, probes: 0, kinks: 0 };
    for suite in suites() {
        for case in 0..CASES as u64 {
            sum.cases += 1;
            match (suite.run)(case) {
                Ok(m) => {
                    sum.probes += m.probes;
                    sum.kinks += m.kinks;
                    if !m.passes() {
                        failures.push(format!("{} case {case}: {m:?}", suite.name));
                    }
                }
                Err(e) => failures.push(format!("{} case {case}: {e}", suite.name)),
            }
        }
    }
    if failures.is_empty() {
        Ok(sum)
    } else {
        Err(failures)
    }
}
