//! Training objective: pixel, perceptual, gradient and relativistic
//! adversarial terms combined with non-negative weights.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{ConvSpec, Graph, Var};
use crate::error::{Error, Result};
use crate::model::{Bound, Conv2d, ParamStore};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub pixel: f32,
    pub perceptual: f32,
    pub gradient: f32,
    pub adversarial: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            pixel: 1.0,
            perceptual: 0.1,
            gradient: 0.5,
            adversarial: 0.01,
        }
    }
}

impl LossWeights {
    pub const PIXEL_ONLY: Self = Self {
        pixel: 1.0,
        perceptual: 0.0,
        gradient: 0.0,
        adversarial: 0.0,
    };

    pub fn as_array(&self) -> [f32; 4] {
        [self.pixel, self.perceptual, self.gradient, self.adversarial]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.as_array();
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("loss weights", format!("{w:?} must be finite and non-negative")));
        }
        if w.iter().all(|&v| v == 0.0) {
            return Err(Error::invalid("loss weights", "at least one weight must be positive"));
        }
        Ok(())
    }
}

/// The four loss terms, as graph nodes or plain values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossComponents<V> {
    pub pixel: V,
    pub perceptual: V,
    pub gradient: V,
    pub adversarial: V,
}

fn same_shape<T: Real>(g: &Graph<T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::Shape {
            op,
            detail: format!("prediction {:?} vs target {:?}", g.shape(a), g.shape(b)),
        });
    }
    Ok(())
}

/// Mean squared error.
pub fn pixel_loss<T: Real>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    same_shape(g, "pixel_loss", pred, target)?;
    let d = g.sub(pred, target)?;
    g.square_mean(d)
}

/// Ordered feature stages compared by the perceptual loss.
pub trait FeatureExtractor {
    fn num_stages(&self) -> usize;
    fn features<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Vec<Var>>;
}

/// Single stage returning its input; reduces the perceptual loss to mean absolute error.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn num_stages(&self) -> usize {
        1
    }

    fn features<T: Real>(&self, _g: &mut Graph<T>, x: Var) -> Result<Vec<Var>> {
        Ok(alloc::vec![x])
    }
}

/// Fixed, untrained stack of stride-2 3x3 convolutions with ReLU; the output
/// of every stage is one feature level.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyExtractor {
    params: ParamStore,
    stages: Vec<Conv2d>,
}

impl ToyExtractor {
    pub const CHANNELS: [usize; 4] = [8, 16, 16, 16];
    pub const DEFAULT_SEED: u64 = 0x5EED_F00D;

    pub fn new(seed: u64) -> Self {
        let mut params = ParamStore::new();
        let mut cin = 3;
        let stages = Self::CHANNELS
            .iter()
            .enumerate()
            .map(|(i, &cout)| {
                let c = Conv2d::new(&mut params, &format!("extractor.{i}"), ConvSpec::downsample(cin, cout))
                    .expect("static spec");
                cin = cout;
                c
            })
            .collect();
        params.xavier_init(seed);
        Self { params, stages }
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// For loading externally trained weights.
    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

impl Default for ToyExtractor {
    fn default() -> Self {
        Self::new(Self::DEFAULT_SEED)
    }
}

impl FeatureExtractor for ToyExtractor {
    fn num_stages(&self) -> usize {
        self.stages.len()
    }

    fn features<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Vec<Var>> {
        let p: Bound = self.params.bind(g, false);
        let mut out = Vec::with_capacity(self.stages.len());
        let mut h = x;
        for conv in &self.stages {
            h = conv.forward(g, &p, h)?;
            h = g.relu(h);
            out.push(h);
        }
        Ok(out)
    }
}

/// Sum over stages of the mean absolute feature difference.
pub fn perceptual_loss<T: Real, E: FeatureExtractor>(
    g: &mut Graph<T>,
    pred: Var,
    target: Var,
    extractor: &E,
) -> Result<Var> {
    same_shape(g, "perceptual_loss", pred, target)?;
    let fp = extractor.features(g, pred)?;
    let ft = extractor.features(g, target)?;
    if fp.is_empty() || fp.len() != ft.len() {
        return Err(Error::invalid("feature extractor", "must yield the same non-zero number of stages"));
    }
    let mut total: Option<Var> = None;
    for (a, b) in fp.into_iter().zip(ft) {
        let d = g.sub(a, b)?;
        let l = g.abs_mean(d)?;
        total = Some(match total {
            Some(t) => g.add(t, l)?,
            None => l,
        });
    }
    Ok(total.expect("non-empty"))
}

/// `mean|dx(pred) - dx(target)| + mean|dy(pred) - dy(target)|` with forward differences.
pub fn gradient_loss<T: Real>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    same_shape(g, "gradient_loss", pred, target)?;
    let px = g.diff_x(pred)?;
    let tx = g.diff_x(target)?;
    let py = g.diff_y(pred)?;
    let ty = g.diff_y(target)?;
    let dx = g.sub(px, tx)?;
    let dy = g.sub(py, ty)?;
    let lx = g.abs_mean(dx)?;
    let ly = g.abs_mean(dy)?;
    g.add(lx, ly)
}

/// `-mean(log(sigmoid(a - b)))`.
fn relativistic<T: Real>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let ls = g.log_sigmoid(d);
    let m = g.mean(ls)?;
    Ok(g.neg(m))
}

/// Relativistic losses from paired raw scores: `(generator, discriminator)`.
pub fn adversarial_losses<T: Real>(g: &mut Graph<T>, real_scores: Var, fake_scores: Var) -> Result<(Var, Var)> {
    if g.shape(real_scores) != g.shape(fake_scores) {
        return Err(Error::Shape {
            op: "adversarial_losses",
            detail: format!("real {:?} vs fake {:?}", g.shape(real_scores), g.shape(fake_scores)),
        });
    }
    let lg = relativistic(g, fake_scores, real_scores)?;
    let ld = relativistic(g, real_scores, fake_scores)?;
    Ok((lg, ld))
}

/// Weighted sum; zero-weight terms are left out of the graph.
pub fn total_loss<T: Real>(g: &mut Graph<T>, c: LossComponents<Var>, w: &LossWeights) -> Result<Var> {
    let terms = [
        (c.pixel, w.pixel),
        (c.perceptual, w.perceptual),
        (c.gradient, w.gradient),
        (c.adversarial, w.adversarial),
    ];
    let mut total: Option<Var> = None;
    for (v, wk) in terms {
        if g.value(v).numel() != 1 {
            return Err(Error::NonScalarLoss {
                numel: g.value(v).numel(),
            });
        }
        if wk == 0.0 {
            continue;
        }
        let t = g.scale(v, wk as f64);
        total = Some(match total {
            Some(acc) => g.add(acc, t)?,
            None => t,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => {
            let z = g.scale(c.pixel, 0.0);
            Ok(z)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn leaf(g: &mut Graph<f32>, shape: &[usize], f: impl Fn(usize) -> f32) -> Var {
        g.param(Tensor::from_fn(shape.to_vec(), f))
    }

    #[test]
    fn pixel_cases() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[1, 3, 4, 4], |i| (i % 7) as f32 / 10.0);
        let b = leaf(&mut g, &[1, 3, 4, 4], |i| (i % 7) as f32 / 10.0 + 0.1);
        let same = pixel_loss(&mut g, a, a).unwrap();
        assert_eq!(g.value(same).item().unwrap(), 0.0);
        let off = pixel_loss(&mut g, b, a).unwrap();
        assert!((g.value(off).item().unwrap() - 0.01).abs() < 1e-7);
        let c = leaf(&mut g, &[1, 3, 4, 5], |_| 0.0);
        assert!(pixel_loss(&mut g, a, c).is_err());
    }

    #[test]
    fn gradient_hand_case() {
        let mut g = Graph::<f32>::new();
        let p = g.constant(Tensor::new([1, 1, 2, 2], alloc::vec![0.0, 1.0, 0.0, 1.0]).unwrap());
        let t = g.constant(Tensor::zeros([1, 1, 2, 2]));
        let l = gradient_loss(&mut g, p, t).unwrap();
        assert!((g.value(l).item().unwrap() - 1.0).abs() < 1e-6);
        let tiny = g.constant(Tensor::zeros([1, 1, 1, 2]));
        assert!(gradient_loss(&mut g, tiny, tiny).is_err());
    }

    #[test]
    fn adversarial_symmetric_point() {
        let mut g = Graph::<f64>::new();
        let r = g.constant(Tensor::new([3, 1], alloc::vec![0.3, -2.0, 7.5]).unwrap());
        let (lg, ld) = adversarial_losses(&mut g, r, r).unwrap();
        assert!((g.value(lg).item().unwrap() - core::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(g.value(lg), g.value(ld));
    }

    #[test]
    fn total_weights() {
        let mut g = Graph::new();
        let comps = [0.01f32, 0.2, 0.05, 0.6931].map(|v| g.constant(Tensor::scalar(v)));
        let c = LossComponents {
            pixel: comps[0],
            perceptual: comps[1],
            gradient: comps[2],
            adversarial: comps[3],
        };
        let ones = LossWeights {
            pixel: 1.0,
            perceptual: 1.0,
            gradient: 1.0,
            adversarial: 1.0,
        };
        let t = total_loss(&mut g, c, &ones).unwrap();
        assert!((g.value(t).item().unwrap() - 0.9531).abs() < 1e-6);
        let t = total_loss(&mut g, c, &LossWeights::PIXEL_ONLY).unwrap();
        assert_eq!(g.value(t).item().unwrap(), 0.01);
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        let zero = LossWeights {
            pixel: 0.0,
            perceptual: 0.0,
            gradient: 0.0,
            adversarial: 0.0,
        };
        assert!(zero.validate().is_err());
        let neg = LossWeights { pixel: -1.0, ..LossWeights::default() };
        assert!(neg.validate().is_err());
    }
}
