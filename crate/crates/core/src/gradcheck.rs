//! Central finite-difference check of reverse-mode gradients.

use alloc::vec::Vec;

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { rtol: 1e-3, atol: 1e-8 }
    }
}

/// Worst element of one check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// `|a - n| / (atol + rtol * max(|a|, |n|))`; at most 1 passes.
    pub ratio: f64,
}

/// Outcome of one check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Report {
    pub worst: Mismatch,
    pub probes: usize,
    /// Probes whose central differences at `h` and `h / 2` disagree: a kink
    /// (ReLU, |x|) lies within `h` and the difference says nothing about the
    /// gradient.
    pub kinks: usize,
}

impl Report {
    /// Worst smooth probe within tolerance and at most 1% of probes on kinks.
    pub fn passes(&self) -> bool {
        self.worst.ratio <= 1.0 && self.kinks * 100 <= self.probes
    }
}

/// Compare analytic gradients of the scalar `f(inputs)` with central
/// differences of step `h`. `elements(input_index, numel)` picks which
/// elements to probe (all of them when it returns `None`).
pub fn check<F>(
    inputs: &[Tensor<f64>],
    f: F,
    h: f64,
    tol: Tolerance,
    mut elements: impl FnMut(usize, usize) -> Option<Vec<usize>>,
) -> Result<Report>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.value(out).item()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.param(x.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape().to_vec())))
        .collect();

    let mut worst = Mismatch {
        input: 0,
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
        ratio: 0.0,
    };
    let bound = |a: f64, b: f64| tol.atol + tol.rtol * a.abs().max(b.abs());
    let (mut probes, mut kinks) = (0, 0);
    let mut probe = inputs.to_vec();
    for (k, x) in inputs.iter().enumerate() {
        let idx = elements(k, x.numel()).unwrap_or_else(|| (0..x.numel()).collect());
        for i in idx {
            let orig = x.data()[i];
            let mut central = |step: f64| -> Result<f64> {
                probe[k].data_mut()[i] = orig + step;
                let up = eval(&probe)?;
                probe[k].data_mut()[i] = orig - step;
                let down = eval(&probe)?;
                probe[k].data_mut()[i] = orig;
                Ok((up - down) / (2.0 * step))
            };
            let numeric = central(h)?;
            let half = central(h / 2.0)?;
            probes += 1;
            if (numeric - half).abs() > bound(numeric, half) {
                kinks += 1;
                continue;
            }
            let a = analytic[k].data()[i];
            let ratio = (a - numeric).abs() / bound(a, numeric);
            if ratio > worst.ratio || ratio.is_nan() {
                worst = Mismatch {
                    input: k,
                    index: i,
                    analytic: a,
                    numeric,
                    ratio: if ratio.is_nan() { f64::INFINITY } else { ratio },
                };
            }
        }
    }
    Ok(Report { worst, probes, kinks })
}
