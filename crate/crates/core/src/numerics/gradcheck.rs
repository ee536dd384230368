//! Finite-difference verification of reverse-mode gradients.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Outcome of a gradient check. Failure is reported, never raised.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub skipped: usize,
    pub tolerance: f64,
    pub passed: bool,
}

type SkipFn<'a> = Box<dyn Fn(usize, f32) -> bool + 'a>;

/// Builder for a finite-difference gradient check.
///
/// The checked scalar is `Σ wᵢ yᵢ` over the op output `y`, accumulated in
/// `f64` on the finite-difference side (`w = 1` unless a projection is set).
/// The relative error of a coordinate is `|a − n| / max(|a|, |n|, floor)`
/// where `a` is the reverse-mode gradient and `n` the central difference.
/// The floor sits above the rounding noise of `f32` central differences,
/// which is about `1e-4` in absolute terms at the default step.
pub struct GradCheck<'a> {
    tolerance: f64,
    step: f32,
    floor: f64,
    projection: Option<Vec<f32>>,
    indices: Option<Vec<usize>>,
    skip: Option<SkipFn<'a>>,
}

impl<'a> GradCheck<'a> {
    pub const DEFAULT_STEP: f32 = 1e-3;
    pub const DEFAULT_FLOOR: f64 = 0.1;

    pub fn new(tolerance: f64) -> Self {
        Self {
            tolerance,
            step: Self::DEFAULT_STEP,
            floor: Self::DEFAULT_FLOOR,
            projection: None,
            indices: None,
            skip: None,
        }
    }

    pub fn step(mut self, step: f32) -> Self {
        self.step = step;
        self
    }

    pub fn floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    /// Weights `w` of the scalar `Σ wᵢ yᵢ`.
    pub fn projection(mut self, weights: Vec<f32>) -> Self {
        self.projection = Some(weights);
        self
    }

    /// Restrict the check to these input coordinates.
    pub fn indices(mut self, indices: Vec<usize>) -> Self {
        self.indices = Some(indices);
        self
    }

    /// Exclude coordinates for which `skip(index, value)` is true, e.g.
    /// points where the function is not differentiable.
    pub fn skip_if(mut self, skip: impl Fn(usize, f32) -> bool + 'a) -> Self {
        self.skip = Some(Box::new(skip));
        self
    }

    /// Runs the check. `op` builds a computation from the input leaf.
    pub fn run<F>(&self, op: F, input: &Tensor) -> Result<GradCheckReport>
    where
        F: Fn(&mut Graph<'_>, Var) -> Result<Var>,
    {
        let eval = |t: &Tensor| -> Result<(Graph<'static>, Var, Var)> {
            let mut g = Graph::new();
            let x = g.param(t.clone());
            let out = op(&mut g, x)?;
            let out = match &self.projection {
                Some(w) => g.weighted_sum(out, w.clone())?,
                None if g.value(out).len() == 1 => out,
                None => g.sum(out),
            };
            Ok((g, x, out))
        };
        let scalar = |t: &Tensor| -> Result<f64> {
            let mut g = Graph::new();
            let x = g.constant(t.clone());
            let out = op(&mut g, x)?;
            let y = g.value(out).data();
            Ok(match &self.projection {
                Some(w) => y.iter().zip(w).map(|(&v, &w)| v as f64 * w as f64).sum(),
                None => y.iter().map(|&v| v as f64).sum(),
            })
        };

        let (g, leaf, out) = eval(input)?;
        let grads = g.backward(out)?;
        let analytic = grads
            .get(leaf).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; input.len()]);

        let indices: Vec<usize> = match &self.indices {
            Some(idx) => idx.clone(),
            None => (0..input.len()).collect(),
        };
        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            worst_index: None,
            checked: 0,
            skipped: 0,
            tolerance: self.tolerance,
            passed: true,
        };
        let mut probe = input.clone();
        for i in indices {
            let x0 = input.data()[i];
            if self.skip.as_ref().is_some_and(|s| s(i, x0)) {
                report.skipped += 1;
                continue;
            }
            probe.data_mut()[i] = x0 + self.step;
            let hi = scalar(&probe)?;
            probe.data_mut()[i] = x0 - self.step;
            let lo = scalar(&probe)?;
            probe.data_mut()[i] = x0;
            // the realized step may differ from `step` after f32 rounding
            let span = ((x0 + self.step) as f64) - ((x0 - self.step) as f64);
            let numeric = (hi - lo) / span;
            let a = analytic[i] as f64;
            let denom = a.abs().max(numeric.abs()).max(self.floor);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = rel;
                report.worst_index = Some(i);
            }
        }
        report.passed = report.max_rel_error <= self.tolerance && !report.max_rel_error.is_nan();
        Ok(report)
    }
}

/// Checks `op` at `input` with default step and floor.
pub fn grad_check<F>(op: F, input: &Tensor, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>, Var) -> Result<Var>,
{
    GradCheck::new(tolerance).run(op, input)
}
