use std::ops::Range;

use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};

/// Aligned input/output samples from one or more demonstrations.
///
/// Samples of demonstration `k` occupy `boundaries()[k]`; the ranges are
/// contiguous and cover `0..len()`.
#[derive(Clone, Debug, PartialEq)]
pub struct DemonstrationSet {
    inputs: Vec<DVector<f64>>,
    outputs: Vec<DVector<f64>>,
    boundaries: Vec<Range<usize>>,
    input_dim: usize,
    output_dim: usize,
}

impl DemonstrationSet {
    pub fn new(
        inputs: Vec<DVector<f64>>,
        outputs: Vec<DVector<f64>>,
        boundaries: Vec<Range<usize>>,
    ) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::EmptyData);
        }
        check_dim(inputs.len(), outputs.len(), "number of outputs vs inputs")?;
        let input_dim = inputs[0].len();
        let output_dim = outputs[0].len();
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidParam(
                "input and output dimensions must be at least 1".into(),
            ));
        }
        for (i, (x, y)) in inputs.iter().zip(&outputs).enumerate() {
            check_dim(input_dim, x.len(), "input vector").map_err(|e| e.at(i))?;
            check_dim(output_dim, y.len(), "output vector").map_err(|e| e.at(i))?;
            if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteInput(format!("sample {i}")));
            }
        }
        let mut next = 0;
        for b in &boundaries {
            if b.start != next || b.end <= b.start {
                return Err(Error::RaggedDemo(format!(
                    "demonstration ranges must partition 0..{} without gaps, found {b:?}",
                    inputs.len()
                )));
            }
            next = b.end;
        }
        if next != inputs.len() {
            return Err(Error::RaggedDemo(format!(
                "demonstration ranges end at {next}, expected {}",
                inputs.len()
            )));
        }
        Ok(Self {
            inputs,
            outputs,
            boundaries,
            input_dim,
            output_dim,
        })
    }

    /// A set holding a single demonstration.
    pub fn single(inputs: Vec<DVector<f64>>, outputs: Vec<DVector<f64>>) -> Result<Self> {
        let n = inputs.len();
        Self::new(inputs, outputs, vec![0..n])
    }

    /// Concatenates demonstrations given as `(inputs, outputs)` pairs.
    pub fn from_demos(demos: Vec<(Vec<DVector<f64>>, Vec<DVector<f64>>)>) -> Result<Self> {
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        let mut boundaries = Vec::new();
        for (xs, ys) in demos {
            let start = inputs.len();
            inputs.extend(xs);
            outputs.extend(ys);
            boundaries.push(start..inputs.len());
        }
        Self::new(inputs, outputs, boundaries)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[DVector<f64>] {
        &self.outputs
    }

    pub fn boundaries(&self) -> &[Range<usize>] {
        &self.boundaries
    }

    pub fn num_demos(&self) -> usize {
        self.boundaries.len()
    }

    /// Inputs and outputs of demonstration `k`.
    pub fn demo(&self, k: usize) -> (&[DVector<f64>], &[DVector<f64>]) {
        let r = self.boundaries[k].clone();
        (&self.inputs[r.clone()], &self.outputs[r])
    }

    /// Sample `i` as one joint `(input, output)` vector.
    pub fn joint(&self, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(self.input_dim + self.output_dim);
        v.rows_mut(0, self.input_dim).copy_from(&self.inputs[i]);
        v.rows_mut(self.input_dim, self.output_dim)
            .copy_from(&self.outputs[i]);
        v
    }

    /// True when the input is scalar and non-decreasing inside every
    /// demonstration, i.e. the data is time-driven.
    pub fn is_time_driven(&self) -> bool {
        self.input_dim == 1
            && self.boundaries.iter().all(|r| {
                self.inputs[r.clone()]
                    .windows(2)
                    .all(|w| w[1][0] >= w[0][0])
            })
    }

    /// Keeps every `stride`-th sample of each demonstration.
    pub fn strided(&self, stride: usize) -> Self {
        let stride = stride.max(1);
        let demos = self
            .boundaries
            .iter()
            .map(|r| {
                let idx: Vec<usize> = r.clone().step_by(stride).collect();
                (
                    idx.iter().map(|&i| self.inputs[i].clone()).collect(),
                    idx.iter().map(|&i| self.outputs[i].clone()).collect(),
                )
            })
            .collect();
        Self::from_demos(demos).expect("striding preserves validity")
    }

    /// Linearly resamples every demonstration to `len` samples, evenly spaced
    /// in the sample index.
    pub fn resampled(&self, len: usize) -> Result<Self> {
        if len < 2 {
            return Err(Error::InvalidParam("resample length must be >= 2".into()));
        }
        let lerp = |a: &DVector<f64>, b: &DVector<f64>, w: f64| a * (1.0 - w) + b * w;
        let demos = self
            .boundaries
            .iter()
            .map(|r| {
                let xs = &self.inputs[r.clone()];
                let ys = &self.outputs[r.clone()];
                let m = xs.len();
                let mut out_x = Vec::with_capacity(len);
                let mut out_y = Vec::with_capacity(len);
                for k in 0..len {
                    let s = k as f64 * (m - 1) as f64 / (len - 1) as f64;
                    let i0 = (s.floor() as usize).min(m - 1);
                    let i1 = (i0 + 1).min(m - 1);
                    let w = s - i0 as f64;
                    out_x.push(lerp(&xs[i0], &xs[i1], w));
                    out_y.push(lerp(&ys[i0], &ys[i1], w));
                }
                (out_x, out_y)
            })
            .collect();
        Self::from_demos(demos)
    }
}
