use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::arch::ArchitectureSpec;
use super::layers::Layer;
use super::loss::softmax_ce;
use crate::{par, seed, Error, Result};

/// A network instance: architecture, flat parameters and a fixed input scale.
///
/// Inputs are divided by `input_scale` before the first layer; training sets
/// it to the global standard deviation of the training trials.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    spec: ArchitectureSpec,
    layers: Vec<Layer>,
    params: Vec<f64>,
    input_scale: f64,
}

pub(crate) struct Trace {
    acts: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
}

impl Trace {
    pub(crate) fn logits(&self) -> &[f64] {
        self.acts.last().expect("trace holds at least the input")
    }
}

/// Per-sample gradient bundle.
pub(crate) struct SampleGrad {
    pub loss: f64,
    pub params: Option<Vec<f64>>,
    pub input: Vec<f64>,
}

/// Build an untrained classifier with parameters drawn from `seed`.
///
/// Weights are uniform in `±sqrt(3 / fan_in)`; biases start at zero.
pub fn build(spec: &ArchitectureSpec, seed: u64) -> Result<Classifier> {
    let (layers, n_params) = spec.layers()?;
    let mut params = vec![0.0; n_params];
    let mut rng = seed::rng(seed);
    for layer in &layers {
        if let Some((off, len, fan_in)) = layer.weight_span() {
            let bound = (3.0 / fan_in as f64).sqrt();
            for p in &mut params[off..off + len] {
                *p = rng.random_range(-bound..bound);
            }
        }
    }
    Ok(Classifier {
        spec: spec.clone(),
        layers,
        params,
        input_scale: 1.0,
    })
}

impl Classifier {
    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_scale(&self) -> f64 {
        self.input_scale
    }

    pub fn set_input_scale(&mut self, scale: f64) {
        self.input_scale = if scale.is_finite() && scale > 0.0 {
            scale
        } else {
            1.0
        };
    }

    /// Reassemble from persisted parts.
    pub fn from_parts(spec: ArchitectureSpec, params: Vec<f64>, input_scale: f64) -> Result<Self> {
        let (layers, n_params) = spec.layers()?;
        if params.len() != n_params {
            return Err(Error::Shape {
                field: "params".into(),
                expected: n_params,
                found: params.len(),
            });
        }
        let mut c = Self {
            spec,
            layers,
            params,
            input_scale: 1.0,
        };
        c.set_input_scale(input_scale);
        Ok(c)
    }

    pub fn input_len(&self) -> usize {
        self.spec.n_channels * self.spec.n_samples
    }

    pub fn n_outputs(&self) -> usize {
        self.spec.n_outputs
    }

    pub(crate) fn check_input(&self, len: usize) -> Result<()> {
        if len == self.input_len() {
            Ok(())
        } else {
            Err(Error::Geometry {
                channels: self.spec.n_channels,
                samples: self.spec.n_samples,
                message: format!("trial has {len} values, expected {}", self.input_len()),
            })
        }
    }

    pub(crate) fn trace(&self, x: &[f64], mut rng: Option<&mut ChaCha8Rng>) -> Trace {
        let inv = 1.0 / self.input_scale;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut masks = Vec::with_capacity(self.layers.len());
        acts.push(x.iter().map(|v| v * inv).collect::<Vec<f64>>());
        for layer in &self.layers {
            let mut mask = None;
            let out = layer.forward(
                &self.params,
                acts.last().unwrap(),
                rng.as_deref_mut(),
                &mut mask,
            );
            acts.push(out);
            masks.push(mask);
        }
        Trace { acts, masks }
    }

    /// Gradient of the loss w.r.t. the raw input; parameter gradients are
    /// accumulated into `gparams` when given.
    pub(crate) fn backprop(
        &self,
        trace: &Trace,
        grad_logits: &[f64],
        mut gparams: Option<&mut [f64]>,
    ) -> Vec<f64> {
        let mut g = grad_logits.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            g = layer.backward(
                &self.params,
                &trace.acts[i],
                &trace.acts[i + 1],
                &g,
                trace.masks[i].as_ref(),
                gparams.as_deref_mut(),
            );
        }
        let inv = 1.0 / self.input_scale;
        g.iter_mut().for_each(|v| *v *= inv);
        g
    }

    /// Logits for one trial (no dropout).
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x, None).logits().to_vec()
    }

    /// Cross-entropy loss and gradients for one trial with 1-based `label`.
    /// Passing an RNG enables dropout.
    pub(crate) fn sample_grad(
        &self,
        x: &[f64],
        label: u32,
        rng: Option<&mut ChaCha8Rng>,
        want_params: bool,
    ) -> SampleGrad {
        let trace = self.trace(x, rng);
        let (loss, dlogits) = softmax_ce(trace.logits(), label);
        let mut gp = want_params.then(|| vec![0.0; self.params.len()]);
        let input = self.backprop(&trace, &dlogits, gp.as_deref_mut());
        SampleGrad {
            loss,
            params: gp,
            input,
        }
    }

    /// Logits for many trials, evaluated independently.
    pub fn batch_logits(&self, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        par::map_slice(xs, |x| self.logits(x))
    }
}

/// Argmax with ties broken toward the lowest index; returns a 1-based label.
pub fn argmax_label(logits: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best as u32 + 1
}
