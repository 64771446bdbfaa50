//! Small differentiable models with hand-written backpropagation.
//!
//! Three kinds share one layer stack:
//!
//! * `LinearHead`: logits = W x + b.
//! * `Mlp`: optional fixed frontend, hidden layers, linear output (logits).
//! * `Encoder`: optional fixed frontend, hidden layers, linear projection,
//!   then L2 normalization to the unit sphere.
//!
//! The frontend is a seeded bank of random patch filters with rectification
//! and average pooling. It has no trainable weights, so backpropagation
//! stops at its output.

use std::ops::Range;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, shape, CoreError, Result};
use crate::rng;
use crate::tensor_io::{self, Reader, Writer};

const CHECKPOINT_MAGIC: &[u8; 4] = b"DPRP";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            shape,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameter storage with a named segment layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub values: Vec<f64>,
    layout: Vec<Segment>,
}

impl ParameterVector {
    pub fn new(layout: Vec<Segment>, values: Vec<f64>) -> Result<Self> {
        let total: usize = layout.iter().map(Segment::len).sum();
        if total != values.len() {
            return shape(format!("layout holds {total} values, got {}", values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Config("parameters must be finite".into()));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Vec<Segment>) -> Self {
        let total = layout.iter().map(Segment::len).sum();
        Self {
            values: vec![0.0; total],
            layout,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            values: vec![0.0; self.values.len()],
            layout: self.layout.clone(),
        }
    }

    pub fn layout(&self) -> &[Segment] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn range_of(&self, name: &str) -> Option<Range<usize>> {
        let mut start = 0;
        for seg in &self.layout {
            let end = start + seg.len();
            if seg.name == name {
                return Some(start..end);
            }
            start = end;
        }
        None
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.range_of(name).map(|r| &self.values[r])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.range_of(name).map(move |r| &mut self.values[r])
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// self += a · other
    pub fn axpy(&mut self, a: f64, other: &Self) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += a * y;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for x in self.values.iter_mut() {
            *x *= a;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LinearHead,
    Mlp,
    Encoder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative given the pre-activation z and output a.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Fixed random patch-filter featurizer for H×W×C images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontendSpec {
    pub image_size: usize,
    pub channels: usize,
    pub patch: usize,
    pub stride: usize,
    pub filters: usize,
    /// Responses are averaged over a pool_grid × pool_grid partition.
    pub pool_grid: usize,
    /// Constant multiplier on the pooled responses.
    #[serde(default = "unit_gain")]
    pub gain: f64,
    pub seed: u64,
}

fn unit_gain() -> f64 {
    1.0
}

impl FrontendSpec {
    pub fn positions(&self) -> usize {
        (self.image_size - self.patch) / self.stride + 1
    }

    pub fn input_dim(&self) -> usize {
        self.image_size * self.image_size * self.channels
    }

    /// Two rectified responses per filter and pool cell.
    pub fn output_dim(&self) -> usize {
        2 * self.filters * self.pool_grid * self.pool_grid
    }

    fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.channels == 0 || self.filters == 0 {
            return config("frontend sizes must be positive");
        }
        if self.patch == 0 || self.patch > self.image_size || self.stride == 0 {
            return config("frontend patch must fit the image and stride must be positive");
        }
        if self.pool_grid == 0 || self.pool_grid > self.positions() {
            return config("pool grid must lie in [1, number of patch positions]");
        }
        if !(self.gain > 0.0) || !self.gain.is_finite() {
            return config("frontend gain must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Frontend {
    spec: FrontendSpec,
    /// filters × (patch · patch · channels), zero mean and unit norm.
    weights: Vec<f64>,
    /// Pool cell of each patch position along one axis.
    cell_of: Vec<usize>,
    cell_counts: Vec<f64>,
}

impl Frontend {
    fn new(spec: FrontendSpec) -> Result<Self> {
        spec.validate()?;
        let k = spec.patch * spec.patch * spec.channels;
        let mut rng = rng::stream(spec.seed, "frontend");
        let mut weights = Vec::with_capacity(spec.filters * k);
        for _ in 0..spec.filters {
            let mut w: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
            let mean = w.iter().sum::<f64>() / k as f64;
            w.iter_mut().for_each(|v| *v -= mean);
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            weights.extend(w.iter().map(|v| v / norm));
        }
        let p = spec.positions();
        let g = spec.pool_grid;
        let cell_of: Vec<usize> = (0..p).map(|i| i * g / p).collect();
        let mut per_axis = vec![0.0; g];
        for &c in &cell_of {
            per_axis[c] += 1.0;
        }
        let mut cell_counts = vec![0.0; g * g];
        for cy in 0..g {
            for cx in 0..g {
                cell_counts[cy * g + cx] = per_axis[cy] * per_axis[cx];
            }
        }
        Ok(Self {
            spec,
            weights,
            cell_of,
            cell_counts,
        })
    }

    fn apply(&self, image: &[f64]) -> Vec<f64> {
        let s = &self.spec;
        let (n, c, g) = (s.image_size, s.channels, s.pool_grid);
        let k = s.patch * s.patch * c;
        let cells = g * g;
        let mut out = vec![0.0; 2 * s.filters * cells];
        let mut patch = vec![0.0; k];
        let p = s.positions();
        for py in 0..p {
            for px in 0..p {
                let (y0, x0) = (py * s.stride, px * s.stride);
                let mut idx = 0;
                for dy in 0..s.patch {
                    let row = ((y0 + dy) * n + x0) * c;
                    patch[idx..idx + s.patch * c].copy_from_slice(&image[row..row + s.patch * c]);
                    idx += s.patch * c;
                }
                let cell = self.cell_of[py] * g + self.cell_of[px];
                for f in 0..s.filters {
                    let w = &self.weights[f * k..(f + 1) * k];
                    let r: f64 = w.iter().zip(&patch).map(|(a, b)| a * b).sum();
                    let base = 2 * f * cells;
                    if r > 0.0 {
                        out[base + cell] += r;
                    } else {
                        out[base + cells + cell] -= r;
                    }
                }
            }
        }
        for f in 0..2 * s.filters {
            for cell in 0..cells {
                out[f * cells + cell] *= s.gain / self.cell_counts[cell];
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub output_dim: usize,
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    #[serde(default)]
    pub frontend: Option<FrontendSpec>,
}

impl ModelSpec {
    pub fn linear_head(input_dim: usize, output_dim: usize) -> Self {
        Self {
            kind: ModelKind::LinearHead,
            input_dim,
            output_dim,
            hidden_dims: Vec::new(),
            activation: Activation::Relu,
            frontend: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return config("model dimensions must be positive");
        }
        match self.kind {
            ModelKind::LinearHead => {
                if !self.hidden_dims.is_empty() || self.frontend.is_some() {
                    return config("a linear head has no hidden layers and no frontend");
                }
            }
            ModelKind::Mlp | ModelKind::Encoder => {
                if let Some(f) = &self.frontend {
                    f.validate()?;
                    if f.input_dim() != self.input_dim {
                        return config(format!(
                            "frontend expects {} inputs but the model declares {}",
                            f.input_dim(),
                            self.input_dim
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Width of the first trainable layer's input.
    pub fn feature_dim(&self) -> usize {
        self.frontend
            .as_ref()
            .map_or(self.input_dim, FrontendSpec::output_dim)
    }

    /// Width of the last hidden layer (the penultimate representation).
    pub fn penultimate_dim(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or_else(|| self.feature_dim())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut fan_in = self.feature_dim();
        for &h in &self.hidden_dims {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims.push((fan_in, self.output_dim));
        dims
    }

    pub fn layout(&self) -> Vec<Segment> {
        let dims = self.layer_dims();
        let last = dims.len() - 1;
        let mut layout = Vec::new();
        for (i, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let name = if i == last {
                "out".to_string()
            } else {
                format!("hidden{i}")
            };
            layout.push(Segment::new(format!("{name}.weight"), vec![fan_out, fan_in]));
            layout.push(Segment::new(format!("{name}.bias"), vec![fan_out]));
        }
        layout
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().iter().map(Segment::len).sum()
    }

    /// The classifier obtained by replacing the encoder projection with a
    /// `classes`-way linear output on the penultimate layer.
    pub fn classifier_from_encoder(&self, classes: usize) -> Self {
        Self {
            kind: ModelKind::Mlp,
            output_dim: classes,
            ..self.clone()
        }
    }
}

/// Input and label of one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub input: Vec<f64>,
    pub label: usize,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    features: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    raw_output: Vec<f64>,
    output: Vec<f64>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    /// Post-activation outputs of the hidden layers, first to last.
    pub fn hidden(&self) -> &[Vec<f64>] {
        &self.post
    }

    pub fn frontend_features(&self) -> &[f64] {
        &self.features
    }
}

/// A model spec with its frontend filters materialized.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    frontend: Option<Frontend>,
    layout: Vec<Segment>,
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let frontend = spec.frontend.map(Frontend::new).transpose()?;
        let layout = spec.layout();
        Ok(Self {
            spec,
            frontend,
            layout,
        })
    }

    /// The same network taking frontend features as input. Parameters are
    /// shared unchanged, since the frontend has none.
    pub fn without_frontend(&self) -> Self {
        let mut spec = self.spec.clone();
        spec.input_dim = spec.feature_dim();
        spec.frontend = None;
        Self {
            spec,
            frontend: None,
            layout: self.layout.clone(),
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &[Segment] {
        &self.layout
    }

    /// Uniform in [−s, s] with s = sqrt(6 / (fan_in + fan_out)); biases zero.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> ParameterVector {
        let mut params = ParameterVector::zeros(self.layout.clone());
        let mut offset = 0;
        for seg in &self.layout {
            let len = seg.len();
            if seg.shape.len() == 2 {
                let s = (6.0 / (seg.shape[0] + seg.shape[1]) as f64).sqrt();
                for v in &mut params.values[offset..offset + len] {
                    *v = rng.gen_range(-s..=s);
                }
            }
            offset += len;
        }
        params
    }

    fn check(&self, params: &ParameterVector, input: &[f64]) -> Result<()> {
        if params.layout() != self.layout.as_slice() {
            return shape("parameter layout does not match the model");
        }
        if input.len() != self.spec.input_dim {
            return shape(format!(
                "model expects {} inputs, got {}",
                self.spec.input_dim,
                input.len()
            ));
        }
        Ok(())
    }

    /// Frontend output (or the input itself when there is no frontend).
    pub fn features(&self, input: &[f64]) -> Vec<f64> {
        match &self.frontend {
            Some(f) => f.apply(input),
            None => input.to_vec(),
        }
    }

    pub fn trace(&self, params: &ParameterVector, input: &[f64]) -> Result<Trace> {
        self.check(params, input)?;
        Ok(self.trace_from_features(params, self.features(input)))
    }

    /// Forward pass starting after the frontend, for callers that cache
    /// frontend features.
    pub fn trace_from_features(&self, params: &ParameterVector, features: Vec<f64>) -> Trace {
        let dims = self.spec.layer_dims();
        let act = self.spec.activation;
        let mut pre = Vec::with_capacity(dims.len() - 1);
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(dims.len() - 1);
        let mut offset = 0;
        let mut raw_output = Vec::new();
        for (i, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let w = &params.values[offset..offset + fan_in * fan_out];
            let b = &params.values[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let x: &[f64] = if i == 0 { &features } else { &post[i - 1] };
            let z: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    b[o] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>()
                })
                .collect();
            if i + 1 == dims.len() {
                raw_output = z;
            } else {
                post.push(z.iter().map(|&v| act.apply(v)).collect());
                pre.push(z);
            }
        }
        let output = if self.spec.kind == ModelKind::Encoder {
            let norm = raw_output.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                raw_output.iter().map(|v| v / norm).collect()
            } else {
                // Degenerate projection: a fixed unit vector with zero gradient.
                let mut e = vec![0.0; raw_output.len()];
                e[0] = 1.0;
                e
            }
        } else {
            raw_output.clone()
        };
        Trace {
            features,
            pre,
            post,
            raw_output,
            output,
        }
    }

    pub fn forward(&self, params: &ParameterVector, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(params, input)?.output)
    }

    /// Gradient of ⟨d_output, output⟩ with respect to the parameters.
    pub fn backward(&self, params: &ParameterVector, trace: &Trace, d_output: &[f64]) -> ParameterVector {
        let mut grad = params.zeros_like();
        self.backward_into(params, trace, d_output, &mut grad);
        grad
    }

    /// Adds the gradient of ⟨d_output, output⟩ into `grad`.
    pub fn backward_into(
        &self,
        params: &ParameterVector,
        trace: &Trace,
        d_output: &[f64],
        grad: &mut ParameterVector,
    ) {
        let dims = self.spec.layer_dims();
        let act = self.spec.activation;
        let mut dz: Vec<f64> = if self.spec.kind == ModelKind::Encoder {
            // y = p/‖p‖  ⇒  dp = (dy − y⟨y, dy⟩)/‖p‖
            let norm = trace.raw_output.iter().map(|v| v * v).sum::<f64>().sqrt();
            let y = &trace.output;
            let proj: f64 = y.iter().zip(d_output).map(|(a, b)| a * b).sum();
            if norm == 0.0 {
                return;
            }
            d_output
                .iter()
                .zip(y)
                .map(|(d, yi)| (d - yi * proj) / norm)
                .collect()
        } else {
            d_output.to_vec()
        };
        let mut offsets = Vec::with_capacity(dims.len());
        let mut off = 0;
        for &(fan_in, fan_out) in &dims {
            offsets.push(off);
            off += fan_in * fan_out + fan_out;
        }
        for i in (0..dims.len()).rev() {
            let (fan_in, fan_out) = dims[i];
            let x: &[f64] = if i == 0 {
                &trace.features
            } else {
                &trace.post[i - 1]
            };
            let w_off = offsets[i];
            let b_off = w_off + fan_in * fan_out;
            for (o, &d) in dz.iter().enumerate().take(fan_out) {
                if d == 0.0 {
                    continue;
                }
                let g_row = &mut grad.values[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                for (g, xi) in g_row.iter_mut().zip(x) {
                    *g += d * xi;
                }
                grad.values[b_off + o] += d;
            }
            if i == 0 {
                break;
            }
            let w = &params.values[w_off..w_off + fan_in * fan_out];
            let mut dx = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = dz[o];
                if d == 0.0 {
                    continue;
                }
                for (acc, wv) in dx.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                    *acc += d * wv;
                }
            }
            let (z, a) = (&trace.pre[i - 1], &trace.post[i - 1]);
            dz = dx
                .iter()
                .zip(z.iter().zip(a))
                .map(|(d, (&zv, &av))| d * act.derivative(zv, av))
                .collect();
        }
    }

    /// Cross-entropy of one example and its parameter gradient.
    pub fn loss_and_grad(&self, params: &ParameterVector, example: &Example) -> Result<(f64, ParameterVector)> {
        let trace = self.trace(params, &example.input)?;
        let (loss, d_logits) = softmax_cross_entropy(trace.output(), example.label)?;
        Ok((loss, self.backward(params, &trace, &d_logits)))
    }

    pub fn example_loss(&self, params: &ParameterVector, example: &Example) -> Result<f64> {
        loss(&self.forward(params, &example.input)?, example.label)
    }

    /// One gradient per example, in batch order.
    pub fn per_sample_grad(&self, params: &ParameterVector, batch: &[Example]) -> Result<Vec<ParameterVector>> {
        if batch.is_empty() {
            return shape("per-sample gradients need a nonempty batch");
        }
        batch
            .iter()
            .map(|ex| self.loss_and_grad(params, ex).map(|(_, g)| g))
            .collect()
    }

    /// Central differences of the example loss, one coordinate at a time.
    pub fn finite_diff_grad(&self, params: &ParameterVector, example: &Example, h: f64) -> Result<ParameterVector> {
        if !(h > 0.0) {
            return config(format!("finite-difference step must be positive, got {h}"));
        }
        let mut probe = params.clone();
        let mut grad = params.zeros_like();
        for j in 0..params.len() {
            let orig = probe.values[j];
            probe.values[j] = orig + h;
            let up = self.example_loss(&probe, example)?;
            probe.values[j] = orig - h;
            let down = self.example_loss(&probe, example)?;
            probe.values[j] = orig;
            grad.values[j] = (up - down) / (2.0 * h);
        }
        Ok(grad)
    }

    pub fn predict(&self, params: &ParameterVector, input: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(params, input)?))
    }

    pub fn accuracy(&self, params: &ParameterVector, data: &[Example]) -> Result<f64> {
        if data.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0usize;
        for ex in data {
            if self.predict(params, &ex.input)? == ex.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / data.len() as f64)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Softmax cross-entropy −log softmax(logits)[label].
pub fn loss(logits: &[f64], label: usize) -> Result<f64> {
    softmax_cross_entropy(logits, label).map(|(l, _)| l)
}

/// Loss and its gradient with respect to the logits, softmax − onehot.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return shape(format!("label {label} out of range for {} classes", logits.len()));
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|v| (v - m).exp()).sum();
    let lse = m + sum.ln();
    let loss = (lse - logits[label]).max(0.0);
    let mut grad: Vec<f64> = logits.iter().map(|v| (v - lse).exp()).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelSpec,
    pub seed: u64,
    #[serde(default)]
    pub provenance: serde_json::Value,
}

pub fn save_checkpoint(path: &Path, params: &ParameterVector, meta: &CheckpointMeta) -> Result<()> {
    let mut w = Writer::new(CHECKPOINT_MAGIC);
    w.u32(params.layout().len())?;
    for seg in params.layout() {
        w.u32(seg.name.len())?;
        w.bytes(seg.name.as_bytes());
        w.u32(seg.shape.len())?;
        for &d in &seg.shape {
            w.u32(d)?;
        }
    }
    w.f64s(&params.values);
    w.finish(path)?;
    tensor_io::write_sidecar(path, meta)
}

pub fn load_checkpoint(path: &Path) -> Result<(ParameterVector, CheckpointMeta)> {
    let mut r = Reader::open(path, CHECKPOINT_MAGIC)?;
    let count = r.u32()?;
    let mut layout = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()?;
        let name = String::from_utf8(r.bytes(len)?)
            .map_err(|_| CoreError::Format("segment name is not UTF-8".into()))?;
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        layout.push(Segment::new(name, dims));
    }
    let total = layout.iter().map(Segment::len).sum();
    let values = r.f64s(total)?;
    r.finish()?;
    let params = ParameterVector::new(layout, values)?;
    let meta: CheckpointMeta = tensor_io::read_sidecar(path)?;
    if meta.model.layout() != params.layout() {
        return Err(CoreError::Format("checkpoint layout disagrees with its model spec".into()));
    }
    Ok((params, meta))
}
