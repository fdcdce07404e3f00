//! Patch-wise MLP ε-predictor trained with the bridge regression loss.
//!
//! Input for a pixel: the `p×p` patch of `x_t` around it, the same patch of
//! the corrupted image, and the time features `(σ_t, σ̄_t)`. Output: the
//! `p×p` patch of ε. At inference every pixel's patch prediction is
//! accumulated and overlapping predictions are averaged. Borders use
//! edge-replicate padding.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::posterior::q_weights;
use crate::rng;
use crate::schedule::{Schedule, StepQuery};
use crate::tensor_io::{read_tensor, write_tensor, ImageTensor};

use super::{Condition, EpsilonPredictor};

const MANIFEST_TAG: &str = "tiny-mlp-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpShape {
    /// Odd patch side length.
    pub patch: usize,
    /// Width of both hidden layers; 0 gives a single linear layer.
    pub hidden: usize,
}

impl Default for MlpShape {
    fn default() -> Self {
        Self {
            patch: 5,
            hidden: 64,
        }
    }
}

impl MlpShape {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.patch.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "patch side must be odd, got {}",
                self.patch
            )));
        }
        Ok(())
    }

    pub fn patch_len(&self) -> usize {
        self.patch * self.patch
    }

    pub fn input_len(&self) -> usize {
        2 * self.patch_len() + 2
    }

    fn layer_sizes(&self) -> Vec<(usize, usize)> {
        let (i, o, h) = (self.input_len(), self.patch_len(), self.hidden);
        if h == 0 {
            vec![(i, o)]
        } else {
            vec![(i, h), (h, h), (h, o)]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    inputs: usize,
    outputs: usize,
    /// Row-major `outputs × inputs`.
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl Dense {
    fn forward(&self, x: &[f64], out: &mut Vec<f64>, relu: bool) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let mut z = self.bias[o] as f64;
            for (w, v) in row.iter().zip(x) {
                z += *w as f64 * v;
            }
            out.push(if relu { z.max(0.0) } else { z });
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyMlp {
    shape: MlpShape,
    layers: Vec<Dense>,
}

/// Flattened mini-batch: `inputs` is `len × input_len`, `targets` is `len × patch_len`.
#[derive(Debug, Clone, Default)]
pub struct TrainBatch {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub len: usize,
}

impl TinyMlp {
    pub fn init(shape: MlpShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut r = rng::stream(seed, 0);
        let sizes = shape.layer_sizes();
        let last = sizes.len() - 1;
        let layers = sizes
            .into_iter()
            .enumerate()
            .map(|(k, (inputs, outputs))| {
                // He-uniform for ReLU layers, unit-variance-preserving for the output.
                let gain = if k == last { 3.0 } else { 6.0 };
                let a = (gain / inputs as f64).sqrt() as f32;
                Dense {
                    inputs,
                    outputs,
                    weights: (0..inputs * outputs)
                        .map(|_| r.random_range(-a..a))
                        .collect(),
                    bias: vec![0.0; outputs],
                }
            })
            .collect();
        Ok(Self { shape, layers })
    }

    pub fn zeros(shape: MlpShape) -> Result<Self> {
        shape.validate()?;
        let layers = shape
            .layer_sizes()
            .into_iter()
            .map(|(inputs, outputs)| Dense {
                inputs,
                outputs,
                weights: vec![0.0; inputs * outputs],
                bias: vec![0.0; outputs],
            })
            .collect();
        Ok(Self { shape, layers })
    }

    pub fn shape(&self) -> MlpShape {
        self.shape
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    fn locate(&self, mut i: usize) -> (usize, bool, usize) {
        for (k, l) in self.layers.iter().enumerate() {
            if i < l.weights.len() {
                return (k, true, i);
            }
            i -= l.weights.len();
            if i < l.bias.len() {
                return (k, false, i);
            }
            i -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Parameter `i` in flat order (per layer: weights row-major, then bias).
    pub fn param(&self, i: usize) -> f32 {
        let (k, w, j) = self.locate(i);
        if w {
            self.layers[k].weights[j]
        } else {
            self.layers[k].bias[j]
        }
    }

    pub fn set_param(&mut self, i: usize, v: f32) {
        let (k, w, j) = self.locate(i);
        if w {
            self.layers[k].weights[j] = v;
        } else {
            self.layers[k].bias[j] = v;
        }
    }

    /// Linear-layer view for the hidden-width-0 variant: `(weights, bias)` of the only layer.
    pub fn linear_params(&self) -> Option<(&[f32], &[f32])> {
        match self.layers.as_slice() {
            [l] => Some((&l.weights, &l.bias)),
            _ => None,
        }
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut a = input.to_vec();
        let mut b = Vec::new();
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            l.forward(&a, &mut b, k != last);
            std::mem::swap(&mut a, &mut b);
        }
        a
    }

    fn forward_cached(&self, input: &[f64], acts: &mut Vec<Vec<f64>>) {
        acts.resize(self.layers.len() + 1, Vec::new());
        acts[0].clear();
        acts[0].extend_from_slice(input);
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let (prev, next) = acts.split_at_mut(k + 1);
            l.forward(&prev[k], &mut next[0], k != last);
        }
    }

    /// Mean squared error over all samples and patch positions.
    pub fn batch_loss(&self, batch: &TrainBatch) -> f64 {
        let (il, ol) = (self.shape.input_len(), self.shape.patch_len());
        let mut sum = 0.0;
        for s in 0..batch.len {
            let out = self.forward(&batch.inputs[s * il..(s + 1) * il]);
            let t = &batch.targets[s * ol..(s + 1) * ol];
            sum += out.iter().zip(t).map(|(o, t)| (o - t).powi(2)).sum::<f64>();
        }
        sum / (batch.len * ol) as f64
    }

    /// Loss and its gradient in flat parameter order.
    #[allow(clippy::needless_range_loop)]
    pub fn batch_loss_and_grad(&self, batch: &TrainBatch) -> (f64, Vec<f64>) {
        let (il, ol) = (self.shape.input_len(), self.shape.patch_len());
        let scale = 1.0 / (batch.len * ol) as f64;
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |acc, l| {
                let o = *acc;
                *acc += l.param_count();
                Some(o)
            })
            .collect();
        let mut grad = vec![0.0; self.param_count()];
        let mut acts = Vec::new();
        let mut loss = 0.0;
        for s in 0..batch.len {
            self.forward_cached(&batch.inputs[s * il..(s + 1) * il], &mut acts);
            let t = &batch.targets[s * ol..(s + 1) * ol];
            let out = &acts[self.layers.len()];
            let mut delta: Vec<f64> = out
                .iter()
                .zip(t)
                .map(|(o, t)| {
                    loss += (o - t).powi(2);
                    2.0 * (o - t) * scale
                })
                .collect();
            for k in (0..self.layers.len()).rev() {
                let l = &self.layers[k];
                let a = &acts[k];
                let g = &mut grad[offsets[k]..offsets[k] + l.param_count()];
                let (gw, gb) = g.split_at_mut(l.weights.len());
                for o in 0..l.outputs {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    for (gwi, ai) in gw[o * l.inputs..(o + 1) * l.inputs].iter_mut().zip(a) {
                        *gwi += d * ai;
                    }
                }
                if k > 0 {
                    let mut back = vec![0.0; l.inputs];
                    for o in 0..l.outputs {
                        let d = delta[o];
                        if d == 0.0 {
                            continue;
                        }
                        for (bi, w) in back
                            .iter_mut()
                            .zip(&l.weights[o * l.inputs..(o + 1) * l.inputs])
                        {
                            *bi += d * *w as f64;
                        }
                    }
                    // ReLU gate from the layer below.
                    for (bi, ai) in back.iter_mut().zip(a) {
                        if *ai <= 0.0 {
                            *bi = 0.0;
                        }
                    }
                    delta = back;
                }
            }
        }
        (loss * scale, grad)
    }

    /// On/off state of every hidden unit over the batch.
    pub fn relu_pattern(&self, batch: &TrainBatch) -> Vec<bool> {
        let il = self.shape.input_len();
        let mut acts = Vec::new();
        let mut pattern = Vec::new();
        for s in 0..batch.len {
            self.forward_cached(&batch.inputs[s * il..(s + 1) * il], &mut acts);
            for a in &acts[1..self.layers.len()] {
                pattern.extend(a.iter().map(|v| *v > 0.0));
            }
        }
        pattern
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = format!(
            "format={MANIFEST_TAG}\npatch={}\nhidden={}\nlayers={}\n",
            self.shape.patch,
            self.shape.hidden,
            self.layers.len()
        );
        for (k, l) in self.layers.iter().enumerate() {
            let name = format!("layer{k}.bstn");
            // One row per output unit: weights followed by the bias.
            let mut data = Vec::with_capacity(l.outputs * (l.inputs + 1));
            for o in 0..l.outputs {
                data.extend_from_slice(&l.weights[o * l.inputs..(o + 1) * l.inputs]);
                data.push(l.bias[o]);
            }
            let t = ImageTensor::new(l.outputs, l.inputs + 1, 1, data, (-1.0, 1.0))?;
            write_tensor(&t, dir.join(&name))?;
            writeln!(manifest, "{name}").unwrap();
        }
        let path = dir.join("manifest.txt");
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.txt");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut lines = text.lines();
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().unwrap_or_default();
            line.strip_prefix(&format!("{key}="))
                .map(str::to_string)
                .ok_or_else(|| {
                    Error::Format(format!("model manifest: expected `{key}=`, got `{line}`"))
                })
        };
        if field("format")? != MANIFEST_TAG {
            return Err(Error::Format("model manifest: unknown format".into()));
        }
        let parse = |v: String| {
            v.parse::<usize>()
                .map_err(|e| Error::Format(format!("model manifest: {e}")))
        };
        let shape = MlpShape {
            patch: parse(field("patch")?)?,
            hidden: parse(field("hidden")?)?,
        };
        let count = parse(field("layers")?)?;
        let mut net = Self::zeros(shape)?;
        if count != net.layers.len() {
            return Err(Error::Format(format!(
                "model manifest lists {count} layers, shape implies {}",
                net.layers.len()
            )));
        }
        for l in net.layers.iter_mut() {
            let name = lines
                .next()
                .ok_or_else(|| Error::Format("model manifest: missing layer file".into()))?;
            let t = read_tensor(dir.join(name))?;
            if t.shape() != (l.outputs, l.inputs + 1, 1) {
                return Err(Error::Format(format!(
                    "layer {name} has shape {:?}",
                    t.shape()
                )));
            }
            for (o, row) in t.data().chunks_exact(l.inputs + 1).enumerate() {
                l.weights[o * l.inputs..(o + 1) * l.inputs].copy_from_slice(&row[..l.inputs]);
                l.bias[o] = row[l.inputs];
            }
        }
        Ok(net)
    }
}

// Edge-replicate index into [0, len).
#[inline]
fn clamp_index(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

#[allow(clippy::too_many_arguments)]
fn gather_input(
    x_t: &[f64],
    xn: &[f64],
    w: usize,
    h: usize,
    r: usize,
    c: usize,
    patch: usize,
    q: &StepQuery,
    out: &mut Vec<f64>,
) {
    let half = (patch / 2) as isize;
    out.clear();
    for src in [x_t, xn] {
        for i in 0..patch as isize {
            let rr = clamp_index(r as isize + i - half, h);
            for j in 0..patch as isize {
                let cc = clamp_index(c as isize + j - half, w);
                out.push(src[rr * w + cc]);
            }
        }
    }
    out.push(q.sigma2.sqrt());
    out.push(q.sbar2.sqrt());
}

pub fn mlp_predict(net: &TinyMlp, x_t: &Field, q: &StepQuery, cond: &Condition) -> Result<Field> {
    x_t.ensure_same_shape(&cond.xn)?;
    let (h, w, ch) = x_t.shape();
    if ch != 1 {
        return Err(Error::InvalidArgument(format!(
            "patch predictor expects one channel, got {ch}"
        )));
    }
    let p = net.shape.patch;
    let half = (p / 2) as isize;
    let (xd, nd) = (x_t.data(), cond.xn.data());
    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|r| {
            let mut input = Vec::with_capacity(net.shape.input_len());
            let mut row = Vec::with_capacity(w * p * p);
            for c in 0..w {
                gather_input(xd, nd, w, h, r, c, p, q, &mut input);
                row.extend(net.forward(&input));
            }
            row
        })
        .collect();
    let mut acc = vec![0.0; h * w];
    let mut count = vec![0u32; h * w];
    for (r, row) in rows.iter().enumerate() {
        for c in 0..w {
            let out = &row[c * p * p..(c + 1) * p * p];
            for i in 0..p as isize {
                let rr = r as isize + i - half;
                if rr < 0 || rr >= h as isize {
                    continue;
                }
                for j in 0..p as isize {
                    let cc = c as isize + j - half;
                    if cc < 0 || cc >= w as isize {
                        continue;
                    }
                    let idx = rr as usize * w + cc as usize;
                    acc[idx] += out[(i * p as isize + j) as usize];
                    count[idx] += 1;
                }
            }
        }
    }
    let data: Vec<f64> = acc.iter().zip(&count).map(|(a, n)| a / *n as f64).collect();
    let f = Field::new(x_t.shape(), data)?;
    if !f.is_finite() {
        return Err(Error::NonFiniteStep { n: q.n });
    }
    Ok(f)
}

impl EpsilonPredictor for TinyMlp {
    fn predict(&self, x_t: &Field, q: &StepQuery, cond: &Condition) -> Result<Field> {
        mlp_predict(self, x_t, q, cond)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHyper {
    pub shape: MlpShape,
    pub learning_rate: f64,
    pub batch: usize,
    pub iters: usize,
    pub seed: u64,
    pub log_every: usize,
    /// Train at a single grid step instead of uniformly over the interior.
    pub fixed_step: Option<usize>,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            shape: MlpShape::default(),
            learning_rate: 1e-3,
            batch: 32,
            iters: 3000,
            seed: 0,
            log_every: 100,
            fixed_step: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// `(iteration, mean batch loss over the preceding logging window)`.
    pub losses: Vec<(usize, f64)>,
}

impl TrainReport {
    pub fn loss_at(&self, iter: usize) -> Option<f64> {
        self.losses
            .iter()
            .find(|(i, _)| *i == iter)
            .map(|(_, l)| *l)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().map(|(_, l)| *l)
    }
}

/// Draws one regression mini-batch: random pair, random grid step, random
/// patch centre; `x_t` is sampled from the bridge marginal on the patch only.
pub fn draw_batch(
    dataset: &[(ImageTensor, ImageTensor)],
    s: &Schedule,
    shape: MlpShape,
    size: usize,
    fixed_step: Option<usize>,
    r: &mut rng::Rng,
) -> Result<TrainBatch> {
    let p = shape.patch;
    let half = (p / 2) as isize;
    let mut batch = TrainBatch {
        inputs: Vec::with_capacity(size * shape.input_len()),
        targets: Vec::with_capacity(size * shape.patch_len()),
        len: size,
    };
    let mut noise = Vec::new();
    for _ in 0..size {
        let (x0, xn) = &dataset[r.random_range(0..dataset.len())];
        let n = match fixed_step {
            Some(n) => n,
            None => r.random_range(1..s.steps()),
        };
        let (w0, wn, var) = q_weights(s, n)?;
        let q = s.query(n);
        let sigma = q.sigma();
        let sd = var.sqrt();
        let (h, w) = (x0.height(), x0.width());
        let (rc, cc) = (r.random_range(0..h), r.random_range(0..w));
        let rows: Vec<usize> = (0..p as isize)
            .map(|i| clamp_index(rc as isize + i - half, h))
            .collect();
        let cols: Vec<usize> = (0..p as isize)
            .map(|j| clamp_index(cc as isize + j - half, w))
            .collect();
        // One noise value per distinct source pixel, so replicated border
        // pixels stay identical as they would in a full-image draw.
        let (r0, c0) = (rows[0], cols[0]);
        let nr = rows[p - 1] - r0 + 1;
        let nc = cols[p - 1] - c0 + 1;
        noise.resize(nr * nc, 0.0);
        rng::fill_normal(r, &mut noise);
        let mut xt_patch = Vec::with_capacity(p * p);
        let mut xn_patch = Vec::with_capacity(p * p);
        for &rr in &rows {
            for &cc2 in &cols {
                let a = x0.at(rr, cc2) as f64;
                let b = xn.at(rr, cc2) as f64;
                let xt = w0 * a + wn * b + sd * noise[(rr - r0) * nc + (cc2 - c0)];
                xt_patch.push(xt);
                xn_patch.push(b);
                batch.targets.push((xt - a) / sigma);
            }
        }
        batch.inputs.extend_from_slice(&xt_patch);
        batch.inputs.extend_from_slice(&xn_patch);
        batch.inputs.push(sigma);
        batch.inputs.push(q.sbar2.sqrt());
    }
    Ok(batch)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(len: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, net: &mut TinyMlp, grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let mut i = 0;
        for l in net.layers.iter_mut() {
            for p in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                let g = grad[i];
                self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
                self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
                let update = self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
                *p = (*p as f64 - update) as f32;
                i += 1;
            }
        }
    }
}

pub fn train_tiny_mlp(
    dataset: &[(ImageTensor, ImageTensor)],
    s: &Schedule,
    hyper: &TrainHyper,
) -> Result<(TinyMlp, TrainReport)> {
    train_tiny_mlp_with(dataset, s, hyper, |_, _| {})
}

/// [`train_tiny_mlp`] with a callback invoked at each logging point.
pub fn train_tiny_mlp_with(
    dataset: &[(ImageTensor, ImageTensor)],
    s: &Schedule,
    hyper: &TrainHyper,
    mut on_log: impl FnMut(usize, f64),
) -> Result<(TinyMlp, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training dataset is empty".into()));
    }
    for (x0, xn) in dataset {
        x0.ensure_same_shape(xn)?;
        if x0.channels() != 1 {
            return Err(Error::InvalidArgument(
                "training images must be single-channel".into(),
            ));
        }
    }
    if s.steps() < 2 {
        return Err(Error::InvalidArgument(
            "training grid needs at least 2 steps".into(),
        ));
    }
    if let Some(n) = hyper.fixed_step {
        if n == 0 || n >= s.steps() {
            return Err(Error::StepOutOfRange {
                n,
                lo: 1,
                hi: s.steps() - 1,
            });
        }
    }
    if hyper.batch == 0 || hyper.log_every == 0 {
        return Err(Error::InvalidArgument(
            "batch size and log interval must be positive".into(),
        ));
    }
    let mut net = TinyMlp::init(hyper.shape, hyper.seed)?;
    let mut opt = Adam::new(net.param_count(), hyper.learning_rate);
    let mut r = rng::stream(hyper.seed, 1);
    let mut report = TrainReport { losses: Vec::new() };
    let mut window = 0.0;
    let mut window_len = 0;
    for iter in 1..=hyper.iters {
        let batch = draw_batch(
            dataset,
            s,
            hyper.shape,
            hyper.batch,
            hyper.fixed_step,
            &mut r,
        )?;
        let (loss, grad) = net.batch_loss_and_grad(&batch);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { iter, loss });
        }
        opt.step(&mut net, &grad);
        window += loss;
        window_len += 1;
        if iter % hyper.log_every == 0 || iter == hyper.iters {
            let mean = window / window_len as f64;
            report.losses.push((iter, mean));
            on_log(iter, mean);
            window = 0.0;
            window_len = 0;
        }
    }
    Ok((net, report))
}
