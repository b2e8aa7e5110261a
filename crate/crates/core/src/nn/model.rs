//! Compiled layer stack with batched forward and reverse-mode backward passes.
//!
//! Spatial activations are stored channel-major across the batch
//! (`[channel][sample][row][time]`), which turns every convolution into one
//! GEMM over the whole batch. Dense activations are `[sample][feature]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::arch::{Architecture, LayerSpec, Width};
use super::gemm::{gemm, MatRef};
use super::loss::{nll_from_probs, ProbabilityHeads};
use super::real::Real;
use super::tensor::{Param, Tensor};
use crate::error::{Error, Result};
use crate::pairs::pair_count;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvGeom {
    cin: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn pad_h(&self) -> usize {
        self.kh / 2
    }

    fn pad_w(&self) -> usize {
        self.kw / 2
    }

    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layer {
    Conv { geom: ConvGeom, param: usize },
    Relu,
    Pool { planes_c: usize, h: usize, w: usize, ph: usize, pw: usize },
    Flatten { c: usize, hw: usize },
    Dense { din: usize, dout: usize, param: usize },
    Heads { k: usize },
}

enum Saved<R> {
    Cols(Vec<R>),
    Mask(Vec<bool>),
    Argmax(Vec<u32>),
    Input(Vec<R>),
    Nothing,
}

/// Layer stack, parameters and the instance shape it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<R> {
    arch: Architecture,
    nodes: usize,
    steps: usize,
    seed: u64,
    params: Vec<Param<R>>,
    layers: Vec<Layer>,
}

/// Loss, parameter gradients (aligned with [`Model::params`]) and the
/// probabilities of the forward pass that produced them.
#[derive(Debug, Clone)]
pub struct Gradients<R> {
    pub loss: f64,
    pub grads: Vec<Tensor<R>>,
    pub probs: Vec<R>,
}

impl<R: Real> Gradients<R> {
    pub fn norm(&self) -> f64 {
        self.grads.iter().map(Tensor::squared_norm).sum::<f64>().sqrt()
    }
}

/// Parameter name, shape and init variance gain.
type ParamShape = (String, Vec<usize>, f64);

fn compile(arch: &Architecture, nodes: usize, steps: usize) -> Result<(Vec<Layer>, Vec<ParamShape>)> {
    arch.validate()?;
    if nodes < 2 || steps < 1 {
        return Err(Error::invalid(format!(
            "model needs at least 2 nodes and 1 step, got {nodes}x{steps}"
        )));
    }
    let k = pair_count(nodes);
    let mut layers = Vec::with_capacity(arch.layers.len());
    let mut shapes = Vec::new();
    // (channels, rows, cols) while spatial, then a flat width.
    let (mut c, mut h, mut w) = (1usize, nodes, steps);
    let mut flat: Option<usize> = None;
    for (idx, spec) in arch.layers.iter().enumerate() {
        let layer = match *spec {
            LayerSpec::Conv {
                kernel_h,
                kernel_w,
                channels,
                stride,
            } => {
                let ho = (h + 2 * (kernel_h / 2) - kernel_h) / stride + 1;
                let wo = (w + 2 * (kernel_w / 2) - kernel_w) / stride + 1;
                let geom = ConvGeom {
                    cin: c,
                    cout: channels,
                    kh: kernel_h,
                    kw: kernel_w,
                    stride,
                    h,
                    w,
                    ho,
                    wo,
                };
                let param = shapes.len();
                shapes.push((format!("conv{idx}.weight"), vec![channels, c, kernel_h, kernel_w], 2.0));
                shapes.push((format!("conv{idx}.bias"), vec![channels], 0.0));
                (c, h, w) = (channels, ho, wo);
                Layer::Conv { geom, param }
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::MaxPool { pool_h, pool_w } => {
                if h / pool_h == 0 || w / pool_w == 0 {
                    return Err(Error::invalid(format!(
                        "pool{pool_h}x{pool_w} at layer {idx} does not fit a {h}x{w} input"
                    )));
                }
                let layer = Layer::Pool {
                    planes_c: c,
                    h,
                    w,
                    ph: pool_h,
                    pw: pool_w,
                };
                (h, w) = (h / pool_h, w / pool_w);
                layer
            }
            LayerSpec::Flatten => {
                flat = Some(c * h * w);
                Layer::Flatten { c, hw: h * w }
            }
            LayerSpec::Dense { width } => {
                let din = flat.expect("validated: dense follows flatten");
                let (dout, gain) = match width {
                    Width::Fixed(n) => (n, 2.0),
                    Width::Heads => (2 * k, 1.0),
                };
                let param = shapes.len();
                shapes.push((format!("dense{idx}.weight"), vec![dout, din], gain));
                shapes.push((format!("dense{idx}.bias"), vec![dout], 0.0));
                flat = Some(dout);
                Layer::Dense { din, dout, param }
            }
            LayerSpec::Heads => Layer::Heads { k },
        };
        layers.push(layer);
    }
    Ok((layers, shapes))
}

impl<R: Real> Model<R> {
    /// Fan-in scaled normal weights (`√(2/fan_in)` before rectifiers,
    /// `√(1/fan_in)` for the logit layer) and zero biases.
    pub fn new(arch: Architecture, nodes: usize, steps: usize, seed: u64) -> Result<Self> {
        let (layers, shapes) = compile(&arch, nodes, steps)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(shapes.len());
        for (name, shape, gain) in shapes {
            let tensor = if gain == 0.0 {
                Tensor::zeros(&shape)
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt())
                    .map_err(|e| Error::invalid(e.to_string()))?;
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| R::from_f64_lossy(normal.sample(&mut rng))).collect();
                Tensor::from_vec(&shape, data)?
            };
            params.push(Param { name, tensor });
        }
        Ok(Self {
            arch,
            nodes,
            steps,
            seed,
            params,
            layers,
        })
    }

    /// Every parameter zero: all logits vanish and every head is uniform.
    pub fn zeroed(arch: Architecture, nodes: usize, steps: usize) -> Result<Self> {
        let mut m = Self::new(arch, nodes, steps, 0)?;
        for p in &mut m.params {
            p.tensor.data_mut().iter_mut().for_each(|v| *v = R::zero());
        }
        Ok(m)
    }

    /// Rebuilds a model from named tensors (checkpoint loading).
    pub fn from_params(
        arch: Architecture,
        nodes: usize,
        steps: usize,
        seed: u64,
        params: Vec<Param<R>>,
    ) -> Result<Self> {
        let (layers, shapes) = compile(&arch, nodes, steps)?;
        if shapes.len() != params.len() {
            return Err(Error::dim(format!(
                "{} tensors supplied, architecture has {}",
                params.len(),
                shapes.len()
            )));
        }
        for ((name, shape, _), p) in shapes.iter().zip(&params) {
            if *name != p.name || shape.as_slice() != p.tensor.shape() {
                return Err(Error::dim(format!(
                    "tensor `{}` {:?} does not match `{name}` {shape:?}",
                    p.name,
                    p.tensor.shape()
                )));
            }
        }
        Ok(Self {
            arch,
            nodes,
            steps,
            seed,
            params,
            layers,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of probability heads, `L(L−1)/2`.
    pub fn heads(&self) -> usize {
        pair_count(self.nodes)
    }

    pub fn input_len(&self) -> usize {
        self.nodes * self.steps
    }

    pub fn params(&self) -> &[Param<R>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<R>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn cast<S: Real>(&self) -> Model<S> {
        Model {
            arch: self.arch.clone(),
            nodes: self.nodes,
            steps: self.steps,
            seed: self.seed,
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                })
                .collect(),
            layers: self.layers.clone(),
        }
    }

    fn gather_inputs(&self, inputs: &[&[R]]) -> Result<Vec<R>> {
        let len = self.input_len();
        let mut x = Vec::with_capacity(inputs.len() * len);
        for (i, inp) in inputs.iter().enumerate() {
            if inp.len() != len {
                return Err(Error::dim(format!(
                    "sample {i} has {} values, model expects {}x{}",
                    inp.len(),
                    self.nodes,
                    self.steps
                )));
            }
            if inp.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("input sample {i}")));
            }
            x.extend_from_slice(inp);
        }
        Ok(x)
    }

    fn run_forward(&self, inputs: &[&[R]], keep: bool) -> Result<(Vec<R>, Vec<Saved<R>>)> {
        let b = inputs.len();
        let mut x = self.gather_inputs(inputs)?;
        let mut saved = Vec::with_capacity(if keep { self.layers.len() } else { 0 });
        for layer in &self.layers {
            let (y, s) = match *layer {
                Layer::Conv { geom, param } => {
                    let cols = im2col(&x, &geom, b);
                    let n = b * geom.ho * geom.wo;
                    let mut y = vec![R::zero(); geom.cout * n];
                    let wt = self.params[param].tensor.data();
                    gemm(
                        R::one(),
                        MatRef::row_major(wt, geom.cout, geom.patch()),
                        MatRef::row_major(&cols, geom.patch(), n),
                        R::zero(),
                        &mut y,
                    );
                    let bias = self.params[param + 1].tensor.data();
                    for (row, &bv) in y.chunks_mut(n).zip(bias) {
                        row.iter_mut().for_each(|v| *v = *v + bv);
                    }
                    (y, Saved::Cols(cols))
                }
                Layer::Relu => {
                    let mask: Vec<bool> = x.iter().map(|&v| v > R::zero()).collect();
                    for (v, &m) in x.iter_mut().zip(&mask) {
                        if !m {
                            *v = R::zero();
                        }
                    }
                    (x, Saved::Mask(mask))
                }
                Layer::Pool {
                    planes_c,
                    h,
                    w,
                    ph,
                    pw,
                } => {
                    let (y, arg) = maxpool(&x, planes_c * b, h, w, ph, pw);
                    (y, Saved::Argmax(arg))
                }
                Layer::Flatten { c, hw } => {
                    let mut y = vec![R::zero(); x.len()];
                    for ci in 0..c {
                        for bi in 0..b {
                            let src = &x[(ci * b + bi) * hw..(ci * b + bi + 1) * hw];
                            y[bi * c * hw + ci * hw..bi * c * hw + (ci + 1) * hw].copy_from_slice(src);
                        }
                    }
                    (y, Saved::Nothing)
                }
                Layer::Dense { din, dout, param } => {
                    let mut y = vec![R::zero(); b * dout];
                    let wt = self.params[param].tensor.data();
                    gemm(
                        R::one(),
                        MatRef::row_major(&x, b, din),
                        MatRef::row_major(wt, dout, din).t(),
                        R::zero(),
                        &mut y,
                    );
                    let bias = self.params[param + 1].tensor.data();
                    for row in y.chunks_mut(dout) {
                        row.iter_mut().zip(bias).for_each(|(v, &bv)| *v = *v + bv);
                    }
                    (y, Saved::Input(x))
                }
                Layer::Heads { .. } => {
                    let mut y = x;
                    for pair in y.chunks_mut(2) {
                        let (p0, p1) = softmax2(pair[0], pair[1]);
                        pair[0] = p0;
                        pair[1] = p1;
                    }
                    (y, Saved::Nothing)
                }
            };
            x = y;
            if keep {
                saved.push(s);
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("forward activations".into()));
        }
        Ok((x, saved))
    }

    /// Head probabilities for a batch, flattened `[sample][head][outcome]`.
    pub fn forward_raw(&self, inputs: &[&[R]]) -> Result<Vec<R>> {
        Ok(self.run_forward(inputs, false)?.0)
    }

    pub fn forward_batch(&self, inputs: &[&[R]]) -> Result<Vec<ProbabilityHeads>> {
        let probs = self.forward_raw(inputs)?;
        Ok(probs
            .chunks(2 * self.heads())
            .map(ProbabilityHeads::from_flat)
            .collect())
    }

    pub fn forward(&self, input: &[R]) -> Result<ProbabilityHeads> {
        Ok(self.forward_batch(&[input])?.remove(0))
    }

    /// Mean negative log-likelihood of `labels` under the model.
    pub fn loss(&self, inputs: &[&[R]], labels: &[&[bool]]) -> Result<f64> {
        let probs = self.forward_raw(inputs)?;
        Ok(nll_from_probs(&probs, labels, self.heads())?.0)
    }

    /// Exact gradient of the mean negative log-likelihood over the batch.
    pub fn backward(&self, inputs: &[&[R]], labels: &[&[bool]]) -> Result<Gradients<R>> {
        if inputs.is_empty() {
            return Err(Error::Empty("batch".into()));
        }
        let b = inputs.len();
        let (probs, saved) = self.run_forward(inputs, true)?;
        let (loss, mut dy) = nll_from_probs(&probs, labels, self.heads())?;
        let mut grads: Vec<Tensor<R>> = self
            .params
            .iter()
            .map(|p| Tensor::zeros(p.tensor.shape()))
            .collect();
        let first_param_layer = self
            .layers
            .iter()
            .position(|l| matches!(l, Layer::Conv { .. } | Layer::Dense { .. }))
            .unwrap_or(0);
        for (idx, (layer, s)) in self.layers.iter().zip(&saved).enumerate().rev() {
            let need_dx = idx > first_param_layer;
            dy = match (*layer, s) {
                (Layer::Heads { .. }, _) => dy,
                (Layer::Dense { din, dout, param }, Saved::Input(x)) => {
                    gemm(
                        R::one(),
                        MatRef::row_major(&dy, b, dout).t(),
                        MatRef::row_major(x, b, din),
                        R::zero(),
                        grads[param].data_mut(),
                    );
                    let gb = grads[param + 1].data_mut();
                    for row in dy.chunks(dout) {
                        gb.iter_mut().zip(row).for_each(|(g, &d)| *g = *g + d);
                    }
                    if !need_dx {
                        break;
                    }
                    let mut dx = vec![R::zero(); b * din];
                    gemm(
                        R::one(),
                        MatRef::row_major(&dy, b, dout),
                        MatRef::row_major(self.params[param].tensor.data(), dout, din),
                        R::zero(),
                        &mut dx,
                    );
                    dx
                }
                (Layer::Relu, Saved::Mask(mask)) => {
                    for (d, &m) in dy.iter_mut().zip(mask) {
                        if !m {
                            *d = R::zero();
                        }
                    }
                    dy
                }
                (Layer::Flatten { c, hw }, _) => {
                    let mut dx = vec![R::zero(); dy.len()];
                    for ci in 0..c {
                        for bi in 0..b {
                            dx[(ci * b + bi) * hw..(ci * b + bi + 1) * hw]
                                .copy_from_slice(&dy[bi * c * hw + ci * hw..bi * c * hw + (ci + 1) * hw]);
                        }
                    }
                    dx
                }
                (
                    Layer::Pool {
                        planes_c, h, w, ..
                    },
                    Saved::Argmax(arg),
                ) => {
                    let mut dx = vec![R::zero(); planes_c * b * h * w];
                    for (&a, &d) in arg.iter().zip(&dy) {
                        dx[a as usize] = dx[a as usize] + d;
                    }
                    dx
                }
                (Layer::Conv { geom, param }, Saved::Cols(cols)) => {
                    let n = b * geom.ho * geom.wo;
                    gemm(
                        R::one(),
                        MatRef::row_major(&dy, geom.cout, n),
                        MatRef::row_major(cols, geom.patch(), n).t(),
                        R::zero(),
                        grads[param].data_mut(),
                    );
                    for (g, row) in grads[param + 1].data_mut().iter_mut().zip(dy.chunks(n)) {
                        *g = row.iter().fold(R::zero(), |acc, &v| acc + v);
                    }
                    if !need_dx {
                        break;
                    }
                    let mut dcols = vec![R::zero(); geom.patch() * n];
                    gemm(
                        R::one(),
                        MatRef::row_major(self.params[param].tensor.data(), geom.cout, geom.patch()).t(),
                        MatRef::row_major(&dy, geom.cout, n),
                        R::zero(),
                        &mut dcols,
                    );
                    col2im(&dcols, &geom, b)
                }
                _ => unreachable!("saved state matches its layer"),
            };
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradients".into()));
        }
        Ok(Gradients { loss, grads, probs })
    }
}

fn softmax2<R: Real>(a: R, b: R) -> (R, R) {
    let m = a.max(b);
    let ea = (a - m).exp();
    let eb = (b - m).exp();
    let z = ea + eb;
    (ea / z, eb / z)
}

/// Patch matrix `[cin·kh·kw][sample·ho·wo]` with zero padding.
fn im2col<R: Real>(x: &[R], g: &ConvGeom, b: usize) -> Vec<R> {
    let n = b * g.ho * g.wo;
    let mut cols = vec![R::zero(); g.patch() * n];
    let (ph, pw) = (g.pad_h() as isize, g.pad_w() as isize);
    par::for_each_chunk_mut(&mut cols, n, |r, row| {
        let c = r / (g.kh * g.kw);
        let ky = (r / g.kw) % g.kh;
        let kx = r % g.kw;
        for bi in 0..b {
            let plane = &x[(c * b + bi) * g.h * g.w..(c * b + bi + 1) * g.h * g.w];
            for oy in 0..g.ho {
                let iy = (oy * g.stride + ky) as isize - ph;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                let dst = &mut row[(bi * g.ho + oy) * g.wo..(bi * g.ho + oy + 1) * g.wo];
                if g.stride == 1 {
                    let (lo, hi) = valid_span(kx as isize - pw, g.w, g.wo);
                    let shift = kx as isize - pw;
                    if lo < hi {
                        dst[lo..hi].copy_from_slice(&src[(lo as isize + shift) as usize..(hi as isize + shift) as usize]);
                    }
                    continue;
                }
                for (ox, d) in dst.iter_mut().enumerate() {
                    let ix = (ox * g.stride + kx) as isize - pw;
                    if ix >= 0 && ix < g.w as isize {
                        *d = src[ix as usize];
                    }
                }
            }
        }
    });
    cols
}

/// Output columns `[lo, hi)` whose input column `ox + shift` lies in `0..w`.
fn valid_span(shift: isize, w: usize, wo: usize) -> (usize, usize) {
    let lo = (-shift).clamp(0, wo as isize) as usize;
    let hi = (w as isize - shift).clamp(0, wo as isize) as usize;
    (lo, hi.max(lo))
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
fn col2im<R: Real>(dcols: &[R], g: &ConvGeom, b: usize) -> Vec<R> {
    let n = b * g.ho * g.wo;
    let mut dx = vec![R::zero(); g.cin * b * g.h * g.w];
    let (ph, pw) = (g.pad_h() as isize, g.pad_w() as isize);
    par::for_each_chunk_mut(&mut dx, b * g.h * g.w, |c, chan| {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let r = (c * g.kh + ky) * g.kw + kx;
                let row = &dcols[r * n..(r + 1) * n];
                for bi in 0..b {
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - ph;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let base = (bi * g.h + iy as usize) * g.w;
                        let src = &row[(bi * g.ho + oy) * g.wo..(bi * g.ho + oy + 1) * g.wo];
                        if g.stride == 1 {
                            let shift = kx as isize - pw;
                            let (lo, hi) = valid_span(shift, g.w, g.wo);
                            if lo < hi {
                                let start = (base as isize + lo as isize + shift) as usize;
                                let dst = &mut chan[start..start + (hi - lo)];
                                dst.iter_mut().zip(&src[lo..hi]).for_each(|(d, &v)| *d = *d + v);
                            }
                            continue;
                        }
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - pw;
                            if ix >= 0 && ix < g.w as isize {
                                chan[base + ix as usize] = chan[base + ix as usize] + v;
                            }
                        }
                    }
                }
            }
        }
    });
    dx
}

/// Non-overlapping max pool over `planes` independent `h × w` planes.
/// Returns pooled values and, per output, the flat input index of the max.
fn maxpool<R: Real>(x: &[R], planes: usize, h: usize, w: usize, ph: usize, pw: usize) -> (Vec<R>, Vec<u32>) {
    let (ho, wo) = (h / ph, w / pw);
    let mut vals = vec![R::zero(); planes * ho * wo];
    let mut args = vec![0u32; planes * ho * wo];
    for (p, (pv, pa)) in vals.chunks_mut(ho * wo).zip(args.chunks_mut(ho * wo)).enumerate() {
        let base = p * h * w;
        for oy in 0..ho {
            let rows = base + oy * ph * w;
            for ox in 0..wo {
                let mut best = rows + ox * pw;
                let mut best_v = x[best];
                for dy in 0..ph {
                    let start = rows + dy * w + ox * pw;
                    for (i, &v) in x[start..start + pw].iter().enumerate() {
                        if v > best_v {
                            best_v = v;
                            best = start + i;
                        }
                    }
                }
                pv[oy * wo + ox] = best_v;
                pa[oy * wo + ox] = best as u32;
            }
        }
    }
    (vals, args)
}
