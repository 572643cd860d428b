//! A small convolutional segmenter trained with hand-written
//! backpropagation, used to compare losses on a synthetic ring task.
//!
//! Activations are stored channel-major (`[C][H][W]`); loss functions work on
//! pixel-major fields, so logits and their gradients are transposed at the
//! boundary. Every run is single-threaded and a pure function of its config.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::analysis::negcount;
use crate::error::{Error, Result};
use crate::grid::{one_hot, Field, Geometry, GradField, LabelGrid, LogitField, OneHot, RwMap};
use crate::loss::{
    combined_loss, evaluate, finite_difference_grad, relative_error, softmax, softmax_values,
    CombineMode, CombinedSchedule, LossKind, LossValue, Normalization, Target, DICE_EPSILON,
};
use crate::metrics::{cdf, dice, BinaryMask};
use crate::rwmaps::{boundary_map, rrw_map};

/// Final mean foreground Dice at or above which a run counts as converged.
pub const CONVERGENCE_THRESHOLD: f64 = 0.85;

/// Default Adam step size for the toy task.
pub const DEFAULT_LR: f64 = 3e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Layer {
    cin: usize,
    cout: usize,
    ksize: usize,
    relu: bool,
    w: usize,
    b: usize,
}

impl Layer {
    fn weights(&self) -> usize {
        self.cout * self.cin * self.ksize * self.ksize
    }
}

/// Four-layer fully convolutional network:
/// `3x3 (1->8) -> 3x3 (8->16) -> 3x3 (16->8) -> 1x1 (8->K)`, ReLU between
/// layers, same padding. All parameters live in one flat vector.
#[derive(Clone, Debug, PartialEq)]
pub struct TinyNet {
    layers: Vec<Layer>,
    pub params: Vec<f64>,
    num_classes: usize,
}

/// Per-layer activations of one forward pass.
#[derive(Clone, Debug)]
pub struct Activations {
    h: usize,
    w: usize,
    /// `maps[0]` is the input; `maps[l + 1]` the output of layer `l`.
    maps: Vec<Vec<f64>>,
    /// Zero-padded input of each layer.
    padded: Vec<Vec<f64>>,
}

impl TinyNet {
    /// Network with all parameters zero.
    pub fn zeros(num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        let shapes = [(1, 8, 3), (8, 16, 3), (16, 8, 3), (8, num_classes, 1)];
        let mut layers = Vec::new();
        let mut offset = 0;
        for (j, &(cin, cout, ksize)) in shapes.iter().enumerate() {
            let w = offset;
            let b = w + cout * cin * ksize * ksize;
            offset = b + cout;
            layers.push(Layer {
                cin,
                cout,
                ksize,
                relu: j + 1 < shapes.len(),
                w,
                b,
            });
        }
        Ok(Self {
            layers,
            params: vec![0.0; offset],
            num_classes,
        })
    }

    /// He initialization `W ~ N(0, 2 / fan_in)` with zero biases.
    pub fn he(num_classes: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::zeros(num_classes)?;
        for layer in net.layers.clone() {
            let fan_in = (layer.cin * layer.ksize * layer.ksize) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            for p in &mut net.params[layer.w..layer.w + layer.weights()] {
                *p = normal.sample(rng);
            }
        }
        Ok(net)
    }

    /// He initialization with the final 1x1 layer zeroed, so training starts
    /// from a uniform softmax.
    pub fn new(num_classes: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::he(num_classes, rng)?;
        let last = *net.layers.last().expect("four layers");
        net.params[last.w..last.b + last.cout].fill(0.0);
        Ok(net)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Turn the hidden ReLUs on or off (off makes the network affine).
    pub fn set_relu(&mut self, on: bool) {
        let n = self.layers.len();
        for l in &mut self.layers[..n - 1] {
            l.relu = on;
        }
    }

    pub fn forward_cached(&self, image: &[f64], h: usize, w: usize) -> Result<Activations> {
        if image.len() != h * w || h == 0 || w == 0 {
            return Err(Error::shape(h * w, image.len()));
        }
        let mut maps = Vec::with_capacity(self.layers.len() + 1);
        let mut padded = Vec::with_capacity(self.layers.len());
        maps.push(image.to_vec());
        for layer in &self.layers {
            let src = pad_planes(maps.last().unwrap(), layer.cin, h, w, layer.ksize / 2);
            let mut out = vec![0.0; layer.cout * h * w];
            correlate(
                &src,
                layer.cin,
                layer.cout,
                layer.ksize,
                (h, w),
                &self.params[layer.w..layer.w + layer.weights()],
                Some(&self.params[layer.b..layer.b + layer.cout]),
                &mut out,
            );
            padded.push(src);
            if layer.relu {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            maps.push(out);
        }
        Ok(Activations { h, w, maps, padded })
    }

    /// Pixel-major logits of a cached pass.
    pub fn logits(&self, acts: &Activations) -> LogitField {
        let hw = acts.h * acts.w;
        let k = self.num_classes;
        let out = acts.maps.last().unwrap();
        let mut values = vec![0.0; hw * k];
        for c in 0..k {
            for i in 0..hw {
                values[i * k + c] = out[c * hw + i];
            }
        }
        Field::from_parts_unchecked(
            Geometry::unit(vec![acts.h, acts.w]).expect("nonzero image dims"),
            k,
            values,
        )
    }

    pub fn forward(&self, image: &[f64], h: usize, w: usize) -> Result<LogitField> {
        Ok(self.logits(&self.forward_cached(image, h, w)?))
    }

    /// Add the parameter gradient for upstream logit gradient `grad` to
    /// `param_grad`.
    pub fn backward(
        &self,
        acts: &Activations,
        grad: &GradField,
        param_grad: &mut [f64],
    ) -> Result<()> {
        let (h, w) = (acts.h, acts.w);
        let hw = h * w;
        let k = self.num_classes;
        if grad.channels() != k || grad.len() != hw {
            return Err(Error::shape((hw, k), (grad.len(), grad.channels())));
        }
        if param_grad.len() != self.params.len() {
            return Err(Error::shape(self.params.len(), param_grad.len()));
        }
        let mut upstream = vec![0.0; k * hw];
        for (i, px) in grad.pixels().enumerate() {
            for c in 0..k {
                upstream[c * hw + i] = px[c];
            }
        }
        for (j, layer) in self.layers.iter().enumerate().rev() {
            if layer.relu {
                for (g, a) in upstream.iter_mut().zip(&acts.maps[j + 1]) {
                    if *a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            upstream = conv_backward(
                layer,
                &self.params,
                &acts.padded[j],
                &upstream,
                (h, w),
                param_grad,
                j > 0,
            );
        }
        Ok(())
    }
}

/// Output pixels computed together in registers.
const LANES: usize = 8;

/// Zero-pad every `h x w` plane by `pad` on each side. Extra zeros at the
/// end let the blocked kernel read whole lanes past the last pixel.
fn pad_planes(input: &[f64], channels: usize, h: usize, w: usize, pad: usize) -> Vec<f64> {
    let wp = w + 2 * pad;
    let plane = (h + 2 * pad) * wp;
    let mut out = vec![0.0; channels * plane + LANES];
    for c in 0..channels {
        for y in 0..h {
            let dst = c * plane + (y + pad) * wp + pad;
            out[dst..dst + w].copy_from_slice(&input[(c * h + y) * w..(c * h + y + 1) * w]);
        }
    }
    out
}

/// Same-size cross-correlation of padded planes:
/// `out[o][y][x] = bias[o] + sum_{i,ky,kx} wts[o][i][ky][kx] * src[i][y+ky][x+kx]`,
/// summed in `(i, ky, kx)` order.
#[allow(clippy::too_many_arguments)]
fn correlate(
    src: &[f64],
    cin: usize,
    cout: usize,
    ks: usize,
    (h, w): (usize, usize),
    wts: &[f64],
    bias: Option<&[f64]>,
    out: &mut [f64],
) {
    let pad = ks / 2;
    let wp = w + 2 * pad;
    let plane = (h + 2 * pad) * wp;
    let r = cin * ks * ks;
    // full-lane row buffer so the accumulators never need a partial store
    let mut rowbuf = vec![0.0; w + LANES];
    for o in 0..cout {
        let wo = &wts[o * r..(o + 1) * r];
        let b = bias.map_or(0.0, |b| b[o]);
        for y in 0..h {
            for x0 in (0..w).step_by(LANES) {
                let mut acc = [b; LANES];
                let mut j = 0;
                for i in 0..cin {
                    for ky in 0..ks {
                        let row = i * plane + (y + ky) * wp + x0;
                        for kx in 0..ks {
                            let wv = wo[j];
                            j += 1;
                            let s: &[f64; LANES] = src[row + kx..row + kx + LANES]
                                .try_into()
                                .expect("lane slice");
                            for (a, v) in acc.iter_mut().zip(s) {
                                *a += wv * v;
                            }
                        }
                    }
                }
                let dst: &mut [f64; LANES] = (&mut rowbuf[x0..x0 + LANES])
                    .try_into()
                    .expect("lane slice");
                *dst = acc;
            }
            let dst = (o * h + y) * w;
            out[dst..dst + w].copy_from_slice(&rowbuf[..w]);
        }
    }
}

/// Dot product with four interleaved accumulators (fixed order, so
/// deterministic, but friendlier to vectorization than a serial sum).
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for j in 0..4 {
            acc[j] += x[j] * y[j];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Accumulate weight and bias gradients from the padded layer input; return
/// the input gradient when `need_input`.
fn conv_backward(
    layer: &Layer,
    params: &[f64],
    padded: &[f64],
    gout: &[f64],
    (h, w): (usize, usize),
    param_grad: &mut [f64],
    need_input: bool,
) -> Vec<f64> {
    let hw = h * w;
    let ks = layer.ksize;
    let pad = ks / 2;
    let wp = w + 2 * pad;
    let plane = (h + 2 * pad) * wp;
    let r = layer.cin * ks * ks;
    for co in 0..layer.cout {
        let g = &gout[co * hw..(co + 1) * hw];
        param_grad[layer.b + co] += g.iter().sum::<f64>();
        let gw = &mut param_grad[layer.w + co * r..layer.w + (co + 1) * r];
        for ci in 0..layer.cin {
            for ky in 0..ks {
                for kx in 0..ks {
                    let mut acc = 0.0;
                    for y in 0..h {
                        let s = ci * plane + (y + ky) * wp + kx;
                        acc += dot(&g[y * w..(y + 1) * w], &padded[s..s + w]);
                    }
                    gw[(ci * ks + ky) * ks + kx] += acc;
                }
            }
        }
    }
    if !need_input {
        return Vec::new();
    }
    // input gradient: correlate the padded upstream with flipped, transposed weights
    let mut flipped = vec![0.0; layer.weights()];
    let rin = layer.cout * ks * ks;
    for co in 0..layer.cout {
        for ci in 0..layer.cin {
            for ky in 0..ks {
                for kx in 0..ks {
                    flipped[ci * rin + (co * ks + ks - 1 - ky) * ks + ks - 1 - kx] =
                        params[layer.w + co * r + (ci * ks + ky) * ks + kx];
                }
            }
        }
    }
    let gpad = pad_planes(gout, layer.cout, h, w, pad);
    let mut gin = vec![0.0; layer.cin * hw];
    correlate(
        &gpad,
        layer.cout,
        layer.cin,
        ks,
        (h, w),
        &flipped,
        None,
        &mut gin,
    );
    gin
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize, cfg: &OptimizerConfig) -> Self {
        Self {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(self.m.len(), (params.len(), grads.len())));
        }
        if let Some(j) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of parameter {j} is {} at step {}",
                grads[j],
                self.step + 1
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Images of concentric rings on a uniform background. Class `K - 1` is the
/// inner disk and each ring outward has the same area, so every foreground
/// class covers roughly `pi r^2` pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    pub size: usize,
    pub num_classes: usize,
    /// Intensity mean of each class before noise. The default puts the
    /// brightest class on the outer ring and the inner disk between the
    /// background and the middle ring; with a monotone order (disk brightest)
    /// the disk can be absorbed into the middle ring early in training and
    /// never recover under region-wise losses.
    pub class_means: Vec<f64>,
    pub noise_sigma: f64,
    /// Range the inner-disk radius is drawn from, in pixels.
    pub inner_radius: (f64, f64),
    /// Upper bound on each foreground class's pixel fraction.
    pub max_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        Self {
            size: 64,
            num_classes: 4,
            class_means: vec![0.0, 3.0, 2.0, 1.0],
            noise_sigma: 0.15,
            inner_radius: (10.6, 11.1),
            max_fraction: 0.1,
            seed: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Row-major `size x size` standardized intensities.
    pub image: Vec<f64>,
    pub labels: LabelGrid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

impl SyntheticTask {
    fn outer_radius(&self) -> f64 {
        self.inner_radius.1 * ((self.num_classes - 1) as f64).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.num_classes > 255 {
            return Err(Error::Config(format!(
                "task needs 2..=255 classes, got {}",
                self.num_classes
            )));
        }
        if self.class_means.len() != self.num_classes {
            return Err(Error::Config(format!(
                "{} class means for {} classes",
                self.class_means.len(),
                self.num_classes
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        let (lo, hi) = self.inner_radius;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config(format!("bad inner radius range {lo}..{hi}")));
        }
        let margin = self.outer_radius() + 2.0;
        if 2.0 * margin >= self.size as f64 {
            return Err(Error::Config(format!(
                "rings of outer radius {:.2} do not fit a {}x{} grid",
                self.outer_radius(),
                self.size,
                self.size
            )));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<Sample> {
        let s = self.size;
        let k = self.num_classes;
        let noise = Normal::new(0.0, self.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid std");
        for _ in 0..1000 {
            let r1 = if self.inner_radius.0 == self.inner_radius.1 {
                self.inner_radius.0
            } else {
                rng.gen_range(self.inner_radius.0..self.inner_radius.1)
            };
            let radii: Vec<f64> = (1..k).map(|j| r1 * (j as f64).sqrt()).collect();
            let margin = radii[k - 2] + 2.0;
            let cy = rng.gen_range(margin..s as f64 - margin);
            let cx = rng.gen_range(margin..s as f64 - margin);
            let mut labels = vec![0u8; s * s];
            for y in 0..s {
                for x in 0..s {
                    let d = (y as f64 - cy).hypot(x as f64 - cx);
                    if let Some(j) = radii.iter().position(|&r| d < r) {
                        labels[y * s + x] = (k - 1 - j) as u8;
                    }
                }
            }
            let grid = LabelGrid::new(Geometry::unit(vec![s, s])?, labels, k)?;
            let counts = grid.class_counts();
            let cap = self.max_fraction * (s * s) as f64;
            if counts.contains(&0) || counts[1..].iter().any(|&c| c as f64 >= cap) {
                continue;
            }
            let mut image: Vec<f64> = grid
                .labels()
                .iter()
                .map(|&l| {
                    let mean = self.class_means[l as usize];
                    if self.noise_sigma > 0.0 {
                        mean + noise.sample(rng)
                    } else {
                        mean
                    }
                })
                .collect();
            standardize(&mut image);
            return Ok(Sample {
                image,
                labels: grid,
            });
        }
        Err(Error::Config(
            "could not draw an image satisfying the class-fraction limits".to_string(),
        ))
    }
}

/// Shift and scale to zero mean and unit (population) variance.
fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    for x in v.iter_mut() {
        *x -= mean;
        if sd > 0.0 {
            *x /= sd;
        }
    }
}

/// Deterministic train and validation sets drawn from `task.seed`.
pub fn generate_task(task: &SyntheticTask, n_train: usize, n_val: usize) -> Result<Dataset> {
    task.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
    let train = (0..n_train)
        .map(|_| task.draw(&mut rng))
        .collect::<Result<_>>()?;
    let val = (0..n_val)
        .map(|_| task.draw(&mut rng))
        .collect::<Result<_>>()?;
    Ok(Dataset { train, val })
}

/// Which loss a run optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossChoice {
    /// Region-wise loss with the rectified map.
    Rrw,
    /// Region-wise loss with the signed boundary-distance map.
    RwBoundary,
    Dice,
    Focal,
    /// Cross entropy weighted by the magnitude of the rectified map.
    WceRrw,
    /// Dice combined with region-wise boundary loss.
    DiceRw,
    /// Cross entropy combined with region-wise boundary loss.
    CeRw,
}

impl LossChoice {
    pub const ALL: [LossChoice; 7] = [
        LossChoice::Rrw,
        LossChoice::RwBoundary,
        LossChoice::Dice,
        LossChoice::Focal,
        LossChoice::WceRrw,
        LossChoice::DiceRw,
        LossChoice::CeRw,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossChoice::Rrw => "rrw",
            LossChoice::RwBoundary => "rw_boundary",
            LossChoice::Dice => "dice",
            LossChoice::Focal => "focal",
            LossChoice::WceRrw => "wce_rrw",
            LossChoice::DiceRw => "dice+rw",
            LossChoice::CeRw => "ce+rw",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|c| c.name()).collect();
                Error::Config(format!(
                    "unknown loss kind '{s}'; expected one of {}",
                    names.join(", ")
                ))
            })
    }

    fn combined(self) -> bool {
        matches!(self, LossChoice::DiceRw | LossChoice::CeRw)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub kind: LossChoice,
    pub gamma: f64,
    pub epsilon: f64,
    pub mode: CombineMode,
    pub alpha_end: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossChoice::Rrw,
            gamma: 2.0,
            epsilon: DICE_EPSILON,
            mode: CombineMode::Equal,
            alpha_end: 0.01,
        }
    }
}

impl LossConfig {
    pub fn label(&self) -> String {
        if self.kind.combined() {
            let mode = match self.mode {
                CombineMode::Equal => "equal",
                CombineMode::Gradual => "gradual",
            };
            format!("{}/{mode}", self.kind.name())
        } else {
            self.kind.name().to_string()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LR,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Everything a training run depends on.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub task: SyntheticTask,
    pub train_count: usize,
    pub val_count: usize,
    pub loss: LossConfig,
    pub opt: OptimizerConfig,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: SyntheticTask::default(),
            train_count: 32,
            val_count: 16,
            loss: LossConfig::default(),
            opt: OptimizerConfig::default(),
            epochs: 50,
            batch: 4,
            seed: 0,
            threshold: CONVERGENCE_THRESHOLD,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

impl RunConfig {
    /// Apply one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "task.size" => self.task.size = parse_num(key, v)?,
            "task.seed" => self.task.seed = parse_num(key, v)?,
            "task.noise_sigma" => self.task.noise_sigma = parse_num(key, v)?,
            "train.count" => self.train_count = parse_num(key, v)?,
            "val.count" => self.val_count = parse_num(key, v)?,
            "loss.kind" => self.loss.kind = LossChoice::parse(v)?,
            "loss.gamma" => self.loss.gamma = parse_num(key, v)?,
            "loss.epsilon" => self.loss.epsilon = parse_num(key, v)?,
            "sched.mode" => {
                self.loss.mode = match v {
                    "equal" => CombineMode::Equal,
                    "gradual" => CombineMode::Gradual,
                    _ => {
                        return Err(Error::Config(format!(
                            "sched.mode: expected equal or gradual, got '{v}'"
                        )))
                    }
                }
            }
            "sched.alpha_end" => self.loss.alpha_end = parse_num(key, v)?,
            "opt.lr" => self.opt.lr = parse_num(key, v)?,
            "opt.beta1" => self.opt.beta1 = parse_num(key, v)?,
            "opt.beta2" => self.opt.beta2 = parse_num(key, v)?,
            "opt.eps" => self.opt.eps = parse_num(key, v)?,
            "run.epochs" => self.epochs = parse_num(key, v)?,
            "run.batch" => self.batch = parse_num(key, v)?,
            "run.seed" => self.seed = parse_num(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Parse `key=value` lines over the defaults. Blank lines and lines
    /// starting with `#` are ignored; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        if self.train_count == 0 || self.val_count == 0 {
            return Err(Error::Config(
                "train.count and val.count must be positive".to_string(),
            ));
        }
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::Config(
                "run.epochs and run.batch must be positive".to_string(),
            ));
        }
        if !(self.opt.lr > 0.0 && self.opt.eps > 0.0)
            || !(0.0..1.0).contains(&self.opt.beta1)
            || !(0.0..1.0).contains(&self.opt.beta2)
        {
            return Err(Error::Config("invalid optimizer constants".to_string()));
        }
        if self.loss.kind.combined() && self.loss.mode == CombineMode::Gradual && self.epochs < 2 {
            return Err(Error::Config(
                "a gradual schedule needs at least 2 epochs".to_string(),
            ));
        }
        Ok(())
    }

    /// Resolved settings in the same `key=value` form accepted by [`parse`](Self::parse).
    pub fn to_text(&self) -> String {
        let mode = match self.loss.mode {
            CombineMode::Equal => "equal",
            CombineMode::Gradual => "gradual",
        };
        [
            format!("task.size={}", self.task.size),
            format!("task.seed={}", self.task.seed),
            format!("task.noise_sigma={}", self.task.noise_sigma),
            format!("train.count={}", self.train_count),
            format!("val.count={}", self.val_count),
            format!("loss.kind={}", self.loss.kind.name()),
            format!("loss.gamma={}", self.loss.gamma),
            format!("loss.epsilon={}", self.loss.epsilon),
            format!("sched.mode={mode}"),
            format!("sched.alpha_end={}", self.loss.alpha_end),
            format!("opt.lr={}", self.opt.lr),
            format!("opt.beta1={}", self.opt.beta1),
            format!("opt.beta2={}", self.opt.beta2),
            format!("opt.eps={}", self.opt.eps),
            format!("run.epochs={}", self.epochs),
            format!("run.batch={}", self.batch),
            format!("run.seed={}", self.seed),
        ]
        .join("\n")
            + "\n"
    }

    /// Weight schedule of a combined loss; `None` for single losses.
    pub fn schedule(&self) -> Option<CombinedSchedule> {
        let first = match self.loss.kind {
            LossChoice::DiceRw => LossKind::Dice {
                epsilon: self.loss.epsilon,
            },
            LossChoice::CeRw => LossKind::CrossEntropy,
            _ => return None,
        };
        Some(CombinedSchedule {
            alpha_end: self.loss.alpha_end,
            ..CombinedSchedule::new(
                first,
                LossKind::Rw(Normalization::PerNK),
                self.loss.mode,
                self.epochs,
            )
        })
    }

    fn single(&self) -> LossKind {
        match self.loss.kind {
            LossChoice::Rrw | LossChoice::RwBoundary => LossKind::Rw(Normalization::PerNK),
            LossChoice::Dice => LossKind::Dice {
                epsilon: self.loss.epsilon,
            },
            LossChoice::Focal => LossKind::Focal {
                gamma: self.loss.gamma,
                alpha: 1.0,
            },
            LossChoice::WceRrw => LossKind::WeightedCe,
            LossChoice::DiceRw | LossChoice::CeRw => LossKind::Rw(Normalization::PerNK),
        }
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// Ground-truth encodings of one training image.
struct Prepared {
    onehot: OneHot,
    map: Option<RwMap>,
    weights: Option<RwMap>,
    /// The map satisfies the rectification principle.
    rectified: bool,
}

fn prepare(sample: &Sample, kind: LossChoice) -> Result<Prepared> {
    let onehot = one_hot(&sample.labels);
    let (map, weights, rectified) = match kind {
        LossChoice::Rrw => (Some(rrw_map(&sample.labels)?), None, true),
        LossChoice::RwBoundary | LossChoice::DiceRw | LossChoice::CeRw => {
            (Some(boundary_map(&sample.labels)?), None, false)
        }
        LossChoice::WceRrw => {
            let w = rrw_map(&sample.labels)?.map_values(|_, _, v| v.abs())?;
            (None, Some(w), false)
        }
        LossChoice::Dice | LossChoice::Focal => (None, None, false),
    };
    Ok(Prepared {
        onehot,
        map,
        weights,
        rectified,
    })
}

/// Gradient-sign spot check taken during training.
#[derive(Clone, Debug, PartialEq)]
pub struct SignCheck {
    pub epoch: usize,
    pub pixels: usize,
    /// Pixels whose gradient had two or more negative components.
    pub multi_negative: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub loss: String,
    /// `dice[epoch][class]`: validation Dice averaged over images.
    pub dice: Vec<Vec<f64>>,
    /// Mean foreground Dice after the last epoch.
    pub final_dice: f64,
    pub converged: bool,
    /// Why the run stopped early, if it did.
    pub diverged: Option<String>,
    pub sign_checks: Vec<SignCheck>,
    /// Training loss averaged over each epoch's batches.
    pub train_loss: Vec<f64>,
}

impl RunRecord {
    pub fn run_id(&self) -> String {
        format!("{}-s{}", self.loss.replace('/', "-"), self.seed)
    }
}

/// Per-class validation Dice averaged over images.
pub fn validation_dice(net: &TinyNet, val: &[Sample]) -> Result<Vec<f64>> {
    let k = net.num_classes();
    let mut sums = vec![0.0; k];
    for s in val {
        let dims = s.labels.dims();
        let logits = net.forward(&s.image, dims[0], dims[1])?;
        let pred = softmax(&logits).argmax(k)?;
        for (c, total) in sums.iter_mut().enumerate() {
            *total += dice(
                &BinaryMask::from_labels(&pred, c),
                &BinaryMask::from_labels(&s.labels, c),
            )?;
        }
    }
    Ok(sums.into_iter().map(|v| v / val.len() as f64).collect())
}

fn mean_foreground(per_class: &[f64]) -> f64 {
    per_class[1..].iter().sum::<f64>() / (per_class.len() - 1) as f64
}

/// Epochs at which sign checks are sampled (first batch only).
fn sign_check_epoch(epoch: usize, epochs: usize) -> bool {
    epoch.is_multiple_of(5) || epoch + 1 == epochs
}

/// Train a fresh network on `data` and record validation Dice after every
/// epoch. Non-finite losses or gradients end the run early and are recorded,
/// not raised.
pub fn train_run(cfg: &RunConfig, data: &Dataset) -> Result<RunRecord> {
    cfg.validate()?;
    let k = cfg.task.num_classes;
    let prepared: Vec<Prepared> = data
        .train
        .iter()
        .map(|s| prepare(s, cfg.loss.kind))
        .collect::<Result<_>>()?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);

    let mut net = TinyNet::new(k, &mut init_rng)?;
    let mut adam = AdamState::new(net.num_params(), &cfg.opt);
    let schedule = cfg.schedule();
    let single = cfg.single();

    let mut record = RunRecord {
        seed: cfg.seed,
        loss: cfg.loss.label(),
        dice: Vec::with_capacity(cfg.epochs),
        final_dice: 0.0,
        converged: false,
        diverged: None,
        sign_checks: Vec::new(),
        train_loss: Vec::with_capacity(cfg.epochs),
    };
    let mut grads = vec![0.0; net.num_params()];
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            grads.fill(0.0);
            let scale = 1.0 / chunk.len() as f64;
            let mut batch_loss = 0.0;
            for &idx in chunk {
                let sample = &data.train[idx];
                let prep = &prepared[idx];
                let dims = sample.labels.dims();
                let acts = net.forward_cached(&sample.image, dims[0], dims[1])?;
                let logits = net.logits(&acts);
                let probs = softmax_values(logits.geometry().clone(), k, logits.values());
                let target = Target {
                    onehot: &prep.onehot,
                    map: prep.map.as_ref(),
                    weights: prep.weights.as_ref(),
                };
                let (value, grad): (LossValue, GradField) = match &schedule {
                    Some(s) => combined_loss(s, epoch, &probs, &target)?,
                    None => evaluate(&single, &probs, &target)?,
                };
                if !value.value.is_finite() {
                    record.diverged = Some(format!("non-finite loss at epoch {epoch}"));
                    break 'epochs;
                }
                if prep.rectified && b == 0 && sign_check_epoch(epoch, cfg.epochs) {
                    let report = negcount(&probs, prep.map.as_ref().expect("map present"))?;
                    record.sign_checks.push(SignCheck {
                        epoch,
                        pixels: report.counts.len(),
                        multi_negative: report.multi_negative_pixels(),
                    });
                }
                batch_loss += value.value * scale;
                let grad = Field::from_parts_unchecked(
                    grad.geometry().clone(),
                    k,
                    grad.values().iter().map(|v| v * scale).collect(),
                );
                net.backward(&acts, &grad, &mut grads)?;
            }
            if let Err(e) = adam.update(&mut net.params, &grads) {
                record.diverged = Some(e.to_string());
                break 'epochs;
            }
            epoch_loss += batch_loss;
            batches += 1;
        }
        record.train_loss.push(epoch_loss / batches as f64);
        record.dice.push(validation_dice(&net, &data.val)?);
        log::debug!(
            "{} epoch {epoch}: loss {:.5} fg dice {:.4}",
            record.run_id(),
            epoch_loss / batches as f64,
            mean_foreground(record.dice.last().unwrap())
        );
    }

    if record.diverged.is_some() {
        // keep the series length fixed; a diverged run scores zero
        while record.dice.len() < cfg.epochs {
            record.dice.push(vec![0.0; k]);
        }
        while record.train_loss.len() < cfg.epochs {
            record.train_loss.push(f64::NAN);
        }
        record.final_dice = 0.0;
    } else {
        record.final_dice = mean_foreground(record.dice.last().expect("at least one epoch"));
    }
    record.converged = record.diverged.is_none() && record.final_dice >= cfg.threshold;
    Ok(record)
}

/// Run `base` once per seed, in parallel, returning records in seed order.
pub fn train_seeds(base: &RunConfig, seeds: &[u64]) -> Result<Vec<RunRecord>> {
    let data = generate_task(&base.task, base.train_count, base.val_count)?;
    seeds
        .par_iter()
        .map(|&seed| {
            let cfg = RunConfig {
                seed,
                ..base.clone()
            };
            train_run(&cfg, &data)
        })
        .collect()
}

/// Empirical CDF of final Dice at each level of `grid`.
pub fn convergence_cdf(records: &[RunRecord], grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if records.is_empty() {
        return Err(Error::Domain("no run records".to_string()));
    }
    let finals: Vec<f64> = records.iter().map(|r| r.final_dice).collect();
    final_dice_cdf(&finals, grid)
}

/// Same table from bare final-Dice values, e.g. read back from summary CSVs.
pub fn final_dice_cdf(finals: &[f64], grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    grid.iter().map(|&d| Ok((d, cdf(finals, d)?))).collect()
}

/// Dice levels `0, 1/steps, ..., 1`.
pub fn dice_grid(steps: usize) -> Vec<f64> {
    (0..=steps).map(|j| j as f64 / steps as f64).collect()
}

pub fn cdf_csv(table: &[(f64, f64)]) -> String {
    let mut out = String::from("dice,cdf\n");
    for (d, c) in table {
        out.push_str(&format!("{d},{c}\n"));
    }
    out
}

/// Columns `run_id, epoch, class, dice`.
pub fn records_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("run_id,epoch,class,dice\n");
    for r in records {
        let id = r.run_id();
        for (e, per_class) in r.dice.iter().enumerate() {
            for (c, d) in per_class.iter().enumerate() {
                out.push_str(&format!("{id},{e},{c},{d}\n"));
            }
        }
    }
    out
}

/// Columns `run_id, final_dice, converged`.
pub fn summary_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("run_id,final_dice,converged\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{}\n",
            r.run_id(),
            r.final_dice,
            r.converged
        ));
    }
    out
}

/// Max relative error between the analytic parameter gradient of
/// `rw_loss(softmax(net(image)), rrw_map)` and central finite differences,
/// over `samples` randomly chosen parameters.
pub fn end_to_end_gradcheck(seed: u64, size: usize, samples: usize, step: f64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = 3;
    let mut net = TinyNet::he(k, &mut rng)?;
    for p in net.params.iter_mut() {
        // nonzero biases exercise every term
        if *p == 0.0 {
            *p = rng.gen_range(-0.1..0.1);
        }
    }
    let image: Vec<f64> = (0..size * size).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let labels: Vec<u8> = (0..size * size)
        .map(|i| ((i % size) * k / size) as u8)
        .collect();
    let grid = LabelGrid::new(Geometry::unit(vec![size, size])?, labels, k)?;
    let z = rrw_map(&grid)?;
    let loss_of = |net: &TinyNet| -> Result<f64> {
        let logits = net.forward(&image, size, size)?;
        Ok(crate::loss::rw_loss(&softmax(&logits), &z, Normalization::PerNK)?.value)
    };

    let acts = net.forward_cached(&image, size, size)?;
    let probs = softmax(&net.logits(&acts));
    let g = crate::loss::rw_loss_grad(&probs, &z, Normalization::PerNK)?;
    let mut analytic = vec![0.0; net.num_params()];
    net.backward(&acts, &g, &mut analytic)?;

    let mut idx: Vec<usize> = (0..net.num_params()).collect();
    idx.shuffle(&mut rng);
    idx.truncate(samples.min(net.num_params()));
    let mut a = Vec::with_capacity(idx.len());
    let mut n = Vec::with_capacity(idx.len());
    for &j in &idx {
        let orig = net.params[j];
        net.params[j] = orig + step;
        let up = loss_of(&net)?;
        net.params[j] = orig - step;
        let down = loss_of(&net)?;
        net.params[j] = orig;
        a.push(analytic[j]);
        n.push((up - down) / (2.0 * step));
    }
    Ok(relative_error(&a, &n))
}

/// Max relative error of a loss-side gradient against finite differences on
/// a random instance with `n` pixels and `k` classes.
pub fn loss_gradcheck(kind: LossChoice, seed: u64, n: usize, k: usize, step: f64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geom = Geometry::unit(vec![1, n])?;
    let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..k) as u8).collect();
    // every class present, none covering the grid
    for (c, l) in labels.iter_mut().take(k).enumerate() {
        *l = c as u8;
    }
    let grid = LabelGrid::new(geom.clone(), labels, k)?;
    let logits = LogitField::new(
        geom,
        k,
        (0..n * k).map(|_| rng.gen_range(-3.0..3.0)).collect(),
    )?;
    let sample = Sample {
        image: Vec::new(),
        labels: grid,
    };
    let prep = prepare(&sample, kind)?;
    let cfg = RunConfig {
        loss: LossConfig {
            kind,
            mode: CombineMode::Gradual,
            ..LossConfig::default()
        },
        epochs: 4,
        ..RunConfig::default()
    };
    let target = Target {
        onehot: &prep.onehot,
        map: prep.map.as_ref(),
        weights: prep.weights.as_ref(),
    };
    let eval = |l: &LogitField| -> Result<(LossValue, GradField)> {
        let p = softmax(l);
        match cfg.schedule() {
            Some(s) => combined_loss(&s, 1, &p, &target),
            None => evaluate(&cfg.single(), &p, &target),
        }
    };
    let (_, analytic) = eval(&logits)?;
    let numeric = finite_difference_grad(&logits, step, |l| {
        eval(l).map(|(v, _)| v.value).unwrap_or(f64::NAN)
    });
    Ok(relative_error(analytic.values(), &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_net_gives_uniform_softmax() {
        let net = TinyNet::zeros(4).unwrap();
        let img: Vec<f64> = (0..25).map(|i| i as f64).collect();
        let p = softmax(&net.forward(&img, 5, 5).unwrap());
        assert!(p.values().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn parameter_count() {
        let net = TinyNet::zeros(4).unwrap();
        let expected = (8 * 9 + 8) + (16 * 8 * 9 + 16) + (8 * 16 * 9 + 8) + (4 * 8 + 4);
        assert_eq!(net.num_params(), expected);
    }

    #[test]
    fn affine_network_is_additive() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = TinyNet::he(3, &mut rng).unwrap();
        net.set_relu(false);
        let a: Vec<f64> = (0..42).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..42).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let (fa, fb, fab) = (
            net.forward(&a, 6, 7).unwrap(),
            net.forward(&b, 6, 7).unwrap(),
            net.forward(&ab, 6, 7).unwrap(),
        );
        for ((x, y), z) in fa.values().iter().zip(fb.values()).zip(fab.values()) {
            assert!((x + y - z).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let err = end_to_end_gradcheck(7, 6, 200, 1e-5).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut s = AdamState::new(3, &OptimizerConfig::default());
        let mut p = vec![1.0, -2.0, 0.5];
        s.update(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn adam_first_step_by_hand() {
        let cfg = OptimizerConfig::default();
        let mut s = AdamState::new(1, &cfg);
        let mut p = vec![0.0];
        s.update(&mut p, &[0.3]).unwrap();
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
        let expected = -cfg.lr * 0.3 / (0.3 + cfg.eps);
        assert!((p[0] - expected).abs() < 1e-18);
    }

    #[test]
    fn adam_constant_gradient_step_approaches_lr() {
        let cfg = OptimizerConfig::default();
        let mut s = AdamState::new(1, &cfg);
        let mut p = vec![0.0];
        let mut prev = 0.0;
        for _ in 0..2000 {
            s.update(&mut p, &[-4.0]).unwrap();
            let step = p[0] - prev;
            prev = p[0];
            assert!(step > 0.0);
            assert!((step - cfg.lr).abs() < 1e-6 * cfg.lr.max(1.0) + 1e-9);
        }
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut s = AdamState::new(2, &OptimizerConfig::default());
        let mut p = vec![0.0; 2];
        assert!(matches!(
            s.update(&mut p, &[1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn task_is_deterministic_and_valid() {
        let task = SyntheticTask::default();
        let a = generate_task(&task, 4, 2).unwrap();
        let b = generate_task(&task, 4, 2).unwrap();
        assert_eq!(a, b);
        for s in a.train.iter().chain(&a.val) {
            let counts = s.labels.class_counts();
            assert!(counts.iter().all(|&c| c > 0));
            assert!(counts[1..].iter().all(|&c| (c as f64) < 0.1 * 4096.0));
            let mean = s.image.iter().sum::<f64>() / 4096.0;
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn oversized_rings_rejected() {
        let task = SyntheticTask {
            size: 32,
            ..SyntheticTask::default()
        };
        assert!(matches!(generate_task(&task, 1, 1), Err(Error::Config(_))));
    }

    #[test]
    fn noiseless_images_are_threshold_separable() {
        let task = SyntheticTask {
            noise_sigma: 0.0,
            ..SyntheticTask::default()
        };
        let data = generate_task(&task, 3, 0).unwrap();
        for s in &data.train {
            // intensities are an increasing affine image of the class means
            let mut level = [f64::NAN; 4];
            for (&l, &v) in s.labels.labels().iter().zip(&s.image) {
                level[l as usize] = v;
            }
            let mut by_level: Vec<usize> = (0..4).collect();
            by_level.sort_by(|&a, &b| level[a].total_cmp(&level[b]));
            let cuts: Vec<f64> = by_level
                .windows(2)
                .map(|w| 0.5 * (level[w[0]] + level[w[1]]))
                .collect();
            let pred: Vec<u8> = s
                .image
                .iter()
                .map(|v| by_level[cuts.iter().filter(|&&c| *v > c).count()] as u8)
                .collect();
            assert_eq!(pred, s.labels.labels());
        }
    }

    #[test]
    fn config_round_trip_and_errors() {
        let text = "# toy\nloss.kind=ce+rw\nsched.mode=gradual\nrun.epochs=7\nopt.lr=0.001\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.loss.kind, LossChoice::CeRw);
        assert_eq!(cfg.loss.mode, CombineMode::Gradual);
        assert_eq!(cfg.epochs, 7);
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert!(RunConfig::parse("bogus.key=1").is_err());
        assert!(RunConfig::parse("loss.kind=mse").is_err());
        assert!(RunConfig::parse("run.epochs").is_err());
        assert!(RunConfig::parse("run.epochs=1\nloss.kind=dice+rw\nsched.mode=gradual").is_err());
    }

    #[test]
    fn loss_side_gradients_match() {
        for kind in LossChoice::ALL {
            let err = loss_gradcheck(kind, 3, 12, 3, 1e-6).unwrap();
            assert!(err < 1e-6, "{} error {err}", kind.name());
        }
    }

    #[test]
    fn cdf_table() {
        let rec = |d: f64| RunRecord {
            seed: 0,
            loss: "rrw".into(),
            dice: vec![],
            final_dice: d,
            converged: d >= 0.85,
            diverged: None,
            sign_checks: vec![],
            train_loss: vec![],
        };
        let t = convergence_cdf(&[rec(0.5), rec(0.9)], &[0.6]).unwrap();
        assert_eq!(t, vec![(0.6, 0.5)]);
        let t = convergence_cdf(&[rec(0.91), rec(0.95)], &[0.89]).unwrap();
        assert_eq!(t[0].1, 0.0);
        assert!(convergence_cdf(&[], &[0.5]).is_err());
    }

    #[test]
    fn short_run_is_deterministic() {
        let cfg = RunConfig {
            train_count: 4,
            val_count: 2,
            epochs: 2,
            ..RunConfig::default()
        };
        let data = generate_task(&cfg.task, 4, 2).unwrap();
        let a = train_run(&cfg, &data).unwrap();
        let b = train_run(&cfg, &data).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dice.len(), 2);
        assert!(a.sign_checks.iter().all(|c| c.multi_negative == 0));
    }
}
