//! Loss values and analytic gradients with respect to logits.
//!
//! Every gradient returned here is `dL/dphi`, the derivative with respect to
//! the unnormalized scores, already propagated through the softmax. Sums run
//! in a fixed pixel-then-class order so results are bit-reproducible.

use crate::error::{Error, Result};
use crate::grid::{Field, GradField, LogitField, OneHot, ProbField, RwMap};

/// Lower bound applied to probabilities inside logarithms.
pub const LOG_CLAMP: f64 = 1e-12;

/// Default smoothing term of the soft Dice loss.
pub const DICE_EPSILON: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    None,
    PerNK,
    PerN,
}

impl Normalization {
    pub fn factor(self, n: usize, k: usize) -> f64 {
        match self {
            Normalization::None => 1.0,
            Normalization::PerNK => 1.0 / (n * k) as f64,
            Normalization::PerN => 1.0 / n as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub normalization: Normalization,
    /// Per-class contributions, when the loss decomposes over classes.
    pub components: Option<Vec<f64>>,
}

fn softmax_row(phi: &[f64], out: &mut [f64]) {
    let max = phi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(phi) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &LogitField) -> ProbField {
    softmax_values(
        logits.geometry().clone(),
        logits.channels(),
        logits.values(),
    )
}

pub(crate) fn softmax_values(geom: crate::grid::Geometry, k: usize, logits: &[f64]) -> ProbField {
    let mut values = vec![0.0; logits.len()];
    for (phi, out) in logits.chunks_exact(k).zip(values.chunks_exact_mut(k)) {
        softmax_row(phi, out);
    }
    Field::from_parts_unchecked(geom, k, values)
}

/// Softmax of a single score vector.
pub fn softmax_vector(phi: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; phi.len()];
    softmax_row(phi, &mut out);
    out
}

/// `J[k][l] = d yhat_l / d phi_k`: `yhat_k (1 - yhat_k)` on the diagonal,
/// `-yhat_k yhat_l` elsewhere.
pub fn softmax_jacobian(p: &[f64]) -> Vec<Vec<f64>> {
    (0..p.len())
        .map(|k| {
            (0..p.len())
                .map(|l| {
                    if k == l {
                        p[k] * (1.0 - p[k])
                    } else {
                        -p[k] * p[l]
                    }
                })
                .collect()
        })
        .collect()
}

/// Propagate `dL/dyhat` through the softmax:
/// `dL/dphi_k = yhat_k (g_k - sum_l yhat_l g_l)`.
pub fn softmax_backward(probs: &ProbField, grad_probs: &[f64]) -> GradField {
    let k = probs.channels();
    let mut out = vec![0.0; grad_probs.len()];
    for ((p, g), o) in probs
        .pixels()
        .zip(grad_probs.chunks_exact(k))
        .zip(out.chunks_exact_mut(k))
    {
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for l in 0..k {
            o[l] = p[l] * (g[l] - dot);
        }
    }
    Field::from_parts_unchecked(probs.geometry().clone(), k, out)
}

/// Region-wise loss: `sum_i yhat_i . z_i`, scaled by `normalization`.
/// Components hold the per-class sums `sum_i yhat_ik z_ik`.
pub fn rw_loss(probs: &ProbField, z: &RwMap, normalization: Normalization) -> Result<LossValue> {
    probs.check_same_shape(z)?;
    let k = probs.channels();
    let scale = normalization.factor(probs.len(), k);
    let mut per_class = vec![0.0; k];
    for (p, zi) in probs.pixels().zip(z.pixels()) {
        for l in 0..k {
            per_class[l] += p[l] * zi[l];
        }
    }
    let value = per_class.iter().sum::<f64>() * scale;
    Ok(LossValue {
        value,
        normalization,
        components: Some(per_class.into_iter().map(|c| c * scale).collect()),
    })
}

/// Gradient of [`rw_loss`]:
/// `dL/dphi_ik = sum_{l != k} (yhat_ik yhat_il) (z_ik - z_il)`.
pub fn rw_loss_grad(
    probs: &ProbField,
    z: &RwMap,
    normalization: Normalization,
) -> Result<GradField> {
    probs.check_same_shape(z)?;
    let k = probs.channels();
    let scale = normalization.factor(probs.len(), k);
    let mut out = vec![0.0; probs.values().len()];
    for ((p, zi), o) in probs.pixels().zip(z.pixels()).zip(out.chunks_exact_mut(k)) {
        rw_pixel_grad(p, zi, o);
        if scale != 1.0 {
            o.iter_mut().for_each(|v| *v *= scale);
        }
    }
    Ok(Field::from_parts_unchecked(
        probs.geometry().clone(),
        k,
        out,
    ))
}

/// Unnormalized region-wise gradient of a single pixel.
pub fn rw_pixel_grad(p: &[f64], z: &[f64], out: &mut [f64]) {
    let k = p.len();
    for a in 0..k {
        let mut g = 0.0;
        for b in 0..k {
            if b != a {
                g += (p[a] * p[b]) * (z[a] - z[b]);
            }
        }
        out[a] = g;
    }
}

/// Squared-probability region-wise loss: `(1/N) sum_i sum_k yhat_ik^2 z_ik`.
pub fn rw2_loss(probs: &ProbField, z: &RwMap) -> Result<LossValue> {
    probs.check_same_shape(z)?;
    let k = probs.channels();
    let scale = Normalization::PerN.factor(probs.len(), k);
    let mut per_class = vec![0.0; k];
    for (p, zi) in probs.pixels().zip(z.pixels()) {
        for l in 0..k {
            per_class[l] += p[l] * p[l] * zi[l];
        }
    }
    Ok(LossValue {
        value: per_class.iter().sum::<f64>() * scale,
        normalization: Normalization::PerN,
        components: Some(per_class.into_iter().map(|c| c * scale).collect()),
    })
}

pub fn rw2_loss_grad(probs: &ProbField, z: &RwMap) -> Result<GradField> {
    probs.check_same_shape(z)?;
    let scale = 2.0 / probs.len() as f64;
    let dy: Vec<f64> = probs
        .values()
        .iter()
        .zip(z.values())
        .map(|(p, zv)| scale * p * zv)
        .collect();
    Ok(softmax_backward(probs, &dy))
}

fn check_weights(w: &RwMap) -> Result<()> {
    match w.values().iter().position(|&v| v < 0.0) {
        None => Ok(()),
        Some(j) => Err(Error::Domain(format!(
            "cross-entropy weight {j} is negative ({})",
            w.values()[j]
        ))),
    }
}

/// Pixel-weighted cross entropy: `-(1/N) sum_ik w_ik y_ik log yhat_ik`.
pub fn pwce_loss(probs: &ProbField, y: &OneHot, w: &RwMap) -> Result<LossValue> {
    probs.check_same_shape(y)?;
    probs.check_same_shape(w)?;
    check_weights(w)?;
    let k = probs.channels();
    let mut per_class = vec![0.0; k];
    for ((p, yi), wi) in probs.pixels().zip(y.pixels()).zip(w.pixels()) {
        for l in 0..k {
            if yi[l] != 0.0 {
                per_class[l] -= wi[l] * yi[l] * p[l].max(LOG_CLAMP).ln();
            }
        }
    }
    let scale = 1.0 / probs.len() as f64;
    Ok(LossValue {
        value: per_class.iter().sum::<f64>() * scale,
        normalization: Normalization::PerN,
        components: Some(per_class.into_iter().map(|c| c * scale).collect()),
    })
}

/// `dL/dphi_ik = (1/N) (-w_ik y_ik + yhat_ik sum_l w_il y_il)`.
pub fn pwce_grad(probs: &ProbField, y: &OneHot, w: &RwMap) -> Result<GradField> {
    probs.check_same_shape(y)?;
    probs.check_same_shape(w)?;
    check_weights(w)?;
    let k = probs.channels();
    let scale = 1.0 / probs.len() as f64;
    let mut out = vec![0.0; probs.values().len()];
    for (((p, yi), wi), o) in probs
        .pixels()
        .zip(y.pixels())
        .zip(w.pixels())
        .zip(out.chunks_exact_mut(k))
    {
        let wy: f64 = wi.iter().zip(yi).map(|(a, b)| a * b).sum();
        for l in 0..k {
            o[l] = scale * (-wi[l] * yi[l] + p[l] * wy);
        }
    }
    Ok(Field::from_parts_unchecked(
        probs.geometry().clone(),
        k,
        out,
    ))
}

/// Plain cross entropy (unit weights), normalized per pixel.
pub fn cross_entropy_loss(probs: &ProbField, y: &OneHot) -> Result<LossValue> {
    probs.check_same_shape(y)?;
    let mut value = 0.0;
    for (p, yi) in probs.pixels().zip(y.pixels()) {
        for (pl, yl) in p.iter().zip(yi) {
            if *yl != 0.0 {
                value -= yl * pl.max(LOG_CLAMP).ln();
            }
        }
    }
    Ok(LossValue {
        value: value / probs.len() as f64,
        normalization: Normalization::PerN,
        components: None,
    })
}

/// `(yhat - y) / N`.
pub fn cross_entropy_grad(probs: &ProbField, y: &OneHot) -> Result<GradField> {
    probs.check_same_shape(y)?;
    let scale = 1.0 / probs.len() as f64;
    let out = probs
        .values()
        .iter()
        .zip(y.values())
        .map(|(p, t)| scale * (p - t))
        .collect();
    Ok(Field::from_parts_unchecked(
        probs.geometry().clone(),
        probs.channels(),
        out,
    ))
}

struct DiceSums {
    inter: Vec<f64>,
    denom: Vec<f64>,
}

fn dice_sums(probs: &ProbField, y: &OneHot, eps: f64) -> DiceSums {
    let k = probs.channels();
    let mut inter = vec![0.0; k];
    let mut denom = vec![eps; k];
    for (p, yi) in probs.pixels().zip(y.pixels()) {
        for l in 0..k {
            inter[l] += p[l] * yi[l];
            denom[l] += p[l] + yi[l];
        }
    }
    DiceSums { inter, denom }
}

/// Soft Dice loss averaged over all K classes:
/// `1 - (2 sum yhat y + eps) / (sum yhat + sum y + eps)` per class.
pub fn dice_loss(probs: &ProbField, y: &OneHot, eps: f64) -> Result<LossValue> {
    probs.check_same_shape(y)?;
    if !(eps > 0.0) {
        return Err(Error::Domain(format!(
            "dice epsilon must be positive, got {eps}"
        )));
    }
    let k = probs.channels();
    let s = dice_sums(probs, y, eps);
    let per_class: Vec<f64> = (0..k)
        .map(|l| (1.0 - (2.0 * s.inter[l] + eps) / s.denom[l]) / k as f64)
        .collect();
    Ok(LossValue {
        value: per_class.iter().sum(),
        normalization: Normalization::None,
        components: Some(per_class),
    })
}

pub fn dice_loss_grad(probs: &ProbField, y: &OneHot, eps: f64) -> Result<GradField> {
    probs.check_same_shape(y)?;
    if !(eps > 0.0) {
        return Err(Error::Domain(format!(
            "dice epsilon must be positive, got {eps}"
        )));
    }
    let k = probs.channels();
    let s = dice_sums(probs, y, eps);
    let mut dy = vec![0.0; probs.values().len()];
    for (yi, d) in y.pixels().zip(dy.chunks_exact_mut(k)) {
        for l in 0..k {
            let num = 2.0 * s.inter[l] + eps;
            d[l] = -(2.0 * yi[l] * s.denom[l] - num) / (s.denom[l] * s.denom[l]) / k as f64;
        }
    }
    Ok(softmax_backward(probs, &dy))
}

fn true_class(yi: &[f64]) -> usize {
    yi.iter().position(|&v| v == 1.0).unwrap_or(0)
}

fn check_focal(gamma: f64, alpha: f64) -> Result<()> {
    if !(gamma >= 0.0 && gamma.is_finite() && alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!(
            "focal loss needs gamma >= 0 and alpha > 0, got {gamma}, {alpha}"
        )));
    }
    Ok(())
}

/// Focal loss `-(alpha/N) sum_i (1 - p_i)^gamma log p_i` with `p_i` the
/// probability of the true class.
pub fn focal_loss(probs: &ProbField, y: &OneHot, gamma: f64, alpha: f64) -> Result<LossValue> {
    probs.check_same_shape(y)?;
    check_focal(gamma, alpha)?;
    let mut value = 0.0;
    for (p, yi) in probs.pixels().zip(y.pixels()) {
        let pt = p[true_class(yi)];
        value -= (1.0 - pt).powf(gamma) * pt.max(LOG_CLAMP).ln();
    }
    Ok(LossValue {
        value: alpha * value / probs.len() as f64,
        normalization: Normalization::PerN,
        components: None,
    })
}

pub fn focal_grad(probs: &ProbField, y: &OneHot, gamma: f64, alpha: f64) -> Result<GradField> {
    probs.check_same_shape(y)?;
    check_focal(gamma, alpha)?;
    let k = probs.channels();
    let scale = alpha / probs.len() as f64;
    let mut out = vec![0.0; probs.values().len()];
    for ((p, yi), o) in probs.pixels().zip(y.pixels()).zip(out.chunks_exact_mut(k)) {
        let t = true_class(yi);
        let pt = p[t];
        let q = 1.0 - pt;
        // d/dp of -(1-p)^g log p
        let dlog = if pt > LOG_CLAMP { 1.0 / pt } else { 0.0 };
        let dpow = if gamma == 0.0 || q == 0.0 {
            0.0
        } else {
            gamma * q.powf(gamma - 1.0)
        };
        let dp = dpow * pt.max(LOG_CLAMP).ln() - q.powf(gamma) * dlog;
        // dp_t/dphi_l = p_t (delta_tl - p_l)
        for l in 0..k {
            let delta = if l == t { 1.0 } else { 0.0 };
            o[l] = scale * dp * pt * (delta - p[l]);
        }
    }
    Ok(Field::from_parts_unchecked(
        probs.geometry().clone(),
        k,
        out,
    ))
}

/// A single loss term that can be evaluated on a prediction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossKind {
    /// Region-wise loss against the target's map.
    Rw(Normalization),
    /// Squared-probability region-wise loss against the target's map.
    Rw2,
    CrossEntropy,
    /// Pixel-weighted cross entropy with the target's weights.
    WeightedCe,
    Dice {
        epsilon: f64,
    },
    Focal {
        gamma: f64,
        alpha: f64,
    },
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Rw(_) => "rw",
            LossKind::Rw2 => "rw2",
            LossKind::CrossEntropy => "ce",
            LossKind::WeightedCe => "wce",
            LossKind::Dice { .. } => "dice",
            LossKind::Focal { .. } => "focal",
        }
    }
}

/// Ground-truth side of a loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct Target<'a> {
    pub onehot: &'a OneHot,
    pub map: Option<&'a RwMap>,
    pub weights: Option<&'a RwMap>,
}

impl<'a> Target<'a> {
    fn map(&self) -> Result<&'a RwMap> {
        self.map
            .ok_or_else(|| Error::Config("region-wise loss needs a map".to_string()))
    }

    fn weights(&self) -> Result<&'a RwMap> {
        self.weights
            .ok_or_else(|| Error::Config("weighted cross entropy needs weights".to_string()))
    }
}

/// Loss value and logit gradient of one term.
pub fn evaluate(
    kind: &LossKind,
    probs: &ProbField,
    target: &Target,
) -> Result<(LossValue, GradField)> {
    let y = target.onehot;
    Ok(match *kind {
        LossKind::Rw(norm) => {
            let z = target.map()?;
            (rw_loss(probs, z, norm)?, rw_loss_grad(probs, z, norm)?)
        }
        LossKind::Rw2 => {
            let z = target.map()?;
            (rw2_loss(probs, z)?, rw2_loss_grad(probs, z)?)
        }
        LossKind::CrossEntropy => (cross_entropy_loss(probs, y)?, cross_entropy_grad(probs, y)?),
        LossKind::WeightedCe => {
            let w = target.weights()?;
            (pwce_loss(probs, y, w)?, pwce_grad(probs, y, w)?)
        }
        LossKind::Dice { epsilon } => (
            dice_loss(probs, y, epsilon)?,
            dice_loss_grad(probs, y, epsilon)?,
        ),
        LossKind::Focal { gamma, alpha } => (
            focal_loss(probs, y, gamma, alpha)?,
            focal_grad(probs, y, gamma, alpha)?,
        ),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CombineMode {
    /// Unit weight on both partners.
    Equal,
    /// `alpha` on the first partner and `1 - alpha` on the second, with
    /// `alpha` moving linearly from `alpha_start` to `alpha_end`.
    Gradual,
}

/// Two-term loss `w_a L_a + w_b L_b` with epoch-dependent weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CombinedSchedule {
    pub first: LossKind,
    pub second: LossKind,
    pub mode: CombineMode,
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub epochs: usize,
}

impl CombinedSchedule {
    pub fn new(first: LossKind, second: LossKind, mode: CombineMode, epochs: usize) -> Self {
        Self {
            first,
            second,
            mode,
            alpha_start: 1.0,
            alpha_end: 0.01,
            epochs,
        }
    }

    /// `(w_first, w_second)` at `epoch`.
    pub fn weights(&self, epoch: usize) -> Result<(f64, f64)> {
        if epoch >= self.epochs {
            return Err(Error::Domain(format!(
                "epoch {epoch} outside schedule of {} epochs",
                self.epochs
            )));
        }
        match self.mode {
            CombineMode::Equal => Ok((1.0, 1.0)),
            CombineMode::Gradual => {
                if self.epochs < 2 {
                    return Err(Error::Config(
                        "a gradual schedule needs at least 2 epochs".to_string(),
                    ));
                }
                let t = epoch as f64 / (self.epochs - 1) as f64;
                // convex combination hits both endpoints exactly
                let alpha = self.alpha_start * (1.0 - t) + self.alpha_end * t;
                Ok((alpha, 1.0 - alpha))
            }
        }
    }
}

/// Weighted sum of both partners' values and gradients at `epoch`.
pub fn combined_loss(
    schedule: &CombinedSchedule,
    epoch: usize,
    probs: &ProbField,
    target: &Target,
) -> Result<(LossValue, GradField)> {
    let (wa, wb) = schedule.weights(epoch)?;
    let (la, ga) = evaluate(&schedule.first, probs, target)?;
    let (lb, gb) = evaluate(&schedule.second, probs, target)?;
    let grad = ga
        .values()
        .iter()
        .zip(gb.values())
        .map(|(a, b)| wa * a + wb * b)
        .collect();
    Ok((
        LossValue {
            value: wa * la.value + wb * lb.value,
            normalization: Normalization::None,
            components: Some(vec![wa * la.value, wb * lb.value]),
        },
        Field::from_parts_unchecked(probs.geometry().clone(), probs.channels(), grad),
    ))
}

/// Central finite-difference gradient of `f` with respect to every logit.
pub fn finite_difference_grad(
    logits: &LogitField,
    step: f64,
    mut f: impl FnMut(&LogitField) -> f64,
) -> Vec<f64> {
    let mut values = logits.values().to_vec();
    let mut out = Vec::with_capacity(values.len());
    for j in 0..values.len() {
        let orig = values[j];
        values[j] = orig + step;
        let up = f(&Field::from_parts_unchecked(
            logits.geometry().clone(),
            logits.channels(),
            values.clone(),
        ));
        values[j] = orig - step;
        let down = f(&Field::from_parts_unchecked(
            logits.geometry().clone(),
            logits.channels(),
            values.clone(),
        ));
        values[j] = orig;
        out.push((up - down) / (2.0 * step));
    }
    out
}

/// Relative error between the analytic gradient of `kind` and central
/// finite differences at `logits`.
pub fn check_gradient(
    kind: &LossKind,
    logits: &LogitField,
    target: &Target,
    step: f64,
) -> Result<f64> {
    let (_, analytic) = evaluate(kind, &softmax(logits), target)?;
    let numeric = finite_difference_grad(logits, step, |l| {
        evaluate(kind, &softmax(l), target)
            .map(|(v, _)| v.value)
            .unwrap_or(f64::NAN)
    });
    Ok(relative_error(analytic.values(), &numeric))
}

/// Norm-wise relative error `max_j |a_j - b_j| / max_j max(|a_j|, |b_j|)`.
/// Two all-zero vectors have error 0.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a
        .iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
