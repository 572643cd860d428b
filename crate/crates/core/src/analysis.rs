//! Gradient-sign diagnostics and executable equivalence checks.
//!
//! [`simplex_sweep`] evaluates the per-pixel region-wise gradient on a
//! regular barycentric grid of the probability simplex; [`negcount`] counts
//! negative gradient components pixel by pixel. The `verify_prop*` functions
//! evaluate several published binary losses in their original form and
//! compare them with the region-wise formulation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{Geometry, LabelGrid, OneHot, ProbField, RwMap};
use crate::loss::{rw2_loss, rw_loss, rw_pixel_grad, softmax_vector, Normalization};
use crate::rwmaps::{ac_map, boundary_map, cao_map, hd_map};

/// A component counts as negative when it is below `-NEGATIVE_TOL`.
pub const NEGATIVE_TOL: f64 = 1e-12;

/// Points per simplex edge used when none is given.
pub const DEFAULT_RESOLUTION: usize = 400;

/// Allowed discrepancy per pixel in the proposition checks.
pub const PROP_TOL_PER_PIXEL: f64 = 1e-12;

fn count_negative(g: &[f64]) -> usize {
    g.iter().filter(|&&v| v < -NEGATIVE_TOL).count()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimplexSample {
    pub probs: Vec<f64>,
    pub grad: Vec<f64>,
    pub neg_count: usize,
    /// All coordinates strictly positive.
    pub interior: bool,
}

#[derive(Clone, Debug)]
pub struct SimplexSweep {
    pub k: usize,
    pub resolution: usize,
    pub samples: Vec<SimplexSample>,
}

impl SimplexSweep {
    pub fn interior_count(&self) -> usize {
        self.samples.iter().filter(|s| s.interior).count()
    }

    /// Interior points whose gradient has two or more negative components.
    pub fn multi_negative_count(&self) -> usize {
        self.samples
            .iter()
            .filter(|s| s.interior && s.neg_count >= 2)
            .count()
    }

    pub fn multi_negative_fraction(&self) -> f64 {
        let n = self.interior_count();
        if n == 0 {
            0.0
        } else {
            self.multi_negative_count() as f64 / n as f64
        }
    }

    /// Sample with the smallest value of gradient component `k`.
    pub fn argmin_component(&self, k: usize) -> Option<&SimplexSample> {
        self.samples
            .iter()
            .min_by(|a, b| a.grad[k].total_cmp(&b.grad[k]))
    }

    /// Columns `p1..pK, g1..gK, neg_count`.
    pub fn to_csv(&self) -> String {
        let mut out = csv_header(self.k);
        for s in &self.samples {
            push_csv_row(&mut out, &s.probs, &s.grad, s.neg_count);
        }
        out
    }
}

fn csv_header(k: usize) -> String {
    let mut cols: Vec<String> = (1..=k).map(|j| format!("p{j}")).collect();
    cols.extend((1..=k).map(|j| format!("g{j}")));
    cols.push("neg_count".to_string());
    cols.join(",") + "\n"
}

fn push_csv_row(out: &mut String, p: &[f64], g: &[f64], count: usize) {
    for v in p.iter().chain(g) {
        out.push_str(&v.to_string());
        out.push(',');
    }
    out.push_str(&count.to_string());
    out.push('\n');
}

/// Every composition of `total` into `k` nonnegative parts, in lexicographic
/// order.
fn compositions(k: usize, total: usize, mut visit: impl FnMut(&[usize])) {
    fn rec(parts: &mut Vec<usize>, k: usize, left: usize, visit: &mut dyn FnMut(&[usize])) {
        if parts.len() == k - 1 {
            parts.push(left);
            visit(parts);
            parts.pop();
            return;
        }
        for a in 0..=left {
            parts.push(a);
            rec(parts, k, left - a, visit);
            parts.pop();
        }
    }
    let mut parts = Vec::with_capacity(k);
    rec(&mut parts, k, total, &mut visit);
}

/// Unnormalized region-wise gradient at every point of the barycentric grid
/// with `resolution` steps per edge.
pub fn simplex_sweep(z: &[f64], resolution: usize) -> Result<SimplexSweep> {
    let k = z.len();
    if k < 2 {
        return Err(Error::Domain(format!(
            "simplex sweep needs K >= 2, got {k}"
        )));
    }
    if resolution < 2 {
        return Err(Error::Domain(format!(
            "simplex resolution must be >= 2, got {resolution}"
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(
            "map vector has a non-finite entry".to_string(),
        ));
    }
    let mut samples = Vec::new();
    let r = resolution as f64;
    compositions(k, resolution, |parts| {
        let probs: Vec<f64> = parts.iter().map(|&a| a as f64 / r).collect();
        let mut grad = vec![0.0; k];
        rw_pixel_grad(&probs, z, &mut grad);
        samples.push(SimplexSample {
            neg_count: count_negative(&grad),
            interior: parts.iter().all(|&a| a > 0),
            probs,
            grad,
        });
    });
    Ok(SimplexSweep {
        k,
        resolution,
        samples,
    })
}

/// Per-pixel count of negative region-wise gradient components.
#[derive(Clone, Debug)]
pub struct SignReport {
    pub geometry: Geometry,
    pub k: usize,
    pub counts: Vec<usize>,
    /// `histogram[c]` is the number of pixels with `c` negative components.
    pub histogram: Vec<usize>,
    probs: Vec<f64>,
    grads: Vec<f64>,
}

impl SignReport {
    pub fn multi_negative_pixels(&self) -> usize {
        self.histogram.iter().skip(2).sum()
    }

    pub fn multi_negative_fraction(&self) -> f64 {
        self.multi_negative_pixels() as f64 / self.counts.len() as f64
    }

    /// Counts as a label grid with `K + 1` classes, for visualization.
    pub fn to_label_grid(&self) -> Result<LabelGrid> {
        LabelGrid::new(
            self.geometry.clone(),
            self.counts.iter().map(|&c| c as u8).collect(),
            self.k + 1,
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = csv_header(self.k);
        for ((p, g), &c) in self
            .probs
            .chunks_exact(self.k)
            .zip(self.grads.chunks_exact(self.k))
            .zip(&self.counts)
        {
            push_csv_row(&mut out, p, g, c);
        }
        out
    }
}

pub fn negcount(probs: &ProbField, z: &RwMap) -> Result<SignReport> {
    probs.check_same_shape(z)?;
    let k = probs.channels();
    let mut grads = vec![0.0; probs.values().len()];
    let mut counts = Vec::with_capacity(probs.len());
    let mut histogram = vec![0; k + 1];
    for ((p, zi), g) in probs
        .pixels()
        .zip(z.pixels())
        .zip(grads.chunks_exact_mut(k))
    {
        rw_pixel_grad(p, zi, g);
        let c = count_negative(g);
        histogram[c] += 1;
        counts.push(c);
    }
    Ok(SignReport {
        geometry: probs.geometry().clone(),
        k,
        counts,
        histogram,
        probs: probs.values().to_vec(),
        grads,
    })
}

/// A random two-class problem: ground truth plus a softmax prediction.
/// Class 0 is background and class 1 foreground.
#[derive(Clone, Debug)]
pub struct BinaryInstance {
    pub grid: LabelGrid,
    pub probs: ProbField,
    /// Exponent for the distance-transform loss check.
    pub alpha: f64,
    /// Weights for the plane-value map check.
    pub cao: (f64, f64),
}

impl BinaryInstance {
    pub fn random(rng: &mut impl Rng) -> Self {
        let dims: Vec<usize> = if rng.gen_bool(0.25) {
            (0..3).map(|_| rng.gen_range(1..=8)).collect()
        } else {
            (0..2).map(|_| rng.gen_range(1..=16)).collect()
        };
        let spacing = dims.iter().map(|_| rng.gen_range(0.3..3.0)).collect();
        let geom = Geometry::new(dims, spacing).expect("valid random geometry");
        let n = geom.len();
        let labels = if rng.gen_bool(0.03) {
            vec![0u8; n]
        } else {
            let p = rng.gen_range(0.1..0.9);
            (0..n).map(|_| u8::from(rng.gen_bool(p))).collect()
        };
        let grid = LabelGrid::new(geom.clone(), labels, 2).expect("binary labels");
        let scale = rng.gen_range(0.1..8.0);
        let mut values = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let phi = [rng.gen_range(-scale..scale), rng.gen_range(-scale..scale)];
            values.extend(softmax_vector(&phi));
        }
        let probs = ProbField::new(geom, 2, values).expect("softmax output");
        Self {
            grid,
            probs,
            alpha: rng.gen_range(0.5..3.0),
            cao: (rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)),
        }
    }

    fn foreground(&self) -> impl Iterator<Item = (bool, f64, f64)> + '_ {
        self.grid
            .labels()
            .iter()
            .zip(self.probs.pixels())
            .map(|(&l, p)| (l == 1, p[0], p[1]))
    }

    fn both_classes(&self) -> bool {
        let counts = self.grid.class_counts();
        counts.iter().all(|&c| c > 0)
    }

    /// Distance from pixel `i` to the nearest pixel of the other class, by
    /// exhaustive search.
    fn brute_distance(&self, i: usize) -> f64 {
        let geom = self.grid.geometry();
        let labels = self.grid.labels();
        (0..labels.len())
            .filter(|&j| labels[j] != labels[i])
            .map(|j| geom.distance(i, j))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PropOutcome {
    Checked { discrepancy: f64, pixels: usize },
    Skipped(String),
}

impl PropOutcome {
    pub fn passed(&self) -> bool {
        match self {
            PropOutcome::Checked {
                discrepancy,
                pixels,
            } => *discrepancy <= PROP_TOL_PER_PIXEL * *pixels as f64,
            PropOutcome::Skipped(_) => true,
        }
    }
}

fn onehot(inst: &BinaryInstance) -> OneHot {
    crate::grid::one_hot(&inst.grid)
}

fn checked(a: f64, b: f64, n: usize) -> PropOutcome {
    PropOutcome::Checked {
        discrepancy: (a - b).abs(),
        pixels: n,
    }
}

/// Region term of the active-contour loss against the `1 - Y` map.
pub fn verify_prop1(inst: &BinaryInstance) -> Result<PropOutcome> {
    let direct: f64 = inst
        .foreground()
        .map(|(fg, p_bg, p_fg)| if fg { p_bg } else { p_fg })
        .sum();
    let rw = rw_loss(&inst.probs, &ac_map(&onehot(inst)), Normalization::None)?.value;
    Ok(checked(direct, rw, inst.grid.len()))
}

/// Level-set boundary loss against the signed boundary-distance map.
pub fn verify_prop2(inst: &BinaryInstance) -> Result<PropOutcome> {
    if !inst.both_classes() {
        return Ok(PropOutcome::Skipped(
            "ground truth misses a class".to_string(),
        ));
    }
    let mut direct = 0.0;
    for (i, (fg, p_bg, p_fg)) in inst.foreground().enumerate() {
        let d = inst.brute_distance(i);
        // level set of each class: negative inside, positive outside
        let (phi_bg, phi_fg) = if fg { (d, -d) } else { (-d, d) };
        direct += phi_bg * p_bg + phi_fg * p_fg;
    }
    let z = boundary_map(&inst.grid)?;
    let rw = rw_loss(&inst.probs, &z, Normalization::None)?.value;
    Ok(checked(direct, rw, inst.grid.len()))
}

/// One-sided distance-transform loss against the squared-probability
/// region-wise loss with the HD map.
pub fn verify_prop3(inst: &BinaryInstance) -> Result<PropOutcome> {
    if !inst.both_classes() {
        return Ok(PropOutcome::Skipped(
            "ground truth misses a class".to_string(),
        ));
    }
    let n = inst.grid.len();
    let mut direct = 0.0;
    for (i, (fg, _, p_fg)) in inst.foreground().enumerate() {
        let y = if fg { 1.0 } else { 0.0 };
        let e = y - p_fg;
        direct += e * e * inst.brute_distance(i).powf(inst.alpha);
    }
    direct /= n as f64;
    let z = hd_map(&inst.grid, inst.alpha)?;
    let rw = rw2_loss(&inst.probs, &z)?.value;
    Ok(checked(direct, rw, n))
}

/// Plane-value boundary loss, two-channel form, against the map with
/// `alpha` on the own class and `-beta` elsewhere.
pub fn verify_prop4(inst: &BinaryInstance) -> Result<PropOutcome> {
    let (a, b) = inst.cao;
    let direct: f64 = inst
        .foreground()
        .map(|(fg, p_bg, p_fg)| {
            if fg {
                -b * p_bg + a * p_fg
            } else {
                a * p_bg - b * p_fg
            }
        })
        .sum();
    let z = cao_map(&onehot(inst), a, b)?;
    let rw = rw_loss(&inst.probs, &z, Normalization::None)?.value;
    Ok(checked(direct, rw, inst.grid.len()))
}

/// Region-based loss `sum_{fg} (1 - p) + sum_{bg} p` against the `1 - Y` map.
pub fn verify_prop5(inst: &BinaryInstance) -> Result<PropOutcome> {
    let direct: f64 = inst
        .foreground()
        .map(|(fg, _, p_fg)| if fg { 1.0 - p_fg } else { p_fg })
        .sum();
    let rw = rw_loss(&inst.probs, &ac_map(&onehot(inst)), Normalization::None)?.value;
    Ok(checked(direct, rw, inst.grid.len()))
}

pub fn verify_prop(prop: u8, inst: &BinaryInstance) -> Result<PropOutcome> {
    match prop {
        1 => verify_prop1(inst),
        2 => verify_prop2(inst),
        3 => verify_prop3(inst),
        4 => verify_prop4(inst),
        5 => verify_prop5(inst),
        _ => Err(Error::Config(format!(
            "no proposition {prop}; expected 1..=5"
        ))),
    }
}

/// Aggregate of one proposition over a seeded batch of instances.
#[derive(Clone, Debug, PartialEq)]
pub struct PropReport {
    pub prop: u8,
    pub checked: usize,
    /// Indices of instances that were skipped, with the reason.
    pub skipped: Vec<(usize, String)>,
    pub max_discrepancy: f64,
    /// Largest `discrepancy / pixels` seen.
    pub max_per_pixel: f64,
    pub failures: usize,
}

impl PropReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Check `prop` on `instances` random instances drawn from `seed`.
pub fn verify_batch(prop: u8, instances: usize, seed: u64) -> Result<PropReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = PropReport {
        prop,
        checked: 0,
        skipped: Vec::new(),
        max_discrepancy: 0.0,
        max_per_pixel: 0.0,
        failures: 0,
    };
    for idx in 0..instances {
        let inst = BinaryInstance::random(&mut rng);
        let outcome = verify_prop(prop, &inst)?;
        if !outcome.passed() {
            report.failures += 1;
        }
        match outcome {
            PropOutcome::Checked {
                discrepancy,
                pixels,
            } => {
                report.checked += 1;
                report.max_discrepancy = report.max_discrepancy.max(discrepancy);
                report.max_per_pixel = report.max_per_pixel.max(discrepancy / pixels as f64);
            }
            PropOutcome::Skipped(why) => report.skipped.push((idx, why)),
        }
    }
    Ok(report)
}
