//! Exact Euclidean distance transforms with anisotropic spacing.
//!
//! The n-D squared transform is computed separably: a 1D lower-envelope pass
//! (Felzenszwalb and Huttenlocher) along each axis in turn, followed by a
//! square root. Distances are measured between pixel centers in mm.

use crate::error::{Error, Result};
use crate::grid::{Field, FieldKind, Geometry, LabelGrid};

/// Signed distances, possibly holding `±inf` sentinels for degenerate classes.
#[derive(Clone, Copy, Debug)]
pub struct Distances;

impl FieldKind for Distances {
    const NAME: &'static str = "signed distance";

    fn validate(values: &[f64], _channels: usize) -> Result<()> {
        match values.iter().position(|v| v.is_nan()) {
            None => Ok(()),
            Some(j) => Err(Error::Domain(format!("distance entry {j} is NaN"))),
        }
    }
}

/// Whether a class channel could be transformed normally.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelStatus {
    Regular,
    /// The class has no pixels; channel filled with `+inf`.
    Empty,
    /// The class covers the grid; channel filled with `-inf`.
    Full,
}

/// Per-class signed distance to the opposite region: negative inside the
/// class, positive outside.
#[derive(Clone, Debug)]
pub struct SignedDistanceField {
    pub field: Field<Distances>,
    pub status: Vec<ChannelStatus>,
}

impl SignedDistanceField {
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.field.get(i, k)
    }

    pub fn channel(&self, k: usize) -> Vec<f64> {
        self.field.channel(k)
    }
}

/// `out[q] = min_p (spacing * (q - p))^2 + f[p]`, exactly.
///
/// Entries of `f` may be `+inf` (no seed). If every entry is infinite, so is
/// the output.
pub fn squared_edt_1d(f: &[f64], spacing: f64) -> Result<Vec<f64>> {
    if f.is_empty() {
        return Err(Error::Domain(
            "1D distance transform of an empty array".to_string(),
        ));
    }
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::Domain(format!(
            "spacing must be positive, got {spacing}"
        )));
    }
    if f.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
        return Err(Error::Domain(
            "1D transform input must be in R or +inf".to_string(),
        ));
    }
    let mut out = vec![0.0; f.len()];
    let mut scratch = Envelope::with_capacity(f.len());
    scratch.run(f, spacing, &mut out);
    Ok(out)
}

/// Reusable buffers for the lower-envelope pass.
struct Envelope {
    // parabola apex positions (indices) and boundaries between them
    apex: Vec<usize>,
    bound: Vec<f64>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Self {
            apex: Vec::with_capacity(n),
            bound: Vec::with_capacity(n + 1),
        }
    }

    fn run(&mut self, f: &[f64], s: f64, out: &mut [f64]) {
        self.apex.clear();
        self.bound.clear();
        let pos = |p: usize| p as f64 * s;
        // intersection abscissa of the parabolas rooted at p and q (p < q)
        let cross = |p: usize, q: usize| {
            let (xp, xq) = (pos(p), pos(q));
            ((f[q] + xq * xq) - (f[p] + xp * xp)) / (2.0 * (xq - xp))
        };

        for q in 0..f.len() {
            if f[q] == f64::INFINITY {
                continue;
            }
            while let Some(&last) = self.apex.last() {
                let x = cross(last, q);
                if x <= self.bound[self.bound.len() - 1] {
                    self.apex.pop();
                    self.bound.pop();
                } else {
                    self.bound.push(x);
                    break;
                }
            }
            if self.apex.is_empty() {
                self.bound.clear();
                self.bound.push(f64::NEG_INFINITY);
            }
            self.apex.push(q);
        }

        if self.apex.is_empty() {
            out.fill(f64::INFINITY);
            return;
        }
        self.bound.push(f64::INFINITY);
        let mut j = 0;
        for (q, o) in out.iter_mut().enumerate() {
            let x = pos(q);
            while self.bound[j + 1] < x {
                j += 1;
            }
            let p = self.apex[j];
            // offset first, then scale: matches a direct pairwise evaluation bit for bit
            let d = (q as f64 - p as f64) * s;
            *o = d * d + f[p];
        }
    }
}

/// Squared distance (mm^2) from every pixel center to the nearest seed.
/// Pixels of an all-false seed mask get `+inf`.
pub fn squared_edt(seeds: &[bool], geom: &Geometry) -> Vec<f64> {
    assert_eq!(seeds.len(), geom.len(), "seed mask must cover the grid");
    let mut buf: Vec<f64> = seeds
        .iter()
        .map(|&s| if s { 0.0 } else { f64::INFINITY })
        .collect();
    let dims = geom.dims();
    let strides = geom.strides();
    let longest = *dims.iter().max().unwrap();
    let mut line = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut env = Envelope::with_capacity(longest);

    for axis in 0..dims.len() {
        let n = dims[axis];
        let stride = strides[axis];
        let spacing = geom.spacing()[axis];
        // enumerate the start of every line along `axis`
        for start in 0..buf.len() {
            if !(start / stride).is_multiple_of(n) {
                continue;
            }
            for (t, v) in line[..n].iter_mut().enumerate() {
                *v = buf[start + t * stride];
            }
            env.run(&line[..n], spacing, &mut out[..n]);
            for (t, &v) in out[..n].iter().enumerate() {
                buf[start + t * stride] = v;
            }
        }
    }
    buf
}

/// Exact per-class signed distance field.
///
/// For `i` outside class `k` the value is the distance to the nearest pixel
/// of class `k`; inside, minus the distance to the nearest pixel of any
/// other class. Empty and full classes are flagged in
/// [`SignedDistanceField::status`] and filled with `+inf` / `-inf`.
pub fn class_edt(grid: &LabelGrid) -> SignedDistanceField {
    let geom = grid.geometry();
    let n = grid.len();
    let k_count = grid.num_classes();
    let mut values = vec![0.0; n * k_count];
    let mut status = Vec::with_capacity(k_count);

    for k in 0..k_count {
        let inside = grid.class_mask(k);
        let members = inside.iter().filter(|&&b| b).count();
        if members == 0 {
            status.push(ChannelStatus::Empty);
            for i in 0..n {
                values[i * k_count + k] = f64::INFINITY;
            }
            continue;
        }
        if members == n {
            status.push(ChannelStatus::Full);
            for i in 0..n {
                values[i * k_count + k] = f64::NEG_INFINITY;
            }
            continue;
        }
        status.push(ChannelStatus::Regular);
        let outside: Vec<bool> = inside.iter().map(|&b| !b).collect();
        let to_class = squared_edt(&inside, geom);
        let to_rest = squared_edt(&outside, geom);
        for i in 0..n {
            values[i * k_count + k] = if inside[i] {
                -to_rest[i].sqrt()
            } else {
                to_class[i].sqrt()
            };
        }
    }

    SignedDistanceField {
        field: Field::from_parts_unchecked(geom.clone(), k_count, values),
        status,
    }
}
