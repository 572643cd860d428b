//! Evaluation metrics: Dice overlap, Hausdorff distance, a paired
//! permutation test and the empirical CDF used for convergence studies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::edt::squared_edt;
use crate::error::{Error, Result};
use crate::grid::{Geometry, LabelGrid};

/// Default number of random sign-flip permutations.
pub const DEFAULT_PERMUTATIONS: usize = 10_000;

/// Relative slack when deciding `T_perm >= T_obs`, so that permuted
/// statistics equal to the observed one up to summation order count as ties.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask {
    geom: Geometry,
    values: Vec<bool>,
}

impl BinaryMask {
    pub fn new(geom: Geometry, values: Vec<bool>) -> Result<Self> {
        if values.len() != geom.len() {
            return Err(Error::Corruption(format!(
                "mask has {} voxels, geometry expects {}",
                values.len(),
                geom.len()
            )));
        }
        Ok(Self { geom, values })
    }

    /// Voxels of `grid` labelled `k`.
    pub fn from_labels(grid: &LabelGrid, k: usize) -> Self {
        Self {
            geom: grid.geometry().clone(),
            values: grid.class_mask(k),
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    /// Mask voxels on the grid border or with a face neighbor outside the
    /// mask.
    pub fn boundary(&self) -> Vec<bool> {
        let dims = self.geom.dims();
        let strides = self.geom.strides();
        (0..self.values.len())
            .map(|i| {
                if !self.values[i] {
                    return false;
                }
                let c = self.geom.coords(i);
                (0..dims.len()).any(|a| {
                    c[a] == 0
                        || c[a] + 1 == dims[a]
                        || !self.values[i - strides[a]]
                        || !self.values[i + strides[a]]
                })
            })
            .collect()
    }

    fn check_pair(&self, other: &BinaryMask) -> Result<()> {
        if self.geom.dims() != other.geom.dims() {
            return Err(Error::shape(self.geom.dims(), other.geom.dims()));
        }
        Ok(())
    }
}

/// `2|A ∩ B| / (|A| + |B|)`; two empty masks agree perfectly (1).
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.check_pair(b)?;
    let inter = a
        .values
        .iter()
        .zip(&b.values)
        .filter(|(x, y)| **x && **y)
        .count();
    let total = a.count() + b.count();
    Ok(if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    })
}

/// Symmetric Hausdorff distance in mm between the boundary voxels of two
/// nonempty masks. Spacing is taken from `a`.
pub fn hausdorff(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.check_pair(b)?;
    if a.count() == 0 || b.count() == 0 {
        return Err(Error::Domain(
            "Hausdorff distance is undefined for an empty mask".to_string(),
        ));
    }
    let (ba, bb) = (a.boundary(), b.boundary());
    let directed = |from: &[bool], to: &[bool]| {
        let sq = squared_edt(to, &a.geom);
        from.iter()
            .zip(&sq)
            .filter(|(f, _)| **f)
            .fold(0.0f64, |m, (_, &d)| m.max(d))
    };
    Ok(directed(&ba, &bb).max(directed(&bb, &ba)).sqrt())
}

/// Per-class Dice and Hausdorff distance between two label grids.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub class: usize,
    pub dice: f64,
    /// `None` when either mask is empty.
    pub hd_mm: Option<f64>,
}

pub fn compare_labels(pred: &LabelGrid, gt: &LabelGrid) -> Result<Vec<ClassMetrics>> {
    if pred.dims() != gt.dims() {
        return Err(Error::shape(gt.dims(), pred.dims()));
    }
    let k = pred.num_classes().max(gt.num_classes());
    (0..k)
        .map(|c| {
            let a = BinaryMask::from_labels(pred, c);
            let b = BinaryMask::from_labels(gt, c);
            let hd_mm = if a.count() > 0 && b.count() > 0 {
                Some(hausdorff(&a, &b)?)
            } else {
                None
            };
            Ok(ClassMetrics {
                class: c,
                dice: dice(&a, &b)?,
                hd_mm,
            })
        })
        .collect()
}

/// Columns `run_id, class, dice, hd_mm`; undefined distances are left empty.
pub fn metrics_csv(rows: &[(String, ClassMetrics)]) -> String {
    let mut out = String::from("run_id,class,dice,hd_mm\n");
    for (run, m) in rows {
        let hd = m.hd_mm.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{run},{},{},{hd}\n", m.class, m.dice));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Statistic {
    /// `|mean(a - b)|`.
    #[default]
    AbsMeanDiff,
    /// `mean(|a - b|)`. Invariant under sign flips, so every permutation
    /// ties with the observed value; kept for comparison only.
    MeanAbsDiff,
}

impl Statistic {
    fn eval(self, d: &[f64], signs: impl Iterator<Item = bool>) -> f64 {
        let n = d.len() as f64;
        match self {
            Statistic::AbsMeanDiff => {
                let s: f64 = d
                    .iter()
                    .zip(signs)
                    .map(|(v, flip)| if flip { -v } else { *v })
                    .sum();
                (s / n).abs()
            }
            Statistic::MeanAbsDiff => d.iter().map(|v| v.abs()).sum::<f64>() / n,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PermutationResult {
    pub p_value: f64,
    pub observed: f64,
    /// Number of sign patterns evaluated, identity included.
    pub patterns: usize,
    /// All `2^n` patterns were enumerated.
    pub exact: bool,
}

/// Paired two-sample sign-flip permutation test.
///
/// When `2^n <= n_perm` every sign pattern is enumerated and the p-value is
/// exact; otherwise `n_perm` random patterns are drawn and
/// `p = (1 + #{T_perm >= T_obs}) / (1 + n_perm)`.
pub fn permutation_test(
    a: &[f64],
    b: &[f64],
    n_perm: usize,
    seed: u64,
    statistic: Statistic,
) -> Result<PermutationResult> {
    if a.len() != b.len() {
        return Err(Error::shape(a.len().to_string(), b.len().to_string()));
    }
    if a.len() < 2 {
        return Err(Error::Domain(format!(
            "permutation test needs at least 2 pairs, got {}",
            a.len()
        )));
    }
    if n_perm == 0 {
        return Err(Error::Config("n_perm must be positive".to_string()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("permutation test input".to_string()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len();
    let observed = statistic.eval(&d, std::iter::repeat(false));
    let threshold = observed - TIE_TOL * (1.0 + observed);

    let exhaustive = n < usize::BITS as usize && (1usize << n) <= n_perm;
    if exhaustive {
        let total = 1usize << n;
        let hits = (0..total)
            .filter(|mask| statistic.eval(&d, (0..n).map(|j| mask >> j & 1 == 1)) >= threshold)
            .count();
        return Ok(PermutationResult {
            p_value: hits as f64 / total as f64,
            observed,
            patterns: total,
            exact: true,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flips = vec![false; n];
    let mut hits = 0usize;
    for _ in 0..n_perm {
        flips.iter_mut().for_each(|f| *f = rng.gen());
        if statistic.eval(&d, flips.iter().copied()) >= threshold {
            hits += 1;
        }
    }
    Ok(PermutationResult {
        p_value: (1 + hits) as f64 / (1 + n_perm) as f64,
        observed,
        patterns: n_perm + 1,
        exact: false,
    })
}

/// Right-continuous empirical CDF `(1/n) #{v_i <= d}`.
pub fn cdf(values: &[f64], d: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain("CDF of an empty sample".to_string()));
    }
    Ok(values.iter().filter(|&&v| v <= d).count() as f64 / values.len() as f64)
}
