//! Region-wise map families and the rectification principle.
//!
//! A region-wise map `Z` assigns every pixel a K-vector of penalties that
//! depends only on the ground truth. Maps whose non-true-class components
//! are equal, with the true-class component no larger than them, produce
//! softmax gradients with one non-positive (true class) and K-1
//! non-negative components; see [`is_rectified`].

use log::warn;

use crate::edt::{class_edt, ChannelStatus, SignedDistanceField};
use crate::error::{Error, Result};
use crate::grid::{one_hot, Field, LabelGrid, OneHot, RwMap};

/// Tolerance for "equal" off-class components.
pub const RECTIFIED_TOL: f64 = 1e-12;

/// Which map to build from a label grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MapSpec {
    /// `Z = 1 - Y`.
    Ac,
    /// Signed distances: negative inside the class, positive outside.
    Boundary,
    /// Rectified map: normalized negative depth inside, 1 elsewhere.
    Rrw,
    /// `distance^alpha` outside the class, 0 inside.
    Hd { alpha: f64 },
    /// `alpha` on the true class, `-beta` elsewhere.
    Cao { alpha: f64, beta: f64 },
}

impl MapSpec {
    pub const DEFAULT_HD_ALPHA: f64 = 2.0;

    pub fn validate(&self) -> Result<()> {
        match *self {
            MapSpec::Hd { alpha } if !(alpha.is_finite() && alpha > 0.0) => Err(Error::Config(
                format!("hd exponent must be positive and finite, got {alpha}"),
            )),
            MapSpec::Cao { alpha, beta } if !(alpha.is_finite() && beta.is_finite()) => Err(
                Error::Config(format!("cao values must be finite, got {alpha}, {beta}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MapSpec::Ac => "ac",
            MapSpec::Boundary => "boundary",
            MapSpec::Rrw => "rrw",
            MapSpec::Hd { .. } => "hd",
            MapSpec::Cao { .. } => "cao",
        }
    }

    /// Build the map for `grid`.
    pub fn build(&self, grid: &LabelGrid) -> Result<RwMap> {
        self.validate()?;
        match *self {
            MapSpec::Ac => Ok(ac_map(&one_hot(grid))),
            MapSpec::Boundary => boundary_map(grid),
            MapSpec::Rrw => rrw_map(grid),
            MapSpec::Hd { alpha } => hd_map(grid, alpha),
            MapSpec::Cao { alpha, beta } => cao_map(&one_hot(grid), alpha, beta),
        }
    }
}

pub fn ac_map(y: &OneHot) -> RwMap {
    let values = y.values().iter().map(|&v| 1.0 - v).collect();
    Field::from_parts_unchecked(y.geometry().clone(), y.channels(), values)
}

pub fn cao_map(y: &OneHot, alpha: f64, beta: f64) -> Result<RwMap> {
    MapSpec::Cao { alpha, beta }.validate()?;
    let values = y
        .values()
        .iter()
        .map(|&v| if v == 1.0 { alpha } else { -beta })
        .collect();
    Ok(Field::from_parts_unchecked(
        y.geometry().clone(),
        y.channels(),
        values,
    ))
}

fn regular_sdf(grid: &LabelGrid) -> Result<SignedDistanceField> {
    let sdf = class_edt(grid);
    for (k, s) in sdf.status.iter().enumerate() {
        match s {
            ChannelStatus::Regular => {}
            ChannelStatus::Empty => {
                return Err(Error::Config(format!(
                    "class {k} is absent from the ground truth; its distance map is undefined"
                )))
            }
            ChannelStatus::Full => {
                return Err(Error::Config(format!(
                    "class {k} covers the whole grid; its distance map is undefined"
                )))
            }
        }
    }
    Ok(sdf)
}

/// Signed distance map in mm. Every class must be present and not full.
pub fn boundary_map(grid: &LabelGrid) -> Result<RwMap> {
    let sdf = regular_sdf(grid)?;
    Ok(Field::from_parts_unchecked(
        grid.geometry().clone(),
        grid.num_classes(),
        sdf.field.into_values(),
    ))
}

/// One-sided Hausdorff map: `distance^alpha` outside each class, 0 inside.
pub fn hd_map(grid: &LabelGrid, alpha: f64) -> Result<RwMap> {
    MapSpec::Hd { alpha }.validate()?;
    let sdf = regular_sdf(grid)?;
    let values = sdf
        .field
        .values()
        .iter()
        .map(|&d| if d < 0.0 { 0.0 } else { d.powf(alpha) })
        .collect();
    Ok(Field::from_parts_unchecked(
        grid.geometry().clone(),
        grid.num_classes(),
        values,
    ))
}

/// Rectified region-wise map.
///
/// Inside class `k`: minus the distance to the nearest non-`k` pixel divided
/// by the largest such distance in the class, so values lie in `[-1, 0)`
/// and the deepest pixel is exactly `-1`. Outside: 1. A class absent from
/// the grid yields an all-ones channel and a warning; a class covering the
/// whole grid is an error.
pub fn rrw_map(grid: &LabelGrid) -> Result<RwMap> {
    let sdf = class_edt(grid);
    let k_count = grid.num_classes();
    let mut values = vec![1.0; grid.len() * k_count];
    for (k, status) in sdf.status.iter().enumerate() {
        match status {
            ChannelStatus::Empty => {
                warn!("class {k} is absent; its rectified channel is all ones");
            }
            ChannelStatus::Full => {
                return Err(Error::Config(format!(
                    "class {k} covers the whole grid; the rectified normalizer is undefined"
                )))
            }
            ChannelStatus::Regular => {
                let channel = sdf.channel(k);
                let depth = channel
                    .iter()
                    .filter(|&&d| d < 0.0)
                    .fold(0.0f64, |m, &d| m.max(-d));
                for (i, &d) in channel.iter().enumerate() {
                    if d < 0.0 {
                        values[i * k_count + k] = d / depth;
                    }
                }
            }
        }
    }
    Ok(Field::from_parts_unchecked(
        grid.geometry().clone(),
        k_count,
        values,
    ))
}

/// Value written into the off-class components by [`rectify`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RectifyMode {
    Constant(f64),
    Mean,
    Max,
}

/// Keep each pixel's true-class value and replace all other components by
/// one common value.
pub fn rectify(z: &RwMap, y: &OneHot, mode: RectifyMode) -> Result<RwMap> {
    z.check_same_shape(y)?;
    let k_count = z.channels();
    if k_count < 2 {
        return Err(Error::Domain("rectification needs K >= 2".to_string()));
    }
    let mut values = z.values().to_vec();
    for (i, yi) in y.pixels().enumerate() {
        let own = yi.iter().position(|&v| v == 1.0).unwrap_or(0);
        let row = &mut values[i * k_count..(i + 1) * k_count];
        let others = row
            .iter()
            .enumerate()
            .filter(|&(l, _)| l != own)
            .map(|(_, &v)| v);
        let common = match mode {
            RectifyMode::Constant(c) => c,
            RectifyMode::Mean => others.sum::<f64>() / (k_count - 1) as f64,
            RectifyMode::Max => others.fold(f64::NEG_INFINITY, f64::max),
        };
        for (l, v) in row.iter_mut().enumerate() {
            if l != own {
                *v = common;
            }
        }
    }
    RwMap::new(z.geometry().clone(), k_count, values)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Violation {
    /// Two off-class components differ by more than the tolerance.
    UnequalOffClass { spread: f64 },
    /// The true-class component exceeds an off-class component.
    OwnAboveOther { own: f64, other: f64 },
}

#[derive(Clone, Debug, Default)]
pub struct RectificationReport {
    /// `(pixel, violation)` pairs, at most one per pixel.
    pub violations: Vec<(usize, Violation)>,
}

impl RectificationReport {
    pub fn is_rectified(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check the rectification principle pixel by pixel: all off-class
/// components equal (within [`RECTIFIED_TOL`]) and the true-class component
/// no larger than them.
pub fn is_rectified(z: &RwMap, y: &OneHot) -> Result<RectificationReport> {
    z.check_same_shape(y)?;
    let mut report = RectificationReport::default();
    for (i, (zi, yi)) in z.pixels().zip(y.pixels()).enumerate() {
        let own = yi.iter().position(|&v| v == 1.0).unwrap_or(0);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (l, &v) in zi.iter().enumerate() {
            if l != own {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if zi.len() < 2 {
            continue;
        }
        if hi - lo > RECTIFIED_TOL {
            report
                .violations
                .push((i, Violation::UnequalOffClass { spread: hi - lo }));
        } else if zi[own] > lo {
            report.violations.push((
                i,
                Violation::OwnAboveOther {
                    own: zi[own],
                    other: lo,
                },
            ));
        }
    }
    Ok(report)
}
