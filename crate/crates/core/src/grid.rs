//! Dense grid containers shared by every other module.
//!
//! All per-pixel fields are stored row-major over the spatial axes with the
//! class (channel) index varying fastest, so `values[i * K + k]` is the entry
//! for pixel `i` and class `k` and each pixel's K-vector is contiguous.

use std::fmt;
use std::marker::PhantomData;

use crate::error::{Error, Result};

/// Largest class count representable with u8 labels.
pub const MAX_CLASSES: usize = 255;

/// Tolerance on probability row sums.
pub const PROB_ROW_TOL: f64 = 1e-9;

/// Spatial extents and physical voxel size (mm) of a 2D or 3D grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    dims: Vec<usize>,
    spacing: Vec<f64>,
}

impl Geometry {
    pub fn new(dims: Vec<usize>, spacing: Vec<f64>) -> Result<Self> {
        if !(2..=3).contains(&dims.len()) {
            return Err(Error::Domain(format!(
                "grids must be 2D or 3D, got {} axes",
                dims.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Domain(format!("zero-length axis in dims {dims:?}")));
        }
        if spacing.len() != dims.len() {
            return Err(Error::shape(dims.len(), spacing.len()));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::Domain(format!(
                "spacing must be positive and finite, got {spacing:?}"
            )));
        }
        Ok(Self { dims, spacing })
    }

    /// Geometry with 1 mm spacing along every axis.
    pub fn unit(dims: Vec<usize>) -> Result<Self> {
        let spacing = vec![1.0; dims.len()];
        Self::new(dims, spacing)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    /// Number of pixels/voxels.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major strides in elements (last axis has stride 1).
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.dims.len()];
        for a in (0..self.dims.len() - 1).rev() {
            strides[a] = strides[a + 1] * self.dims[a + 1];
        }
        strides
    }

    /// Multi-index of a flat index.
    pub fn coords(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims.len()];
        for a in (0..self.dims.len()).rev() {
            out[a] = index % self.dims[a];
            index /= self.dims[a];
        }
        out
    }

    pub fn with_spacing(&self, spacing: Vec<f64>) -> Result<Self> {
        Self::new(self.dims.clone(), spacing)
    }

    /// Euclidean distance in mm between two pixel centers.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (ca, cb) = (self.coords(a), self.coords(b));
        ca.iter()
            .zip(&cb)
            .zip(&self.spacing)
            .map(|((&p, &q), &s)| {
                let d = (p as f64 - q as f64) * s;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Integer class label per voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelGrid {
    geom: Geometry,
    labels: Vec<u8>,
    num_classes: usize,
}

impl LabelGrid {
    pub fn new(geom: Geometry, labels: Vec<u8>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 || num_classes > MAX_CLASSES {
            return Err(Error::Domain(format!(
                "class count must be in 1..={MAX_CLASSES}, got {num_classes}"
            )));
        }
        if labels.len() != geom.len() {
            return Err(Error::Corruption(format!(
                "dims {:?} hold {} voxels but {} labels were given",
                geom.dims(),
                geom.len(),
                labels.len()
            )));
        }
        if let Some((i, &l)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= num_classes)
        {
            return Err(Error::Domain(format!(
                "label {l} at voxel {i} is not below K = {num_classes}"
            )));
        }
        Ok(Self {
            geom,
            labels,
            num_classes,
        })
    }

    /// A single row of labels as a `1 x n` grid with unit spacing.
    pub fn row(labels: &[u8], num_classes: usize) -> Result<Self> {
        Self::new(
            Geometry::unit(vec![1, labels.len()])?,
            labels.to_vec(),
            num_classes,
        )
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn dims(&self) -> &[usize] {
        self.geom.dims()
    }

    pub fn spacing(&self) -> &[f64] {
        self.geom.spacing()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Same labels under a different voxel size.
    pub fn with_spacing(&self, spacing: Vec<f64>) -> Result<Self> {
        Ok(Self {
            geom: self.geom.with_spacing(spacing)?,
            labels: self.labels.clone(),
            num_classes: self.num_classes,
        })
    }

    /// Membership mask of class `k`.
    pub fn class_mask(&self, k: usize) -> Vec<bool> {
        self.labels.iter().map(|&l| l as usize == k).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

/// Validation rule attached to a [`Field`] flavour.
pub trait FieldKind {
    const NAME: &'static str;

    fn validate(values: &[f64], channels: usize) -> Result<()>;
}

fn all_finite(name: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(j) => Err(Error::Domain(format!(
            "{name} entry {j} is not finite ({})",
            values[j]
        ))),
    }
}

/// One-hot indicator rows.
#[derive(Clone, Copy, Debug)]
pub struct Indicator;

/// Unnormalized network outputs.
#[derive(Clone, Copy, Debug)]
pub struct Logits;

/// Softmax-normalized outputs.
#[derive(Clone, Copy, Debug)]
pub struct Probabilities;

/// Region-wise penalty maps `Z = f(Y)` and pixel weights.
#[derive(Clone, Copy, Debug)]
pub struct Penalties;

/// Gradients with respect to logits.
#[derive(Clone, Copy, Debug)]
pub struct Gradients;

impl FieldKind for Indicator {
    const NAME: &'static str = "one-hot";

    fn validate(values: &[f64], channels: usize) -> Result<()> {
        for (i, row) in values.chunks_exact(channels).enumerate() {
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || zeros != channels - 1 {
                return Err(Error::Domain(format!(
                    "one-hot row {i} is not an indicator vector: {row:?}"
                )));
            }
        }
        Ok(())
    }
}

impl FieldKind for Logits {
    const NAME: &'static str = "logit";

    fn validate(values: &[f64], _channels: usize) -> Result<()> {
        all_finite(Self::NAME, values)
    }
}

impl FieldKind for Probabilities {
    const NAME: &'static str = "probability";

    fn validate(values: &[f64], channels: usize) -> Result<()> {
        for (i, row) in values.chunks_exact(channels).enumerate() {
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::Domain(format!(
                    "probability row {i} has entries outside [0, 1]: {row:?}"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_ROW_TOL {
                return Err(Error::Domain(format!("probability row {i} sums to {sum}")));
            }
        }
        Ok(())
    }
}

impl FieldKind for Penalties {
    const NAME: &'static str = "map";

    fn validate(values: &[f64], _channels: usize) -> Result<()> {
        all_finite(Self::NAME, values)
    }
}

impl FieldKind for Gradients {
    const NAME: &'static str = "gradient";

    fn validate(values: &[f64], _channels: usize) -> Result<()> {
        all_finite(Self::NAME, values)
    }
}

/// An N x K per-pixel field over a grid, validated according to `T`.
pub struct Field<T> {
    geom: Geometry,
    channels: usize,
    values: Vec<f64>,
    _kind: PhantomData<T>,
}

pub type OneHot = Field<Indicator>;
pub type LogitField = Field<Logits>;
pub type ProbField = Field<Probabilities>;
pub type RwMap = Field<Penalties>;
pub type GradField = Field<Gradients>;

impl<T> Clone for Field<T> {
    fn clone(&self) -> Self {
        Self {
            geom: self.geom.clone(),
            channels: self.channels,
            values: self.values.clone(),
            _kind: PhantomData,
        }
    }
}

impl<T> PartialEq for Field<T> {
    fn eq(&self, other: &Self) -> bool {
        self.geom == other.geom && self.channels == other.channels && self.values == other.values
    }
}

impl<T: FieldKind> fmt::Debug for Field<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Field")
            .field("kind", &T::NAME)
            .field("dims", &self.geom.dims())
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl<T: FieldKind> Field<T> {
    pub fn new(geom: Geometry, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Domain(format!("{} field needs K >= 1", T::NAME)));
        }
        if values.len() != geom.len() * channels {
            return Err(Error::Corruption(format!(
                "{} field over {:?} x {channels} needs {} values, got {}",
                T::NAME,
                geom.dims(),
                geom.len() * channels,
                values.len()
            )));
        }
        T::validate(&values, channels)?;
        Ok(Self {
            geom,
            channels,
            values,
            _kind: PhantomData,
        })
    }

    pub fn from_fn(
        geom: Geometry,
        channels: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let n = geom.len();
        let mut values = Vec::with_capacity(n * channels);
        for i in 0..n {
            for k in 0..channels {
                values.push(f(i, k));
            }
        }
        Self::new(geom, channels, values)
    }

    /// Re-validate the same values as another field flavour.
    pub fn cast<U: FieldKind>(self) -> Result<Field<U>> {
        Field::<U>::new(self.geom, self.channels, self.values)
    }

    /// Apply `f(pixel, class, value)` to every entry and re-validate.
    pub fn map_values(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Result<Self> {
        let k = self.channels;
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(j, &v)| f(j / k, j % k, v))
            .collect();
        Self::new(self.geom.clone(), k, values)
    }
}

impl<T> Field<T> {
    /// Construct without validation; callers guarantee the invariant.
    pub(crate) fn from_parts_unchecked(geom: Geometry, channels: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), geom.len() * channels);
        Self {
            geom,
            channels,
            values,
            _kind: PhantomData,
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn dims(&self) -> &[usize] {
        self.geom.dims()
    }

    /// Number of classes K.
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of pixels N.
    pub fn len(&self) -> usize {
        self.geom.len()
    }

    pub fn is_empty(&self) -> bool {
        self.geom.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.channels + k]
    }

    /// The K-vector of pixel `i`.
    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.values[i * self.channels..(i + 1) * self.channels]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.channels)
    }

    /// Values of one class channel, in pixel order.
    pub fn channel(&self, k: usize) -> Vec<f64> {
        self.pixels().map(|p| p[k]).collect()
    }

    /// Error unless `other` covers the same grid with the same K.
    pub fn check_same_shape<U>(&self, other: &Field<U>) -> Result<()> {
        if self.geom.dims() != other.geom.dims() || self.channels != other.channels {
            return Err(Error::shape(
                (self.geom.dims(), self.channels),
                (other.geom.dims(), other.channels),
            ));
        }
        Ok(())
    }
}

impl OneHot {
    /// Class index of each row.
    pub fn argmax_labels(&self) -> Vec<u8> {
        self.pixels()
            .map(|row| row.iter().position(|&v| v == 1.0).unwrap_or(0) as u8)
            .collect()
    }
}

impl ProbField {
    /// Hard prediction: the most probable class per pixel (lowest index on ties).
    pub fn argmax(&self, num_classes: usize) -> Result<LabelGrid> {
        let labels = self
            .pixels()
            .map(|row| {
                let mut best = 0;
                for k in 1..row.len() {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect();
        LabelGrid::new(self.geom.clone(), labels, num_classes)
    }
}

/// One-hot encoding of a label grid: `values[i][k] = 1` iff `labels[i] = k`.
pub fn one_hot(grid: &LabelGrid) -> OneHot {
    let k = grid.num_classes();
    let mut values = vec![0.0; grid.len() * k];
    for (i, &l) in grid.labels().iter().enumerate() {
        values[i * k + l as usize] = 1.0;
    }
    Field::from_parts_unchecked(grid.geometry().clone(), k, values)
}
