//! The RWG binary grid format and the plain-text 2D label format.
//!
//! RWG layout, little-endian throughout:
//!
//! | bytes | content |
//! |-------|---------|
//! | 0..6  | ASCII `RWGRID` |
//! | 6     | version, currently 1 |
//! | 7     | element code: 0 = u8 labels, 1 = f32, 2 = f64 |
//! | u32   | spatial ndim (2 or 3) |
//! | u32   | channels (0 for label grids, K for fields) |
//! | ndim x u32 | dims |
//! | ndim x f32 | spacing in mm |
//! | ...   | payload, row-major, channel fastest |
//!
//! Label grids do not record K on disk; readers either take it from the
//! caller or infer `max(label) + 1`.
//!
//! The text format is a header line `H W K` followed by `H` rows of `W`
//! whitespace-separated integers.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Field, FieldKind, Geometry, LabelGrid};

pub const MAGIC: &[u8; 6] = b"RWGRID";
pub const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementType {
    U8,
    F32,
    F64,
}

impl ElementType {
    pub fn code(self) -> u8 {
        match self {
            ElementType::U8 => 0,
            ElementType::F32 => 1,
            ElementType::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(ElementType::U8),
            1 => Ok(ElementType::F32),
            2 => Ok(ElementType::F64),
            c => Err(Error::Format(format!("unknown element code {c}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            ElementType::U8 => 1,
            ElementType::F32 => 4,
            ElementType::F64 => 8,
        }
    }
}

/// A decoded real-valued field, not yet tagged with a field flavour.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldData {
    pub geom: Geometry,
    pub channels: usize,
    pub values: Vec<f64>,
    pub element: ElementType,
}

impl FieldData {
    pub fn into_field<T: FieldKind>(self) -> Result<Field<T>> {
        Field::new(self.geom, self.channels, self.values)
    }
}

/// Contents of an RWG file.
#[derive(Clone, Debug, PartialEq)]
pub enum GridFile {
    Labels(LabelGrid),
    Field(FieldData),
}

fn header(geom: &Geometry, element: ElementType, channels: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * geom.ndim());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(element.code());
    out.extend_from_slice(&(geom.ndim() as u32).to_le_bytes());
    out.extend_from_slice(&(channels as u32).to_le_bytes());
    for &d in geom.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &s in geom.spacing() {
        out.extend_from_slice(&(s as f32).to_le_bytes());
    }
    out
}

pub fn encode_labels(grid: &LabelGrid) -> Vec<u8> {
    let mut out = header(grid.geometry(), ElementType::U8, 0);
    out.extend_from_slice(grid.labels());
    out
}

/// Encode a field as f32 or f64. Spacing is always stored as f32.
pub fn encode_field<T>(field: &Field<T>, element: ElementType) -> Result<Vec<u8>> {
    let mut out = header(field.geometry(), element, field.channels());
    match element {
        ElementType::U8 => {
            return Err(Error::Format(
                "fields must be stored as f32 or f64".to_string(),
            ))
        }
        ElementType::F32 => {
            for &v in field.values() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        ElementType::F64 => {
            for &v in field.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "header truncated while reading {what}"
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Decode an RWG byte buffer. For label grids, `num_classes` validates the
/// labels; when `None`, K is inferred as `max(label) + 1`.
pub fn decode(bytes: &[u8], num_classes: Option<usize>) -> Result<GridFile> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(6, "magic").ok() != Some(&MAGIC[..]) {
        return Err(Error::Format("missing RWGRID magic".to_string()));
    }
    let version = cur.take(1, "version")?[0];
    if version != VERSION {
        return Err(Error::Format(format!("unsupported RWG version {version}")));
    }
    let element = ElementType::from_code(cur.take(1, "element code")?[0])?;
    let ndim = cur.u32("ndim")? as usize;
    if !(2..=3).contains(&ndim) {
        return Err(Error::Format(format!(
            "spatial ndim must be 2 or 3, got {ndim}"
        )));
    }
    let channels = cur.u32("channels")? as usize;
    let dims = (0..ndim)
        .map(|_| cur.u32("dims").map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let spacing = (0..ndim)
        .map(|_| cur.f32("spacing").map(f64::from))
        .collect::<Result<Vec<_>>>()?;
    let geom = Geometry::new(dims, spacing).map_err(|e| Error::Format(e.to_string()))?;

    match (element, channels) {
        (ElementType::U8, 0) => {}
        (ElementType::U8, c) => {
            return Err(Error::Format(format!(
                "u8 grids are label grids and must have 0 channels, got {c}"
            )))
        }
        (_, 0) => {
            return Err(Error::Format(
                "real-valued field with 0 channels".to_string(),
            ))
        }
        _ => {}
    }

    let count = geom.len() * channels.max(1);
    let payload = &bytes[cur.pos..];
    let expected = count * element.width();
    if payload.len() != expected {
        return Err(Error::Corruption(format!(
            "payload has {} bytes, header implies {expected}",
            payload.len()
        )));
    }

    match element {
        ElementType::U8 => {
            let labels = payload.to_vec();
            let k = match num_classes {
                Some(k) => k,
                None => labels.iter().copied().max().map_or(1, |m| m as usize + 1),
            };
            Ok(GridFile::Labels(LabelGrid::new(geom, labels, k)?))
        }
        ElementType::F32 => {
            let values = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            Ok(GridFile::Field(FieldData {
                geom,
                channels,
                values,
                element,
            }))
        }
        ElementType::F64 => {
            let values = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(GridFile::Field(FieldData {
                geom,
                channels,
                values,
                element,
            }))
        }
    }
}

/// Write via a sibling temporary file and rename, so readers never see a
/// partially written grid.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_grid(path: &Path, num_classes: Option<usize>) -> Result<GridFile> {
    decode(&fs::read(path)?, num_classes)
}

pub fn write_labels(path: &Path, grid: &LabelGrid) -> Result<()> {
    write_atomic(path, &encode_labels(grid))
}

pub fn write_field<T>(path: &Path, field: &Field<T>, element: ElementType) -> Result<()> {
    write_atomic(path, &encode_field(field, element)?)
}

/// Read a label grid from either an RWG file or the text format.
pub fn read_labels(path: &Path, num_classes: Option<usize>) -> Result<LabelGrid> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(MAGIC) {
        match decode(&bytes, num_classes)? {
            GridFile::Labels(g) => Ok(g),
            GridFile::Field(_) => Err(Error::Format(format!(
                "{} holds a real-valued field, not labels",
                path.display()
            ))),
        }
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Format("label file is neither RWG nor text".to_string()))?;
        parse_text_labels(&text)
    }
}

pub fn parse_text_labels(text: &str) -> Result<LabelGrid> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let head = lines
        .next()
        .ok_or_else(|| Error::Format("empty label file".to_string()))?;
    let nums = parse_ints(head)?;
    let [h, w, k] = nums[..] else {
        return Err(Error::Format(format!(
            "header must be `H W K`, got `{head}`"
        )));
    };
    let mut labels = Vec::with_capacity(h * w);
    let mut rows = 0;
    for line in lines {
        let row = parse_ints(line)?;
        if row.len() != w {
            return Err(Error::Corruption(format!(
                "row {rows} has {} entries, expected {w}",
                row.len()
            )));
        }
        for v in row {
            if v > u8::MAX as usize {
                return Err(Error::Domain(format!("label {v} does not fit in u8")));
            }
            labels.push(v as u8);
        }
        rows += 1;
    }
    if rows != h {
        return Err(Error::Corruption(format!(
            "expected {h} rows, found {rows}"
        )));
    }
    LabelGrid::new(Geometry::unit(vec![h, w])?, labels, k)
}

fn parse_ints(line: &str) -> Result<Vec<usize>> {
    line.split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::Format(format!("`{t}` is not a non-negative integer")))
        })
        .collect()
}

pub fn format_text_labels(grid: &LabelGrid) -> Result<String> {
    let [h, w] = grid.dims()[..] else {
        return Err(Error::Domain("text label format is 2D only".to_string()));
    };
    let mut out = format!("{h} {w} {}\n", grid.num_classes());
    for row in grid.labels().chunks_exact(w) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    Ok(out)
}
