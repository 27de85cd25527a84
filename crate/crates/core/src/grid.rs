//! Dense 2D grids: images, probability maps and binary masks.
//!
//! All grids are row-major: pixel `(row, col)` lives at flat index
//! `row * width + col`.
//!
//! # File format
//!
//! ```text
//! LPGRID v1 <IMAGE|PROB|MASK> <width> <height>\n
//! <width * height little-endian f32 values, row-major>
//! ```
//!
//! Values are held as `f64` in memory and written as `f32`, so saving rounds
//! to single precision. Loading a saved file and saving it again is
//! byte-identical.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &str = "LPGRID";
pub const VERSION: &str = "v1";

/// Width and height of a grid, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
}

impl Dims {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimension { width, height });
        }
        width
            .checked_mul(height)
            .ok_or(Error::InvalidDimension { width, height })?;
        Ok(Dims { width, height })
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.height && col < self.width);
        row * self.width + col
    }

    pub(crate) fn ensure_same(&self, other: Dims) -> Result<()> {
        if *self != other {
            return Err(Error::DimensionMismatch {
                expected: (self.width, self.height),
                actual: (other.width, other.height),
            });
        }
        Ok(())
    }
}

/// The kind tag written in a grid file header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    Image,
    Prob,
    Mask,
}

impl GridKind {
    pub fn tag(self) -> &'static str {
        match self {
            GridKind::Image => "IMAGE",
            GridKind::Prob => "PROB",
            GridKind::Mask => "MASK",
        }
    }

    fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "IMAGE" => Some(GridKind::Image),
            "PROB" => Some(GridKind::Prob),
            "MASK" => Some(GridKind::Mask),
            _ => None,
        }
    }
}

fn check_len(dims: Dims, len: usize) -> Result<()> {
    if len != dims.len() {
        return Err(Error::InvalidValue(format!(
            "{} values supplied for a {}x{} grid",
            len, dims.width, dims.height
        )));
    }
    Ok(())
}

/// Real-valued single-channel image. All values are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    dims: Dims,
    values: Vec<f64>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, fill: f64) -> Result<Self> {
        let dims = Dims::new(width, height)?;
        if !fill.is_finite() {
            return Err(Error::InvalidValue(format!("fill value {fill} is not finite")));
        }
        Ok(ImageGrid {
            dims,
            values: vec![fill; dims.len()],
        })
    }

    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let dims = Dims::new(width, height)?;
        check_len(dims, values.len())?;
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::OutOfRange {
                kind: "IMAGE",
                index,
                value,
            });
        }
        Ok(ImageGrid { dims, values })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[self.dims.index(row, col)]
    }

    /// Sets one pixel. Non-finite values are rejected.
    pub fn set(&mut self, row: usize, col: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::InvalidValue(format!("pixel value {value} is not finite")));
        }
        let i = self.dims.index(row, col);
        self.values[i] = value;
        Ok(())
    }
}

/// Per-pixel probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    dims: Dims,
    values: Vec<f64>,
}

impl ProbMap {
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let dims = Dims::new(width, height)?;
        check_len(dims, values.len())?;
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::OutOfRange {
                kind: "PROB",
                index,
                value,
            });
        }
        Ok(ProbMap { dims, values })
    }

    pub fn filled(width: usize, height: usize, p: f64) -> Result<Self> {
        let dims = Dims::new(width, height)?;
        Self::from_values(width, height, vec![p; dims.len()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[self.dims.index(row, col)]
    }

    /// Internal constructor for values already known to lie in `[0, 1]`.
    pub(crate) fn from_trusted(dims: Dims, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), dims.len());
        debug_assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        ProbMap { dims, values }
    }
}

/// Per-pixel `{0, 1}` labels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    dims: Dims,
    values: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(width: usize, height: usize) -> Result<Self> {
        let dims = Dims::new(width, height)?;
        Ok(BinaryMask {
            dims,
            values: vec![false; dims.len()],
        })
    }

    pub fn from_bools(width: usize, height: usize, values: Vec<bool>) -> Result<Self> {
        let dims = Dims::new(width, height)?;
        check_len(dims, values.len())?;
        Ok(BinaryMask { dims, values })
    }

    /// Builds a mask from numeric labels, which must each be exactly 0 or 1.
    pub fn from_values(width: usize, height: usize, values: &[f64]) -> Result<Self> {
        let dims = Dims::new(width, height)?;
        check_len(dims, values.len())?;
        let bits = values
            .iter()
            .enumerate()
            .map(|(index, &value)| {
                if value == 0.0 {
                    Ok(false)
                } else if value == 1.0 {
                    Ok(true)
                } else {
                    Err(Error::OutOfRange {
                        kind: "MASK",
                        index,
                        value,
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BinaryMask { dims, values: bits })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.values[self.dims.index(row, col)]
    }

    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        let i = self.dims.index(row, col);
        self.values[i] = on;
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&b| b).count()
    }

    pub fn is_blank(&self) -> bool {
        !self.values.iter().any(|&b| b)
    }

    /// The mask as `0.0` / `1.0` reals.
    pub fn to_reals(&self) -> Vec<f64> {
        self.values.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// Grids that can be written to and read from the `LPGRID` file format.
pub trait GridFile: Sized {
    const KIND: GridKind;

    fn file_dims(&self) -> Dims;
    fn file_values(&self) -> Vec<f64>;
    fn from_file_values(dims: Dims, values: Vec<f64>) -> Result<Self>;

    fn to_bytes(&self) -> Vec<u8> {
        let dims = self.file_dims();
        let header = format!(
            "{MAGIC} {VERSION} {} {} {}\n",
            Self::KIND.tag(),
            dims.width,
            dims.height
        );
        let mut out = Vec::with_capacity(header.len() + 4 * dims.len());
        out.extend_from_slice(header.as_bytes());
        for v in self.file_values() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (kind, dims, payload) = parse_grid_bytes(bytes)?;
        if kind != Self::KIND {
            return Err(Error::KindMismatch {
                expected: Self::KIND.tag(),
                found: kind.tag().to_string(),
            });
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Self::from_file_values(dims, values)
    }

    fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Splits a grid file into kind, dimensions and a payload of exactly the expected size.
pub fn parse_grid_bytes(bytes: &[u8]) -> Result<(GridKind, Dims, &[u8])> {
    let newline = bytes
        .iter()
        .take(128)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MalformedHeader("no header line".into()))?;
    let header = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| Error::MalformedHeader("header is not ASCII".into()))?;
    let fields: Vec<&str> = header.split(' ').collect();
    if fields.len() != 5 || fields[0] != MAGIC || fields[1] != VERSION {
        return Err(Error::MalformedHeader(format!("unrecognized header `{header}`")));
    }
    let kind = GridKind::from_tag(fields[2])
        .ok_or_else(|| Error::MalformedHeader(format!("unknown kind `{}`", fields[2])))?;
    let parse_dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::MalformedHeader(format!("bad dimension `{s}`")))
    };
    let dims = Dims::new(parse_dim(fields[3])?, parse_dim(fields[4])?)?;
    let payload = &bytes[newline + 1..];
    let expected = dims
        .len()
        .checked_mul(4)
        .ok_or(Error::InvalidDimension {
            width: dims.width,
            height: dims.height,
        })?;
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::TrailingData {
            expected,
            found: payload.len(),
        });
    }
    Ok((kind, dims, payload))
}

impl GridFile for ImageGrid {
    const KIND: GridKind = GridKind::Image;

    fn file_dims(&self) -> Dims {
        self.dims
    }

    fn file_values(&self) -> Vec<f64> {
        self.values.clone()
    }

    fn from_file_values(dims: Dims, values: Vec<f64>) -> Result<Self> {
        ImageGrid::from_values(dims.width, dims.height, values)
    }
}

impl GridFile for ProbMap {
    const KIND: GridKind = GridKind::Prob;

    fn file_dims(&self) -> Dims {
        self.dims
    }

    fn file_values(&self) -> Vec<f64> {
        self.values.clone()
    }

    fn from_file_values(dims: Dims, values: Vec<f64>) -> Result<Self> {
        ProbMap::from_values(dims.width, dims.height, values)
    }
}

impl GridFile for BinaryMask {
    const KIND: GridKind = GridKind::Mask;

    fn file_dims(&self) -> Dims {
        self.dims
    }

    fn file_values(&self) -> Vec<f64> {
        self.to_reals()
    }

    fn from_file_values(dims: Dims, values: Vec<f64>) -> Result<Self> {
        BinaryMask::from_values(dims.width, dims.height, &values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn new_grid_fills() {
        let g = ImageGrid::new(2, 2, 0.0).unwrap();
        assert_eq!(g.values(), &[0.0; 4]);
        let g = ImageGrid::new(1, 3, 1.5).unwrap();
        assert_eq!(g.values(), &[1.5, 1.5, 1.5]);
        assert_eq!((g.width(), g.height()), (1, 3));
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(
            ImageGrid::new(0, 3, 0.0),
            Err(Error::InvalidDimension { width: 0, height: 3 })
        ));
        assert!(ImageGrid::new(3, 0, 0.0).is_err());
        assert!(ImageGrid::new(2, 2, f64::NAN).is_err());
    }

    #[test]
    fn sentinel_lands_on_row_major_index() {
        let mut g = ImageGrid::new(5, 3, 0.0).unwrap();
        g.set(2, 1, 9.0).unwrap();
        assert_eq!(g.values()[2 * 5 + 1], 9.0);
        assert_eq!(g.values().iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn prob_round_trip_uniform_half() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.lpg");
        let p = ProbMap::filled(64, 64, 0.5).unwrap();
        p.save(&path).unwrap();
        assert_eq!(ProbMap::load(&path).unwrap(), p);
    }

    #[test]
    fn header_is_exact() {
        let m = BinaryMask::from_bools(2, 1, vec![true, false]).unwrap();
        let bytes = m.to_bytes();
        assert!(bytes.starts_with(b"LPGRID v1 MASK 2 1\n"));
        assert_eq!(&bytes[19..23], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[23..27], &0.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 27);
    }

    #[test]
    fn truncated_payload_rejected() {
        let mut bytes = b"LPGRID v1 PROB 4 4\n".to_vec();
        for _ in 0..15 {
            bytes.extend_from_slice(&0.25f32.to_le_bytes());
        }
        assert!(matches!(
            ProbMap::from_bytes(&bytes),
            Err(Error::TruncatedPayload { expected: 64, found: 60 })
        ));
    }

    #[test]
    fn mask_with_fractional_value_rejected() {
        let mut bytes = b"LPGRID v1 MASK 2 1\n".to_vec();
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes.extend_from_slice(&0.5f32.to_le_bytes());
        assert!(matches!(
            BinaryMask::from_bytes(&bytes),
            Err(Error::OutOfRange { kind: "MASK", index: 1, .. })
        ));
    }

    #[test]
    fn malformed_headers_rejected() {
        for bad in [
            &b"LPGRID v2 MASK 1 1\n\0\0\0\0"[..],
            b"LPGRID v1 CUBE 1 1\n\0\0\0\0",
            b"LPGRID v1 MASK x 1\n\0\0\0\0",
            b"LPGRID v1 MASK 0 1\n",
            b"no newline here",
        ] {
            assert!(BinaryMask::from_bytes(bad).is_err());
        }
        let mut extra = b"LPGRID v1 IMAGE 1 1\n".to_vec();
        extra.extend_from_slice(&[0u8; 8]);
        assert!(matches!(
            ImageGrid::from_bytes(&extra),
            Err(Error::TrailingData { .. })
        ));
    }

    #[test]
    fn kind_mismatch_rejected() {
        let p = ProbMap::filled(2, 2, 0.25).unwrap();
        assert!(matches!(
            ImageGrid::from_bytes(&p.to_bytes()),
            Err(Error::KindMismatch { .. })
        ));
    }

    #[test]
    fn prob_out_of_range_rejected() {
        assert!(ProbMap::from_values(1, 2, vec![0.5, 1.5]).is_err());
        assert!(ProbMap::from_values(1, 1, vec![f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn image_round_trip(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let vals: Vec<f64> = (0..w * h).map(|_| rng.random_range(-1e3f32..1e3) as f64).collect();
            let g = ImageGrid::from_values(w, h, vals).unwrap();
            let back = ImageGrid::from_bytes(&g.to_bytes()).unwrap();
            prop_assert_eq!(back, g);
        }

        #[test]
        fn mask_round_trip(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let bits: Vec<bool> = (0..w * h).map(|_| rng.random()).collect();
            let m = BinaryMask::from_bools(w, h, bits).unwrap();
            prop_assert_eq!(BinaryMask::from_bytes(&m.to_bytes()).unwrap(), m);
        }
    }
}
