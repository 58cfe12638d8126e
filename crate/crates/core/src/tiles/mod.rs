//! Tiles at the register, shared and global levels.
//!
//! Register tiles hold fp32 values in logical row-major order; the `major`
//! flag records the register layout the tile claims and is what operations
//! like `mma` check. bf16 is emulated: values are stored as f32 but rounded
//! to nearest-even bf16 whenever they land in a bf16 tile.
//!
//! Shared tiles hold raw bytes. Every element read or written goes through
//! [`SharedLayout::element_offset`], so the byte image of a shared tile is
//! exactly what the swizzle prescribes.

pub mod io;
pub mod ops;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layouts::{LayoutError, SharedLayout, SwizzleMode};

pub use ops::*;

/// Register tiles are built from 16x16 base tiles.
pub const BASE_TILE: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TileError {
    #[error("tile dimensions must be positive multiples of 16, got {rows}x{cols}")]
    Shape { rows: usize, cols: usize },
    #[error("shape mismatch: {0}")]
    Mismatch(String),
    #[error("layout violation: {0}")]
    Major(String),
    #[error("vector length must be a positive multiple of 16, got {0}")]
    VectorLength(usize),
    #[error("coordinate {coord} out of range for tensor {dims:?} with {rows}x{cols} tiles")]
    Coord {
        coord: Coord4,
        dims: [usize; 4],
        rows: usize,
        cols: usize,
    },
    #[error("data length {got} does not match shape (expected {expected})")]
    DataLength { expected: usize, got: usize },
    #[error("unsupported transfer: {0}")]
    Transfer(String),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("tensor i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    Bf16,
}

impl Dtype {
    pub fn bytes(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::Bf16 => 2,
        }
    }

    /// Rounds `x` to the nearest value representable in this dtype.
    pub fn round(self, x: f32) -> f32 {
        match self {
            Dtype::F32 => x,
            Dtype::Bf16 => half::bf16::from_f32(x).to_f32(),
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dtype::F32 => "fp32",
            Dtype::Bf16 => "bf16",
        })
    }
}

impl std::str::FromStr for Dtype {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "f32" | "fp32" | "float32" => Ok(Dtype::F32),
            "bf16" | "bfloat16" => Ok(Dtype::Bf16),
            other => Err(format!("unknown dtype '{other}' (expected fp32 or bf16)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Major {
    RowMajor,
    ColMajor,
}

impl Major {
    pub fn flipped(self) -> Self {
        match self {
            Major::RowMajor => Major::ColMajor,
            Major::ColMajor => Major::RowMajor,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    dtype: Dtype,
    rows: usize,
    cols: usize,
    major: Major,
    data: Vec<f32>,
}

fn check_tile_shape(rows: usize, cols: usize) -> Result<(), TileError> {
    if rows == 0 || cols == 0 || !rows.is_multiple_of(BASE_TILE) || !cols.is_multiple_of(BASE_TILE) {
        return Err(TileError::Shape { rows, cols });
    }
    Ok(())
}

impl Tile {
    pub fn zeros(rows: usize, cols: usize, dtype: Dtype, major: Major) -> Result<Self, TileError> {
        check_tile_shape(rows, cols)?;
        Ok(Tile {
            dtype,
            rows,
            cols,
            major,
            data: vec![0.0; rows * cols],
        })
    }

    /// Builds a tile from logical row-major values, rounding to `dtype`.
    pub fn from_vec(rows: usize, cols: usize, dtype: Dtype, major: Major, mut data: Vec<f32>) -> Result<Self, TileError> {
        check_tile_shape(rows, cols)?;
        if data.len() != rows * cols {
            return Err(TileError::DataLength {
                expected: rows * cols,
                got: data.len(),
            });
        }
        if dtype == Dtype::Bf16 {
            data.iter_mut().for_each(|x| *x = dtype.round(*x));
        }
        Ok(Tile {
            dtype,
            rows,
            cols,
            major,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, dtype: Dtype, major: Major, f: impl Fn(usize, usize) -> f32) -> Result<Self, TileError> {
        let data = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        Self::from_vec(rows, cols, dtype, major, data)
    }

    pub fn identity(n: usize, dtype: Dtype, major: Major) -> Result<Self, TileError> {
        Self::from_fn(n, n, dtype, major, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn major(&self) -> Major {
        self.major
    }

    /// Logical row-major values.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.data[row * self.cols + col] = self.dtype.round(value);
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub(crate) fn like(&self, dtype: Dtype, data: Vec<f32>) -> Tile {
        let mut t = Tile {
            dtype,
            rows: self.rows,
            cols: self.cols,
            major: self.major,
            data,
        };
        if dtype == Dtype::Bf16 {
            t.data.iter_mut().for_each(|x| *x = dtype.round(*x));
        }
        t
    }

    /// Columns `start..start + count` as a new tile.
    pub fn slice_cols(&self, start: usize, count: usize) -> Result<Tile, TileError> {
        if start + count > self.cols {
            return Err(TileError::Mismatch(format!(
                "column slice {start}..{} of a {}-column tile",
                start + count,
                self.cols
            )));
        }
        Tile::from_fn(self.rows, count, self.dtype, self.major, |r, c| self.get(r, start + c))
    }

    /// Horizontal concatenation; all parts must agree in rows, dtype and major.
    pub fn hstack(parts: &[&Tile]) -> Result<Tile, TileError> {
        let first = parts.first().ok_or_else(|| TileError::Mismatch("hstack of zero tiles".into()))?;
        if parts
            .iter()
            .any(|t| t.rows != first.rows || t.dtype != first.dtype || t.major != first.major)
        {
            return Err(TileError::Mismatch("hstack parts differ in rows, dtype or major".into()));
        }
        let cols: usize = parts.iter().map(|t| t.cols).sum();
        let mut data = Vec::with_capacity(first.rows * cols);
        for r in 0..first.rows {
            for t in parts {
                data.extend_from_slice(&t.data[r * t.cols..(r + 1) * t.cols]);
            }
        }
        Tile::from_vec(first.rows, cols, first.dtype, first.major, data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VecOrientation {
    /// One value per tile row.
    ColVec,
    /// One value per tile column.
    RowVec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileVector {
    orientation: VecOrientation,
    data: Vec<f32>,
}

impl TileVector {
    pub fn filled(len: usize, orientation: VecOrientation, value: f32) -> Result<Self, TileError> {
        Self::from_vec(orientation, vec![value; len])
    }

    pub fn col(len: usize, value: f32) -> Result<Self, TileError> {
        Self::filled(len, VecOrientation::ColVec, value)
    }

    pub fn from_vec(orientation: VecOrientation, data: Vec<f32>) -> Result<Self, TileError> {
        if data.is_empty() || !data.len().is_multiple_of(BASE_TILE) {
            return Err(TileError::VectorLength(data.len()));
        }
        Ok(TileVector { orientation, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn orientation(&self) -> VecOrientation {
        self.orientation
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> TileVector {
        TileVector {
            orientation: self.orientation,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_with(&self, other: &TileVector, f: impl Fn(f32, f32) -> f32) -> Result<TileVector, TileError> {
        if self.len() != other.len() || self.orientation != other.orientation {
            return Err(TileError::Mismatch(format!(
                "vector {:?}[{}] vs {:?}[{}]",
                self.orientation,
                self.len(),
                other.orientation,
                other.len()
            )));
        }
        Ok(TileVector {
            orientation: self.orientation,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn scale(&self, s: f32) -> TileVector {
        self.map(|x| x * s)
    }

    pub fn exp2(&self) -> TileVector {
        self.map(f32::exp2)
    }

    pub fn sub(&self, other: &TileVector) -> Result<TileVector, TileError> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &TileVector) -> Result<TileVector, TileError> {
        self.zip_with(other, |a, b| a * b)
    }
}

/// Tile-granular coordinate into a 4D tensor: `{batch, depth, row-block, col-block}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Coord4 {
    pub b: usize,
    pub d: usize,
    pub r: usize,
    pub c: usize,
}

impl Coord4 {
    pub fn new(b: usize, d: usize, r: usize, c: usize) -> Self {
        Coord4 { b, d, r, c }
    }
}

impl fmt::Display for Coord4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}, {}, {}, {}}}", self.b, self.d, self.r, self.c)
    }
}

/// A dense 4D tensor `{batch, depth, rows, cols}` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalTensor {
    dims: [usize; 4],
    dtype: Dtype,
    data: Vec<f32>,
}

impl GlobalTensor {
    pub fn zeros(dims: [usize; 4], dtype: Dtype) -> Self {
        GlobalTensor {
            dims,
            dtype,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 4], dtype: Dtype, mut data: Vec<f32>) -> Result<Self, TileError> {
        let expected = dims.iter().product();
        if data.len() != expected {
            return Err(TileError::DataLength { expected, got: data.len() });
        }
        if dtype == Dtype::Bf16 {
            data.iter_mut().for_each(|x| *x = dtype.round(*x));
        }
        Ok(GlobalTensor { dims, dtype, data })
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn size_bytes(&self) -> usize {
        self.data.len() * self.dtype.bytes()
    }

    pub fn index(&self, b: usize, d: usize, r: usize, c: usize) -> usize {
        let [_, depth, rows, cols] = self.dims;
        ((b * depth + d) * rows + r) * cols + c
    }

    pub fn get(&self, b: usize, d: usize, r: usize, c: usize) -> f32 {
        self.data[self.index(b, d, r, c)]
    }

    pub fn set(&mut self, b: usize, d: usize, r: usize, c: usize, value: f32) {
        let i = self.index(b, d, r, c);
        self.data[i] = self.dtype.round(value);
    }

    /// Origin (row, col) of a tile of `rows x cols` at `coord`, after range checks.
    fn tile_origin(&self, coord: Coord4, rows: usize, cols: usize) -> Result<(usize, usize), TileError> {
        let [batch, depth, trows, tcols] = self.dims;
        let r0 = coord.r * rows;
        let c0 = coord.c * cols;
        if coord.b >= batch || coord.d >= depth || r0 + rows > trows || c0 + cols > tcols {
            return Err(TileError::Coord {
                coord,
                dims: self.dims,
                rows,
                cols,
            });
        }
        Ok((r0, c0))
    }

    fn read_block(&self, coord: Coord4, rows: usize, cols: usize) -> Result<Vec<f32>, TileError> {
        let (r0, c0) = self.tile_origin(coord, rows, cols)?;
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let start = self.index(coord.b, coord.d, r0 + r, c0);
            out.extend_from_slice(&self.data[start..start + cols]);
        }
        Ok(out)
    }

    fn write_block(&mut self, coord: Coord4, rows: usize, cols: usize, values: &[f32]) -> Result<(), TileError> {
        let (r0, c0) = self.tile_origin(coord, rows, cols)?;
        let dtype = self.dtype;
        for r in 0..rows {
            let start = self.index(coord.b, coord.d, r0 + r, c0);
            for (dst, &v) in self.data[start..start + cols].iter_mut().zip(&values[r * cols..(r + 1) * cols]) {
                *dst = dtype.round(v);
            }
        }
        Ok(())
    }
}

/// A tile resident in shared memory, stored as raw bytes under a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedTile {
    layout: SharedLayout,
    dtype: Dtype,
    bytes: Vec<u8>,
}

impl SharedTile {
    /// Shared tile with the widest swizzle its width supports.
    pub fn new(rows: usize, cols: usize, dtype: Dtype) -> Result<Self, TileError> {
        check_tile_shape(rows, cols)?;
        let layout = SharedLayout::auto(rows, cols, dtype.bytes())?;
        Self::with_layout(layout, dtype)
    }

    pub fn with_layout(layout: SharedLayout, dtype: Dtype) -> Result<Self, TileError> {
        check_tile_shape(layout.rows(), layout.cols())?;
        if layout.elem_bytes() != dtype.bytes() {
            return Err(TileError::Mismatch(format!(
                "layout element size {} does not match {dtype}",
                layout.elem_bytes()
            )));
        }
        Ok(SharedTile {
            layout,
            dtype,
            bytes: vec![0; layout.footprint_bytes()],
        })
    }

    pub fn layout(&self) -> &SharedLayout {
        &self.layout
    }

    pub fn mode(&self) -> SwizzleMode {
        self.layout.mode()
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn rows(&self) -> usize {
        self.layout.rows()
    }

    pub fn cols(&self) -> usize {
        self.layout.cols()
    }

    /// Raw shared-memory image.
    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn get(&self, row: usize, col: usize) -> Result<f32, TileError> {
        let off = self.layout.element_offset(row, col)?;
        Ok(match self.dtype {
            Dtype::F32 => f32::from_le_bytes(self.bytes[off..off + 4].try_into().expect("4 bytes")),
            Dtype::Bf16 => half::bf16::from_le_bytes([self.bytes[off], self.bytes[off + 1]]).to_f32(),
        })
    }

    pub fn set(&mut self, row: usize, col: usize, value: f32) -> Result<(), TileError> {
        let off = self.layout.element_offset(row, col)?;
        match self.dtype {
            Dtype::F32 => self.bytes[off..off + 4].copy_from_slice(&value.to_le_bytes()),
            Dtype::Bf16 => self.bytes[off..off + 2].copy_from_slice(&half::bf16::from_f32(value).to_le_bytes()),
        }
        Ok(())
    }

    fn read_all(&self) -> Vec<f32> {
        let (rows, cols) = (self.rows(), self.cols());
        (0..rows * cols)
            .map(|i| self.get(i / cols, i % cols).expect("index in range"))
            .collect()
    }

    fn write_all(&mut self, values: &[f32]) {
        let cols = self.cols();
        for (i, &v) in values.iter().enumerate() {
            self.set(i / cols, i % cols, v).expect("index in range");
        }
    }

    /// Convenience: a shared tile holding `tile`'s values.
    pub fn from_tile(tile: &Tile) -> Result<Self, TileError> {
        let mut s = SharedTile::new(tile.rows(), tile.cols(), tile.dtype())?;
        transfer(Source::Register(tile), Dest::Shared(&mut s))?;
        Ok(s)
    }

    /// Convenience: loads this shared tile into a register tile of `major`.
    pub fn to_tile(&self, dtype: Dtype, major: Major) -> Result<Tile, TileError> {
        let mut t = Tile::zeros(self.rows(), self.cols(), dtype, major)?;
        transfer(Source::Shared(self), Dest::Register(&mut t))?;
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Global,
    Shared,
    Register,
}

pub enum Source<'a> {
    Global(&'a GlobalTensor, Coord4),
    Shared(&'a SharedTile),
    Register(&'a Tile),
}

pub enum Dest<'a> {
    Global(&'a mut GlobalTensor, Coord4),
    Shared(&'a mut SharedTile),
    Register(&'a mut Tile),
}

/// What a transfer moved, for traffic accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub from: Level,
    pub to: Level,
    pub rows: usize,
    pub cols: usize,
    /// Bytes written at the destination.
    pub bytes: usize,
    /// Layout of the shared side, if any.
    pub shared_mode: Option<SwizzleMode>,
}

impl Source<'_> {
    fn level(&self) -> Level {
        match self {
            Source::Global(..) => Level::Global,
            Source::Shared(_) => Level::Shared,
            Source::Register(_) => Level::Register,
        }
    }
}

impl Dest<'_> {
    fn level(&self) -> Level {
        match self {
            Dest::Global(..) => Level::Global,
            Dest::Shared(_) => Level::Shared,
            Dest::Register(_) => Level::Register,
        }
    }

    fn shape(&self) -> Option<(usize, usize)> {
        match self {
            Dest::Global(..) => None,
            Dest::Shared(s) => Some((s.rows(), s.cols())),
            Dest::Register(t) => Some(t.shape()),
        }
    }
}

/// Copies one tile between memory levels, rounding into the destination dtype.
pub fn transfer(src: Source<'_>, dst: Dest<'_>) -> Result<TransferRecord, TileError> {
    let src_shape = match &src {
        Source::Global(..) => None,
        Source::Shared(s) => Some((s.rows(), s.cols())),
        Source::Register(t) => Some(t.shape()),
    };
    let (rows, cols) = match (src_shape, dst.shape()) {
        (None, None) => return Err(TileError::Transfer("global to global has no tile shape".into())),
        (Some(a), Some(b)) if a != b => {
            return Err(TileError::Mismatch(format!(
                "source {}x{} vs destination {}x{}",
                a.0, a.1, b.0, b.1
            )))
        }
        (Some(s), _) | (None, Some(s)) => s,
    };
    let mut shared_mode = None;
    let (from, to) = (src.level(), dst.level());
    let values = match src {
        Source::Global(g, coord) => g.read_block(coord, rows, cols)?,
        Source::Shared(s) => {
            shared_mode = Some(s.mode());
            s.read_all()
        }
        Source::Register(t) => t.data().to_vec(),
    };
    let bytes = match dst {
        Dest::Global(g, coord) => {
            g.write_block(coord, rows, cols, &values)?;
            rows * cols * g.dtype().bytes()
        }
        Dest::Shared(s) => {
            shared_mode = Some(s.mode());
            s.write_all(&values);
            rows * cols * s.dtype().bytes()
        }
        Dest::Register(t) => {
            let dtype = t.dtype();
            for (d, v) in t.data_mut().iter_mut().zip(values) {
                *d = dtype.round(v);
            }
            rows * cols * dtype.bytes()
        }
    };
    Ok(TransferRecord {
        from,
        to,
        rows,
        cols,
        bytes,
        shared_mode,
    })
}
