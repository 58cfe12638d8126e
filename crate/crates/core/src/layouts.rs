//! Shared-memory tile layouts and a brute-force bank-conflict analyzer.
//!
//! Six layouts are modeled: naive row-major, padded rows, a row-XOR swizzle,
//! and the 32/64/128-byte address swizzles that tensor-core and bulk-copy
//! instructions accept. The three address swizzles operate on 16-byte atoms:
//! bits `[7 + k - 1 : 7]` of the row-major byte offset are XORed into bits
//! `[4 + k - 1 : 4]`, for `k = 1, 2, 3`.
//!
//! Banks are 4-byte words, 32 per SM. A phase of a warp access is served in one
//! pass unless two threads touch distinct words of the same bank.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_BANKS: usize = 32;
pub const BANK_WORD_BYTES: usize = 4;
/// Default `Padded` pad: one bank word.
pub const DEFAULT_PAD_BYTES: usize = BANK_WORD_BYTES;
const SWIZZLE_BASE_ALIGN: usize = 128;
const WARP_SIZE: usize = 32;
const SEGMENT_BYTES: usize = 16;
const SEGMENT_PHASE_THREADS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LayoutError {
    #[error("index ({row}, {col}) out of range for a {rows}x{cols} tile")]
    OutOfRange { row: usize, col: usize, rows: usize, cols: usize },
    #[error("width not a multiple of 32 bytes ({width_bytes} bytes)")]
    UnsupportedTile { width_bytes: usize },
    #[error("element size must be 2 or 4 bytes, got {0}")]
    ElemBytes(usize),
    #[error("invalid layout: {0}")]
    Invalid(String),
    #[error("access pattern not valid for this tile: {0}")]
    Pattern(String),
    #[error("unknown swizzle mode '{0}'")]
    UnknownMode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwizzleMode {
    NaiveRowMajor,
    Padded { pad_bytes: usize },
    RowXor,
    Sw32,
    Sw64,
    Sw128,
}

impl SwizzleMode {
    pub const ALL_SWIZZLED: [SwizzleMode; 3] = [SwizzleMode::Sw32, SwizzleMode::Sw64, SwizzleMode::Sw128];

    /// Row-width divisor (bytes) required by an address swizzle.
    pub fn width_granule(self) -> Option<usize> {
        match self {
            SwizzleMode::Sw32 => Some(32),
            SwizzleMode::Sw64 => Some(64),
            SwizzleMode::Sw128 => Some(128),
            _ => None,
        }
    }

    pub fn is_address_swizzle(self) -> bool {
        self.width_granule().is_some()
    }

    /// Modes whose offsets are a permutation of the naive footprint.
    pub fn is_permutation(self) -> bool {
        matches!(self, SwizzleMode::RowXor) || self.is_address_swizzle()
    }

    fn xor_window(self) -> Option<usize> {
        self.width_granule().map(|g| g * 8)
    }
}

impl fmt::Display for SwizzleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SwizzleMode::NaiveRowMajor => f.write_str("naive"),
            SwizzleMode::Padded { pad_bytes } => write!(f, "padded:{pad_bytes}"),
            SwizzleMode::RowXor => f.write_str("rowxor"),
            SwizzleMode::Sw32 => f.write_str("sw32"),
            SwizzleMode::Sw64 => f.write_str("sw64"),
            SwizzleMode::Sw128 => f.write_str("sw128"),
        }
    }
}

impl FromStr for SwizzleMode {
    type Err = LayoutError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "naive" | "rowmajor" | "naive_row_major" => Ok(SwizzleMode::NaiveRowMajor),
            "padded" => Ok(SwizzleMode::Padded {
                pad_bytes: DEFAULT_PAD_BYTES,
            }),
            "rowxor" | "row_xor" => Ok(SwizzleMode::RowXor),
            "sw32" => Ok(SwizzleMode::Sw32),
            "sw64" => Ok(SwizzleMode::Sw64),
            "sw128" => Ok(SwizzleMode::Sw128),
            other => match other.strip_prefix("padded:").map(str::parse::<usize>) {
                Some(Ok(pad_bytes)) => Ok(SwizzleMode::Padded { pad_bytes }),
                _ => Err(LayoutError::UnknownMode(s.to_string())),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedLayout {
    rows: usize,
    cols: usize,
    elem_bytes: usize,
    mode: SwizzleMode,
    base_align: usize,
}

impl SharedLayout {
    pub fn new(rows: usize, cols: usize, elem_bytes: usize, mode: SwizzleMode) -> Result<Self, LayoutError> {
        Self::with_base_align(rows, cols, elem_bytes, mode, SWIZZLE_BASE_ALIGN)
    }

    pub fn with_base_align(rows: usize, cols: usize, elem_bytes: usize, mode: SwizzleMode, base_align: usize) -> Result<Self, LayoutError> {
        if elem_bytes != 2 && elem_bytes != 4 {
            return Err(LayoutError::ElemBytes(elem_bytes));
        }
        if rows == 0 || cols == 0 {
            return Err(LayoutError::Invalid(format!("empty shape {rows}x{cols}")));
        }
        let width = cols * elem_bytes;
        match mode {
            SwizzleMode::Padded { pad_bytes } => {
                if pad_bytes == 0 || pad_bytes % elem_bytes != 0 {
                    return Err(LayoutError::Invalid(format!(
                        "pad of {pad_bytes} bytes must be a positive multiple of the {elem_bytes}-byte element"
                    )));
                }
            }
            m if m.is_address_swizzle() => {
                let granule = m.width_granule().unwrap_or(1);
                if !width.is_multiple_of(granule) {
                    return Err(LayoutError::Invalid(format!(
                        "{m} requires a row width multiple of {granule} bytes, got {width}"
                    )));
                }
                if base_align < SWIZZLE_BASE_ALIGN || !base_align.is_multiple_of(SWIZZLE_BASE_ALIGN) {
                    return Err(LayoutError::Invalid(format!(
                        "{m} requires a 128-byte aligned base, got alignment {base_align}"
                    )));
                }
            }
            _ => {}
        }
        Ok(SharedLayout {
            rows,
            cols,
            elem_bytes,
            mode,
            base_align,
        })
    }

    /// Layout with the widest address swizzle the row width allows.
    pub fn auto(rows: usize, cols: usize, elem_bytes: usize) -> Result<Self, LayoutError> {
        let mode = select_swizzle(rows, cols, elem_bytes)?;
        Self::new(rows, cols, elem_bytes, mode)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn elem_bytes(&self) -> usize {
        self.elem_bytes
    }

    pub fn mode(&self) -> SwizzleMode {
        self.mode
    }

    pub fn base_align(&self) -> usize {
        self.base_align
    }

    pub fn row_bytes(&self) -> usize {
        self.cols * self.elem_bytes
    }

    /// Bytes occupied by the tile, including padding.
    pub fn footprint_bytes(&self) -> usize {
        match self.mode {
            SwizzleMode::Padded { pad_bytes } => self.rows * (self.row_bytes() + pad_bytes),
            _ => self.rows * self.row_bytes(),
        }
    }

    pub fn element_offset(&self, row: usize, col: usize) -> Result<usize, LayoutError> {
        if row >= self.rows || col >= self.cols {
            return Err(LayoutError::OutOfRange {
                row,
                col,
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(self.offset_unchecked(row, col))
    }

    pub(crate) fn offset_unchecked(&self, row: usize, col: usize) -> usize {
        let linear = (row * self.cols + col) * self.elem_bytes;
        match self.mode {
            SwizzleMode::NaiveRowMajor => linear,
            SwizzleMode::Padded { pad_bytes } => row * (self.row_bytes() + pad_bytes) + col * self.elem_bytes,
            SwizzleMode::RowXor => linear ^ (row << 2),
            m => {
                let window = m.xor_window().expect("address swizzle");
                linear ^ (((linear % window) >> 7) << 4)
            }
        }
    }
}

/// Bank holding the byte at `offset`.
pub fn bank_of(offset: usize) -> usize {
    (offset / BANK_WORD_BYTES) % NUM_BANKS
}

/// Widest address swizzle whose granule divides the row width.
pub fn select_swizzle(rows: usize, cols: usize, elem_bytes: usize) -> Result<SwizzleMode, LayoutError> {
    if rows == 0 || cols == 0 {
        return Err(LayoutError::Invalid(format!("empty shape {rows}x{cols}")));
    }
    if elem_bytes != 2 && elem_bytes != 4 {
        return Err(LayoutError::ElemBytes(elem_bytes));
    }
    let width = cols * elem_bytes;
    [SwizzleMode::Sw128, SwizzleMode::Sw64, SwizzleMode::Sw32]
        .into_iter()
        .find(|m| width.is_multiple_of(m.width_granule().unwrap_or(usize::MAX)))
        .ok_or(LayoutError::UnsupportedTile { width_bytes: width })
}

/// How a warp touches a shared tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessPattern {
    /// 32 threads read consecutive 4-byte words along one row.
    RowLinear { row: usize, start_col: usize },
    /// Thread `t` reads the word holding element `(t, col)`.
    ColumnWord { col: usize },
    /// Thread `t` reads 16 contiguous bytes at row `t % 16`, segment `t / 16`;
    /// served in four phases of eight threads. A model of the ldmatrix-style
    /// fragment load, not a hardware trace.
    TensorCoreSegments,
}

impl fmt::Display for AccessPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AccessPattern::RowLinear { row, start_col } => write!(f, "row({row},{start_col})"),
            AccessPattern::ColumnWord { col } => write!(f, "column({col})"),
            AccessPattern::TensorCoreSegments => f.write_str("tensorcore"),
        }
    }
}

/// One thread's byte range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThreadAccess {
    pub thread: usize,
    pub bytes: Range<usize>,
}

impl AccessPattern {
    /// Expands the pattern into phases of per-thread byte ranges.
    pub fn phases(&self, layout: &SharedLayout) -> Result<Vec<Vec<ThreadAccess>>, LayoutError> {
        let eb = layout.elem_bytes();
        match *self {
            AccessPattern::RowLinear { row, start_col } => {
                let per_word = BANK_WORD_BYTES / eb;
                let last = start_col + WARP_SIZE * per_word;
                if row >= layout.rows() || start_col % per_word != 0 || last > layout.cols() {
                    return Err(LayoutError::Pattern(format!(
                        "row access at ({row}, {start_col}) needs 32 words inside a {}x{} tile",
                        layout.rows(),
                        layout.cols()
                    )));
                }
                let phase = (0..WARP_SIZE)
                    .map(|t| {
                        let start = layout.offset_unchecked(row, start_col + t * per_word);
                        ThreadAccess {
                            thread: t,
                            bytes: start..start + BANK_WORD_BYTES,
                        }
                    })
                    .collect();
                Ok(vec![phase])
            }
            AccessPattern::ColumnWord { col } => {
                if col >= layout.cols() {
                    return Err(LayoutError::Pattern(format!(
                        "column {col} outside a tile of {} columns",
                        layout.cols()
                    )));
                }
                let phase = (0..WARP_SIZE.min(layout.rows()))
                    .map(|t| {
                        let off = layout.offset_unchecked(t, col);
                        let word = off / BANK_WORD_BYTES * BANK_WORD_BYTES;
                        ThreadAccess {
                            thread: t,
                            bytes: word..word + BANK_WORD_BYTES,
                        }
                    })
                    .collect();
                Ok(vec![phase])
            }
            AccessPattern::TensorCoreSegments => {
                let seg_elems = SEGMENT_BYTES / eb;
                if layout.rows() < 16 || layout.cols() < 2 * seg_elems {
                    return Err(LayoutError::Pattern(format!(
                        "tensor-core segments need at least 16 rows and 32 bytes per row, tile is {}x{}",
                        layout.rows(),
                        layout.cols()
                    )));
                }
                let threads: Vec<ThreadAccess> = (0..WARP_SIZE)
                    .map(|t| {
                        let row = t % 16;
                        let col = (t / 16) * seg_elems;
                        let start = layout.offset_unchecked(row, col);
                        ThreadAccess {
                            thread: t,
                            bytes: start..start + SEGMENT_BYTES,
                        }
                    })
                    .collect();
                Ok(threads.chunks(SEGMENT_PHASE_THREADS).map(<[_]>::to_vec).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictReport {
    /// 1 means conflict-free.
    pub max_way: usize,
    pub per_phase_way: Vec<usize>,
    pub worst_bank: usize,
    /// 16-byte accesses whose start is not 16-byte aligned.
    pub misaligned_segments: usize,
}

pub fn analyze_conflicts(layout: &SharedLayout, pattern: &AccessPattern) -> Result<ConflictReport, LayoutError> {
    let phases = pattern.phases(layout)?;
    let mut per_phase_way = Vec::with_capacity(phases.len());
    let mut worst = (1usize, 0usize);
    let mut misaligned_segments = 0;
    for phase in &phases {
        // bank -> distinct word addresses; identical words are broadcast
        let mut banks: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for access in phase {
            if access.bytes.len() == SEGMENT_BYTES && access.bytes.start % SEGMENT_BYTES != 0 {
                misaligned_segments += 1;
            }
            let first = access.bytes.start / BANK_WORD_BYTES;
            let last = (access.bytes.end - 1) / BANK_WORD_BYTES;
            for word in first..=last {
                banks.entry(word % NUM_BANKS).or_default().insert(word);
            }
        }
        let (bank, way) = banks
            .iter()
            .map(|(&bank, words)| (bank, words.len()))
            .fold((0, 1), |best, cur| if cur.1 > best.1 { cur } else { best });
        if way > worst.0 {
            worst = (way, bank);
        }
        per_phase_way.push(way);
    }
    Ok(ConflictReport {
        max_way: per_phase_way.iter().copied().max().unwrap_or(1),
        per_phase_way,
        worst_bank: worst.1,
        misaligned_segments,
    })
}

/// True iff no two elements overlap and, for permuting modes, the covered
/// bytes are exactly the naive footprint.
pub fn check_bijective(layout: &SharedLayout) -> bool {
    let eb = layout.elem_bytes();
    let mut covered = HashSet::with_capacity(layout.rows() * layout.cols() * eb);
    for r in 0..layout.rows() {
        for c in 0..layout.cols() {
            let off = layout.offset_unchecked(r, c);
            if !off.is_multiple_of(eb) {
                return false;
            }
            for b in off..off + eb {
                if !covered.insert(b) {
                    return false;
                }
            }
        }
    }
    if layout.mode().is_permutation() {
        let naive = layout.rows() * layout.row_bytes();
        covered.len() == naive && covered.iter().all(|&b| b < naive)
    } else {
        covered.iter().all(|&b| b < layout.footprint_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bf16_32x64(mode: SwizzleMode) -> SharedLayout {
        SharedLayout::new(32, 64, 2, mode).unwrap()
    }

    #[test]
    fn offsets_hand_values() {
        assert_eq!(bf16_32x64(SwizzleMode::NaiveRowMajor).element_offset(1, 0).unwrap(), 128);
        assert_eq!(bf16_32x64(SwizzleMode::Sw128).element_offset(2, 0).unwrap(), 288);
        assert_eq!(bf16_32x64(SwizzleMode::Sw32).element_offset(1, 0).unwrap(), 144);
        assert_eq!(bf16_32x64(SwizzleMode::RowXor).element_offset(3, 0).unwrap(), (3 * 128) ^ 12);
        let padded = SharedLayout::new(32, 64, 4, SwizzleMode::Padded { pad_bytes: 4 }).unwrap();
        assert_eq!(padded.element_offset(2, 1).unwrap(), 2 * 260 + 4);
    }

    #[test]
    fn out_of_range() {
        let l = bf16_32x64(SwizzleMode::Sw128);
        assert!(matches!(l.element_offset(32, 0), Err(LayoutError::OutOfRange { .. })));
        assert!(l.element_offset(0, 64).is_err());
    }

    #[test]
    fn banks() {
        assert_eq!(bank_of(0), 0);
        assert_eq!(bank_of(128), 0);
        assert_eq!(bank_of(20), 5);
    }

    #[test]
    fn selection() {
        assert_eq!(select_swizzle(16, 64, 2).unwrap(), SwizzleMode::Sw128);
        assert_eq!(select_swizzle(16, 32, 2).unwrap(), SwizzleMode::Sw64);
        assert_eq!(select_swizzle(16, 16, 2).unwrap(), SwizzleMode::Sw32);
        assert_eq!(select_swizzle(16, 32, 4).unwrap(), SwizzleMode::Sw128);
        let err = select_swizzle(16, 24, 2).unwrap_err();
        assert_eq!(err, LayoutError::UnsupportedTile { width_bytes: 48 });
        assert_eq!(err.to_string(), "width not a multiple of 32 bytes (48 bytes)");
    }

    #[test]
    fn swizzle_validity_checks() {
        assert!(SharedLayout::new(16, 16, 2, SwizzleMode::Sw64).is_err());
        assert!(SharedLayout::with_base_align(16, 64, 2, SwizzleMode::Sw128, 64).is_err());
        assert!(SharedLayout::new(16, 64, 2, SwizzleMode::Padded { pad_bytes: 0 }).is_err());
        assert!(SharedLayout::new(16, 64, 3, SwizzleMode::NaiveRowMajor).is_err());
    }

    #[test]
    fn conflict_table() {
        let ways: Vec<usize> = [SwizzleMode::NaiveRowMajor, SwizzleMode::Sw32, SwizzleMode::Sw64, SwizzleMode::Sw128]
            .into_iter()
            .map(|m| {
                analyze_conflicts(&bf16_32x64(m), &AccessPattern::TensorCoreSegments)
                    .unwrap()
                    .max_way
            })
            .collect();
        assert_eq!(ways, vec![8, 4, 2, 1]);
    }

    #[test]
    fn row_access_is_conflict_free() {
        let r = analyze_conflicts(
            &bf16_32x64(SwizzleMode::NaiveRowMajor),
            &AccessPattern::RowLinear { row: 0, start_col: 0 },
        )
        .unwrap();
        assert_eq!(r.max_way, 1);
        assert_eq!(r.per_phase_way, vec![1]);
    }

    #[test]
    fn padded_column_access() {
        let padded = SharedLayout::new(32, 64, 4, SwizzleMode::Padded { pad_bytes: 4 }).unwrap();
        let col = analyze_conflicts(&padded, &AccessPattern::ColumnWord { col: 0 }).unwrap();
        assert_eq!(col.max_way, 1);
        assert_eq!(col.misaligned_segments, 0);
        // rows not a multiple of 4 start off a 16-byte boundary (pitch 260)
        let seg = analyze_conflicts(&padded, &AccessPattern::TensorCoreSegments).unwrap();
        assert_eq!(seg.misaligned_segments, 24);
        // without padding every row of a column lands in one bank
        let naive = SharedLayout::new(32, 64, 4, SwizzleMode::NaiveRowMajor).unwrap();
        let naive_col = analyze_conflicts(&naive, &AccessPattern::ColumnWord { col: 0 }).unwrap();
        assert_eq!(naive_col.max_way, 32);
        assert_eq!(naive_col.worst_bank, 0);
    }

    #[test]
    fn column_word_broadcast_dedup() {
        // two bf16 elements of a row share a word; a 16-row tile with row pitch
        // of one word puts all rows in distinct words of distinct banks
        let l = SharedLayout::new(16, 2, 2, SwizzleMode::NaiveRowMajor).unwrap();
        let r = analyze_conflicts(&l, &AccessPattern::ColumnWord { col: 1 }).unwrap();
        assert_eq!(r.max_way, 1);
    }

    #[test]
    fn pattern_errors() {
        let l = SharedLayout::new(16, 16, 2, SwizzleMode::Sw32).unwrap();
        assert!(analyze_conflicts(&l, &AccessPattern::RowLinear { row: 0, start_col: 0 }).is_err());
        assert!(analyze_conflicts(&l, &AccessPattern::ColumnWord { col: 16 }).is_err());
        let thin = SharedLayout::new(16, 8, 2, SwizzleMode::NaiveRowMajor).unwrap();
        assert!(analyze_conflicts(&thin, &AccessPattern::TensorCoreSegments).is_err());
    }

    #[test]
    fn bijective_examples() {
        assert!(check_bijective(&bf16_32x64(SwizzleMode::Sw128)));
        let padded = SharedLayout::new(32, 64, 4, SwizzleMode::Padded { pad_bytes: 4 }).unwrap();
        assert!(check_bijective(&padded));
        assert_eq!(padded.footprint_bytes(), 32 * 65 * 4);
        assert!(padded.footprint_bytes() > 32 * 64 * 4);
    }

    #[test]
    fn mode_names_parse() {
        for m in [
            SwizzleMode::NaiveRowMajor,
            SwizzleMode::Padded { pad_bytes: 8 },
            SwizzleMode::RowXor,
            SwizzleMode::Sw32,
            SwizzleMode::Sw64,
            SwizzleMode::Sw128,
        ] {
            assert_eq!(m.to_string().parse::<SwizzleMode>().unwrap(), m);
        }
        assert_eq!("padded".parse::<SwizzleMode>().unwrap(), SwizzleMode::Padded { pad_bytes: 4 });
        assert!("sw256".parse::<SwizzleMode>().is_err());
    }
}
