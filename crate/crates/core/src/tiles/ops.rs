//! Bulk tile operations in the style of the PyTorch elementwise/reduction suite.
//!
//! Arithmetic is always fp32; a bf16 destination rounds each result element.
//! Reductions run sequentially along columns so fp32 results are reproducible.

use serde::{Deserialize, Serialize};

use super::{Dtype, Major, Tile, TileError, TileVector, VecOrientation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ElementwiseOp {
    Zero,
    CopyCast(Dtype),
    Add,
    Sub,
    Mul,
    Div,
    Exp,
    Exp2,
    ScalarMul(f32),
}

/// Dispatches an elementwise op. Unary ops take one operand, binary ops two.
pub fn elementwise(op: ElementwiseOp, operands: &[&Tile]) -> Result<Tile, TileError> {
    let arity = match op {
        ElementwiseOp::Add | ElementwiseOp::Sub | ElementwiseOp::Mul | ElementwiseOp::Div => 2,
        _ => 1,
    };
    if operands.len() != arity {
        return Err(TileError::Mismatch(format!(
            "{op:?} takes {arity} operand(s), got {}",
            operands.len()
        )));
    }
    let a = operands[0];
    Ok(match op {
        ElementwiseOp::Zero => zeroed(a),
        ElementwiseOp::CopyCast(dtype) => copy_cast(a, dtype),
        ElementwiseOp::Add => add(a, operands[1])?,
        ElementwiseOp::Sub => sub(a, operands[1])?,
        ElementwiseOp::Mul => mul(a, operands[1])?,
        ElementwiseOp::Div => div(a, operands[1])?,
        ElementwiseOp::Exp => exp(a),
        ElementwiseOp::Exp2 => exp2(a),
        ElementwiseOp::ScalarMul(s) => scalar_mul(a, s),
    })
}

fn map(t: &Tile, f: impl Fn(f32) -> f32) -> Tile {
    t.like(t.dtype(), t.data().iter().map(|&x| f(x)).collect())
}

fn zip(a: &Tile, b: &Tile, f: impl Fn(f32, f32) -> f32) -> Result<Tile, TileError> {
    if a.shape() != b.shape() || a.major() != b.major() {
        return Err(TileError::Mismatch(format!(
            "{}x{} {:?} vs {}x{} {:?}",
            a.rows(),
            a.cols(),
            a.major(),
            b.rows(),
            b.cols(),
            b.major()
        )));
    }
    Ok(a.like(a.dtype(), a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()))
}

pub fn zero(t: &mut Tile) {
    t.data_mut().iter_mut().for_each(|x| *x = 0.0);
}

pub fn zeroed(t: &Tile) -> Tile {
    t.like(t.dtype(), vec![0.0; t.data().len()])
}

/// Copies into a tile of `dtype`; converting to bf16 rounds to nearest-even.
pub fn copy_cast(t: &Tile, dtype: Dtype) -> Tile {
    t.like(dtype, t.data().to_vec())
}

pub fn add(a: &Tile, b: &Tile) -> Result<Tile, TileError> {
    zip(a, b, |x, y| x + y)
}

pub fn sub(a: &Tile, b: &Tile) -> Result<Tile, TileError> {
    zip(a, b, |x, y| x - y)
}

pub fn mul(a: &Tile, b: &Tile) -> Result<Tile, TileError> {
    zip(a, b, |x, y| x * y)
}

pub fn div(a: &Tile, b: &Tile) -> Result<Tile, TileError> {
    zip(a, b, |x, y| x / y)
}

pub fn exp(t: &Tile) -> Tile {
    map(t, f32::exp)
}

pub fn exp2(t: &Tile) -> Tile {
    map(t, f32::exp2)
}

pub fn scalar_mul(t: &Tile, s: f32) -> Tile {
    map(t, |x| x * s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowBroadcast {
    SubRow,
    DivRow,
    MulRow,
}

fn check_col_vec(t: &Tile, v: &TileVector) -> Result<(), TileError> {
    if v.orientation() != VecOrientation::ColVec || v.len() != t.rows() {
        return Err(TileError::Mismatch(format!(
            "row broadcast needs a column vector of length {}, got {:?} of length {}",
            t.rows(),
            v.orientation(),
            v.len()
        )));
    }
    Ok(())
}

/// `result[r][c] = t[r][c] op v[r]`.
pub fn broadcast_row(op: RowBroadcast, t: &Tile, v: &TileVector) -> Result<Tile, TileError> {
    check_col_vec(t, v)?;
    let cols = t.cols();
    let f = |x: f32, y: f32| match op {
        RowBroadcast::SubRow => x - y,
        RowBroadcast::DivRow => x / y,
        RowBroadcast::MulRow => x * y,
    };
    let data = t.data().iter().enumerate().map(|(i, &x)| f(x, v.data()[i / cols])).collect();
    Ok(t.like(t.dtype(), data))
}

pub fn sub_row(t: &Tile, v: &TileVector) -> Result<Tile, TileError> {
    broadcast_row(RowBroadcast::SubRow, t, v)
}

pub fn div_row(t: &Tile, v: &TileVector) -> Result<Tile, TileError> {
    broadcast_row(RowBroadcast::DivRow, t, v)
}

pub fn mul_row(t: &Tile, v: &TileVector) -> Result<Tile, TileError> {
    broadcast_row(RowBroadcast::MulRow, t, v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowReduce {
    MaxAccum,
    SumAccum,
}

/// Reduces each row onto `acc`: `max(acc[r], max_c t[r][c])` or `acc[r] + sum_c t[r][c]`.
pub fn reduce_row(op: RowReduce, t: &Tile, acc: &TileVector) -> Result<TileVector, TileError> {
    check_col_vec(t, acc)?;
    let cols = t.cols();
    let data = acc
        .data()
        .iter()
        .enumerate()
        .map(|(r, &init)| {
            let row = &t.data()[r * cols..(r + 1) * cols];
            match op {
                RowReduce::MaxAccum => row.iter().fold(init, |m, &x| m.max(x)),
                RowReduce::SumAccum => row.iter().fold(init, |s, &x| s + x),
            }
        })
        .collect();
    TileVector::from_vec(VecOrientation::ColVec, data)
}

pub fn row_max_accum(t: &Tile, acc: &TileVector) -> Result<TileVector, TileError> {
    reduce_row(RowReduce::MaxAccum, t, acc)
}

pub fn row_sum_accum(t: &Tile, acc: &TileVector) -> Result<TileVector, TileError> {
    reduce_row(RowReduce::SumAccum, t, acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MmaKind {
    /// `A · B`; A row-major, B column-major.
    AB,
    /// `A · Bᵀ`; both row-major.
    ABt,
}

/// Tensor-core style multiply: `C = A·B(ᵀ) (+ C_in)`, accumulated in fp32 over
/// the inner dimension in ascending order. The result takes `c_in`'s dtype
/// and major.
pub fn mma(kind: MmaKind, accumulate: bool, a: &Tile, b: &Tile, c_in: &Tile) -> Result<Tile, TileError> {
    if a.major() != Major::RowMajor {
        return Err(TileError::Major(format!("{kind:?} requires a row-major A operand")));
    }
    let (inner, out_cols) = match kind {
        MmaKind::AB => {
            if b.major() != Major::ColMajor {
                return Err(TileError::Major("mma_AB requires a column-major B operand".into()));
            }
            (b.rows(), b.cols())
        }
        MmaKind::ABt => {
            if b.major() != Major::RowMajor {
                return Err(TileError::Major("mma_ABt requires a row-major B operand".into()));
            }
            (b.cols(), b.rows())
        }
    };
    if a.cols() != inner {
        return Err(TileError::Mismatch(format!(
            "{kind:?}: A has {} columns but B's inner dimension is {inner}",
            a.cols()
        )));
    }
    if c_in.shape() != (a.rows(), out_cols) {
        return Err(TileError::Mismatch(format!(
            "{kind:?}: accumulator is {}x{}, result is {}x{out_cols}",
            c_in.rows(),
            c_in.cols(),
            a.rows()
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let (a_cols, b_cols) = (a.cols(), b.cols());
    let mut out = Vec::with_capacity(a.rows() * out_cols);
    for i in 0..a.rows() {
        let arow = &ad[i * a_cols..(i + 1) * a_cols];
        for j in 0..out_cols {
            let mut acc = if accumulate { c_in.get(i, j) } else { 0.0 };
            match kind {
                MmaKind::AB => {
                    for (k, &x) in arow.iter().enumerate() {
                        acc += x * bd[k * b_cols + j];
                    }
                }
                MmaKind::ABt => {
                    let brow = &bd[j * b_cols..(j + 1) * b_cols];
                    for (&x, &y) in arow.iter().zip(brow) {
                        acc += x * y;
                    }
                }
            }
            out.push(acc);
        }
    }
    Ok(c_in.like(c_in.dtype(), out))
}

pub fn mma_ab(a: &Tile, b: &Tile, c: &Tile) -> Result<Tile, TileError> {
    mma(MmaKind::AB, true, a, b, c)
}

pub fn mma_abt(a: &Tile, b: &Tile, c: &Tile) -> Result<Tile, TileError> {
    mma(MmaKind::ABt, true, a, b, c)
}

/// Same logical matrix with the register major flipped.
pub fn swap_layout(t: &Tile) -> Tile {
    let mut out = t.clone();
    out.major = t.major().flipped();
    out
}
