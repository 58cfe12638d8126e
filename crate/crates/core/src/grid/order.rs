use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::GridError;

/// The tile coordinate of the `task`-th block under supergrouping: runs of
/// `super_m` block-rows are walked column by column, and leftover rows at the
/// bottom are walked the same way as one final, shorter group.
pub fn supergroup_coord(task: usize, rows: usize, cols: usize, super_m: usize) -> Option<(usize, usize)> {
    if rows == 0 || cols == 0 || super_m == 0 || task >= rows * cols {
        return None;
    }
    let super_rows = (rows / super_m) * super_m;
    let final_rows = rows - super_rows;
    let super_repeat = super_m * cols;
    if task < super_rows * cols {
        Some((super_m * (task / super_repeat) + task % super_m, (task % super_repeat) / super_m))
    } else {
        let rid = task - super_rows * cols;
        Some((super_rows + rid % final_rows, rid / final_rows))
    }
}

pub fn supergroup_order(rows: usize, cols: usize, super_m: usize) -> Result<Vec<(usize, usize)>, GridError> {
    if rows == 0 || cols == 0 || super_m == 0 {
        return Err(GridError::Invalid(format!(
            "extents and group size must be positive, got {rows}x{cols} with group {super_m}"
        )));
    }
    Ok((0..rows * cols)
        .map(|t| supergroup_coord(t, rows, cols, super_m).expect("task in range"))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    B,
    H,
    N,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::B => "B",
            Axis::H => "H",
            Axis::N => "N",
        })
    }
}

/// A block of a launch grid: a GEMM output tile or an attention
/// (batch, head, query-block) triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockCoord {
    Tile { row: usize, col: usize },
    Attention { b: usize, h: usize, n: usize },
}

/// The order in which blocks are dispatched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "order", rename_all = "snake_case")]
pub enum BlockOrder {
    RowMajor {
        rows: usize,
        cols: usize,
    },
    SuperGrouped {
        rows: usize,
        cols: usize,
        super_m: usize,
    },
    /// `axes` lists the grid axes fastest-varying first, so `[N, H, B]`
    /// dispatches every query block of one head before moving on.
    Attention {
        batch: usize,
        heads: usize,
        seq_blocks: usize,
        axes: [Axis; 3],
    },
}

impl BlockOrder {
    pub fn validate(&self) -> Result<(), GridError> {
        let extents: &[usize] = match self {
            BlockOrder::RowMajor { rows, cols } => &[*rows, *cols],
            BlockOrder::SuperGrouped { rows, cols, super_m } => &[*rows, *cols, *super_m],
            BlockOrder::Attention {
                batch,
                heads,
                seq_blocks,
                axes,
            } => {
                let mut seen = [false; 3];
                for a in axes {
                    seen[*a as usize] = true;
                }
                if seen.contains(&false) {
                    return Err(GridError::Invalid(format!("axes {axes:?} are not a permutation of B, H, N")));
                }
                &[*batch, *heads, *seq_blocks]
            }
        };
        if extents.contains(&0) {
            return Err(GridError::Invalid(format!("extents must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        match self {
            BlockOrder::RowMajor { rows, cols } | BlockOrder::SuperGrouped { rows, cols, .. } => rows * cols,
            BlockOrder::Attention {
                batch, heads, seq_blocks, ..
            } => batch * heads * seq_blocks,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn blocks(&self) -> Result<Vec<BlockCoord>, GridError> {
        self.validate()?;
        Ok(match self {
            BlockOrder::RowMajor { rows, cols } => (0..rows * cols)
                .map(|t| BlockCoord::Tile {
                    row: t / cols,
                    col: t % cols,
                })
                .collect(),
            BlockOrder::SuperGrouped { rows, cols, super_m } => supergroup_order(*rows, *cols, *super_m)?
                .into_iter()
                .map(|(row, col)| BlockCoord::Tile { row, col })
                .collect(),
            BlockOrder::Attention {
                batch,
                heads,
                seq_blocks,
                axes,
            } => {
                let extent = |a: Axis| match a {
                    Axis::B => *batch,
                    Axis::H => *heads,
                    Axis::N => *seq_blocks,
                };
                (0..self.len())
                    .map(|t| {
                        let mut idx = [0usize; 3];
                        let mut rest = t;
                        for a in axes {
                            idx[*a as usize] = rest % extent(*a);
                            rest /= extent(*a);
                        }
                        BlockCoord::Attention {
                            b: idx[Axis::B as usize],
                            h: idx[Axis::H as usize],
                            n: idx[Axis::N as usize],
                        }
                    })
                    .collect()
            }
        })
    }
}

/// Parses axis lists such as `N,H,B` or `NHB`.
pub fn parse_axes(s: &str) -> Result<[Axis; 3], GridError> {
    let axes: Vec<Axis> = s
        .chars()
        .filter(|c| !matches!(c, ',' | ' ' | '(' | ')' | '{' | '}'))
        .map(|c| Axis::from_str(&c.to_string()))
        .collect::<Result<_, _>>()?;
    let axes: [Axis; 3] = axes
        .try_into()
        .map_err(|_| GridError::Invalid(format!("expected three axes in {s:?}")))?;
    BlockOrder::Attention {
        batch: 1,
        heads: 1,
        seq_blocks: 1,
        axes,
    }
    .validate()?;
    Ok(axes)
}

impl FromStr for Axis {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "B" => Ok(Axis::B),
            "H" => Ok(Axis::H),
            "N" => Ok(Axis::N),
            other => Err(GridError::Invalid(format!("unknown axis {other:?}"))),
        }
    }
}
