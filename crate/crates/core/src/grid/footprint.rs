//! Global-memory footprints of GEMM and attention blocks, one tile access
//! per main-loop load.

use serde::{Deserialize, Serialize};

use super::l2::TileAccess;
use super::order::{BlockCoord, BlockOrder};
use super::GridError;

const ALIGN: u64 = 4096;

fn align_up(x: u64) -> u64 {
    x.div_ceil(ALIGN) * ALIGN
}

/// C = A B with A (M x K) and B (K x N) row-major, one block per
/// `block_m x block_n` output tile, stepping K in `k_tile` chunks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GemmFootprint {
    pub m: u64,
    pub n: u64,
    pub k: u64,
    pub block_m: u64,
    pub block_n: u64,
    #[serde(default = "default_k_tile")]
    pub k_tile: u64,
    #[serde(default = "default_elem")]
    pub elem_bytes: u64,
}

fn default_k_tile() -> u64 {
    64
}

fn default_elem() -> u64 {
    2
}

impl GemmFootprint {
    pub fn validate(&self) -> Result<(), GridError> {
        let ok = [self.m, self.n, self.k, self.block_m, self.block_n, self.k_tile, self.elem_bytes]
            .iter()
            .all(|&x| x > 0)
            && self.m.is_multiple_of(self.block_m)
            && self.n.is_multiple_of(self.block_n)
            && self.k.is_multiple_of(self.k_tile);
        if ok {
            Ok(())
        } else {
            Err(GridError::Invalid(format!("GEMM footprint does not tile evenly: {self:?}")))
        }
    }

    pub fn grid(&self) -> (usize, usize) {
        ((self.m / self.block_m) as usize, (self.n / self.block_n) as usize)
    }

    pub fn input_bytes(&self) -> u64 {
        (self.m * self.k + self.k * self.n) * self.elem_bytes
    }

    fn bases(&self) -> (u64, u64, u64) {
        let a = 0;
        let b = align_up(self.m * self.k * self.elem_bytes);
        let c = b + align_up(self.k * self.n * self.elem_bytes);
        (a, b, c)
    }

    pub fn block(&self, row: usize, col: usize) -> Vec<TileAccess> {
        let (a, b, c) = self.bases();
        let e = self.elem_bytes;
        let (row, col) = (row as u64, col as u64);
        let mut out = Vec::new();
        for kt in 0..self.k / self.k_tile {
            let k0 = kt * self.k_tile;
            out.push(TileAccess::read(
                (row * self.block_m..(row + 1) * self.block_m)
                    .map(|r| (a + (r * self.k + k0) * e, self.k_tile * e))
                    .collect(),
            ));
            out.push(TileAccess::read(
                (k0..k0 + self.k_tile)
                    .map(|kk| (b + (kk * self.n + col * self.block_n) * e, self.block_n * e))
                    .collect(),
            ));
        }
        out.push(TileAccess::write(
            (row * self.block_m..(row + 1) * self.block_m)
                .map(|r| (c + (r * self.n + col * self.block_n) * e, self.block_n * e))
                .collect(),
        ));
        out
    }
}

/// Attention over Q, K, V of shape [batch, heads, seq, head_dim]; one block per
/// `q_rows` query rows of one head, streaming K and V in `kv_rows` chunks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionFootprint {
    pub batch: u64,
    pub heads: u64,
    pub seq: u64,
    pub head_dim: u64,
    pub q_rows: u64,
    pub kv_rows: u64,
    #[serde(default = "default_elem")]
    pub elem_bytes: u64,
}

impl AttentionFootprint {
    pub fn validate(&self) -> Result<(), GridError> {
        let ok = [
            self.batch,
            self.heads,
            self.seq,
            self.head_dim,
            self.q_rows,
            self.kv_rows,
            self.elem_bytes,
        ]
        .iter()
        .all(|&x| x > 0)
            && self.seq.is_multiple_of(self.q_rows)
            && self.seq.is_multiple_of(self.kv_rows);
        if ok {
            Ok(())
        } else {
            Err(GridError::Invalid(format!("attention footprint does not tile evenly: {self:?}")))
        }
    }

    pub fn seq_blocks(&self) -> usize {
        (self.seq / self.q_rows) as usize
    }

    /// Bytes of K and V for one head.
    pub fn kv_bytes_per_head(&self) -> u64 {
        2 * self.seq * self.head_dim * self.elem_bytes
    }

    pub fn block(&self, b: usize, h: usize, n: usize) -> Vec<TileAccess> {
        let e = self.elem_bytes;
        let tensor = align_up(self.batch * self.heads * self.seq * self.head_dim * e);
        let (q, k, v, o) = (0, tensor, 2 * tensor, 3 * tensor);
        let head = ((b as u64) * self.heads + h as u64) * self.seq * self.head_dim * e;
        let row = |r: u64| r * self.head_dim * e;
        let q0 = n as u64 * self.q_rows;
        let mut out = vec![TileAccess::read(vec![(q + head + row(q0), row(self.q_rows))])];
        for j in 0..self.seq / self.kv_rows {
            let k0 = j * self.kv_rows;
            out.push(TileAccess::read(vec![(k + head + row(k0), row(self.kv_rows))]));
            out.push(TileAccess::read(vec![(v + head + row(k0), row(self.kv_rows))]));
        }
        out.push(TileAccess::write(vec![(o + head + row(q0), row(self.q_rows))]));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Footprint {
    Gemm(GemmFootprint),
    Attention(AttentionFootprint),
}

impl Footprint {
    /// Footprints of every block, in the order `order` dispatches them.
    pub fn for_order(&self, order: &BlockOrder) -> Result<Vec<Vec<TileAccess>>, GridError> {
        let mismatch = || GridError::Invalid(format!("order {order} does not match footprint {self:?}"));
        match (self, order) {
            (Footprint::Gemm(g), BlockOrder::RowMajor { rows, cols } | BlockOrder::SuperGrouped { rows, cols, .. }) => {
                g.validate()?;
                if g.grid() != (*rows, *cols) {
                    return Err(mismatch());
                }
            }
            (
                Footprint::Attention(a),
                BlockOrder::Attention {
                    batch, heads, seq_blocks, ..
                },
            ) => {
                a.validate()?;
                if (a.batch as usize, a.heads as usize, a.seq_blocks()) != (*batch, *heads, *seq_blocks) {
                    return Err(mismatch());
                }
            }
            _ => return Err(mismatch()),
        }
        Ok(order
            .blocks()?
            .into_iter()
            .map(|coord| match (self, coord) {
                (Footprint::Gemm(g), BlockCoord::Tile { row, col }) => g.block(row, col),
                (Footprint::Attention(a), BlockCoord::Attention { b, h, n }) => a.block(b, h, n),
                _ => unreachable!("order kind checked above"),
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_block_touches_its_panels() {
        let g = GemmFootprint {
            m: 256,
            n: 256,
            k: 128,
            block_m: 128,
            block_n: 128,
            k_tile: 64,
            elem_bytes: 2,
        };
        let fp = g.block(1, 0);
        assert_eq!(fp.len(), 2 * 2 + 1);
        let read: u64 = fp.iter().filter(|a| !a.write).map(TileAccess::bytes).sum();
        assert_eq!(read, (128 * 128 + 128 * 128) * 2);
        // First A row of block-row 1 starts at row 128.
        assert_eq!(fp[0].ranges[0], (128 * 128 * 2, 128));
    }

    #[test]
    fn attention_blocks_share_kv_within_a_head() {
        let a = AttentionFootprint {
            batch: 1,
            heads: 2,
            seq: 256,
            head_dim: 64,
            q_rows: 128,
            kv_rows: 128,
            elem_bytes: 2,
        };
        let x = a.block(0, 1, 0);
        let y = a.block(0, 1, 1);
        assert_ne!(x[0], y[0]);
        assert_eq!(x[1..x.len() - 1], y[1..y.len() - 1]);
        assert_ne!(a.block(0, 0, 0)[1], x[1]);
    }
}
