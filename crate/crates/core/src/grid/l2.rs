//! Replay of block footprints through a modeled L2 cache.

use std::num::NonZeroUsize;

use lru::LruCache;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GridError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L2Policy {
    Lru,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct L2Config {
    pub capacity_bytes: u64,
    #[serde(default = "default_line")]
    pub line_bytes: u64,
    /// Lines per set; `None` for fully associative.
    #[serde(default)]
    pub ways: Option<u64>,
    #[serde(default = "default_policy")]
    pub policy: L2Policy,
}

fn default_line() -> u64 {
    128
}

fn default_policy() -> L2Policy {
    L2Policy::Lru
}

impl L2Config {
    pub fn fully_associative(capacity_bytes: u64, line_bytes: u64) -> Self {
        L2Config {
            capacity_bytes,
            line_bytes,
            ways: None,
            policy: L2Policy::Lru,
        }
    }

    /// A cache that never evicts.
    pub fn unbounded(line_bytes: u64) -> Self {
        Self::fully_associative(u64::MAX - u64::MAX % line_bytes, line_bytes)
    }

    pub fn lines(&self) -> u64 {
        self.capacity_bytes / self.line_bytes
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.line_bytes == 0 || self.capacity_bytes == 0 || !self.capacity_bytes.is_multiple_of(self.line_bytes) {
            return Err(GridError::Invalid(format!(
                "capacity {} must be a positive multiple of the line size {}",
                self.capacity_bytes, self.line_bytes
            )));
        }
        if let Some(ways) = self.ways {
            if ways == 0 || !self.lines().is_multiple_of(ways) {
                return Err(GridError::Invalid(format!(
                    "{} lines do not split into {ways}-way sets",
                    self.lines()
                )));
            }
        }
        Ok(())
    }
}

/// One tile-sized request: a list of contiguous byte ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileAccess {
    pub ranges: Vec<(u64, u64)>,
    #[serde(default)]
    pub write: bool,
}

impl TileAccess {
    pub fn read(ranges: Vec<(u64, u64)>) -> Self {
        TileAccess { ranges, write: false }
    }

    pub fn write(ranges: Vec<(u64, u64)>) -> Self {
        TileAccess { ranges, write: true }
    }

    pub fn bytes(&self) -> u64 {
        self.ranges.iter().map(|r| r.1).sum()
    }
}

/// How accesses of blocks in the same wave are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Interleave {
    /// Each block in turn issues its next tile access.
    RoundRobin,
    /// A seeded random block issues its next tile access.
    Shuffled { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Replay {
    /// Blocks resident at once (one per SM).
    pub wave_blocks: usize,
    pub interleave: Interleave,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficReport {
    pub hbm_bytes: u64,
    pub l2_hits: u64,
    pub l2_misses: u64,
    pub hit_rate: f64,
    /// Bytes written back; writes go straight through and are not cached.
    pub write_bytes: u64,
    /// Misses of each block, in dispatch order.
    pub block_misses: Vec<u64>,
}

struct Cache {
    sets: Vec<LruCache<u64, ()>>,
}

impl Cache {
    fn new(cfg: &L2Config) -> Self {
        let lines = cfg.lines();
        let (n_sets, ways) = match cfg.ways {
            Some(w) => (lines / w, w),
            None => (1, lines),
        };
        let sets = (0..n_sets)
            .map(
                |_| match usize::try_from(ways).ok().filter(|&w| w < 1 << 40).and_then(NonZeroUsize::new) {
                    Some(cap) => LruCache::new(cap),
                    None => LruCache::unbounded(),
                },
            )
            .collect();
        Cache { sets }
    }

    /// Returns true on a hit.
    fn touch(&mut self, line: u64) -> bool {
        let n = self.sets.len() as u64;
        let set = &mut self.sets[(line % n) as usize];
        if set.get(&line).is_some() {
            true
        } else {
            set.put(line, ());
            false
        }
    }
}

/// Replays blocks in dispatch order, `wave_blocks` at a time.
pub fn simulate_l2(footprints: &[Vec<TileAccess>], cfg: &L2Config, replay: &Replay) -> Result<TrafficReport, GridError> {
    cfg.validate()?;
    if footprints.is_empty() {
        return Err(GridError::Invalid("no block footprints".into()));
    }
    if replay.wave_blocks == 0 {
        return Err(GridError::Invalid("wave must hold at least one block".into()));
    }
    let mut cache = Cache::new(cfg);
    let mut rng = match replay.interleave {
        Interleave::Shuffled { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Interleave::RoundRobin => None,
    };
    let (mut hits, mut misses, mut write_bytes) = (0u64, 0u64, 0u64);
    let mut block_misses = vec![0u64; footprints.len()];
    let line = cfg.line_bytes;

    let mut issue = |block: usize, access: &TileAccess, cache: &mut Cache| {
        if access.write {
            write_bytes += access.bytes();
            return;
        }
        for &(addr, bytes) in &access.ranges {
            if bytes == 0 {
                continue;
            }
            for l in addr / line..=(addr + bytes - 1) / line {
                if cache.touch(l) {
                    hits += 1;
                } else {
                    misses += 1;
                    block_misses[block] += 1;
                }
            }
        }
    };

    for wave_start in (0..footprints.len()).step_by(replay.wave_blocks) {
        let wave: Vec<usize> = (wave_start..(wave_start + replay.wave_blocks).min(footprints.len())).collect();
        let mut cursor = vec![0usize; wave.len()];
        match rng.as_mut() {
            None => {
                let longest = wave.iter().map(|&b| footprints[b].len()).max().unwrap_or(0);
                for step in 0..longest {
                    for &b in &wave {
                        if let Some(a) = footprints[b].get(step) {
                            issue(b, a, &mut cache);
                        }
                    }
                }
            }
            Some(rng) => loop {
                let live: Vec<usize> = (0..wave.len()).filter(|&i| cursor[i] < footprints[wave[i]].len()).collect();
                if live.is_empty() {
                    break;
                }
                let i = live[rng.random_range(0..live.len())];
                issue(wave[i], &footprints[wave[i]][cursor[i]], &mut cache);
                cursor[i] += 1;
            },
        }
    }
    let total = hits + misses;
    Ok(TrafficReport {
        hbm_bytes: misses * line,
        l2_hits: hits,
        l2_misses: misses,
        hit_rate: if total > 0 { hits as f64 / total as f64 } else { 0.0 },
        write_bytes,
        block_misses,
    })
}
