//! Machine parameters and the max-plus-overhead cost model.
//!
//! Memory sizes, bandwidths, SM count, bank count and register limits are
//! fixed H100 SXM constants. Pipeline throughputs and the per-block setup and
//! per-barrier sync costs are not published alongside those constants; they are
//! read from a calibration file (`calibration/h100.json`) that is explicitly
//! non-authoritative.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const SHIPPED_CALIBRATION: &str = include_str!("../../../calibration/h100.json");

const KIB: u64 = 1024;
const MIB: u64 = 1024 * KIB;
const GIB: u64 = 1024 * MIB;

#[derive(Debug, Error)]
pub enum MachineError {
    #[error("{field} must be strictly positive (got {value})")]
    NonPositive { field: &'static str, value: f64 },
    #[error("work profile field {field} is negative or not finite ({value})")]
    InvalidWork { field: &'static str, value: f64 },
    #[error("failed to read calibration file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed calibration: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Peak issue rates of the four compute pipelines, in ops per second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineThroughputs {
    pub tensor: f64,
    pub alu: f64,
    pub fma: f64,
    pub xu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineParams {
    pub num_sms: u32,
    pub smem_bytes_per_sm: u64,
    /// Bytes per second.
    pub smem_bw: f64,
    /// L1 shares the SMEM storage; defaults to the SMEM bandwidth.
    pub l1_bw: f64,
    pub l2_bytes: u64,
    pub l2_bw: f64,
    pub hbm_bytes: u64,
    pub hbm_bw: f64,
    pub num_banks: u32,
    pub bank_word_bytes: u32,
    pub max_regs_per_thread: u32,
    pub max_warps_per_sm: u32,
    pub pipeline_throughputs: PipelineThroughputs,
    /// Seconds per thread-block setup.
    pub block_setup_cost: f64,
    /// Seconds per barrier.
    pub sync_cost_per_barrier: f64,
}

/// Guessed constants that complete [`MachineParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    #[serde(default)]
    pub note: String,
    pub tensor_ops_per_s: f64,
    pub alu_ops_per_s: f64,
    pub fma_ops_per_s: f64,
    pub xu_ops_per_s: f64,
    pub block_setup_cost_s: f64,
    pub sync_cost_per_barrier_s: f64,
}

impl Calibration {
    /// The calibration compiled into the library.
    pub fn shipped() -> Self {
        Self::from_json(SHIPPED_CALIBRATION).expect("shipped calibration is valid JSON")
    }

    pub fn from_json(text: &str) -> Result<Self, MachineError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, MachineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| MachineError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

/// H100 SXM constants with the shipped calibration applied.
pub fn preset_h100() -> MachineParams {
    MachineParams::h100_with(&Calibration::shipped())
}

impl MachineParams {
    pub fn h100_with(cal: &Calibration) -> Self {
        MachineParams {
            num_sms: 132,
            smem_bytes_per_sm: 227 * KIB,
            smem_bw: 33e12,
            l1_bw: 33e12,
            l2_bytes: 50 * MIB,
            l2_bw: 12e12,
            hbm_bytes: 80 * GIB,
            hbm_bw: 3e12,
            num_banks: 32,
            bank_word_bytes: 4,
            max_regs_per_thread: 255,
            max_warps_per_sm: 64,
            pipeline_throughputs: PipelineThroughputs {
                tensor: cal.tensor_ops_per_s,
                alu: cal.alu_ops_per_s,
                fma: cal.fma_ops_per_s,
                xu: cal.xu_ops_per_s,
            },
            block_setup_cost: cal.block_setup_cost_s,
            sync_cost_per_barrier: cal.sync_cost_per_barrier_s,
        }
    }

    pub fn validate(&self) -> Result<(), MachineError> {
        let rates = [
            ("smem_bw", self.smem_bw),
            ("l1_bw", self.l1_bw),
            ("l2_bw", self.l2_bw),
            ("hbm_bw", self.hbm_bw),
            ("tensor throughput", self.pipeline_throughputs.tensor),
            ("alu throughput", self.pipeline_throughputs.alu),
            ("fma throughput", self.pipeline_throughputs.fma),
            ("xu throughput", self.pipeline_throughputs.xu),
        ];
        for (field, value) in rates {
            if !(value > 0.0 && value.is_finite()) {
                return Err(MachineError::NonPositive { field, value });
            }
        }
        let counts = [
            ("num_sms", self.num_sms as u64),
            ("smem_bytes_per_sm", self.smem_bytes_per_sm),
            ("l2_bytes", self.l2_bytes),
            ("hbm_bytes", self.hbm_bytes),
            ("num_banks", self.num_banks as u64),
            ("bank_word_bytes", self.bank_word_bytes as u64),
            ("max_regs_per_thread", self.max_regs_per_thread as u64),
            ("max_warps_per_sm", self.max_warps_per_sm as u64),
        ];
        for (field, value) in counts {
            if value == 0 {
                return Err(MachineError::NonPositive { field, value: 0.0 });
            }
        }
        for (field, value) in [
            ("block_setup_cost", self.block_setup_cost),
            ("sync_cost_per_barrier", self.sync_cost_per_barrier),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(MachineError::NonPositive { field, value });
            }
        }
        Ok(())
    }

    /// Returns a copy with every bandwidth and throughput multiplied by `factor`.
    pub fn scaled_rates(&self, factor: f64) -> Self {
        let mut p = self.clone();
        p.smem_bw *= factor;
        p.l1_bw *= factor;
        p.l2_bw *= factor;
        p.hbm_bw *= factor;
        p.pipeline_throughputs.tensor *= factor;
        p.pipeline_throughputs.alu *= factor;
        p.pipeline_throughputs.fma *= factor;
        p.pipeline_throughputs.xu *= factor;
        p
    }
}

/// Work quantities feeding each cost term. All fields are nonnegative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkProfile {
    pub bytes_hbm: f64,
    pub bytes_l2: f64,
    pub bytes_l1: f64,
    pub bytes_shared: f64,
    pub ops_tensor: f64,
    pub ops_alu: f64,
    pub ops_fma: f64,
    pub ops_xu: f64,
    pub num_setups: f64,
    pub num_syncs: f64,
}

impl WorkProfile {
    /// Dense bf16 GEMM reading A, B and writing C once from HBM.
    pub fn gemm_bf16(m: u64, n: u64, k: u64) -> Self {
        WorkProfile {
            ops_tensor: 2.0 * (m * n * k) as f64,
            bytes_hbm: ((m * k + k * n + m * n) * 2) as f64,
            num_setups: 1.0,
            ..Default::default()
        }
    }

    fn fields(&self) -> [(&'static str, f64); 10] {
        [
            ("bytes_hbm", self.bytes_hbm),
            ("bytes_l2", self.bytes_l2),
            ("bytes_l1", self.bytes_l1),
            ("bytes_shared", self.bytes_shared),
            ("ops_tensor", self.ops_tensor),
            ("ops_alu", self.ops_alu),
            ("ops_fma", self.ops_fma),
            ("ops_xu", self.ops_xu),
            ("num_setups", self.num_setups),
            ("num_syncs", self.num_syncs),
        ]
    }

    pub fn validate(&self) -> Result<(), MachineError> {
        for (field, value) in self.fields() {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(MachineError::InvalidWork { field, value });
            }
        }
        Ok(())
    }
}

/// The eight overlappable terms, listed in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CostTerm {
    Tensor,
    Alu,
    Fma,
    Xu,
    Hbm,
    L2,
    L1,
    Shared,
}

impl CostTerm {
    pub const TIE_ORDER: [CostTerm; 8] = [
        CostTerm::Tensor,
        CostTerm::Alu,
        CostTerm::Fma,
        CostTerm::Xu,
        CostTerm::Hbm,
        CostTerm::L2,
        CostTerm::L1,
        CostTerm::Shared,
    ];
}

impl fmt::Display for CostTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CostTerm::Tensor => "Tensor",
            CostTerm::Alu => "ALU",
            CostTerm::Fma => "FMA",
            CostTerm::Xu => "XU",
            CostTerm::Hbm => "HBM",
            CostTerm::L2 => "L2",
            CostTerm::L1 => "L1",
            CostTerm::Shared => "Shared",
        };
        f.write_str(s)
    }
}

/// Per-term costs in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostTerms {
    pub hbm: f64,
    pub l2: f64,
    pub l1: f64,
    pub shared: f64,
    pub tensor: f64,
    pub alu: f64,
    pub fma: f64,
    pub xu: f64,
    pub setup: f64,
    pub sync: f64,
}

impl CostTerms {
    pub fn get(&self, term: CostTerm) -> f64 {
        match term {
            CostTerm::Tensor => self.tensor,
            CostTerm::Alu => self.alu,
            CostTerm::Fma => self.fma,
            CostTerm::Xu => self.xu,
            CostTerm::Hbm => self.hbm,
            CostTerm::L2 => self.l2,
            CostTerm::L1 => self.l1,
            CostTerm::Shared => self.shared,
        }
    }

    pub fn overhead(&self) -> f64 {
        self.setup + self.sync
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub terms: CostTerms,
    /// max(memory and compute terms) + setup + sync.
    pub overall: f64,
    /// Sum of all ten terms; the no-overlap bound, reported for reference.
    pub sum: f64,
    pub bound_by: CostTerm,
}

pub fn estimate_cost(profile: &WorkProfile, params: &MachineParams) -> Result<CostBreakdown, MachineError> {
    profile.validate()?;
    params.validate()?;
    let tp = &params.pipeline_throughputs;
    let terms = CostTerms {
        hbm: profile.bytes_hbm / params.hbm_bw,
        l2: profile.bytes_l2 / params.l2_bw,
        l1: profile.bytes_l1 / params.l1_bw,
        shared: profile.bytes_shared / params.smem_bw,
        tensor: profile.ops_tensor / tp.tensor,
        alu: profile.ops_alu / tp.alu,
        fma: profile.ops_fma / tp.fma,
        xu: profile.ops_xu / tp.xu,
        setup: profile.num_setups * params.block_setup_cost,
        sync: profile.num_syncs * params.sync_cost_per_barrier,
    };
    let mut bound_by = CostTerm::TIE_ORDER[0];
    for term in CostTerm::TIE_ORDER {
        if terms.get(term) > terms.get(bound_by) {
            bound_by = term;
        }
    }
    let overall = terms.get(bound_by) + terms.setup + terms.sync;
    let sum = CostTerm::TIE_ORDER.iter().map(|&t| terms.get(t)).sum::<f64>() + terms.overhead();
    Ok(CostBreakdown {
        terms,
        overall,
        sum,
        bound_by,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_params() -> MachineParams {
        let mut p = preset_h100();
        p.hbm_bw = 100.0;
        p.pipeline_throughputs.tensor = 100.0;
        p.block_setup_cost = 0.5;
        p.sync_cost_per_barrier = 0.5;
        p
    }

    #[test]
    fn h100_constants() {
        let p = preset_h100();
        assert_eq!(p.num_sms, 132);
        assert_eq!(p.hbm_bw, 3e12);
        assert_eq!(p.l2_bw, 12e12);
        assert_eq!(p.smem_bw, 33e12);
        assert_eq!(p.smem_bytes_per_sm, 227 * 1024);
        assert_eq!(p.l2_bytes, 50 * 1024 * 1024);
        assert_eq!(p.num_banks, 32);
        assert_eq!(p.max_regs_per_thread, 255);
        p.validate().unwrap();
    }

    #[test]
    fn max_plus_overhead() {
        let work = WorkProfile {
            bytes_hbm: 300.0,
            ops_tensor: 400.0,
            num_setups: 1.0,
            num_syncs: 1.0,
            ..Default::default()
        };
        let c = estimate_cost(&work, &unit_params()).unwrap();
        assert_eq!(c.overall, 5.0);
        assert_eq!(c.bound_by, CostTerm::Tensor);
        assert_eq!(c.sum, 8.0);
    }

    #[test]
    fn overhead_only() {
        let work = WorkProfile {
            num_setups: 1.0,
            ..Default::default()
        };
        let c = estimate_cost(&work, &unit_params()).unwrap();
        assert_eq!(c.overall, 0.5);
        // all-zero work ties at zero; first in enumeration order wins
        assert_eq!(c.bound_by, CostTerm::Tensor);
    }

    #[test]
    fn tie_break_prefers_compute() {
        let work = WorkProfile {
            bytes_hbm: 100.0,
            ops_tensor: 100.0,
            ..Default::default()
        };
        let c = estimate_cost(&work, &unit_params()).unwrap();
        assert_eq!(c.bound_by, CostTerm::Tensor);
    }

    #[test]
    fn rejects_negative_work() {
        let work = WorkProfile {
            ops_xu: -1.0,
            ..Default::default()
        };
        assert!(matches!(
            estimate_cost(&work, &preset_h100()),
            Err(MachineError::InvalidWork { field: "ops_xu", .. })
        ));
    }

    #[test]
    fn rejects_zero_bandwidth() {
        let mut p = preset_h100();
        p.l2_bw = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn calibration_round_trip() {
        let cal = Calibration::shipped();
        let text = serde_json::to_string(&cal).unwrap();
        assert_eq!(Calibration::from_json(&text).unwrap(), cal);
        assert!(cal.note.contains("Non-authoritative"));
    }
}
