//! Grid-level scheduling: block dispatch orders, persistent grids and an L2
//! replay that measures HBM traffic under each order.

pub mod footprint;
pub mod l2;
pub mod order;
pub mod persistent;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use footprint::{AttentionFootprint, Footprint, GemmFootprint};
pub use l2::{simulate_l2, Interleave, L2Config, L2Policy, Replay, TileAccess, TrafficReport};
pub use order::{parse_axes, supergroup_coord, supergroup_order, Axis, BlockCoord, BlockOrder};
pub use persistent::{k_sweep, persistent_assign, KSweepPoint, KSweepScenario, PersistentReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("{0}")]
    Invalid(String),
}

impl fmt::Display for BlockOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockOrder::RowMajor { .. } => write!(f, "row_major"),
            BlockOrder::SuperGrouped { super_m, .. } => write!(f, "super_grouped({super_m})"),
            BlockOrder::Attention { axes, .. } => write!(f, "attention({},{},{})", axes[0], axes[1], axes[2]),
        }
    }
}

/// Several dispatch orders of the same blocks through the same cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct L2Scenario {
    pub name: String,
    pub footprint: Footprint,
    pub l2: L2Config,
    pub replay: Replay,
    pub orders: Vec<BlockOrder>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderTraffic {
    pub order: String,
    pub report: TrafficReport,
}

impl L2Scenario {
    pub fn from_json(text: &str) -> Result<Self, GridError> {
        serde_json::from_str(text).map_err(|e| GridError::Invalid(format!("scenario: {e}")))
    }

    pub fn run(&self) -> Result<Vec<OrderTraffic>, GridError> {
        self.orders
            .iter()
            .map(|order| {
                let fps = self.footprint.for_order(order)?;
                Ok(OrderTraffic {
                    order: order.to_string(),
                    report: simulate_l2(&fps, &self.l2, &self.replay)?,
                })
            })
            .collect()
    }
}
