use serde::{Deserialize, Serialize};

/// A counting barrier that passes each time `expected` arrivals accumulate.
/// `generation` counts passes; waiting for phase `k` of the barrier means
/// waiting for `generation > k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Barrier {
    pub expected: u32,
    pub arrived: u32,
    pub generation: u64,
}

impl Barrier {
    pub fn new(expected: u32) -> Self {
        assert!(expected > 0, "barrier needs at least one expected arrival");
        Barrier {
            expected,
            arrived: 0,
            generation: 0,
        }
    }

    /// Records one arrival. Returns true if this arrival completed a phase.
    pub fn arrive(&mut self) -> bool {
        self.arrived += 1;
        if self.arrived == self.expected {
            self.arrived = 0;
            self.generation += 1;
            true
        } else {
            false
        }
    }

    pub fn passed(&self, phase: u64) -> bool {
        self.generation > phase
    }
}
