//! Execution traces and the safety checker shared by every backend.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::schedule::{Action, ActionKind, BarrierKind, WorkerId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Begin {
        seq: u64,
        time: f64,
        worker: WorkerId,
        action: Action,
        detached: bool,
    },
    End {
        seq: u64,
        time: f64,
        worker: WorkerId,
        action: Action,
        detached: bool,
    },
    /// A barrier completed a phase; `generation` is its new pass count.
    Pass {
        seq: u64,
        time: f64,
        barrier: BarrierKind,
        slot: usize,
        generation: u64,
    },
}

impl TraceEvent {
    pub fn seq(&self) -> u64 {
        match self {
            TraceEvent::Begin { seq, .. } | TraceEvent::End { seq, .. } | TraceEvent::Pass { seq, .. } => *seq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub input_stages: usize,
    pub output_stages: usize,
    /// Consumer outputs that make up one output slot.
    pub output_contributors: u32,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn barrier_passes(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, TraceEvent::Pass { .. })).count()
    }

    /// `(worker, action)` in begin order.
    pub fn begins(&self) -> impl Iterator<Item = (WorkerId, Action)> + '_ {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::Begin { worker, action, .. } => Some((*worker, *action)),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ring {
    Input,
    Output,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    /// A slot was open for writing while open for reading, or written twice at once.
    SlotConflict { seq: u64, ring: Ring, slot: usize, global: usize },
    /// A read found the slot holding something other than its iteration's data.
    StaleRead {
        seq: u64,
        ring: Ring,
        slot: usize,
        global: usize,
        found: Option<usize>,
    },
    /// A worker began a synchronous action while another was still open.
    WorkerOverlap { seq: u64, worker: WorkerId },
    /// An end with no matching begin.
    Unmatched { seq: u64, worker: WorkerId },
    /// A begin that never ended.
    Unfinished { worker: WorkerId, action: Action },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub events: usize,
    pub barrier_passes: usize,
    pub violations: Vec<Violation>,
}

impl TraceReport {
    pub fn is_safe(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Default)]
struct SlotState {
    writers: Vec<usize>,
    readers: Vec<usize>,
}

/// Replays a trace and reports every slot conflict, stale read and
/// per-worker overlap.
pub fn validate_trace(trace: &Trace) -> TraceReport {
    let mut violations = Vec::new();
    let mut slots: HashMap<(Ring, usize), SlotState> = HashMap::new();
    let mut last_load: HashMap<usize, usize> = HashMap::new();
    let mut out_parts: HashMap<(usize, usize), u32> = HashMap::new();
    let mut open_sync: HashMap<WorkerId, Action> = HashMap::new();
    let mut open: HashSet<(WorkerId, Action)> = HashSet::new();

    let uses = |a: &Action| -> Vec<(Ring, usize, bool)> {
        // (ring, slot, is_write)
        match a.kind {
            ActionKind::Load => vec![(Ring::Input, a.slot.unwrap_or(0), true)],
            ActionKind::Compute => {
                let mut v = vec![(Ring::Input, a.slot.unwrap_or(0), false)];
                if let Some(os) = a.out_slot {
                    v.push((Ring::Output, os, true));
                }
                v
            }
            ActionKind::Store => vec![(Ring::Output, a.out_slot.unwrap_or(0), false)],
            ActionKind::Setup | ActionKind::Finish => vec![],
        }
    };

    for event in &trace.events {
        match event {
            TraceEvent::Begin {
                seq,
                worker,
                action,
                detached,
                ..
            } => {
                if !detached && open_sync.insert(*worker, *action).is_some() {
                    violations.push(Violation::WorkerOverlap {
                        seq: *seq,
                        worker: *worker,
                    });
                }
                open.insert((*worker, *action));
                for (ring, slot, write) in uses(action) {
                    let st = slots.entry((ring, slot)).or_default();
                    // Consumers write disjoint parts of an output slot, so
                    // concurrent output writers are fine; input slots have one writer.
                    let conflict = if write {
                        !st.readers.is_empty() || (ring == Ring::Input && !st.writers.is_empty())
                    } else {
                        !st.writers.is_empty()
                    };
                    if conflict {
                        violations.push(Violation::SlotConflict {
                            seq: *seq,
                            ring,
                            slot,
                            global: action.global,
                        });
                    }
                    if write {
                        st.writers.push(action.global);
                    } else {
                        st.readers.push(action.global);
                        let fresh = match ring {
                            Ring::Input => last_load.get(&slot).copied(),
                            Ring::Output => {
                                let parts = out_parts.get(&(slot, action.global)).copied().unwrap_or(0);
                                (parts == trace.output_contributors).then_some(action.global)
                            }
                        };
                        if fresh != Some(action.global) {
                            violations.push(Violation::StaleRead {
                                seq: *seq,
                                ring,
                                slot,
                                global: action.global,
                                found: fresh,
                            });
                        }
                    }
                }
            }
            TraceEvent::End {
                seq,
                worker,
                action,
                detached,
                ..
            } => {
                if !open.remove(&(*worker, *action)) {
                    violations.push(Violation::Unmatched {
                        seq: *seq,
                        worker: *worker,
                    });
                    continue;
                }
                if !detached {
                    open_sync.remove(worker);
                }
                for (ring, slot, write) in uses(action) {
                    let st = slots.entry((ring, slot)).or_default();
                    let list = if write { &mut st.writers } else { &mut st.readers };
                    if let Some(pos) = list.iter().position(|&g| g == action.global) {
                        list.remove(pos);
                    }
                    if write {
                        match ring {
                            Ring::Input => {
                                last_load.insert(slot, action.global);
                            }
                            Ring::Output => *out_parts.entry((slot, action.global)).or_default() += 1,
                        }
                    }
                }
            }
            TraceEvent::Pass { .. } => {}
        }
    }
    let mut unfinished: Vec<_> = open.into_iter().collect();
    unfinished.sort_by_key(|(w, a)| (*w, a.global, a.kind));
    violations.extend(
        unfinished
            .into_iter()
            .map(|(worker, action)| Violation::Unfinished { worker, action }),
    );
    TraceReport {
        events: trace.events.len(),
        barrier_passes: trace.barrier_passes(),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lcsf::schedule::WorkerRole;

    fn act(kind: ActionKind, g: usize) -> Action {
        Action {
            kind,
            task: 0,
            iter: g,
            global: g,
            slot: Some(0),
            out_slot: None,
        }
    }

    #[test]
    fn flags_overwrite_during_read() {
        let p = WorkerId {
            role: WorkerRole::Producer,
            index: 0,
        };
        let c = WorkerId {
            role: WorkerRole::Consumer,
            index: 0,
        };
        let ev = |seq, begin: bool, worker, action| {
            if begin {
                TraceEvent::Begin {
                    seq,
                    time: seq as f64,
                    worker,
                    action,
                    detached: worker == p,
                }
            } else {
                TraceEvent::End {
                    seq,
                    time: seq as f64,
                    worker,
                    action,
                    detached: worker == p,
                }
            }
        };
        let good = Trace {
            input_stages: 1,
            output_stages: 1,
            output_contributors: 1,
            events: vec![
                ev(0, true, p, act(ActionKind::Load, 0)),
                ev(1, false, p, act(ActionKind::Load, 0)),
                ev(2, true, c, act(ActionKind::Compute, 0)),
                ev(3, false, c, act(ActionKind::Compute, 0)),
            ],
        };
        assert!(validate_trace(&good).is_safe());

        let mut bad = good.clone();
        bad.events.insert(3, ev(10, true, p, act(ActionKind::Load, 1)));
        let report = validate_trace(&bad);
        assert!(matches!(report.violations[0], Violation::SlotConflict { ring: Ring::Input, .. }));
        assert!(matches!(report.violations.last(), Some(Violation::Unfinished { .. })));

        let mut stale = good;
        stale.events.swap(1, 2);
        assert!(validate_trace(&stale)
            .violations
            .iter()
            .any(|v| matches!(v, Violation::StaleRead { .. })));
    }
}
