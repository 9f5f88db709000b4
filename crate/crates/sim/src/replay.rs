//! Rebuilds the protocol state at the end of a chosen epoch from a log.

use std::collections::BTreeMap;

use stratval_core::waterfall::InstanceState;
use stratval_core::{DualLedger, InstanceId};

use crate::events::{Event, EventLog};

/// Ledger and instance states rebuilt from a log prefix.
#[derive(Clone, Debug, Default)]
pub struct ReplayState {
    pub epoch: u64,
    pub ledger: DualLedger,
    pub instances: BTreeMap<InstanceId, InstanceState>,
}

impl ReplayState {
    /// Balance snapshot lines followed by one `instance,<id>,<state>` line per instance.
    pub fn lines(&self) -> Vec<String> {
        let mut out = self.ledger.snapshot_lines();
        out.extend(self.instances.iter().map(|(id, s)| format!("instance,{id},{s:?}")));
        out
    }
}

/// Applies every record up to and including `epoch`.
pub fn replay_until(log: &EventLog, epoch: u64) -> ReplayState {
    let mut state = ReplayState { epoch, ..ReplayState::default() };
    for r in log.records.iter().take_while(|r| r.epoch <= epoch) {
        match &r.event {
            Event::Ledger { entry } => state.ledger.apply_replayed(entry),
            Event::InstanceOpened { instance, .. } => {
                state.instances.insert(*instance, InstanceState::Initiated);
            }
            Event::Transition { instance, to, .. } => {
                state.instances.insert(*instance, *to);
            }
            _ => {}
        }
    }
    state
}
