//! Test-mode invariant bookkeeping: PRF-input and lookup logs plus counters
//! for every claim checked on decrypted server state.

use serde::Serialize;
use std::collections::HashSet;

/// Identity of one PRF or lookup input: level, table, epoch, header key.
pub type Input = (u32, u32, u64, u128);

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub checks: u64,
    pub stash_not_full: u64,
    pub fullness_mismatch: u64,
    pub duplicate_address: u64,
    pub repeated_query_tag: u64,
    pub repeated_reshuffle_tag: u64,
    pub repeated_match_tag: u64,
    pub repeated_lookup: u64,
    pub linkable_upload: u64,
    pub receive_count: u64,
    pub replica_mismatch: u64,
    pub overlap: u64,
    pub stale_current: u64,
    pub last_table_probed: u64,
    pub notes: Vec<String>,
}

impl AuditReport {
    pub fn failures(&self) -> Vec<(&'static str, u64)> {
        let all = [
            ("stash_not_full", self.stash_not_full),
            ("fullness_mismatch", self.fullness_mismatch),
            ("duplicate_address", self.duplicate_address),
            ("repeated_query_tag", self.repeated_query_tag),
            ("repeated_reshuffle_tag", self.repeated_reshuffle_tag),
            ("repeated_match_tag", self.repeated_match_tag),
            ("repeated_lookup", self.repeated_lookup),
            ("linkable_upload", self.linkable_upload),
            ("receive_count", self.receive_count),
            ("replica_mismatch", self.replica_mismatch),
            ("overlap", self.overlap),
            ("stale_current", self.stale_current),
            ("last_table_probed", self.last_table_probed),
        ];
        all.into_iter().filter(|(_, n)| *n > 0).collect()
    }

    pub fn ok(&self) -> bool {
        self.failures().is_empty()
    }
}

#[derive(Clone, Debug, Default)]
pub struct AuditLog {
    pub enabled: bool,
    query_tags: HashSet<Input>,
    reshuffle_tags: HashSet<Input>,
    match_tags: HashSet<Input>,
    lookups: HashSet<Input>,
    pub report: AuditReport,
}

const MAX_NOTES: usize = 20;

impl AuditLog {
    pub fn new(enabled: bool) -> AuditLog {
        AuditLog { enabled, ..Default::default() }
    }

    pub fn note(&mut self, msg: impl FnOnce() -> String) {
        if self.report.notes.len() < MAX_NOTES {
            self.report.notes.push(msg());
        }
    }

    pub fn query_tag(&mut self, x: Input) {
        if self.enabled && !self.query_tags.insert(x) {
            self.report.repeated_query_tag += 1;
            self.note(|| format!("query tag input repeated: {x:?}"));
        }
    }

    pub fn reshuffle_tag(&mut self, x: Input) {
        if self.enabled && !self.reshuffle_tags.insert(x) {
            self.report.repeated_reshuffle_tag += 1;
            self.note(|| format!("reshuffle tag input repeated: {x:?}"));
        }
    }

    pub fn match_tag(&mut self, x: Input) {
        if self.enabled && !self.match_tags.insert(x) {
            self.report.repeated_match_tag += 1;
            self.note(|| format!("matching tag input repeated: {x:?}"));
        }
    }

    pub fn lookup(&mut self, x: Input) {
        if self.enabled && !self.lookups.insert(x) {
            self.report.repeated_lookup += 1;
            self.note(|| format!("lookup repeated in one table epoch: {x:?}"));
        }
    }
}
