use std::fmt;
use std::hash::{Hash, Hasher};

use super::{RankId, Tag, VirtualTime};
use crate::comm::ContextId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TraceKind {
    Send,
    Deliver,
    Crash,
    LinkErr,
    User,
}

impl TraceKind {
    fn as_str(self) -> &'static str {
        match self {
            TraceKind::Send => "SEND",
            TraceKind::Deliver => "DELIVER",
            TraceKind::Crash => "CRASH",
            TraceKind::LinkErr => "LINKERR",
            TraceKind::User => "USER",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TraceRecord {
    pub time: VirtualTime,
    pub kind: TraceKind,
    pub src: RankId,
    pub dst: RankId,
    pub tag: Tag,
    pub cid: ContextId,
    pub size: u64,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "time={} ev={} src={} dst={} tag={} cid={} size={}",
            self.time,
            self.kind.as_str(),
            self.src,
            self.dst,
            self.tag,
            self.cid.0,
            self.size
        )
    }
}

/// Event log. The running hash is always maintained; records are only
/// retained when tracing is enabled.
pub(crate) struct Trace {
    keep: bool,
    records: Vec<TraceRecord>,
    hasher: std::collections::hash_map::DefaultHasher,
    count: u64,
}

impl Trace {
    pub fn new(keep: bool) -> Self {
        Self {
            keep,
            records: Vec::new(),
            hasher: Default::default(),
            count: 0,
        }
    }

    pub fn push(&mut self, rec: TraceRecord) {
        rec.hash(&mut self.hasher);
        self.count += 1;
        if self.keep {
            self.records.push(rec);
        }
    }

    pub fn digest(&self) -> u64 {
        let mut h = self.hasher.clone();
        self.count.hash(&mut h);
        h.finish()
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }
}
