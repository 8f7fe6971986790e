use std::fmt;

use bytes::Bytes;

use crate::comm::ContextId;

/// Identifies one simulated process for the lifetime of a job.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RankId(pub u32);

impl RankId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for RankId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<usize> for RankId {
    fn from(i: usize) -> Self {
        RankId(i as u32)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VirtualTime(pub u64);

impl VirtualTime {
    pub const ZERO: VirtualTime = VirtualTime(0);

    pub fn ticks(self) -> u64 {
        self.0
    }

    pub fn after(self, ticks: u64) -> VirtualTime {
        VirtualTime(self.0 + ticks)
    }

    pub fn since(self, earlier: VirtualTime) -> u64 {
        self.0 - earlier.0
    }
}

impl fmt::Display for VirtualTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Latency/bandwidth cost model: a message of `s` bytes arrives
/// `alpha + s * beta` ticks after it was posted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinkModel {
    pub alpha: u64,
    pub beta: u64,
}

impl LinkModel {
    pub fn new(alpha: u64, beta: u64) -> Self {
        Self { alpha, beta }
    }

    pub fn delivery_delay(&self, size: u64) -> u64 {
        self.alpha + size * self.beta
    }
}

impl Default for LinkModel {
    fn default() -> Self {
        Self { alpha: 1000, beta: 1 }
    }
}

/// Message tag. User tags occupy the low 32 bits with a zero class byte;
/// the runtime's own traffic uses the reserved classes below.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tag(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
#[repr(u8)]
pub(crate) enum TagClass {
    User = 0x00,
    Collective = 0x01,
    Derive = 0x02,
    Buddy = 0x03,
    Restore = 0x04,
    Agreement = 0x10,
    Revoke = 0x11,
    Heartbeat = 0x12,
    FailureRecord = 0x13,
}

impl Tag {
    pub fn user(tag: u32) -> Tag {
        Tag(tag as u64)
    }

    pub(crate) fn internal(class: TagClass, low: u64) -> Tag {
        debug_assert!(low < 1 << 56);
        Tag((class as u64) << 56 | low)
    }

    pub(crate) fn class_byte(self) -> u8 {
        (self.0 >> 56) as u8
    }

    #[cfg(test)]
    pub(crate) fn low(self) -> u64 {
        self.0 & ((1 << 56) - 1)
    }

    /// Control-plane messages are consumed by protocol callbacks instead of
    /// the matching queue.
    pub(crate) fn is_control(self) -> bool {
        self.class_byte() >= TagClass::Agreement as u8
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimMessage {
    pub src: RankId,
    pub dst: RankId,
    pub tag: Tag,
    pub cid: ContextId,
    /// Size charged by the cost model; may exceed `payload.len()`.
    pub size: u64,
    pub payload: Bytes,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProcState {
    Alive,
    Crashed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProcessStatus {
    pub state: ProcState,
    pub crash_time: Option<VirtualTime>,
}

impl ProcessStatus {
    pub(crate) fn alive() -> Self {
        Self {
            state: ProcState::Alive,
            crash_time: None,
        }
    }

    pub fn is_alive(&self) -> bool {
        self.state == ProcState::Alive
    }
}

/// Matching key of the receive queue.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub(crate) struct ChannelKey {
    pub src: RankId,
    pub tag: Tag,
    pub cid: ContextId,
}
