//! Communicator split.
//!
//! Members allgather their `(color, key)` pairs over the parent tree, then
//! run one agreement that both checks that the exchange succeeded everywhere
//! and collects context id proposals for a block of ids, one per distinct
//! color. Because the outcome is agreed, every survivor returns the same
//! class even in local uniformity mode.

use std::collections::BTreeSet;
use std::rc::Rc;

use bytes::{Buf, BufMut, Bytes, BytesMut};

use super::{classify, CommError, Communicator, ContextId, ErrorClass};
use crate::agreement::{self, AgreementKey, Contribution, KIND_DERIVE};
use crate::bits::Bits;
use crate::collectives::{CollectiveKind, Phase, PHASE_DOWN, PHASE_UP};
use crate::recovery::{propose, settle, SettleError};
use crate::simnet::types::TagClass;
use crate::simnet::RankId;

const ENTRY: usize = 4 + 1 + 4 + 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Entry {
    local: u32,
    color: Option<u32>,
    key: i64,
}

fn encode(e: Entry) -> Bytes {
    let mut b = BytesMut::with_capacity(ENTRY);
    b.put_u32_le(e.local);
    b.put_u8(e.color.is_some() as u8);
    b.put_u32_le(e.color.unwrap_or(0));
    b.put_i64_le(e.key);
    b.freeze()
}

fn decode(mut b: &[u8]) -> Vec<Entry> {
    let mut out = Vec::with_capacity(b.len() / ENTRY);
    while b.remaining() >= ENTRY {
        let local = b.get_u32_le();
        let defined = b.get_u8() != 0;
        let color = b.get_u32_le();
        let key = b.get_i64_le();
        out.push(Entry {
            local,
            color: defined.then_some(color),
            key,
        });
    }
    out
}

fn concat(a: &[u8], b: &[u8]) -> Bytes {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v.into()
}

impl Communicator {
    /// Splits the communicator. Ranks passing the same `color` end up in
    /// one child, ordered by `(key, global rank)`; `None` opts out. The
    /// children start with local scope and local uniformity.
    pub async fn derive(&self, color: Option<u32>, key: i64) -> Result<Option<Communicator>, CommError> {
        let me = self.proc.rank();
        let cid = self.cid;
        let (seq, acked) = self.state(|s| {
            s.seq.derive += 1;
            (s.seq.derive - 1, s.acked.clone())
        });
        let pre = self.proc.with_world(|w| classify(w, me, cid, false));
        if pre == ErrorClass::Revoked {
            return Err(CommError::Revoked);
        }
        let phase = Phase {
            comm: self,
            class: TagClass::Derive,
            seq,
            charge: None,
        };
        let mine = encode(Entry {
            local: self.local as u32,
            color,
            key,
        });
        let gathered = if pre == ErrorClass::ProcFailed {
            for (ph, to) in phase.owed(CollectiveKind::Allreduce, 0) {
                phase.markers(ph, &[to]);
            }
            Err(CommError::ProcFailed)
        } else {
            match phase.reduce(PHASE_UP, 0, &concat, mine).await {
                Ok(v) => {
                    let root_data = (self.local == 0).then_some(v);
                    phase.bcast(PHASE_DOWN, 0, root_data).await
                }
                Err(e) => {
                    let (_, children) = phase.tree(0);
                    phase.markers(PHASE_DOWN, &children);
                    Err(e)
                }
            }
        };
        let entries = match gathered {
            Err(CommError::Revoked) => return Err(CommError::Revoked),
            Err(_) => None,
            Ok(buf) => Some(decode(&buf)),
        };
        let colors: BTreeSet<u32> = entries.iter().flatten().filter_map(|e| e.color).collect();
        let block = colors.len() as u32;
        let owner = self.proc.with_world(|w| w.fresh_id());
        let proposal = if entries.is_some() && block > 0 {
            self.proc.with_world(|w| propose(w, me, block, owner))
        } else {
            0
        };
        let base = AgreementKey {
            cid,
            kind: KIND_DERIVE,
            seq,
            sub: 0,
        };
        let contrib = Contribution {
            bits: Bits::from_bools(&[entries.is_some()]),
            max: proposal as u64,
        };
        let release = || self.proc.with_world(|w| w.nodes[me.index()].cids.release(owner));
        let d = match agreement::run(&self.proc, base, self.group.clone(), contrib, acked, Some(cid)).await {
            Ok(d) => d,
            Err(e) => {
                release();
                return Err(e);
            }
        };
        if !d.value.bits.get(0) || !d.excluded.is_empty() {
            release();
            return Err(CommError::ProcFailed);
        }
        if block == 0 {
            release();
            return Ok(None);
        }
        let mut sub = 1;
        let first = match settle(
            &self.proc,
            base,
            &mut sub,
            self.group.clone(),
            block,
            owner,
            d.value.max as u32,
            Some(cid),
        )
        .await
        {
            Ok(c) => c,
            Err(SettleError::Revoked) => return Err(CommError::Revoked),
            Err(SettleError::Failure) => return Err(CommError::ProcFailed),
        };
        let Some(color) = color else { return Ok(None) };
        let index = colors.iter().position(|&c| c == color).expect("own color gathered") as u32;
        let mut members: Vec<(i64, RankId)> = entries
            .expect("exchange succeeded")
            .into_iter()
            .filter(|e| e.color == Some(color))
            .map(|e| (e.key, self.group[e.local as usize]))
            .collect();
        members.sort();
        let group: Rc<[RankId]> = members.into_iter().map(|(_, r)| r).collect();
        Ok(Some(Communicator::register(
            &self.proc,
            ContextId(first + index),
            group,
        )))
    }
}
