//! Little-endian encoding for internal control messages.

use bytes::{Buf, BufMut, Bytes, BytesMut};

use crate::bits::Bits;
use crate::simnet::RankId;

#[derive(Default)]
pub(crate) struct Encoder {
    buf: BytesMut,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(mut self, v: u8) -> Self {
        self.buf.put_u8(v);
        self
    }

    pub fn u32(mut self, v: u32) -> Self {
        self.buf.put_u32_le(v);
        self
    }

    pub fn u64(mut self, v: u64) -> Self {
        self.buf.put_u64_le(v);
        self
    }

    pub fn bits(mut self, b: &Bits) -> Self {
        self.buf.put_u32_le(b.len() as u32);
        for w in b.words() {
            self.buf.put_u64_le(*w);
        }
        self
    }

    pub fn ranks(mut self, ranks: &[RankId]) -> Self {
        self.buf.put_u32_le(ranks.len() as u32);
        for r in ranks {
            self.buf.put_u32_le(r.0);
        }
        self
    }

    #[cfg(test)]
    pub fn bytes(mut self, b: &[u8]) -> Self {
        self.buf.put_u64_le(b.len() as u64);
        self.buf.put_slice(b);
        self
    }

    pub fn finish(self) -> Bytes {
        self.buf.freeze()
    }
}

/// Panics on truncated input: control payloads are produced only by this crate.
pub(crate) struct Decoder {
    buf: Bytes,
}

impl Decoder {
    pub fn new(buf: Bytes) -> Self {
        Self { buf }
    }

    pub fn u8(&mut self) -> u8 {
        self.buf.get_u8()
    }

    pub fn u32(&mut self) -> u32 {
        self.buf.get_u32_le()
    }

    pub fn u64(&mut self) -> u64 {
        self.buf.get_u64_le()
    }

    pub fn bits(&mut self) -> Bits {
        let len = self.buf.get_u32_le() as usize;
        let words = (0..len.div_ceil(64)).map(|_| self.buf.get_u64_le()).collect();
        Bits::from_words(len, words)
    }

    pub fn ranks(&mut self) -> Vec<RankId> {
        let len = self.buf.get_u32_le() as usize;
        (0..len).map(|_| RankId(self.buf.get_u32_le())).collect()
    }

    #[cfg(test)]
    pub fn bytes(&mut self) -> Bytes {
        let len = self.buf.get_u64_le() as usize;
        self.buf.split_to(len)
    }
}
