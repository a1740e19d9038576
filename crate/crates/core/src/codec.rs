//! Minimal deterministic binary codec used for every on-wire and on-disk
//! structure. Integers are little-endian and fixed-width; byte strings carry
//! a u32 length prefix. There is exactly one encoding for every value, which
//! is what makes content digests and byte-identical replays possible.

use thiserror::Error;

use crate::hashtree::Digest;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("unexpected end of input at byte {0}")]
    UnexpectedEnd(usize),
    #[error("trailing bytes after value ({0} left)")]
    TrailingBytes(usize),
    #[error("invalid tag {tag} for {what}")]
    InvalidTag { what: &'static str, tag: u8 },
    #[error("length {0} exceeds limit")]
    LengthLimit(u64),
}

/// Append-only encoder.
#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Writer {
        Writer::default()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn put_u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn put_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_digest(&mut self, d: &Digest) {
        self.buf.extend_from_slice(&d.0);
    }

    pub fn put_bytes(&mut self, b: &[u8]) {
        self.put_u32(b.len() as u32);
        self.buf.extend_from_slice(b);
    }

    pub fn put_vec<T: Codec>(&mut self, items: &[T]) {
        self.put_u32(items.len() as u32);
        for it in items {
            it.encode(self);
        }
    }
}

/// Cursor-based decoder over a byte slice.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Reader<'a> {
        Reader { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self.pos.checked_add(n).ok_or(CodecError::UnexpectedEnd(self.pos))?;
        if end > self.buf.len() {
            return Err(CodecError::UnexpectedEnd(self.pos));
        }
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn get_u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn get_u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn get_u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn get_digest(&mut self) -> Result<Digest, CodecError> {
        Ok(Digest(self.take(32)?.try_into().expect("32 bytes")))
    }

    pub fn get_bytes(&mut self) -> Result<Vec<u8>, CodecError> {
        let len = self.get_u32()? as usize;
        // A length prefix can never exceed what is actually left.
        if len > self.remaining() {
            return Err(CodecError::LengthLimit(len as u64));
        }
        Ok(self.take(len)?.to_vec())
    }

    pub fn get_vec<T: Codec>(&mut self) -> Result<Vec<T>, CodecError> {
        let len = self.get_u32()? as usize;
        // Each element consumes at least one byte in every Codec impl.
        if len > self.remaining() {
            return Err(CodecError::LengthLimit(len as u64));
        }
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(T::decode(self)?);
        }
        Ok(out)
    }

    pub fn finish(self) -> Result<(), CodecError> {
        if self.pos != self.buf.len() {
            return Err(CodecError::TrailingBytes(self.buf.len() - self.pos));
        }
        Ok(())
    }
}

/// Symmetric encode/decode for a wire value.
pub trait Codec: Sized {
    fn encode(&self, w: &mut Writer);
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError>;

    fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode(&mut w);
        w.into_bytes()
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        let v = Self::decode(&mut r)?;
        r.finish()?;
        Ok(v)
    }
}

impl Codec for Digest {
    fn encode(&self, w: &mut Writer) {
        w.put_digest(self);
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        r.get_digest()
    }
}

impl Codec for u64 {
    fn encode(&self, w: &mut Writer) {
        w.put_u64(*self);
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        r.get_u64()
    }
}
