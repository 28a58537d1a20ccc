use rand::RngCore;

use crate::aead::{Aead, NONCE_LEN, TAG_LEN};
use crate::error::{Error, Result};

/// Encoded header length in bytes (67 bits, byte padded).
pub const HEADER_BYTES: usize = 9;
/// Ciphertext length of an encrypted header.
pub const HEAD_CT: usize = NONCE_LEN + HEADER_BYTES + TAG_LEN;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kind {
    Real,
    DummyHash,
    DummyStash,
    Empty,
}

impl Kind {
    fn code(self) -> u8 {
        match self {
            Kind::Real => 0,
            Kind::DummyHash => 1,
            Kind::DummyStash => 2,
            Kind::Empty => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Header {
    pub kind: Kind,
    /// Address for `Real`, counter otherwise.
    pub value: u64,
    pub current: bool,
}

impl Header {
    pub fn real(v: u64) -> Header {
        Header { kind: Kind::Real, value: v, current: true }
    }
    pub fn dummy_hash(t: u64) -> Header {
        Header { kind: Kind::DummyHash, value: t, current: true }
    }
    pub fn dummy_stash(r: u64) -> Header {
        Header { kind: Kind::DummyStash, value: r, current: true }
    }
    pub fn empty(z: u64) -> Header {
        Header { kind: Kind::Empty, value: z, current: true }
    }

    pub fn is_real(&self) -> bool {
        self.kind == Kind::Real
    }
    pub fn is_empty(&self) -> bool {
        self.kind == Kind::Empty
    }
    pub fn is_dummy(&self) -> bool {
        matches!(self.kind, Kind::DummyHash | Kind::DummyStash)
    }

    /// Lookup key for tables keyed by header: kind and value packed together.
    pub fn key(&self) -> u128 {
        ((self.kind.code() as u128) << 64) | self.value as u128
    }

    pub fn encode(&self) -> [u8; HEADER_BYTES] {
        let mut out = [0u8; HEADER_BYTES];
        out[0] = self.kind.code() | ((self.current as u8) << 2);
        out[1..].copy_from_slice(&self.value.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Header> {
        if bytes.len() != HEADER_BYTES || bytes[0] >> 3 != 0 {
            return Err(Error::BadHeader);
        }
        let kind = match bytes[0] & 3 {
            0 => Kind::Real,
            1 => Kind::DummyHash,
            2 => Kind::DummyStash,
            _ => Kind::Empty,
        };
        let value = u64::from_le_bytes(bytes[1..].try_into().unwrap());
        Ok(Header { kind, value, current: bytes[0] & 4 != 0 })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub header: Header,
    pub payload: Vec<u8>,
}

impl Record {
    pub fn new(header: Header, payload: Vec<u8>) -> Record {
        Record { header, payload }
    }

    pub fn blank(header: Header, payload_bytes: usize) -> Record {
        Record { header, payload: vec![0u8; payload_bytes] }
    }
}

/// Encrypted record: header ciphertext followed by payload ciphertext.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncRecord(pub Vec<u8>);

impl EncRecord {
    pub fn len_for(payload_bytes: usize) -> usize {
        HEAD_CT + NONCE_LEN + payload_bytes + TAG_LEN
    }

    pub fn seal<R: RngCore>(aead: &Aead, rng: &mut R, rec: &Record) -> EncRecord {
        let mut buf = Vec::with_capacity(Self::len_for(rec.payload.len()));
        aead.seal_into(rng, &rec.header.encode(), &mut buf);
        aead.seal_into(rng, &rec.payload, &mut buf);
        EncRecord(buf)
    }

    pub fn head(&self) -> &[u8] {
        &self.0[..HEAD_CT]
    }

    pub fn body(&self) -> &[u8] {
        &self.0[HEAD_CT..]
    }

    pub fn open_header(&self, aead: &Aead) -> Result<Header> {
        if self.0.len() < HEAD_CT {
            return Err(Error::LengthMismatch { expected: HEAD_CT, got: self.0.len() });
        }
        Header::decode(&aead.open(self.head())?)
    }

    pub fn open(&self, aead: &Aead) -> Result<Record> {
        let header = self.open_header(aead)?;
        let payload = aead.open(self.body())?;
        Ok(Record { header, payload })
    }

    /// Replaces the header ciphertext, keeping the payload ciphertext.
    pub fn set_head(&mut self, head: &[u8]) {
        self.0[..HEAD_CT].copy_from_slice(head);
    }

    pub fn seal_head<R: RngCore>(aead: &Aead, rng: &mut R, h: &Header) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEAD_CT);
        aead.seal_into(rng, &h.encode(), &mut buf);
        buf
    }

    /// Identifies this exact ciphertext (its header and payload tags).
    pub fn fingerprint(&self) -> u128 {
        let a = &self.0[HEAD_CT - 8..HEAD_CT];
        let b = &self.0[self.0.len() - 8..];
        (u64::from_le_bytes(a.try_into().unwrap()) as u128) << 64
            | u64::from_le_bytes(b.try_into().unwrap()) as u128
    }
}
