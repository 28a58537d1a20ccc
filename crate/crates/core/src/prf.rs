use aes::cipher::{BlockEncrypt, KeyInit};
use aes::Aes128;
use rand::RngCore;

use crate::record::Header;

pub type Tag = u128;

/// Keyed AES. Used for tags (two-block CBC-MAC over a fixed-length input) and
/// as the per-table hash function.
#[derive(Clone)]
pub struct Prf {
    key: [u8; 16],
    aes: Aes128,
}

impl Prf {
    pub fn new(key: [u8; 16]) -> Prf {
        Prf { key, aes: Aes128::new(&key.into()) }
    }

    pub fn random<R: RngCore>(rng: &mut R) -> Prf {
        let mut key = [0u8; 16];
        rng.fill_bytes(&mut key);
        Prf::new(key)
    }

    pub fn key_bytes(&self) -> [u8; 16] {
        self.key
    }

    pub fn block(&self, x: u128) -> u128 {
        let mut b = x.to_le_bytes().into();
        self.aes.encrypt_block(&mut b);
        u128::from_le_bytes(b.into())
    }

    /// Tag of a header for table `j` of level `i` in epoch `e`.
    pub fn tag(&self, i: u32, j: u32, e: u64, hd: &Header) -> Tag {
        let b0 = (i as u128) | (j as u128) << 32 | (e as u128) << 64;
        let mut b1 = [0u8; 16];
        let mut h = *hd;
        h.current = true;
        b1[..9].copy_from_slice(&h.encode());
        self.block(self.block(b0) ^ u128::from_le_bytes(b1))
    }
}

impl std::fmt::Debug for Prf {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Prf(..)")
    }
}
