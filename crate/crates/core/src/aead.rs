use aes_gcm::aead::AeadInPlace;
use aes_gcm::{Aes128Gcm, KeyInit, Nonce};
use rand::RngCore;

use crate::error::{Error, Result};

pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;

/// AES-128-GCM with random nonces. Ciphertext layout: nonce | body | tag.
#[derive(Clone)]
pub struct Aead {
    cipher: Aes128Gcm,
}

impl Aead {
    pub fn new(key: [u8; 16]) -> Aead {
        Aead { cipher: Aes128Gcm::new(&key.into()) }
    }

    pub fn random<R: RngCore>(rng: &mut R) -> Aead {
        let mut key = [0u8; 16];
        rng.fill_bytes(&mut key);
        Aead::new(key)
    }

    pub fn overhead() -> usize {
        NONCE_LEN + TAG_LEN
    }

    pub fn seal_into<R: RngCore>(&self, rng: &mut R, pt: &[u8], out: &mut Vec<u8>) {
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);
        out.extend_from_slice(&nonce);
        let start = out.len();
        out.extend_from_slice(pt);
        let tag = self
            .cipher
            .encrypt_in_place_detached(Nonce::from_slice(&nonce), b"", &mut out[start..])
            .expect("message fits");
        out.extend_from_slice(&tag);
    }

    pub fn seal<R: RngCore>(&self, rng: &mut R, pt: &[u8]) -> Vec<u8> {
        let mut out = Vec::with_capacity(pt.len() + Self::overhead());
        self.seal_into(rng, pt, &mut out);
        out
    }

    pub fn open(&self, ct: &[u8]) -> Result<Vec<u8>> {
        if ct.len() < Self::overhead() {
            return Err(Error::AuthFailure);
        }
        let (nonce, rest) = ct.split_at(NONCE_LEN);
        let (body, tag) = rest.split_at(rest.len() - TAG_LEN);
        let mut buf = body.to_vec();
        self.cipher
            .decrypt_in_place_detached(Nonce::from_slice(nonce), b"", &mut buf, tag.into())
            .map_err(|_| Error::AuthFailure)?;
        Ok(buf)
    }
}

impl std::fmt::Debug for Aead {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Aead(..)")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn fresh_nonce_each_time() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let a = Aead::random(&mut rng);
        let x = a.seal(&mut rng, b"hello");
        let y = a.seal(&mut rng, b"hello");
        assert_ne!(x, y);
        assert_eq!(a.open(&x).unwrap(), b"hello");
        assert_eq!(a.open(&y).unwrap(), b"hello");
    }

    #[test]
    fn wrong_key_fails() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let a = Aead::random(&mut rng);
        let b = Aead::random(&mut rng);
        let x = a.seal(&mut rng, b"x");
        assert_eq!(b.open(&x), Err(Error::AuthFailure));
        assert_eq!(a.open(&x[..10]), Err(Error::AuthFailure));
    }
}
