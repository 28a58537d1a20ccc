use aes::cipher::{BlockEncrypt, KeyInit};
use aes::Aes128;
use std::sync::OnceLock;

const FIXED_KEY: [u8; 16] = *b"doram-fixed-key!";

fn fixed() -> &'static Aes128 {
    static CIPHER: OnceLock<Aes128> = OnceLock::new();
    CIPHER.get_or_init(|| Aes128::new(&FIXED_KEY.into()))
}

/// Matyas-Meyer-Oseas on a fixed-key permutation: `pi(x) ^ x`.
fn mmo(x: u128) -> u128 {
    let mut b = x.to_le_bytes().into();
    fixed().encrypt_block(&mut b);
    u128::from_le_bytes(b.into()) ^ x
}

/// Length-doubling expansion used by the tree DPF. Returns the left and right
/// children with their control bits split off (the seed LSB is cleared).
pub fn expand(seed: u128) -> (u128, bool, u128, bool) {
    let l = mmo(seed ^ 0);
    let r = mmo(seed ^ 1);
    (l & !1, l & 1 == 1, r & !1, r & 1 == 1)
}

/// Stretches a seed to `bits` output bits, byte padded with the tail masked.
pub fn stretch(seed: u128, bits: usize) -> Vec<u8> {
    let bytes = bits.div_ceil(8);
    let mut out = Vec::with_capacity(bytes.div_ceil(16) * 16);
    let mut c = 2u128;
    while out.len() < bytes {
        out.extend_from_slice(&mmo(seed ^ c).to_le_bytes());
        c += 1;
    }
    out.truncate(bytes);
    mask_tail(&mut out, bits);
    out
}

pub(crate) fn mask_tail(v: &mut [u8], bits: usize) {
    if bits % 8 != 0 {
        if let Some(last) = v.last_mut() {
            *last &= (1u8 << (bits % 8)) - 1;
        }
    }
}
