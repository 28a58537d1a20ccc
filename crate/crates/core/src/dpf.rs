//! Two-party distributed point function over a binary tree.
//!
//! A share is a root seed (its LSB is the party's initial control bit), one
//! correction word per level and a final output correction.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::prg::{expand, mask_tail, stretch};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CorrectionWord {
    pub seed: u128,
    pub left: bool,
    pub right: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DpfShare {
    /// Domain bit length.
    pub n: u16,
    /// Output bit length.
    pub m: u16,
    pub root: u128,
    pub cws: Vec<CorrectionWord>,
    pub last: Vec<u8>,
}

/// Serialized share length in bits, byte padded.
pub fn share_bits(n: u32, m: u32) -> u64 {
    let raw = 16 + 16 + 128 + 130 * n as u64 + m as u64;
    raw.div_ceil(8) * 8
}

fn xor_into(dst: &mut [u8], src: &[u8]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d ^= s;
    }
}

fn bit_of(x: u64, n: u16, level: usize) -> bool {
    (x >> (n as usize - 1 - level)) & 1 == 1
}

/// Shares of the point function that maps `a` to `b` (of `m` bits) and
/// everything else to zero.
pub fn gen<R: RngCore>(rng: &mut R, n: u16, a: u64, b: &[u8], m: u16) -> Result<(DpfShare, DpfShare)> {
    if n < 64 && a >> n != 0 {
        return Err(Error::IndexOutOfRange { index: a, len: 1u64 << n });
    }
    let bytes = (m as usize).div_ceil(8);
    if b.len() != bytes {
        return Err(Error::LengthMismatch { expected: bytes, got: b.len() });
    }
    let mut r = [0u8; 32];
    rng.fill_bytes(&mut r);
    let root0 = u128::from_le_bytes(r[..16].try_into().unwrap()) & !1;
    let root1 = u128::from_le_bytes(r[16..].try_into().unwrap()) | 1;
    let (mut s0, mut t0, mut s1, mut t1) = (root0, false, root1, true);
    let mut cws = Vec::with_capacity(n as usize);
    for i in 0..n as usize {
        let (l0, tl0, r0, tr0) = expand(s0);
        let (l1, tl1, r1, tr1) = expand(s1);
        let ai = bit_of(a, n, i);
        let seed = if ai { l0 ^ l1 } else { r0 ^ r1 };
        let left = tl0 ^ tl1 ^ ai ^ true;
        let right = tr0 ^ tr1 ^ ai;
        cws.push(CorrectionWord { seed, left, right });
        let (k0, kt0, k1, kt1, tk) = if ai {
            (r0, tr0, r1, tr1, right)
        } else {
            (l0, tl0, l1, tl1, left)
        };
        let (ns0, nt0) = (k0 ^ if t0 { seed } else { 0 }, kt0 ^ (t0 & tk));
        let (ns1, nt1) = (k1 ^ if t1 { seed } else { 0 }, kt1 ^ (t1 & tk));
        s0 = ns0;
        t0 = nt0;
        s1 = ns1;
        t1 = nt1;
    }
    let mut last = stretch(s0, m as usize);
    xor_into(&mut last, &stretch(s1, m as usize));
    xor_into(&mut last, b);
    mask_tail(&mut last, m as usize);
    let mk = |root| DpfShare { n, m, root, cws: cws.clone(), last: last.clone() };
    Ok((mk(root0), mk(root1)))
}

impl DpfShare {
    fn step(&self, s: u128, t: bool, i: usize) -> (u128, bool, u128, bool) {
        let (mut l, mut tl, mut r, mut tr) = expand(s);
        if t {
            let cw = &self.cws[i];
            l ^= cw.seed;
            r ^= cw.seed;
            tl ^= cw.left;
            tr ^= cw.right;
        }
        (l, tl, r, tr)
    }

    fn output(&self, s: u128, t: bool) -> Vec<u8> {
        let mut out = stretch(s, self.m as usize);
        if t {
            xor_into(&mut out, &self.last);
        }
        out
    }

    pub fn eval(&self, x: u64) -> Vec<u8> {
        let (mut s, mut t) = (self.root, self.root & 1 == 1);
        for i in 0..self.n as usize {
            let (l, tl, r, tr) = self.step(s, t, i);
            (s, t) = if bit_of(x, self.n, i) { (r, tr) } else { (l, tl) };
        }
        self.output(s, t)
    }

    /// Leaf seeds and control bits for every point of the domain, in order.
    fn leaves(&self) -> Vec<(u128, bool)> {
        let mut cur = vec![(self.root, self.root & 1 == 1)];
        for i in 0..self.n as usize {
            let mut next = Vec::with_capacity(cur.len() * 2);
            for &(s, t) in &cur {
                let (l, tl, r, tr) = self.step(s, t, i);
                next.push((l, tl));
                next.push((r, tr));
            }
            cur = next;
        }
        cur
    }

    pub fn full_eval(&self) -> Vec<Vec<u8>> {
        self.leaves().into_iter().map(|(s, t)| self.output(s, t)).collect()
    }

    /// Full evaluation for one-bit outputs, as a bit per domain point.
    pub fn full_eval_bits(&self) -> Vec<bool> {
        self.leaves()
            .into_iter()
            .map(|(s, t)| self.output(s, t)[0] & 1 == 1)
            .collect()
    }

    pub fn bit_len(&self) -> u64 {
        share_bits(self.n as u32, self.m as u32)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BitWriter::default();
        w.put(self.n as u128, 16);
        w.put(self.m as u128, 16);
        w.put(self.root, 128);
        for cw in &self.cws {
            w.put(cw.seed, 128);
            w.put(cw.left as u128, 1);
            w.put(cw.right as u128, 1);
        }
        for i in 0..self.m as usize {
            w.put(((self.last[i / 8] >> (i % 8)) & 1) as u128, 1);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<DpfShare> {
        let mut r = BitReader { data: bytes, pos: 0 };
        let n = r.get(16)? as u16;
        let m = r.get(16)? as u16;
        let expected = (share_bits(n as u32, m as u32) / 8) as usize;
        if bytes.len() != expected {
            return Err(Error::LengthMismatch { expected, got: bytes.len() });
        }
        let root = r.get(128)?;
        let mut cws = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let seed = r.get(128)?;
            let left = r.get(1)? == 1;
            let right = r.get(1)? == 1;
            cws.push(CorrectionWord { seed, left, right });
        }
        let mut last = vec![0u8; (m as usize).div_ceil(8)];
        for i in 0..m as usize {
            last[i / 8] |= (r.get(1)? as u8) << (i % 8);
        }
        Ok(DpfShare { n, m, root, cws, last })
    }
}

#[derive(Default)]
struct BitWriter {
    out: Vec<u8>,
    bits: usize,
}

impl BitWriter {
    /// Writes the low `width` bits of `v`, most significant first.
    fn put(&mut self, v: u128, width: usize) {
        for k in (0..width).rev() {
            if self.bits % 8 == 0 {
                self.out.push(0);
            }
            if (v >> k) & 1 == 1 {
                *self.out.last_mut().unwrap() |= 0x80 >> (self.bits % 8);
            }
            self.bits += 1;
        }
    }

    fn finish(self) -> Vec<u8> {
        self.out
    }
}

struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl BitReader<'_> {
    fn get(&mut self, width: usize) -> Result<u128> {
        if self.pos + width > self.data.len() * 8 {
            return Err(Error::LengthMismatch { expected: (self.pos + width).div_ceil(8), got: self.data.len() });
        }
        let mut v = 0u128;
        for _ in 0..width {
            let bit = (self.data[self.pos / 8] >> (7 - self.pos % 8)) & 1;
            v = (v << 1) | bit as u128;
            self.pos += 1;
        }
        Ok(v)
    }
}
