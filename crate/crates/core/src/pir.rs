use rand::{Rng, RngCore};

use crate::config::ceil_log2;
use crate::dpf::{self, DpfShare};
use crate::error::{Error, Result};

pub const PROTO_XOR: u8 = 1;
pub const PROTO_DPF_READ: u8 = 2;
pub const PROTO_DPF_WRITE: u8 = 3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionShare {
    pub bits: Vec<bool>,
}

impl SelectionShare {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![PROTO_XOR];
        out.extend_from_slice(&(self.bits.len() as u32).to_be_bytes());
        let mut packed = vec![0u8; self.bits.len().div_ceil(8)];
        for (i, &b) in self.bits.iter().enumerate() {
            if b {
                packed[i / 8] |= 0x80 >> (i % 8);
            }
        }
        out.extend_from_slice(&packed);
        out
    }
}

pub fn xor_into(dst: &mut [u8], src: &[u8]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d ^= s;
    }
}

fn check_index(i: usize, n: usize) -> Result<()> {
    if i >= n {
        return Err(Error::IndexOutOfRange { index: i as u64, len: n as u64 });
    }
    Ok(())
}

/// Splits the unit vector `e_i` of length `n` into `m` XOR shares.
pub fn pirm_query<R: RngCore>(rng: &mut R, i: usize, n: usize, m: usize) -> Result<Vec<SelectionShare>> {
    check_index(i, n)?;
    if m < 2 {
        return Err(Error::bad("m", "need at least two parties"));
    }
    let mut shares: Vec<Vec<bool>> = (0..m - 1).map(|_| (0..n).map(|_| rng.gen()).collect()).collect();
    let mut last = vec![false; n];
    last[i] = true;
    for s in &shares {
        for (l, b) in last.iter_mut().zip(s) {
            *l ^= b;
        }
    }
    shares.push(last);
    Ok(shares.into_iter().map(|bits| SelectionShare { bits }).collect())
}

pub fn pir2_query<R: RngCore>(rng: &mut R, i: usize, n: usize) -> Result<(SelectionShare, SelectionShare)> {
    let mut v = pirm_query(rng, i, n, 2)?;
    let b = v.pop().unwrap();
    let a = v.pop().unwrap();
    Ok((a, b))
}

/// XOR of the selected blocks.
pub fn pir2_answer<T: AsRef<[u8]>>(x: &[T], q: &SelectionShare) -> Result<Vec<u8>> {
    if x.len() != q.bits.len() {
        return Err(Error::LengthMismatch { expected: x.len(), got: q.bits.len() });
    }
    let width = x.first().map_or(0, |b| b.as_ref().len());
    let mut out = vec![0u8; width];
    for (blk, &b) in x.iter().zip(&q.bits) {
        if b {
            xor_into(&mut out, blk.as_ref());
        }
    }
    Ok(out)
}

pub fn combine<T: AsRef<[u8]>>(answers: &[T]) -> Vec<u8> {
    let mut out = answers[0].as_ref().to_vec();
    for a in &answers[1..] {
        xor_into(&mut out, a.as_ref());
    }
    out
}

/// Domain bits for an array of `n` entries padded to a power of two.
pub fn domain_bits(n: usize) -> u16 {
    ceil_log2(n as u64) as u16
}

/// DPF shares of `e_i` with one-bit outputs, for reading a replicated array.
pub fn dpf_read_query<R: RngCore>(rng: &mut R, i: usize, n: usize) -> Result<(DpfShare, DpfShare)> {
    check_index(i, n)?;
    dpf::gen(rng, domain_bits(n), i as u64, &[1], 1)
}

/// Inner product of the array with the expanded selection vector.
pub fn dpf_answer<T: AsRef<[u8]>>(x: &[T], q: &DpfShare) -> Result<Vec<u8>> {
    let bits = q.full_eval_bits();
    if bits.len() < x.len() || q.m != 1 {
        return Err(Error::LengthMismatch { expected: x.len(), got: bits.len() });
    }
    let width = x.first().map_or(0, |b| b.as_ref().len());
    let mut out = vec![0u8; width];
    for (blk, b) in x.iter().zip(bits) {
        if b {
            xor_into(&mut out, blk.as_ref());
        }
    }
    Ok(out)
}

/// Shares of `delta * e_i`; applying one to each additive half adds `delta` at `i`.
pub fn pirw_gen<R: RngCore>(rng: &mut R, i: usize, delta: &[u8], n: usize) -> Result<(DpfShare, DpfShare)> {
    check_index(i, n)?;
    let m = delta.len() * 8;
    if m > u16::MAX as usize {
        return Err(Error::bad("B", "write value too wide for a share"));
    }
    dpf::gen(rng, domain_bits(n), i as u64, delta, m as u16)
}

pub fn pirw_apply(x: &mut [Vec<u8>], w: &DpfShare) -> Result<()> {
    let full = w.full_eval();
    if full.len() < x.len() {
        return Err(Error::LengthMismatch { expected: x.len(), got: full.len() });
    }
    for (blk, add) in x.iter_mut().zip(full) {
        if blk.len() != add.len() {
            return Err(Error::LengthMismatch { expected: blk.len(), got: add.len() });
        }
        xor_into(blk, &add);
    }
    Ok(())
}

pub fn encode_dpf_query(proto: u8, n: usize, share: &DpfShare) -> Vec<u8> {
    let mut out = vec![proto];
    out.extend_from_slice(&(n as u32).to_be_bytes());
    out.extend_from_slice(&share.to_bytes());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn blocks(rng: &mut ChaCha20Rng, n: usize, w: usize) -> Vec<Vec<u8>> {
        (0..n).map(|_| (0..w).map(|_| rng.gen()).collect()).collect()
    }

    #[test]
    fn unit_selection_and_zero_selection() {
        let x = vec![vec![1u8], vec![2], vec![4], vec![8]];
        let e2 = SelectionShare { bits: vec![false, false, true, false] };
        assert_eq!(pir2_answer(&x, &e2).unwrap(), vec![4]);
        let z = SelectionShare { bits: vec![false; 4] };
        assert_eq!(pir2_answer(&x, &z).unwrap(), vec![0]);
        assert!(pir2_answer(&x[..3], &z).is_err());
    }

    #[test]
    fn three_party_shares_xor_to_unit() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for i in 0..8 {
            let q = pirm_query(&mut rng, i, 8, 3).unwrap();
            for j in 0..8 {
                let x = q[0].bits[j] ^ q[1].bits[j] ^ q[2].bits[j];
                assert_eq!(x, i == j);
            }
        }
    }

    #[test]
    fn out_of_range() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        assert!(matches!(pir2_query(&mut rng, 4, 4), Err(Error::IndexOutOfRange { .. })));
        assert!(pirw_gen(&mut rng, 9, &[0], 8).is_err());
    }

    #[test]
    fn dpf_single_element() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let x = vec![vec![9u8, 9]];
        let (a, b) = dpf_read_query(&mut rng, 0, 1).unwrap();
        let r = combine(&[dpf_answer(&x, &a).unwrap(), dpf_answer(&x, &b).unwrap()]);
        assert_eq!(r, vec![9, 9]);
    }

    #[test]
    fn write_then_read() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let x = blocks(&mut rng, 8, 4);
        let mut h0 = blocks(&mut rng, 8, 4);
        let mut h1: Vec<Vec<u8>> = x.iter().zip(&h0).map(|(a, b)| combine(&[a, b])).collect();
        let target = vec![0xde, 0xad, 0xbe, 0xef];
        let delta = combine(&[&x[5], &target]);
        let (w0, w1) = pirw_gen(&mut rng, 5, &delta, 8).unwrap();
        pirw_apply(&mut h0, &w0).unwrap();
        pirw_apply(&mut h1, &w1).unwrap();
        let (q0, q1) = pir2_query(&mut rng, 5, 8).unwrap();
        let a0 = combine(&[pir2_answer(&h0, &q0).unwrap(), pir2_answer(&h0, &q1).unwrap()]);
        let a1 = combine(&[pir2_answer(&h1, &q0).unwrap(), pir2_answer(&h1, &q1).unwrap()]);
        assert_eq!(combine(&[a0, a1]), target);
    }

    proptest::proptest! {
        #![proptest_config(proptest::test_runner::Config::with_cases(64))]

        #[test]
        fn reads_return_selected_block(n in 1usize..200, w in 1usize..16, seed: u64, pick: proptest::sample::Index) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let x = blocks(&mut rng, n, w);
            let i = pick.index(n);
            let (q0, q1) = pir2_query(&mut rng, i, n).unwrap();
            proptest::prop_assert_eq!(&combine(&[pir2_answer(&x, &q0).unwrap(), pir2_answer(&x, &q1).unwrap()]), &x[i]);
            let qs = pirm_query(&mut rng, i, n, 4).unwrap();
            let answers: Vec<_> = qs.iter().map(|q| pir2_answer(&x, q).unwrap()).collect();
            proptest::prop_assert_eq!(&combine(&answers), &x[i]);
            let (a, b) = dpf_read_query(&mut rng, i, n).unwrap();
            proptest::prop_assert_eq!(&combine(&[dpf_answer(&x, &a).unwrap(), dpf_answer(&x, &b).unwrap()]), &x[i]);
        }
    }
}
