//! Batcher odd-even merge sort as a resumable comparator cursor.

/// Yields the comparators of the network for `n` (a power of two) in order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Network {
    n: usize,
    p: usize,
    k: usize,
    j: usize,
    i: usize,
    done: bool,
}

impl Network {
    pub fn new(n: usize) -> Network {
        assert!(n.is_power_of_two(), "network size must be a power of two");
        let mut net = Network { n, p: 1, k: 1, j: 0, i: 0, done: n < 2 };
        if !net.done && !net.valid() {
            net.advance();
        }
        net
    }

    fn valid(&self) -> bool {
        let (p, k, j, i) = (self.p, self.k, self.j, self.i);
        (i + j) / (2 * p) == (i + j + k) / (2 * p)
    }

    /// Moves to the next (p, k, j, i) of the loop nest, filtered or not.
    fn bump(&mut self) {
        self.i += 1;
        if self.i < self.k.min(self.n - self.j - self.k) {
            return;
        }
        self.i = 0;
        self.j += 2 * self.k;
        while self.j + self.k >= self.n {
            self.k /= 2;
            if self.k == 0 {
                self.p *= 2;
                if self.p >= self.n {
                    self.done = true;
                    return;
                }
                self.k = self.p;
            }
            self.j = self.k % self.p;
        }
    }

    fn advance(&mut self) {
        loop {
            self.bump();
            if self.done || self.valid() {
                return;
            }
        }
    }
}

impl Iterator for Network {
    type Item = (usize, usize);

    fn next(&mut self) -> Option<(usize, usize)> {
        if self.done {
            return None;
        }
        let out = (self.i + self.j, self.i + self.j + self.k);
        self.advance();
        Some(out)
    }
}

/// Comparator count for size 2^t: (t^2 - t + 4) 2^(t-2) - 1.
pub fn comparators(n: usize) -> u64 {
    if n < 2 {
        return 0;
    }
    let t = n.trailing_zeros() as u64;
    ((t * t - t + 4) << t) / 4 - 1
}

/// Sorts `v` in place by running the network.
pub fn sort_by_network<T, K: Ord>(v: &mut [T], key: impl Fn(&T) -> K, mut visit: impl FnMut(usize, usize)) {
    for (a, b) in Network::new(v.len()) {
        visit(a, b);
        if key(&v[a]) > key(&v[b]) {
            v.swap(a, b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Plain transcription of the loop nest, used as the reference.
    fn reference(n: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut p = 1;
        while p < n {
            let mut k = p;
            while k >= 1 {
                let mut j = k % p;
                while j + k < n {
                    for i in 0..k.min(n - j - k) {
                        if (i + j) / (2 * p) == (i + j + k) / (2 * p) {
                            out.push((i + j, i + j + k));
                        }
                    }
                    j += 2 * k;
                }
                k /= 2;
            }
            p *= 2;
        }
        out
    }

    #[test]
    fn cursor_matches_loop_nest() {
        for t in 0..=10 {
            let n = 1 << t;
            let got: Vec<_> = Network::new(n).collect();
            assert_eq!(got, reference(n), "n={n}");
            assert_eq!(got.len() as u64, comparators(n), "n={n}");
        }
    }

    #[test]
    fn cursor_is_resumable() {
        let mut a = Network::new(64);
        let first: Vec<_> = a.by_ref().take(100).collect();
        let snapshot = a.clone();
        let rest: Vec<_> = a.collect();
        let again: Vec<_> = snapshot.collect();
        assert_eq!(rest, again);
        assert_eq!(first.len() + rest.len(), comparators(64) as usize);
    }

    #[test]
    fn sorted_input_unchanged() {
        let mut v: Vec<u32> = (0..128).collect();
        sort_by_network(&mut v, |x| *x, |_, _| {});
        assert_eq!(v, (0..128).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn sorts_like_std(mut v in (0u32..13).prop_flat_map(|t| proptest::collection::vec(any::<u16>(), 1usize << t))) {
            let mut want = v.clone();
            want.sort();
            sort_by_network(&mut v, |x| *x, |_, _| {});
            prop_assert_eq!(v, want);
        }
    }
}
