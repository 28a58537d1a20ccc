//! Base-d reshuffle schedule of the balanced hierarchy and the fullness
//! oracle it implies.

/// Destination `(level, table)` of the reshuffle due after round `t`, both
/// 1-based. Level `L + 1` means the bottom table is rebuilt.
pub fn reshuffle_target(t: u64, k: u64, d: u64) -> Option<(usize, usize)> {
    if t == 0 || t % k != 0 {
        return None;
    }
    let tp = t / k;
    let mut i = 0usize;
    let mut pow = 1u64;
    while (tp / pow) % d == 0 {
        pow *= d;
        i += 1;
    }
    let j = ((tp % (pow * d)) / pow) as usize;
    Some((i + 1, j))
}

/// Full tables at level `i` (1-based) after round `t`.
pub fn tables_to_scan(t: u64, k: u64, d: u64, i: usize) -> usize {
    let tp = t / k;
    let lo = d.pow(i as u32 - 1);
    ((tp % (lo * d)) / lo) as usize
}

/// Full-table count of every level `1..=levels` right after the reshuffle
/// of round `t` (a multiple of `k`).
pub fn expected_fullness(t: u64, k: u64, d: u64, levels: usize) -> Vec<usize> {
    (1..=levels).map(|i| tables_to_scan(t, k, d, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_targets() {
        let (k, d) = (3, 6);
        assert_eq!(reshuffle_target(k, k, d), Some((1, 1)));
        assert_eq!(reshuffle_target(2 * k, k, d), Some((1, 2)));
        assert_eq!(reshuffle_target(d * k, k, d), Some((2, 1)));
        assert_eq!(reshuffle_target(0, k, d), None);
        assert_eq!(reshuffle_target(k + 1, k, d), None);
    }

    #[test]
    fn scan_counts() {
        assert_eq!(tables_to_scan(0, 5, 4, 1), 0);
        assert_eq!(tables_to_scan(3 * 7, 7, 6, 1), 3);
        let d = 4;
        let f = expected_fullness(d * 2, 2, d, 3);
        assert_eq!(f, vec![0, 1, 0]);
        let f = expected_fullness((d - 1) * 2, 2, d, 3);
        assert_eq!(f, vec![d as usize - 1, 0, 0]);
    }

    /// Digit i of t' in base d, computed by repeated division.
    fn digit(tp: u64, d: u64, i: usize) -> usize {
        let mut x = tp;
        for _ in 1..i {
            x /= d;
        }
        (x % d) as usize
    }

    #[test]
    fn scan_count_is_base_d_digit() {
        for d in [2u64, 3, 4, 6] {
            for tp in 0..d.pow(4) {
                for i in 1..=4 {
                    assert_eq!(tables_to_scan(tp * 5, 5, d, i), digit(tp, d, i));
                }
            }
        }
    }

    /// Applies the schedule to a symbolic table-fullness state and compares
    /// with the oracle at every reshuffle.
    fn simulate(k: u64, d: u64, levels: usize) {
        let mut full = vec![vec![false; d as usize - 1]; levels];
        let mut top = 0u64;
        for t in 1..=k * d.pow(levels as u32) {
            top += 1;
            if let Some((lv, j)) = reshuffle_target(t, k, d) {
                assert_eq!(top, k);
                top = 0;
                for l in full.iter_mut().take(lv - 1) {
                    assert!(l.iter().all(|x| *x), "source level not full at t={t}");
                    l.iter_mut().for_each(|x| *x = false);
                }
                if lv <= levels {
                    assert!(!full[lv - 1][j - 1], "destination not empty at t={t}");
                    full[lv - 1][j - 1] = true;
                }
                let counts: Vec<usize> = full.iter().map(|l| l.iter().filter(|x| **x).count()).collect();
                let prefix_full = full.iter().zip(&counts).all(|(l, &c)| l.iter().take(c).all(|x| *x));
                assert!(prefix_full);
                let want = if lv > levels { vec![0; levels] } else { expected_fullness(t, k, d, levels) };
                assert_eq!(counts, want, "t={t}");
            }
        }
    }

    #[test]
    fn schedule_matches_oracle() {
        for d in [2, 3, 4, 5] {
            for k in [1, 2, 3] {
                simulate(k, d, 4);
            }
        }
    }

    proptest! {
        #[test]
        fn level_period(k in 1u64..5, d in 2u64..6, i in 1usize..4) {
            let hits: Vec<u64> = (1..=k * d.pow(i as u32 + 1))
                .filter(|&t| matches!(reshuffle_target(t, k, d), Some((lv, _)) if lv == i))
                .collect();
            for w in hits.windows(2) {
                let gap = w[1] - w[0];
                prop_assert!(gap == k * d.pow(i as u32 - 1) || gap == 2 * k * d.pow(i as u32 - 1));
            }
            let count = hits.len() as u64;
            prop_assert_eq!(count, (d - 1) * d);
        }
    }
}
