//! Knockoff and knockoff+ selection thresholds.

use alloc::vec::Vec;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// `+inf` when no candidate threshold is feasible.
    pub threshold: f64,
    /// Zero-based indices with `W_j >= threshold`, ascending.
    pub selected: Vec<usize>,
    /// The ratio that met the target at `threshold` (including the +1 for
    /// knockoff+); 0 when nothing is selected.
    pub fdp_estimate: f64,
    pub q: f64,
    pub plus: bool,
}

/// `#{W <= -t} / #{W >= t}` with `0/0 = 0`.
pub fn fdp_hat(w: &[f64], t: f64) -> f64 {
    let neg = w.iter().filter(|&&v| v <= -t).count();
    let pos = w.iter().filter(|&&v| v >= t).count();
    if pos == 0 {
        if neg == 0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        neg as f64 / pos as f64
    }
}

/// Smallest `t` among the nonzero `|W_j|` whose estimated false discovery
/// proportion is at most `q`; `plus` adds one to the count of negatives.
pub fn knockoff_threshold(w: &[f64], q: f64, plus: bool) -> Result<SelectionResult> {
    if !(q > 0.0 && q < 1.0) {
        return Err(invalid("target level q must lie in (0, 1)"));
    }
    if w.iter().any(|v| v.is_nan()) {
        return Err(invalid("W contains NaN"));
    }
    let offset = if plus { 1 } else { 0 };
    let mut pos: Vec<f64> = w.iter().copied().filter(|&v| v > 0.0).collect();
    let mut neg: Vec<f64> = w.iter().filter(|&&v| v < 0.0).map(|v| -v).collect();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let mut cand: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    cand.sort_by(f64::total_cmp);
    cand.dedup();

    // counts of W >= t and W <= -t as t increases
    let (mut ip, mut ineg) = (0, 0);
    for &t in &cand {
        while ip < pos.len() && pos[ip] < t {
            ip += 1;
        }
        while ineg < neg.len() && neg[ineg] < t {
            ineg += 1;
        }
        let above = pos.len() - ip;
        let below = neg.len() - ineg;
        let ratio = (offset + below) as f64 / above.max(1) as f64;
        if ratio <= q {
            let selected = (0..w.len()).filter(|&j| w[j] >= t).collect();
            return Ok(SelectionResult {
                threshold: t,
                selected,
                fdp_estimate: ratio,
                q,
                plus,
            });
        }
    }
    Ok(SelectionResult {
        threshold: f64::INFINITY,
        selected: Vec::new(),
        fdp_estimate: 0.0,
        q,
        plus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::Rng as _;

    /// Direct transcription: try every candidate, keep the smallest feasible.
    fn brute(w: &[f64], q: f64, plus: bool) -> (f64, Vec<usize>) {
        let mut best = f64::INFINITY;
        for &c in w {
            let t = c.abs();
            if t == 0.0 {
                continue;
            }
            let neg = w.iter().filter(|&&v| v <= -t).count() + usize::from(plus);
            let pos = w.iter().filter(|&&v| v >= t).count().max(1);
            if (neg as f64) / (pos as f64) <= q && t < best {
                best = t;
            }
        }
        let sel = (0..w.len()).filter(|&j| w[j] >= best).collect();
        (best, sel)
    }

    #[test]
    fn matches_exhaustive_search() {
        let mut rng = substream(1, 0);
        for _ in 0..1000 {
            let p = rng.random_range(1..=20);
            // small integer grid forces ties and zeros
            let w: Vec<f64> = (0..p).map(|_| rng.random_range(-6i32..=9) as f64 * 0.5).collect();
            let q = [0.05, 0.1, 0.2, 0.3, 0.5, 0.9][rng.random_range(0..6)];
            for plus in [false, true] {
                let r = knockoff_threshold(&w, q, plus).unwrap();
                let (t, sel) = brute(&w, q, plus);
                assert_eq!(r.threshold, t, "{w:?} q={q} plus={plus}");
                assert_eq!(r.selected, sel);
            }
        }
    }

    #[test]
    fn worked_examples() {
        let w = [5.0, 4.0, 3.0, -1.0, 2.0, 6.0];
        let r = knockoff_threshold(&w, 0.5, true).unwrap();
        assert_eq!(r.threshold, 1.0);
        assert_eq!(r.selected, vec![0, 1, 2, 4, 5]);
        assert_eq!(r.fdp_estimate, 0.4);
        assert_eq!(fdp_hat(&w, 1.0), 0.2);

        let w = [2.0, -1.0];
        let k = knockoff_threshold(&w, 0.5, false).unwrap();
        assert_eq!((k.threshold, k.selected.clone()), (2.0, vec![0]));
        assert_eq!(k.fdp_estimate, 0.0);
        let kp = knockoff_threshold(&w, 0.5, true).unwrap();
        assert!(kp.threshold.is_infinite() && kp.selected.is_empty());
    }

    #[test]
    fn edge_cases() {
        let r = knockoff_threshold(&[-1.0, -2.0, -0.5], 0.2, false).unwrap();
        assert!(r.threshold.is_infinite() && r.selected.is_empty());
        let r = knockoff_threshold(&[0.0, 0.0], 0.2, false).unwrap();
        assert!(r.threshold.is_infinite());
        assert!(knockoff_threshold(&[1.0], 1.5, true).is_err());
        assert!(knockoff_threshold(&[1.0], 0.0, true).is_err());
        assert_eq!(fdp_hat(&[0.1, -0.1], 5.0), 0.0);
        assert_eq!(fdp_hat(&[3.0, -3.0], 3.0), 1.0);
    }

    proptest! {
        #[test]
        fn larger_q_never_shrinks_and_plus_is_nested(
            w in proptest::collection::vec(-5i32..8, 1..25),
            q1 in 0.01f64..0.99,
            q2 in 0.01f64..0.99,
        ) {
            let w: Vec<f64> = w.into_iter().map(f64::from).collect();
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            for plus in [false, true] {
                let a = knockoff_threshold(&w, lo, plus).unwrap();
                let b = knockoff_threshold(&w, hi, plus).unwrap();
                prop_assert!(a.selected.iter().all(|j| b.selected.contains(j)));
                prop_assert!(a.selected.iter().all(|&j| w[j] > 0.0));
            }
            let k = knockoff_threshold(&w, lo, false).unwrap();
            let kp = knockoff_threshold(&w, lo, true).unwrap();
            prop_assert!(kp.selected.iter().all(|j| k.selected.contains(j)));
        }
    }
}
