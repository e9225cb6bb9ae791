//! Shortest-of-`ell` selection: the direct sampler, the equivalent
//! rank-probability law, and an exact enumeration oracle.
//!
//! A load-balanced arrival samples `ell` queues and joins the shortest,
//! breaking ties by the smaller index. Equivalently, it joins the queue of
//! rank `r` with probability
//!
//! ```text
//! p[n,r] = C(n-r, ell-1) / C(n, ell)                (without replacement)
//! p~[n,r] = ((n-r+1)/n)^ell - ((n-r)/n)^ell          (with replacement)
//! ```
//!
//! where ranks order queues by (length, index). [`enumerate_selection_law`]
//! verifies the equivalence by brute force over all candidate sets.

use itertools::Itertools;
use rand::Rng;
use thiserror::Error;

use crate::params::Replacement;
use crate::rng::RngState;

/// Limit for the brute-force oracle; beyond this the enumeration is not
/// worth the wait.
pub const ENUMERATION_MAX_N: usize = 12;

/// The distribution of the rank joined by one load-balanced arrival.
#[derive(Debug, Clone, PartialEq)]
pub struct RankLaw {
    pub n: usize,
    pub ell: u32,
    pub replacement: Replacement,
    /// `probs[r - 1]` is the probability of joining the rank-`r` queue.
    pub probs: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum RoutingError {
    #[error("index {i} out of range for {n} queues")]
    IndexOutOfRange { i: usize, n: usize },
    #[error("ell={ell} exceeds n={n} when sampling without replacement")]
    EllExceedsN { ell: u32, n: usize },
    #[error("ell must be at least 1, got {0}")]
    EllZero(u32),
    #[error("enumeration oracle supports n <= {max} (got n={n})", max = ENUMERATION_MAX_N)]
    EnumerationTooLarge { n: usize },
    #[error("empty queue vector")]
    Empty,
}

/// Rank of index `i` (0-based) in `x`: one plus the number of entries that
/// beat `x[i]` by value, with equal values ordered by index. Ranks over all
/// indices form a permutation of `1..=n`.
pub fn rank<T: PartialOrd>(i: usize, x: &[T]) -> Result<usize, RoutingError> {
    if i >= x.len() {
        return Err(RoutingError::IndexOutOfRange { i, n: x.len() });
    }
    let below = x.iter().filter(|v| **v < x[i]).count();
    let equal_upto = x[..=i].iter().filter(|v| **v == x[i]).count();
    Ok(below + equal_upto)
}

/// The exact rank law for `n` queues sampled `ell` at a time.
///
/// The without-replacement probabilities are evaluated in the product form
/// `p[n,r] = (ell/n) * prod_k (n-r-k)/(n-1-k)`, which stays in `[0, 1]`
/// throughout and never forms a factorial.
pub fn rank_law(n: usize, ell: u32, replacement: Replacement) -> Result<RankLaw, RoutingError> {
    if ell == 0 {
        return Err(RoutingError::EllZero(ell));
    }
    if replacement == Replacement::Without && ell as usize > n {
        return Err(RoutingError::EllExceedsN { ell, n });
    }
    let nf = n as f64;
    let probs: Vec<f64> = match replacement {
        Replacement::Without => (1..=n)
            .map(|r| {
                if n - r < (ell - 1) as usize {
                    return 0.0;
                }
                let mut p = ell as f64 / nf;
                for k in 0..(ell - 1) as usize {
                    p *= (n - r - k) as f64 / (n - 1 - k) as f64;
                }
                p
            })
            .collect(),
        Replacement::With => (1..=n)
            .map(|r| {
                let hi = ((n - r + 1) as f64 / nf).powi(ell as i32);
                let lo = ((n - r) as f64 / nf).powi(ell as i32);
                hi - lo
            })
            .collect(),
    };
    Ok(RankLaw {
        n,
        ell,
        replacement,
        probs,
    })
}

/// Sample `ell` candidate queues and return the winner: smallest value,
/// ties to the smaller index. Without replacement uses Floyd's subset
/// sampling (O(ell) draws, no O(n) scratch).
pub fn select_direct<T: PartialOrd + Copy>(
    x: &[T],
    ell: u32,
    replacement: Replacement,
    rng: &mut RngState,
) -> usize {
    let n = x.len();
    debug_assert!(n >= 1);
    let ell = (ell as usize).min(if replacement == Replacement::Without {
        n
    } else {
        usize::MAX
    });
    let mut best: Option<usize> = None;
    let consider = |c: usize, best: &mut Option<usize>| match *best {
        None => *best = Some(c),
        Some(b) => {
            if x[c] < x[b] || (x[c] == x[b] && c < b) {
                *best = Some(c)
            }
        }
    };
    match replacement {
        Replacement::Without => {
            let mut chosen: Vec<usize> = Vec::with_capacity(ell);
            for j in (n - ell)..n {
                let t = rng.random_range(0..=j);
                let c = if chosen.contains(&t) { j } else { t };
                chosen.push(c);
                consider(c, &mut best);
            }
        }
        Replacement::With => {
            for _ in 0..ell {
                let c = rng.random_range(0..n);
                consider(c, &mut best);
            }
        }
    }
    best.expect("at least one candidate")
}

/// Draw a rank from `law` and return the index holding that rank in `x`.
pub fn select_by_rank<T: PartialOrd + Copy>(
    x: &[T],
    law: &RankLaw,
    rng: &mut RngState,
) -> Result<usize, RoutingError> {
    let n = x.len();
    if n == 0 {
        return Err(RoutingError::Empty);
    }
    if law.n != n {
        return Err(RoutingError::IndexOutOfRange { i: law.n, n });
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut theta = n; // falls back to the last rank on rounding leftovers
    for (k, p) in law.probs.iter().enumerate() {
        acc += p;
        if u < acc {
            theta = k + 1;
            break;
        }
    }
    // The index of rank theta is position theta-1 in the sort by
    // (value, index).
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        x[i].partial_cmp(&x[j])
            .expect("queue values must be comparable")
            .then(i.cmp(&j))
    });
    Ok(order[theta - 1])
}

/// Exact law of [`select_direct`] by enumeration of every candidate set.
///
/// Without replacement iterates all `C(n, ell)` subsets; with replacement
/// iterates all multisets with their multinomial weights. Counts are exact
/// integers, so the returned probabilities are correct to one rounding.
pub fn enumerate_selection_law<T: PartialOrd + Copy>(
    x: &[T],
    ell: u32,
    replacement: Replacement,
) -> Result<Vec<f64>, RoutingError> {
    let n = x.len();
    if n == 0 {
        return Err(RoutingError::Empty);
    }
    if n > ENUMERATION_MAX_N {
        return Err(RoutingError::EnumerationTooLarge { n });
    }
    if ell == 0 {
        return Err(RoutingError::EllZero(ell));
    }
    if replacement == Replacement::Without && ell as usize > n {
        return Err(RoutingError::EllExceedsN { ell, n });
    }
    let ell = ell as usize;
    let beats = |i: usize, j: usize| x[i] < x[j] || (x[i] == x[j] && i < j);

    let mut counts = vec![0u128; n];
    let denom: u128;
    match replacement {
        Replacement::Without => {
            denom = binomial(n as u128, ell as u128);
            for subset in (0..n).combinations(ell) {
                let mut w = subset[0];
                for &c in &subset[1..] {
                    if beats(c, w) {
                        w = c;
                    }
                }
                counts[w] += 1;
            }
        }
        Replacement::With => {
            // Enumerate multisets over indices listed in preference order;
            // the winner of a multiset is then its first element.
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&i, &j| {
                if beats(i, j) {
                    std::cmp::Ordering::Less
                } else {
                    std::cmp::Ordering::Greater
                }
            });
            denom = (n as u128).pow(ell as u32);
            let fact: Vec<u128> = {
                let mut f = vec![1u128; ell + 1];
                for k in 1..=ell {
                    f[k] = f[k - 1] * k as u128;
                }
                f
            };
            for combo in order.iter().copied().combinations_with_replacement(ell) {
                let mut weight = fact[ell];
                let mut run = 1usize;
                for k in 1..combo.len() {
                    if combo[k] == combo[k - 1] {
                        run += 1;
                    } else {
                        weight /= fact[run];
                        run = 1;
                    }
                }
                weight /= fact[run];
                counts[combo[0]] += weight;
            }
        }
    }
    debug_assert_eq!(counts.iter().sum::<u128>(), denom);
    Ok(counts.iter().map(|&c| c as f64 / denom as f64).collect())
}

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for j in 0..k {
        acc = acc * (n - j) / (j + 1);
    }
    acc
}
