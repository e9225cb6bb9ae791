//! Empirical measures of rescaled queue lengths and the metrics used to
//! compare the simulation layers.
//!
//! Tails here follow the open convention `tail(x) = fraction of mass
//! strictly above x`, matching the tail profile `v(x,t)` the other layers
//! produce; a closed variant is provided because the two differ at atoms.

use thiserror::Error;

/// A sorted multiset of nonnegative reals: `n` rescaled queue lengths or
/// `N` particle positions.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    samples: Vec<f64>,
}

/// Raw moments of an empirical measure (no Bessel correction: the variance
/// is the plain empirical second central moment).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureStats {
    pub mean: f64,
    pub second_moment: f64,
    pub variance: f64,
    pub size: usize,
}

/// A nonincreasing tail function on `[0, x_max]`, piecewise linear between
/// breakpoints. Jumps are represented by repeated x values, and evaluation
/// at a jump takes the right limit, so curves built from step data behave
/// like right-continuous tails.
#[derive(Debug, Clone, PartialEq)]
pub struct TailCurve {
    xs: Vec<f64>,
    vs: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("empirical measure requires at least one sample")]
    Empty,
    #[error("sample {index} is {value}; samples must be finite and nonnegative")]
    BadSample { index: usize, value: f64 },
    #[error("tail curve needs matching xs/vs with at least two points")]
    CurveShape,
    #[error("tail curve breakpoints must be nondecreasing and finite")]
    CurveGrid,
    #[error("tail curve values must be nonincreasing and lie in [0, 1]")]
    CurveValues,
}

impl EmpiricalMeasure {
    /// Sorts the samples and validates that all are finite and nonnegative.
    pub fn from_samples(mut samples: Vec<f64>) -> Result<Self, MeasureError> {
        if samples.is_empty() {
            return Err(MeasureError::Empty);
        }
        for (index, &value) in samples.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(MeasureError::BadSample { index, value });
            }
        }
        samples.sort_unstable_by(f64::total_cmp);
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sorted sample values.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Open tail: fraction of samples strictly greater than `x`.
    pub fn tail(&self, x: f64) -> f64 {
        let below = self.samples.partition_point(|&s| s <= x);
        (self.samples.len() - below) as f64 / self.samples.len() as f64
    }

    /// Closed tail: fraction of samples greater than or equal to `x`.
    pub fn tail_closed(&self, x: f64) -> f64 {
        let below = self.samples.partition_point(|&s| s < x);
        (self.samples.len() - below) as f64 / self.samples.len() as f64
    }

    /// Raw sample moments.
    pub fn stats(&self) -> MeasureStats {
        let n = self.samples.len() as f64;
        let mean = self.samples.iter().sum::<f64>() / n;
        let second_moment = self.samples.iter().map(|s| s * s).sum::<f64>() / n;
        // Two-pass central moment; agrees with second_moment - mean^2 up to
        // rounding but does not cancel catastrophically.
        let variance = self
            .samples
            .iter()
            .map(|s| (s - mean) * (s - mean))
            .sum::<f64>()
            / n;
        MeasureStats {
            mean,
            second_moment,
            variance: variance.max(0.0),
            size: self.samples.len(),
        }
    }

    /// The open tail of the measure itself, as a step curve extended to
    /// `x_max`. Each sample contributes a vertical jump (duplicated
    /// breakpoint).
    pub fn tail_curve(&self, x_max: f64) -> TailCurve {
        let n = self.samples.len();
        let mut xs = Vec::with_capacity(2 * n + 2);
        let mut vs = Vec::with_capacity(2 * n + 2);
        xs.push(0.0);
        vs.push(self.tail(-1.0)); // = 1
        let mut i = 0;
        while i < n {
            let x = self.samples[i];
            let mut j = i;
            while j < n && self.samples[j] == x {
                j += 1;
            }
            let before = (n - i) as f64 / n as f64; // tail just left of x
            let after = (n - j) as f64 / n as f64; // tail at and right of x
            if x > 0.0 {
                xs.push(x);
                vs.push(before);
            }
            xs.push(x.max(0.0));
            vs.push(after);
            i = j;
        }
        let last = *xs.last().unwrap();
        if x_max > last {
            xs.push(x_max);
            vs.push(*vs.last().unwrap());
        }
        TailCurve::new(xs, vs).expect("empirical tail is a valid curve")
    }

    /// Kolmogorov-Smirnov distance between the open empirical tail and a
    /// tail curve. Both are right-continuous and piecewise monotone
    /// between breakpoints, so the sup is attained at a breakpoint of
    /// either side, approached from the right (values) or from the left
    /// (left limits); atoms are thereby compared from both sides.
    pub fn ks_distance(&self, v: &TailCurve) -> f64 {
        let mut sup: f64 = 0.0;
        let mut consider = |x: f64| {
            sup = sup.max((self.tail(x) - v.eval(x)).abs());
            sup = sup.max((self.tail_closed(x) - v.eval_left(x)).abs());
        };
        for i in 0..self.samples.len() {
            if i == 0 || self.samples[i] != self.samples[i - 1] {
                consider(self.samples[i]);
            }
        }
        for i in 0..v.xs.len() {
            if i == 0 || v.xs[i] != v.xs[i - 1] {
                consider(v.xs[i]);
            }
        }
        sup
    }

    /// L1 distance between the open empirical tail and a tail curve on
    /// `[0, curve end]`, integrated exactly over the merged breakpoint grid
    /// (the integrand is piecewise linear there, up to sign changes, which
    /// are split at the crossing).
    pub fn w1_distance(&self, v: &TailCurve) -> f64 {
        let x_end = *v.xs.last().unwrap();
        let mut points: Vec<f64> = Vec::with_capacity(self.samples.len() + v.xs.len() + 2);
        points.push(0.0);
        points.extend(self.samples.iter().copied().filter(|&s| s < x_end));
        points.extend(v.xs.iter().copied());
        points.sort_unstable_by(f64::total_cmp);
        points.dedup();

        let mut total = 0.0;
        for w in points.windows(2) {
            let (x0, x1) = (w[0], w[1]);
            if x1 <= x0 {
                continue;
            }
            // Empirical open tail is constant on [x0, x1); the curve is
            // linear there (its own breakpoints are segment ends).
            let e = self.tail(x0);
            let d0 = e - v.eval(x0);
            let d1 = e - v.eval_left(x1);
            let h = x1 - x0;
            if d0 * d1 >= 0.0 {
                total += 0.5 * (d0.abs() + d1.abs()) * h;
            } else {
                // Linear crossing inside the segment.
                let frac = d0.abs() / (d0.abs() + d1.abs());
                total += 0.5 * (d0.abs() * frac + d1.abs() * (1.0 - frac)) * h;
            }
        }
        total
    }
}

impl MeasureStats {
    /// `variance == second_moment - mean^2` up to rounding; exposed for
    /// consistency checks.
    pub fn moment_identity_defect(&self) -> f64 {
        self.variance - (self.second_moment - self.mean * self.mean)
    }
}

impl TailCurve {
    pub fn new(xs: Vec<f64>, vs: Vec<f64>) -> Result<Self, MeasureError> {
        if xs.len() != vs.len() || xs.len() < 2 {
            return Err(MeasureError::CurveShape);
        }
        if xs.iter().any(|x| !x.is_finite()) || xs.windows(2).any(|w| w[1] < w[0]) {
            return Err(MeasureError::CurveGrid);
        }
        if vs
            .iter()
            .any(|v| !v.is_finite() || *v < -1e-9 || *v > 1.0 + 1e-9)
            || vs.windows(2).any(|w| w[1] > w[0] + 1e-8)
        {
            return Err(MeasureError::CurveValues);
        }
        Ok(Self { xs, vs })
    }

    /// Sample a function on a uniform grid of `cells + 1` nodes over
    /// `[0, x_max]`.
    pub fn from_fn(f: impl Fn(f64) -> f64, x_max: f64, cells: usize) -> Result<Self, MeasureError> {
        let dx = x_max / cells as f64;
        let xs: Vec<f64> = (0..=cells).map(|j| j as f64 * dx).collect();
        let vs: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        Self::new(xs, vs)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.xs
    }

    pub fn values(&self) -> &[f64] {
        &self.vs
    }

    pub fn x_end(&self) -> f64 {
        *self.xs.last().unwrap()
    }

    /// Evaluate at `x`, taking the right limit at jumps. Clamps beyond the
    /// ends.
    pub fn eval(&self, x: f64) -> f64 {
        if x < self.xs[0] {
            return self.vs[0];
        }
        if x >= *self.xs.last().unwrap() {
            return *self.vs.last().unwrap();
        }
        // xs[hi - 1] <= x < xs[hi], with hi - 1 the rightmost among equal
        // breakpoints, which is what makes jumps right-continuous.
        let hi = self.xs.partition_point(|&p| p <= x);
        let (x0, v0) = (self.xs[hi - 1], self.vs[hi - 1]);
        let (x1, v1) = (self.xs[hi], self.vs[hi]);
        v0 + (v1 - v0) * (x - x0) / (x1 - x0)
    }

    /// Evaluate the left limit at `x`.
    pub fn eval_left(&self, x: f64) -> f64 {
        if x <= self.xs[0] {
            return self.vs[0];
        }
        if x > *self.xs.last().unwrap() {
            return *self.vs.last().unwrap();
        }
        // lo is the first breakpoint >= x; at a jump (duplicated x) this is
        // the leftmost duplicate, whose value is the limit from below.
        let lo = self.xs.partition_point(|&p| p < x);
        if self.xs[lo] == x {
            return self.vs[lo];
        }
        let (x0, v0) = (self.xs[lo - 1], self.vs[lo - 1]);
        let (x1, v1) = (self.xs[lo], self.vs[lo]);
        v0 + (v1 - v0) * (x - x0) / (x1 - x0)
    }

    /// Generalized inverse: the smallest `x` with `tail(x) <= u`. Used for
    /// inverse-transform sampling from a tail.
    pub fn inverse(&self, u: f64) -> f64 {
        if u >= self.vs[0] {
            return self.xs[0];
        }
        let last = *self.vs.last().unwrap();
        if u <= last {
            return *self.xs.last().unwrap();
        }
        // vs is nonincreasing; find first index with vs[i] <= u.
        let i = self.vs.partition_point(|&v| v > u);
        let (x0, v0) = (self.xs[i - 1], self.vs[i - 1]);
        let (x1, v1) = (self.xs[i], self.vs[i]);
        if v0 == v1 || x0 == x1 {
            x1
        } else {
            x0 + (x1 - x0) * (v0 - u) / (v0 - v1)
        }
    }
}

/// The homogeneous symmetric sum `a^(ell-1) + a^(ell-2) b + ... + b^(ell-1)`.
///
/// Equal to `(a^ell - b^ell)/(a - b)` for `a != b` and to `ell a^(ell-1)` on
/// the diagonal; evaluated termwise, which is exact for the nonnegative
/// arguments it is used with (no cancellation).
pub fn s_poly(a: f64, b: f64, ell: u32) -> f64 {
    debug_assert!(ell >= 2);
    let mut acc = 0.0;
    for k in 0..ell {
        acc += a.powi((ell - 1 - k) as i32) * b.powi(k as i32);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn measure(vals: &[f64]) -> EmpiricalMeasure {
        EmpiricalMeasure::from_samples(vals.to_vec()).unwrap()
    }

    #[test]
    fn open_and_closed_tails() {
        let m = measure(&[1.0, 2.0, 3.0]);
        assert_eq!(m.tail(2.0), 1.0 / 3.0);
        assert_eq!(m.tail_closed(2.0), 2.0 / 3.0);
        assert_eq!(m.tail(0.5), 1.0);
        assert_eq!(m.tail(3.0), 0.0);
        assert_eq!(m.tail(4.0), 0.0);
    }

    #[test]
    fn stats_examples() {
        let s = measure(&[0.0, 0.0, 0.0]).stats();
        assert_eq!(s.mean, 0.0);
        assert_eq!(s.variance, 0.0);

        let s = measure(&[1.0, 3.0]).stats();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.variance, 1.0);
        assert_eq!(s.second_moment, 5.0);

        let s = measure(&[2.5]).stats();
        assert_eq!(s.variance, 0.0);
        assert_eq!(s.size, 1);
    }

    #[test]
    fn stats_moment_identity() {
        let m = measure(&[0.3, 1.7, 2.2, 5.5, 0.1, 0.1, 9.4]);
        let s = m.stats();
        assert!(s.moment_identity_defect().abs() <= 1e-10 * s.second_moment.max(1.0));
    }

    #[test]
    fn rejects_bad_samples() {
        assert!(EmpiricalMeasure::from_samples(vec![]).is_err());
        assert!(EmpiricalMeasure::from_samples(vec![1.0, -0.5]).is_err());
        assert!(EmpiricalMeasure::from_samples(vec![f64::NAN]).is_err());
    }

    #[test]
    fn ks_zero_against_own_tail() {
        let m = measure(&[0.0, 0.5, 0.5, 2.0]);
        let curve = m.tail_curve(3.0);
        assert_eq!(m.ks_distance(&curve), 0.0);
        assert!(m.w1_distance(&curve) <= 1e-15);
    }

    #[test]
    fn ks_dirac_at_zero() {
        let m = measure(&[0.0]);
        // Tail of a point mass at 0: jumps from 1 to 0 at x = 0.
        let v = TailCurve::new(vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(m.ks_distance(&v), 0.0);
    }

    #[test]
    fn w1_between_diracs_is_translation() {
        let m = measure(&[0.0]);
        let c = 0.7;
        let v = TailCurve::new(vec![0.0, c, c, 2.0], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        assert!((m.w1_distance(&v) - c).abs() < 1e-15);
    }

    #[test]
    fn tail_curve_eval_right_continuous() {
        let v = TailCurve::new(vec![0.0, 1.0, 1.0, 2.0], vec![1.0, 1.0, 0.25, 0.25]).unwrap();
        assert_eq!(v.eval(1.0), 0.25);
        assert_eq!(v.eval_left(1.0), 1.0);
        assert_eq!(v.eval(0.5), 1.0);
        assert_eq!(v.eval(1.5), 0.25);
    }

    #[test]
    fn tail_curve_inverse() {
        let v = TailCurve::new(vec![0.0, 10.0], vec![1.0, 0.0]).unwrap();
        assert!((v.inverse(0.25) - 7.5).abs() < 1e-12);
        assert_eq!(v.inverse(1.0), 0.0);
        assert_eq!(v.inverse(0.0), 10.0);
    }

    #[test]
    fn s_poly_diagonal_identity() {
        for &z in &[0.0f64, 0.5, 1.0] {
            for ell in [2u32, 3, 4] {
                let want = f64::from(ell) * z.powi(ell as i32 - 1);
                assert!((s_poly(z, z, ell) - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn s_poly_values() {
        assert_eq!(s_poly(1.0, 0.0, 3), 1.0);
        assert_eq!(s_poly(2.0, 1.0, 2), 3.0);
        assert_eq!(s_poly(0.0, 0.0, 2), 0.0);
    }

    #[test]
    fn s_poly_symmetric() {
        for &(a, b) in &[(0.2, 0.9), (0.0, 1.0), (0.31, 0.32)] {
            for ell in 2u32..6 {
                assert!((s_poly(a, b, ell) - s_poly(b, a, ell)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn w1_uniform_sampling_small() {
        use crate::rng::{domain, RngState};
        use rand::Rng;
        let mut rng = RngState::stream(5, domain::CHECK, 0, 0);
        let n = 100_000;
        let samples: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let m = EmpiricalMeasure::from_samples(samples).unwrap();
        let v = TailCurve::from_fn(|x| (1.0 - x).clamp(0.0, 1.0), 1.0, 1000).unwrap();
        assert!(m.w1_distance(&v) < 0.005);
    }

    #[test]
    fn ks_decreases_with_sample_size() {
        use crate::rng::{domain, RngState};
        use rand::Rng;
        // Samples from the uniform law whose exact tail is the curve below.
        let v = TailCurve::from_fn(|x| (1.0 - x).clamp(0.0, 1.0), 1.0, 1000).unwrap();
        let mut ks = Vec::new();
        for (lane, n) in [(0u64, 100usize), (1, 10_000)] {
            let mut rng = RngState::stream(6, domain::CHECK, lane, 0);
            let samples: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let m = EmpiricalMeasure::from_samples(samples).unwrap();
            ks.push(m.ks_distance(&v));
        }
        assert!(ks[1] < ks[0], "ks = {ks:?}");
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

        #[test]
        fn tail_shape_invariants(
            mut samples in proptest::collection::vec(0.0f64..50.0, 1..40),
            queries in proptest::collection::vec(-1.0f64..60.0, 1..20),
        ) {
            samples.iter_mut().for_each(|s| *s = (*s * 4.0).round() / 4.0); // force ties
            let m = EmpiricalMeasure::from_samples(samples).unwrap();
            // Nonincreasing in x, right-continuous, 1 below and 0 above the support.
            let mut sorted_q = queries.clone();
            sorted_q.sort_unstable_by(f64::total_cmp);
            for w in sorted_q.windows(2) {
                proptest::prop_assert!(m.tail(w[1]) <= m.tail(w[0]));
            }
            for &q in &queries {
                proptest::prop_assert!(m.tail(q) <= m.tail_closed(q));
            }
            // Right-continuity at the jump points: samples sit on a quarter
            // grid, so nothing lies within 1e-9 to the right of one.
            for &s in m.samples() {
                proptest::prop_assert_eq!(m.tail(s), m.tail(s + 1e-9));
                proptest::prop_assert!(m.tail_closed(s) > m.tail(s));
            }
            proptest::prop_assert_eq!(m.tail(-0.5), 1.0);
            proptest::prop_assert_eq!(m.tail(55.0), 0.0);
        }

        #[test]
        fn distances_vanish_iff_tails_coincide(
            a in proptest::collection::vec(0.0f64..10.0, 1..25),
            b in proptest::collection::vec(0.0f64..10.0, 1..25),
        ) {
            let round = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|s| (s * 2.0).round() / 2.0).collect() };
            let (a, b) = (round(a), round(b));
            let ma = EmpiricalMeasure::from_samples(a).unwrap();
            let mb = EmpiricalMeasure::from_samples(b).unwrap();
            let curve = mb.tail_curve(12.0);
            let ks = ma.ks_distance(&curve);
            let w1 = ma.w1_distance(&curve);
            proptest::prop_assert!(ks >= 0.0 && w1 >= 0.0);
            let same_tail = (0..=480).all(|k| {
                let x = k as f64 * 0.025;
                (ma.tail(x) - mb.tail(x)).abs() < 1e-12
            });
            proptest::prop_assert_eq!(ks == 0.0, same_tail);
            proptest::prop_assert_eq!(w1 < 1e-12, same_tail);
        }
    }

    #[test]
    fn ks_symmetric_between_step_curves() {
        let m1 = measure(&[0.0, 1.0, 2.0]);
        let m2 = measure(&[0.5, 1.0, 3.0]);
        let d12 = m1.ks_distance(&m2.tail_curve(4.0));
        let d21 = m2.ks_distance(&m1.tail_curve(4.0));
        assert!((d12 - d21).abs() < 1e-15);
        let w12 = m1.w1_distance(&m2.tail_curve(4.0));
        let w21 = m2.w1_distance(&m1.tail_curve(4.0));
        assert!((w12 - w21).abs() < 1e-12);
    }
}
