//! Exact load vectors and the scalar observables derived from them.
//!
//! Every comparison against the average load goes through the scaled loads
//! `z_i = n * x_i - W`, so `y_i = z_i / n` is never rounded.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::{BigRational, Ratio};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported bin count.
pub const MAX_BINS: usize = 1 << 20;

/// Exact rational with machine-word parts, used for gaps and quantiles.
pub type Rational = Ratio<i64>;

/// Loads of `n` bins together with their total `W`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LoadState {
    n: usize,
    loads: Vec<i64>,
    total: i64,
}

/// `z_i = n * x_i - W` for every bin.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaledLoads {
    pub z: Vec<i64>,
}

impl ScaledLoads {
    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn overloaded(&self, i: usize) -> bool {
        self.z[i] >= 0
    }
}

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::TooFewBins(n));
    }
    if n > MAX_BINS {
        return Err(Error::TooManyBins(n));
    }
    Ok(())
}

impl LoadState {
    /// The empty configuration on `n` bins.
    pub fn new(n: usize) -> Result<Self> {
        check_n(n)?;
        Ok(LoadState { n, loads: vec![0; n], total: 0 })
    }

    pub fn from_loads(loads: Vec<i64>) -> Result<Self> {
        let n = loads.len();
        check_n(n)?;
        let mut total: i64 = 0;
        for (i, &x) in loads.iter().enumerate() {
            if x < 0 {
                return Err(Error::NegativeLoad(i));
            }
            total = total.checked_add(x).ok_or(Error::Overflow)?;
        }
        (n as i64).checked_mul(total).ok_or(Error::Overflow)?;
        Ok(LoadState { n, loads, total })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn loads(&self) -> &[i64] {
        &self.loads
    }

    pub fn load(&self, i: usize) -> i64 {
        self.loads[i]
    }

    pub fn total(&self) -> i64 {
        self.total
    }

    /// Adds `balls` to bin `i`, keeping `n * W` representable.
    pub fn add(&mut self, i: usize, balls: i64) -> Result<()> {
        debug_assert!(balls >= 0);
        let total = self.total.checked_add(balls).ok_or(Error::Overflow)?;
        (self.n as i64).checked_mul(total).ok_or(Error::Overflow)?;
        self.total = total;
        self.loads[i] += balls;
        Ok(())
    }

    /// `n * x_i - W`.
    #[inline]
    pub fn z(&self, i: usize) -> i64 {
        self.n as i64 * self.loads[i] - self.total
    }

    pub fn scaled_loads(&self) -> ScaledLoads {
        ScaledLoads { z: (0..self.n).map(|i| self.z(i)).collect() }
    }

    /// `ceil(-y_i)`, the number of balls that lifts bin `i` to at least the average.
    #[inline]
    pub fn ceil_neg_y(&self, i: usize) -> i64 {
        -Integer::div_floor(&self.z(i), &(self.n as i64))
    }

    /// `ceil(W / n)`.
    pub fn ceil_avg(&self) -> i64 {
        Integer::div_ceil(&self.total, &(self.n as i64))
    }

    pub fn max_load(&self) -> i64 {
        *self.loads.iter().max().expect("n >= 2")
    }

    pub fn min_load(&self) -> i64 {
        *self.loads.iter().min().expect("n >= 2")
    }

    /// Maximum load minus average load.
    pub fn gap(&self) -> Rational {
        Rational::new(self.n as i64 * self.max_load() - self.total, self.n as i64)
    }

    /// Maximum load minus minimum load.
    pub fn gap_max_min(&self) -> i64 {
        self.max_load() - self.min_load()
    }

    /// Number of bins with `y_i >= 0`.
    pub fn overloaded_count(&self) -> usize {
        (0..self.n).filter(|&i| self.z(i) >= 0).count()
    }

    /// Fraction of overloaded bins.
    pub fn quantile(&self) -> Rational {
        Rational::new(self.overloaded_count() as i64, self.n as i64)
    }

    /// Bin indices in sorted labeling: non-increasing load, ties by ascending index.
    pub fn sorted_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.n).collect();
        order.sort_by(|&a, &b| self.loads[b].cmp(&self.loads[a]).then(a.cmp(&b)));
        order
    }

    /// `sum |z_i|`, i.e. `n * Delta`.
    pub fn abs_sum(&self) -> i128 {
        (0..self.n).map(|i| self.z(i).unsigned_abs() as i128).sum()
    }

    /// `sum z_i^2`, i.e. `n^2 * Upsilon`.
    pub fn square_sum(&self) -> BigInt {
        (0..self.n).map(|i| BigInt::from(self.z(i)) * BigInt::from(self.z(i))).sum()
    }

    pub fn delta(&self) -> BigRational {
        BigRational::new(BigInt::from(self.abs_sum()), BigInt::from(self.n))
    }

    pub fn upsilon(&self) -> BigRational {
        let n = BigInt::from(self.n);
        BigRational::new(self.square_sum(), &n * &n)
    }

    fn y(&self, i: usize) -> f64 {
        self.z(i) as f64 / self.n as f64
    }

    /// `sum over y_i >= 2 of exp(alpha * y_i)`.
    pub fn phi(&self, alpha: f64) -> f64 {
        let two_n = 2 * self.n as i64;
        (0..self.n).filter(|&i| self.z(i) >= two_n).map(|i| (alpha * self.y(i)).exp()).fold(0.0, |a, b| a + b)
    }

    /// `sum over y_i >= 0 of exp(alpha * y_i)`.
    pub fn phi_nonneg(&self, alpha: f64) -> f64 {
        (0..self.n).filter(|&i| self.z(i) >= 0).map(|i| (alpha * self.y(i)).exp()).fold(0.0, |a, b| a + b)
    }

    /// `sum exp(alpha * |y_i|)`.
    pub fn lambda(&self, alpha: f64) -> f64 {
        (0..self.n).map(|i| (alpha * self.y(i).abs()).exp()).fold(0.0, |a, b| a + b)
    }

    /// `Phi` with the fixed smoothing `1 / (12 n)`.
    pub fn psi(&self) -> f64 {
        self.phi(psi_alpha(self.n))
    }

    pub fn potentials(&self, alpha: f64, alpha_tilde: f64) -> Result<PotentialReport> {
        if alpha.is_nan() || alpha <= 0.0 || alpha_tilde.is_nan() || alpha_tilde <= 0.0 {
            return Err(Error::InvalidParameter("alpha and alpha_tilde must be positive".into()));
        }
        Ok(PotentialReport {
            delta: self.delta(),
            upsilon: self.upsilon(),
            phi: self.phi(alpha),
            lambda: self.lambda(alpha),
            v: self.lambda(alpha_tilde),
            psi: self.psi(),
            quantile: self.quantile(),
            gap: self.gap(),
        })
    }
}

/// Smoothing parameter of the `Psi` potential.
pub fn psi_alpha(n: usize) -> f64 {
    1.0 / (12.0 * n as f64)
}

/// All observables of one state.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PotentialReport {
    #[serde(serialize_with = "crate::serde_ratio::big")]
    pub delta: BigRational,
    #[serde(serialize_with = "crate::serde_ratio::big")]
    pub upsilon: BigRational,
    pub phi: f64,
    pub lambda: f64,
    pub v: f64,
    pub psi: f64,
    #[serde(serialize_with = "crate::serde_ratio::small")]
    pub quantile: Rational,
    #[serde(serialize_with = "crate::serde_ratio::small")]
    pub gap: Rational,
}

/// Renders a rational as `p` or `p/q`.
pub fn fmt_ratio<T: std::fmt::Display + Clone + num_integer::Integer>(r: &Ratio<T>) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Lossy conversion for reporting.
pub fn ratio_f64(r: &Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

pub fn big_f64(r: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    r.to_f64().unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(x: &[i64]) -> LoadState {
        LoadState::from_loads(x.to_vec()).unwrap()
    }

    #[test]
    fn rejects_degenerate_n() {
        assert_eq!(LoadState::new(1), Err(Error::TooFewBins(1)));
        assert!(LoadState::new(2).is_ok());
    }

    #[test]
    fn scaled_loads_match_definition() {
        assert_eq!(st(&[5, 3, 2, 2]).scaled_loads().z, vec![8, 0, -4, -4]);
        assert_eq!(st(&[1, 0]).scaled_loads().z, vec![1, -1]);
        assert_eq!(LoadState::new(2).unwrap().scaled_loads().z, vec![0, 0]);
    }

    #[test]
    fn gap_and_quantile() {
        assert_eq!(st(&[5, 3, 2, 2]).gap(), Rational::from_integer(2));
        assert_eq!(st(&[1, 0]).gap(), Rational::new(1, 2));
        assert_eq!(LoadState::new(4).unwrap().gap(), Rational::from_integer(0));
        assert_eq!(LoadState::new(4).unwrap().quantile(), Rational::from_integer(1));
        assert_eq!(st(&[5, 3, 2, 2]).quantile(), Rational::new(1, 2));
        assert_eq!(st(&[1, 0]).quantile(), Rational::new(1, 2));
    }

    #[test]
    fn potentials_small_cases() {
        let e = LoadState::new(3).unwrap().potentials(1.0, 0.5).unwrap();
        assert_eq!(e.delta, BigRational::from_integer(0.into()));
        assert_eq!(e.lambda, 3.0);
        assert_eq!(e.v, 3.0);
        assert_eq!(e.phi, 0.0);

        let p = st(&[1, 0]).potentials(1.0, 1.0).unwrap();
        assert_eq!(p.delta, BigRational::from_integer(1.into()));
        assert_eq!(p.upsilon, BigRational::new(1.into(), 2.into()));
        assert_eq!(p.phi, 0.0);
        assert!((p.lambda - 2.0 * 0.5f64.exp()).abs() < 1e-12);

        let q = st(&[5, 3, 2, 2]).potentials(1.0, 1.0).unwrap();
        assert!((q.phi - 2.0f64.exp()).abs() < 1e-12);
        assert_eq!(q.delta, BigRational::from_integer(4.into()));
        assert_eq!(q.upsilon, BigRational::from_integer(6.into()));
        assert!(st(&[1, 0]).potentials(0.0, 1.0).is_err());
    }

    #[test]
    fn ceil_neg_y_is_exact() {
        let s = st(&[5, 3, 2, 2]);
        assert_eq!(s.ceil_neg_y(2), 1);
        assert_eq!(s.ceil_neg_y(1), 0);
        assert_eq!(s.ceil_neg_y(0), -2);
        let t = st(&[0, 0, 7]);
        // y_0 = -7/3, ceil(7/3) = 3
        assert_eq!(t.ceil_neg_y(0), 3);
        assert_eq!(t.ceil_avg(), 3);
    }

    #[test]
    fn sorted_order_breaks_ties_by_index() {
        assert_eq!(st(&[1, 3, 1, 3]).sorted_order(), vec![1, 3, 0, 2]);
    }

    #[test]
    fn overflow_is_checked() {
        let mut s = LoadState::new(4).unwrap();
        assert_eq!(s.add(0, i64::MAX / 2), Err(Error::Overflow));
        assert!(LoadState::from_loads(vec![i64::MAX / 2 + 1, 0]).is_err());
    }
}
