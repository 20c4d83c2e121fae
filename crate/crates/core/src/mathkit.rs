//! Iterated logarithms, binomial bit costs and a lexicographic subset codec.
//!
//! All logarithms are base 2.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MathError {
    #[error("iterated logarithm needs n >= 2, got {0}")]
    BaseTooSmall(u64),
    #[error("log^({level}) {n} is undefined (log* {n} = {log_star})")]
    LevelTooDeep { n: u64, level: u32, log_star: u32 },
    #[error("subset size {b} exceeds universe size {n}")]
    SubsetTooLarge { n: u64, b: u64 },
    #[error("slot index {index} is outside universe of size {universe}")]
    IndexOutOfRange { index: usize, universe: usize },
    #[error("slot indices must be strictly increasing ({prev} followed by {next})")]
    NotStrictlyIncreasing { prev: usize, next: usize },
    #[error("rank does not fit below C({n}, {b})")]
    RankOutOfRange { n: usize, b: usize },
}

/// `log^(level) n`, with `log^(0) n = n`.
///
/// Levels up to `log* n + 1` are accepted; the deepest one may be `<= 0`.
pub fn iter_log(n: u64, level: u32) -> Result<f64, MathError> {
    if n < 2 {
        return Err(MathError::BaseTooSmall(n));
    }
    let log_star = log_star(n);
    if level > log_star + 1 {
        return Err(MathError::LevelTooDeep { n, level, log_star });
    }
    let mut x = n as f64;
    for _ in 0..level {
        x = x.log2();
    }
    Ok(x)
}

/// Smallest `k` with `log^(k) n <= 1`.
pub fn log_star(n: u64) -> u32 {
    log_star_real(n as f64)
}

pub fn log_star_real(mut x: f64) -> u32 {
    let mut k = 0;
    while x > 1.0 {
        x = x.log2();
        k += 1;
    }
    k
}

/// `log* (2^exponent)`, for inputs too large to hold in a machine word.
pub fn log_star_of_pow2(exponent: u64) -> u32 {
    if exponent == 0 {
        0
    } else {
        1 + log_star(exponent)
    }
}

/// The table `log^(0) n, log^(1) n, ..., log^(log* n) n`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterLogTable {
    pub n: u64,
    pub values: Vec<f64>,
}

impl IterLogTable {
    pub fn new(n: u64) -> Result<Self, MathError> {
        if n < 2 {
            return Err(MathError::BaseTooSmall(n));
        }
        let mut values = vec![n as f64];
        while *values.last().unwrap() > 1.0 {
            let next = values.last().unwrap().log2();
            values.push(next);
        }
        Ok(Self { n, values })
    }

    pub fn log_star(&self) -> u32 {
        (self.values.len() - 1) as u32
    }
}

/// `log2 C(n, b)`.
///
/// Small `min(b, n - b)` is summed term by term; larger cases go through
/// log-gamma.
pub fn log_binomial(n: u64, b: u64) -> Result<f64, MathError> {
    if b > n {
        return Err(MathError::SubsetTooLarge { n, b });
    }
    let k = b.min(n - b);
    if k == 0 {
        return Ok(0.0);
    }
    if k <= 512 {
        let base = (n - k) as f64;
        let mut acc = 0.0;
        for i in 1..=k {
            acc += ((base + i as f64) / i as f64).log2();
        }
        return Ok(acc);
    }
    let ln = libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0);
    Ok(ln / std::f64::consts::LN_2)
}

/// Exact `C(n, b)`.
pub fn binomial(n: u64, b: u64) -> BigUint {
    if b > n {
        return BigUint::zero();
    }
    let k = b.min(n - b);
    let mut acc = BigUint::one();
    for i in 1..=k {
        acc *= n - k + i;
        acc /= i;
    }
    acc
}

/// Exact `ceil(log2 C(n, b))`: the number of bits needed to write a rank
/// below `C(n, b)`.
pub fn ceil_log2_binomial(n: u64, b: u64) -> Result<u64, MathError> {
    let approx = log_binomial(n, b)?;
    if (approx - approx.round()).abs() > 1e-4 {
        return Ok(approx.ceil().max(0.0) as u64);
    }
    let c = binomial(n, b);
    if c <= BigUint::one() {
        Ok(0)
    } else {
        Ok((c - 1u32).bits())
    }
}

/// Position of one sorted `b`-subset of `[n]` in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetRank {
    pub universe_size: usize,
    pub subset_size: usize,
    pub rank: BigUint,
}

impl SubsetRank {
    /// Bits used to store `rank`: `ceil(log2 C(n, b))`.
    pub fn bit_len(&self) -> u64 {
        ceil_log2_binomial(self.universe_size as u64, self.subset_size as u64)
            .expect("subset size validated at construction")
    }
}

// Lexicographic rank of c_0 < ... < c_{b-1} in [n] is
// C(n, b) - 1 - sum_i C(n - 1 - c_i, b - i). The sum is accumulated by
// sweeping m = n - 1 downwards while keeping C(m, r) current.
pub fn subset_rank(slots: &[usize], universe_size: usize) -> Result<SubsetRank, MathError> {
    for w in slots.windows(2) {
        if w[0] >= w[1] {
            return Err(MathError::NotStrictlyIncreasing { prev: w[0], next: w[1] });
        }
    }
    if let Some(&last) = slots.last() {
        if last >= universe_size {
            return Err(MathError::IndexOutOfRange { index: last, universe: universe_size });
        }
    }
    let n = universe_size;
    let b = slots.len();
    let total = binomial(n as u64, b as u64);
    if b == 0 {
        return Ok(SubsetRank { universe_size: n, subset_size: 0, rank: BigUint::zero() });
    }

    let mut m = n - 1;
    let mut r = b;
    let mut coef = binomial(m as u64, r as u64);
    let mut sum = BigUint::zero();
    for &c in slots {
        let d = n - 1 - c;
        while m > d {
            step_down(&mut coef, m, r);
            m -= 1;
        }
        sum += &coef;
        if r == 1 {
            break;
        }
        // C(m - 1, r - 1) = C(m, r) * r / m
        coef *= r;
        coef /= m;
        m -= 1;
        r -= 1;
    }
    let rank = total - 1u32 - sum;
    Ok(SubsetRank { universe_size: n, subset_size: b, rank })
}

pub fn subset_unrank(code: &SubsetRank) -> Result<Vec<usize>, MathError> {
    let n = code.universe_size;
    let b = code.subset_size;
    if b > n {
        return Err(MathError::SubsetTooLarge { n: n as u64, b: b as u64 });
    }
    let total = binomial(n as u64, b as u64);
    if code.rank >= total {
        return Err(MathError::RankOutOfRange { n, b });
    }
    if b == 0 {
        return Ok(Vec::new());
    }

    let mut rem = total - 1u32 - &code.rank;
    let mut out = Vec::with_capacity(b);
    let mut m = n - 1;
    let mut r = b;
    let mut coef = binomial(m as u64, r as u64);
    loop {
        while coef > rem {
            step_down(&mut coef, m, r);
            m -= 1;
        }
        rem -= &coef;
        out.push(n - 1 - m);
        if r == 1 {
            break;
        }
        coef *= r;
        coef /= m;
        m -= 1;
        r -= 1;
    }
    Ok(out)
}

// C(m - 1, r) = C(m, r) * (m - r) / m; zero stays zero once m < r.
fn step_down(coef: &mut BigUint, m: usize, r: usize) {
    if coef.is_zero() {
        return;
    }
    *coef *= m - r;
    *coef /= m;
}

/// Lossy conversion used for reporting only.
pub fn big_to_f64(x: &BigUint) -> f64 {
    x.to_f64().unwrap_or(f64::INFINITY)
}
