//! One-dimensional fluctuation analysis near the fixed point 0.
//!
//! A birth-death chain on ℕ jumps up at rate `m F₊(i/m)` and down at rate
//! `m F₋(i/m)`. If `F = F₊ − F₋` starts at order `k` (`F ≈ −βζ^k`) and
//! `G = F₊ + F₋` at order `ℓ` (`G ≈ αζ^ℓ`), then observing
//! `ζ^m_t = η^m_{t m^b} / m^a` with
//!
//! ```text
//! b + 1 − a − k(1 − a) = 0
//! b + 1 − 2a − ℓ(1 − a) = 0
//! ```
//!
//! leaves drift `−βζ^k` and variance `αζ^ℓ` in the limit.

use num_rational::Ratio;
use serde::{Serialize, Serializer};

use crate::ctmc::{self, Configuration, SimOptions, SiteReactions, Trajectory};
use crate::error::{Error, Result};
use crate::graph_kernel::SiteKernel;
use crate::rng::RngStream;

pub type Rational = Ratio<i64>;

/// `F₊` and `F₋` as polynomial coefficients: entry `i` multiplies `ζ^i`.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionPair {
    pub f_plus: Vec<f64>,
    pub f_minus: Vec<f64>,
}

fn eval(coeffs: &[f64], z: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * z + c)
}

fn degree(coeffs: &[f64]) -> Option<usize> {
    coeffs.iter().rposition(|c| *c != 0.0)
}

fn combine(a: &[f64], b: &[f64], sign: f64) -> Vec<f64> {
    (0..a.len().max(b.len()))
        .map(|i| a.get(i).copied().unwrap_or(0.0) + sign * b.get(i).copied().unwrap_or(0.0))
        .collect()
}

impl ReactionPair {
    pub fn new(f_plus: Vec<f64>, f_minus: Vec<f64>) -> Result<Self> {
        let r = Self { f_plus, f_minus };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.f_plus.iter().chain(&self.f_minus).any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("reaction coefficients"));
        }
        for (name, f) in [("f_plus", &self.f_plus), ("f_minus", &self.f_minus)] {
            if f.iter().all(|c| *c >= 0.0) {
                continue;
            }
            // negative coefficients: fall back to a grid check on [0, 10]
            let mut prev = eval(f, 0.0);
            for i in 1..=1000 {
                let v = eval(f, i as f64 * 0.01);
                if v < prev - 1e-12 * prev.abs().max(1.0) {
                    return Err(Error::InvalidParameter(format!("{name} is decreasing near ζ = {}", i as f64 * 0.01)));
                }
                prev = v;
            }
        }
        Ok(())
    }

    /// `F = F₊ − F₋`.
    pub fn net(&self) -> Vec<f64> {
        combine(&self.f_plus, &self.f_minus, -1.0)
    }

    /// `G = F₊ + F₋`.
    pub fn total(&self) -> Vec<f64> {
        combine(&self.f_plus, &self.f_minus, 1.0)
    }

    /// Growth condition `F₊(ζ) ≤ C(1 + ζ)`: degree of `F₊` at most one.
    pub fn growth_ok(&self) -> bool {
        degree(&self.f_plus).is_none_or(|d| d <= 1)
    }

    pub fn rate_plus(&self, z: f64) -> f64 {
        eval(&self.f_plus, z)
    }

    pub fn rate_minus(&self, z: f64) -> f64 {
        eval(&self.f_minus, z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Orders {
    pub k: u32,
    pub beta: f64,
    pub ell: u32,
    pub alpha: f64,
}

/// Leading orders of `F` and `G` at 0 by coefficient inspection.
pub fn detect_orders(r: &ReactionPair) -> Result<Orders> {
    r.validate()?;
    let f = r.net();
    let g = r.total();
    let first = |c: &[f64]| c.iter().position(|v| *v != 0.0);
    let k = first(&f).ok_or(Error::ZeroReaction("F = f_plus - f_minus"))?;
    let ell = first(&g).ok_or(Error::ZeroReaction("G = f_plus + f_minus"))?;
    if k == 0 {
        return Err(Error::FixedPointNotAtZero("F(0) != 0"));
    }
    if ell == 0 {
        return Err(Error::FixedPointNotAtZero("G(0) != 0: noise does not vanish at 0"));
    }
    let beta = -f[k];
    if beta <= 0.0 {
        return Err(Error::NotAttracting { coefficient: f[k] });
    }
    if k < ell {
        return Err(Error::OrderViolation { k: k as u32, ell: ell as u32 });
    }
    Ok(Orders { k: k as u32, beta, ell: ell as u32, alpha: g[ell] })
}

fn ratio_str<S: Serializer>(r: &Rational, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&r.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Exponents {
    #[serde(serialize_with = "ratio_str")]
    pub a: Rational,
    #[serde(serialize_with = "ratio_str")]
    pub b: Rational,
}

impl Exponents {
    /// Left-hand sides of the two defining equations; both exactly zero for
    /// a solution.
    pub fn residuals(&self, k: u32, ell: u32) -> (Rational, Rational) {
        let one = Rational::from_integer(1);
        let (k, l) = (Rational::from_integer(k as i64), Rational::from_integer(ell as i64));
        let a = self.a;
        let b = self.b;
        (b + one - a - k * (one - a), b + one - a * 2 - l * (one - a))
    }
}

/// Solves the 2×2 system in `(b, a)` by Cramer's rule over the rationals.
pub fn solve_exponents(k: u32, ell: u32) -> Result<Exponents> {
    if ell == 0 {
        return Err(Error::InvalidParameter("ell must be >= 1".into()));
    }
    if k < ell {
        return Err(Error::OrderViolation { k, ell });
    }
    // b + (k−1)a = k−1
    // b + (ℓ−2)a = ℓ−1
    let (k, l) = (k as i64, ell as i64);
    let (a11, a12, r1) = (1, k - 1, k - 1);
    let (a21, a22, r2) = (1, l - 2, l - 1);
    let det = a11 * a22 - a12 * a21;
    debug_assert!(det != 0, "k >= ell keeps the system regular");
    let b = Rational::new(r1 * a22 - a12 * r2, det);
    let a = Rational::new(a11 * r2 - r1 * a21, det);
    Ok(Exponents { a, b })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingExponents {
    pub k: u32,
    pub beta: f64,
    pub ell: u32,
    pub alpha: f64,
    #[serde(serialize_with = "ratio_str")]
    pub a: Rational,
    #[serde(serialize_with = "ratio_str")]
    pub b: Rational,
}

impl ScalingExponents {
    pub fn of(r: &ReactionPair) -> Result<Self> {
        let o = detect_orders(r)?;
        let e = solve_exponents(o.k, o.ell)?;
        Ok(Self { k: o.k, beta: o.beta, ell: o.ell, alpha: o.alpha, a: e.a, b: e.b })
    }

    pub fn a_f64(&self) -> f64 {
        to_f64(self.a)
    }

    pub fn b_f64(&self) -> f64 {
        to_f64(self.b)
    }
}

fn to_f64(r: Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// `m^e` with `m^0 = 1` exactly and integer powers by repeated product.
fn pow_m(m: f64, e: Rational) -> f64 {
    if e.is_integer() {
        m.powi(e.to_integer() as i32)
    } else {
        m.powf(to_f64(e))
    }
}

/// `(L_m ζ, Q_m ζ) = (m^{b+1−a} F(m^{a−1}ζ), m^{b+1−2a} G(m^{a−1}ζ))`.
///
/// Each monomial `c ζ^i` contributes `c m^{e_i} ζ^i` with its exponent
/// `e_i` kept rational, so the leading terms carry `m^0 = 1` exactly.
pub fn rescaled_operators(r: &ReactionPair, exps: &Exponents, m: f64, zeta: f64) -> Result<(f64, f64)> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::InvalidParameter(format!("m must be positive, got {m}")));
    }
    let one = Rational::from_integer(1);
    let shrink = exps.a - one;
    let sum = |coeffs: &[f64], base: Rational| -> f64 {
        coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(i, c)| c * pow_m(m, base + shrink * (i as i64)) * zeta.powi(i as i32))
            .sum()
    };
    let l = sum(&r.net(), exps.b + one - exps.a);
    let q = sum(&r.total(), exps.b + one - exps.a * 2);
    if !l.is_finite() || !q.is_finite() {
        return Err(Error::Overflow { count: (zeta * m) as u64, n: m as u64 });
    }
    Ok((l, q))
}

/// Largest deviation of `(L_m, Q_m)` from `(−βζ^k, αζ^ℓ)` over `grid`.
pub fn operator_deviation(r: &ReactionPair, s: &ScalingExponents, m: f64, grid: &[f64]) -> Result<f64> {
    let exps = Exponents { a: s.a, b: s.b };
    let mut worst = 0.0f64;
    for &z in grid {
        let (l, q) = rescaled_operators(r, &exps, m, z)?;
        let dl = (l + s.beta * z.powi(s.k as i32)).abs();
        let dq = (q - s.alpha * z.powi(s.ell as i32)).abs();
        worst = worst.max(dl).max(dq);
    }
    Ok(worst)
}

/// Birth and death rates `m F₊(i/m)`, `m F₋(i/m)`, memoized per count.
#[derive(Debug, Clone)]
pub struct PolyRates {
    pair: ReactionPair,
    m: f64,
    table: Vec<(f64, f64)>,
}

impl PolyRates {
    pub fn new(pair: ReactionPair, m: f64) -> Self {
        Self { pair, m, table: Vec::new() }
    }

    #[cold]
    fn grow(&mut self, idx: usize) -> Result<()> {
        let target = (idx + 1).max(self.table.len() * 2).max(64);
        for c in self.table.len()..target {
            let z = c as f64 / self.m;
            let up = self.m * self.pair.rate_plus(z);
            let down = if c == 0 { 0.0 } else { self.m * self.pair.rate_minus(z) };
            if !up.is_finite() || !down.is_finite() {
                if c > idx {
                    break;
                }
                return Err(Error::Overflow { count: c as u64, n: self.m as u64 });
            }
            self.table.push((up.max(0.0), down.max(0.0)));
        }
        Ok(())
    }
}

impl SiteReactions for PolyRates {
    #[inline]
    fn rates(&mut self, count: u64) -> Result<(f64, f64)> {
        let idx = count as usize;
        if idx >= self.table.len() {
            self.grow(idx)?;
        }
        Ok(self.table[idx])
    }
}

/// Simulates the chain with rates `m F_±(i/m)` and returns
/// `ζ^m_t = η_{t m^b} / m^a` on the grid `0, dt, …, horizon`.
pub fn simulate_rescaled(
    r: &ReactionPair,
    m: u64,
    zeta0: f64,
    opts: &SimOptions,
    stream: &RngStream,
) -> Result<Trajectory> {
    if m == 0 {
        return Err(Error::InvalidParameter("m must be >= 1".into()));
    }
    if !r.growth_ok() {
        return Err(Error::GrowthViolation { degree: degree(&r.f_plus).unwrap_or(0) });
    }
    if r.f_minus.first().is_some_and(|c| *c != 0.0) {
        return Err(Error::InvalidParameter("f_minus(0) must be 0 on ℕ".into()));
    }
    if !(zeta0 >= 0.0 && zeta0.is_finite()) {
        return Err(Error::InvalidParameter(format!("initial value must be >= 0, got {zeta0}")));
    }
    let s = ScalingExponents::of(r)?;
    let mf = m as f64;
    let space = pow_m(mf, s.a);
    let time = pow_m(mf, s.b);
    let eta0 = Configuration(vec![(zeta0 * space).floor() as u64]);
    let fast = SimOptions {
        horizon: opts.horizon * time,
        sample_dt: opts.sample_dt * time,
        ..*opts
    };
    let mut t = ctmc::simulate_with(&SiteKernel::single_site(), PolyRates::new(r.clone(), mf), &eta0, space, &fast, stream)?;
    t.rescale_time(time, ctmc::sample_grid(opts.horizon, opts.sample_dt));
    Ok(t)
}

/// Built-in reaction pairs.
pub fn preset_pair(name: &str) -> Option<ReactionPair> {
    let (p, m): (Vec<f64>, Vec<f64>) = match name {
        // F = −ζ², G = 2ζ + ζ²: k = 2, ℓ = 1
        "quadratic" => (vec![0.0, 1.0], vec![0.0, 1.0, 1.0]),
        // F = −ζ³, G = 2ζ² + ζ³: k = 3, ℓ = 2
        "cubic" => (vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0, 1.0]),
        // F = −ζ² − ζ³, G = 2ζ + ζ² + 3ζ³: k = 2, ℓ = 1
        "mixed" => (vec![0.0, 1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0, 2.0]),
        // pure death, F = −ζ, G = ζ
        "linear" => (vec![], vec![0.0, 1.0]),
        _ => return None,
    };
    Some(ReactionPair { f_plus: p, f_minus: m })
}

pub const PRESET_PAIRS: [&str; 4] = ["quadratic", "cubic", "mixed", "linear"];
