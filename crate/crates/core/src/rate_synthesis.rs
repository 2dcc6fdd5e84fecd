//! Birth and death rates of the n-th model and the drift / covariation
//! coefficients they induce.
//!
//! With `ζ = count/n`, `t₁ = n²αζ^ℓ` and `t₂ = nβζ^k`:
//!
//! ```text
//! F⁺ = max(t₁ − t₂, 0) / 2        F⁻ = t₁ − F⁺
//! ```
//!
//! so `(F⁺ + F⁻)/n² = αζ^ℓ` always holds, and `(F⁺ − F⁻)/n = −βζ^k` up to an
//! error term that is nonzero only where the truncation bites.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_kernel::{discrete_laplacian, DensityVector, SiteKernel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub alpha: f64,
    pub beta: f64,
    pub k: u32,
    pub ell: u32,
    pub n: u64,
}

impl ModelParams {
    pub fn new(alpha: f64, beta: f64, k: u32, ell: u32, n: u64) -> Result<Self> {
        let p = Self { alpha, beta, k, ell, n };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::NonFinite("model parameters"));
        }
        if self.alpha <= 0.0 {
            return Err(Error::InvalidParameter(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.beta < 0.0 {
            return Err(Error::InvalidParameter(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.k == 0 || self.ell == 0 {
            return Err(Error::InvalidParameter("k and ell must be >= 1".into()));
        }
        if self.n == 0 {
            return Err(Error::InvalidParameter("n must be >= 1".into()));
        }
        Ok(())
    }

    /// β = 0 runs are outside the convergence theorem (which needs β > 0).
    pub fn outside_theorem(&self) -> bool {
        self.beta == 0.0
    }

    /// For k = ℓ the truncation in F⁺ is active at every positive count
    /// unless n > β/α.
    pub fn truncation_advisory(&self) -> bool {
        self.k == self.ell && (self.n as f64) <= self.beta / self.alpha
    }

    #[inline]
    pub fn density(&self, count: u64) -> f64 {
        count as f64 / self.n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct RawTerms {
    /// n²αζ^ℓ
    noise: f64,
    /// nβζ^k
    drift: f64,
}

#[inline]
fn raw_terms(p: &ModelParams, zeta: f64) -> Option<RawTerms> {
    let n = p.n as f64;
    let noise = n * n * p.alpha * zeta.powi(p.ell as i32);
    let drift = n * p.beta * zeta.powi(p.k as i32);
    (noise.is_finite() && drift.is_finite()).then_some(RawTerms { noise, drift })
}

/// `(F⁺, F⁻)` evaluated at density `ζ`.
pub fn rates_at_density(p: &ModelParams, zeta: f64) -> Result<(f64, f64)> {
    let t = raw_terms(p, zeta).ok_or(Error::Overflow {
        count: (zeta * p.n as f64) as u64,
        n: p.n,
    })?;
    let birth = (t.noise - t.drift).max(0.0) / 2.0;
    Ok((birth, t.noise - birth))
}

pub fn birth_rate(p: &ModelParams, count: u64) -> Result<f64> {
    rates_at_density(p, p.density(count))
        .map(|(b, _)| b)
        .map_err(|_| Error::Overflow { count, n: p.n })
}

pub fn death_rate(p: &ModelParams, count: u64) -> Result<f64> {
    rates_at_density(p, p.density(count))
        .map(|(_, d)| d)
        .map_err(|_| Error::Overflow { count, n: p.n })
}

/// `error_n(ζ) = F_n(ζ) + βζ^k`; zero wherever `n²αζ^ℓ ≥ nβζ^k`.
pub fn error_term(p: &ModelParams, zeta: f64) -> Result<f64> {
    let t = raw_terms(p, zeta).ok_or(Error::Overflow {
        count: (zeta * p.n as f64) as u64,
        n: p.n,
    })?;
    if t.noise >= t.drift {
        Ok(0.0)
    } else {
        // F⁺ = 0, F⁻ = t₁: drift is −t₁/n, so the excess over −βζ^k is (t₂ − t₁)/n.
        Ok((t.drift - t.noise) / p.n as f64)
    }
}

/// `F_n(ζ) = (F⁺ − F⁻)/n`, written as `−βζ^k + error_n(ζ)`.
pub fn drift_fn(p: &ModelParams, zeta: f64) -> Result<f64> {
    Ok(-p.beta * zeta.powi(p.k as i32) + error_term(p, zeta)?)
}

/// `G_n(ζ) = (F⁺ + F⁻)/n² = αζ^ℓ`.
pub fn variance_gn(p: &ModelParams, zeta: f64) -> Result<f64> {
    let v = p.alpha * zeta.powi(p.ell as i32);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Overflow { count: (zeta * p.n as f64) as u64, n: p.n })
    }
}

/// Drift vector and covariation matrix (row-major, `|V|²`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coefficients {
    pub drift: Vec<f64>,
    pub covariation: Vec<Vec<f64>>,
}

/// `bⁿ` and `aⁿ` of the n-th generator at `ζ`.
pub fn discrete_coefficients(p: &ModelParams, kernel: &SiteKernel, zeta: &DensityVector) -> Result<Coefficients> {
    let v = kernel.site_count();
    let lap = discrete_laplacian(kernel, zeta)?;
    let z = zeta.as_slice();
    let n = p.n as f64;
    let mut drift = Vec::with_capacity(v);
    for x in 0..v {
        drift.push(lap[x] + drift_fn(p, z[x])?);
    }
    let mut cov = vec![vec![0.0; v]; v];
    for x in 0..v {
        let mut jump_sum = 0.0;
        for y in 0..v {
            if y == x {
                continue;
            }
            let flux = kernel.rate(x, y) * z[x] + kernel.rate(y, x) * z[y];
            cov[x][y] = -flux / n;
            jump_sum += flux;
        }
        cov[x][x] = jump_sum / n + variance_gn(p, z[x])?;
    }
    Ok(Coefficients { drift, covariation: cov })
}

/// `b*` and `a*` of the limit operator: the error term and the `1/n` jump
/// covariation are gone, leaving a diagonal `a*`.
pub fn limit_coefficients(
    alpha: f64,
    beta: f64,
    k: u32,
    ell: u32,
    kernel: &SiteKernel,
    zeta: &DensityVector,
) -> Result<Coefficients> {
    let v = kernel.site_count();
    let lap = discrete_laplacian(kernel, zeta)?;
    let z = zeta.as_slice();
    let drift: Vec<f64> = (0..v).map(|x| lap[x] - beta * z[x].powi(k as i32)).collect();
    let mut cov = vec![vec![0.0; v]; v];
    for x in 0..v {
        cov[x][x] = alpha * z[x].powi(ell as i32);
    }
    if drift.iter().chain(cov.iter().flatten()).any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("limit coefficients"));
    }
    Ok(Coefficients { drift, covariation: cov })
}

/// One-step neighbours of `eta` with their rates, in the fixed order
/// jumps (x, y), births x, deaths x.
fn for_each_transition(
    p: &ModelParams,
    kernel: &SiteKernel,
    eta: &[u64],
    mut visit: impl FnMut(f64, &[u64]),
) -> Result<()> {
    let v = kernel.site_count();
    if eta.len() != v {
        return Err(Error::DimensionMismatch { expected: v, actual: eta.len() });
    }
    let mut next = eta.to_vec();
    for x in 0..v {
        if eta[x] == 0 {
            continue;
        }
        for y in 0..v {
            let r = eta[x] as f64 * kernel.rate(x, y);
            if r > 0.0 {
                next[x] -= 1;
                next[y] += 1;
                visit(r, &next);
                next[x] += 1;
                next[y] -= 1;
            }
        }
    }
    for x in 0..v {
        let b = birth_rate(p, eta[x])?;
        if b > 0.0 {
            next[x] += 1;
            visit(b, &next);
            next[x] -= 1;
        }
    }
    for x in 0..v {
        let d = death_rate(p, eta[x])?;
        if d > 0.0 && eta[x] > 0 {
            next[x] -= 1;
            visit(d, &next);
            next[x] += 1;
        }
    }
    Ok(())
}

/// Result of enumerating every transition: the value and the sum of the
/// absolute contributions (the natural scale for rounding error).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Enumerated {
    pub value: f64,
    pub magnitude: f64,
}

/// `L_n f(η)` by summing `rate × [f(η′) − f(η)]` over all transitions.
pub fn apply_generator_bruteforce<F>(p: &ModelParams, kernel: &SiteKernel, eta: &[u64], f: F) -> Result<Enumerated>
where
    F: Fn(&[u64]) -> f64,
{
    let f0 = f(eta);
    let mut value = 0.0;
    let mut magnitude = 0.0;
    for_each_transition(p, kernel, eta, |rate, next| {
        let term = rate * (f(next) - f0);
        value += term;
        magnitude += term.abs();
    })?;
    Ok(Enumerated { value, magnitude })
}

/// `Q_n f(η) = L_n f² − 2 f L_n f`, enumerated as `Σ rate × [f(η′) − f(η)]²`.
pub fn apply_carre_du_champ_bruteforce<F>(
    p: &ModelParams,
    kernel: &SiteKernel,
    eta: &[u64],
    f: F,
) -> Result<Enumerated>
where
    F: Fn(&[u64]) -> f64,
{
    let f0 = f(eta);
    let mut value = 0.0;
    for_each_transition(p, kernel, eta, |rate, next| {
        let d = f(next) - f0;
        value += rate * d * d;
    })?;
    Ok(Enumerated { value, magnitude: value })
}

/// Memoized `(F⁺, F⁻)` per site count. Grows on demand; owned by a single
/// replica.
#[derive(Debug, Clone)]
pub struct RateTable {
    params: ModelParams,
    table: Vec<(f64, f64)>,
}

impl RateTable {
    pub fn new(params: ModelParams) -> Self {
        Self { params, table: Vec::new() }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    #[inline]
    pub fn get(&mut self, count: u64) -> Result<(f64, f64)> {
        let idx = count as usize;
        if idx < self.table.len() {
            return Ok(self.table[idx]);
        }
        self.grow(idx)?;
        Ok(self.table[idx])
    }

    #[cold]
    fn grow(&mut self, idx: usize) -> Result<()> {
        let target = (idx + 1).max(self.table.len() * 2).max(64);
        for c in self.table.len()..target {
            match rates_at_density(&self.params, self.params.density(c as u64)) {
                Ok(r) => self.table.push(r),
                Err(_) if c > idx => break,
                Err(_) => return Err(Error::Overflow { count: c as u64, n: self.params.n }),
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(alpha: f64, beta: f64, k: u32, ell: u32, n: u64) -> ModelParams {
        ModelParams::new(alpha, beta, k, ell, n).unwrap()
    }

    #[test]
    fn rate_examples() {
        let lin = p(1.0, 1.0, 1, 1, 10);
        assert_eq!(birth_rate(&lin, 10).unwrap(), 45.0);
        assert_eq!(death_rate(&lin, 10).unwrap(), 55.0);
        assert_eq!(birth_rate(&lin, 0).unwrap(), 0.0);
        assert_eq!(death_rate(&lin, 0).unwrap(), 0.0);

        let quad = p(1.0, 1.0, 2, 1, 10);
        assert_eq!(birth_rate(&quad, 200).unwrap(), 0.0);
        assert_eq!(death_rate(&quad, 200).unwrap(), 2000.0);
    }

    #[test]
    fn drift_and_error_examples() {
        let lin = p(1.0, 1.0, 1, 1, 10);
        assert_eq!(drift_fn(&lin, 1.0).unwrap(), -1.0);
        assert_eq!(error_term(&lin, 1.0).unwrap(), 0.0);
        assert_eq!(drift_fn(&lin, 0.0).unwrap(), 0.0);

        let quad = p(1.0, 1.0, 2, 1, 10);
        assert_eq!(drift_fn(&quad, 20.0).unwrap(), -200.0);
        assert_eq!(error_term(&quad, 20.0).unwrap(), 200.0);
        assert_eq!(error_term(&quad, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn drift_matches_rate_difference() {
        let quad = p(1.0, 1.0, 2, 1, 10);
        for c in [0u64, 1, 7, 100, 200, 1234] {
            let z = quad.density(c);
            let (b, d) = rates_at_density(&quad, z).unwrap();
            let direct = (b - d) / 10.0;
            let f = drift_fn(&quad, z).unwrap();
            assert!((direct - f).abs() <= 1e-12 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn variance_examples() {
        assert_eq!(variance_gn(&p(1.0, 1.0, 1, 1, 10), 1.0).unwrap(), 1.0);
        assert_eq!(variance_gn(&p(1.0, 1.0, 1, 1, 10), 0.0).unwrap(), 0.0);
        assert_eq!(variance_gn(&p(2.0, 1.0, 1, 3, 10), 0.5).unwrap(), 0.25);
    }

    #[test]
    fn equal_orders_have_no_error_once_n_exceeds_ratio() {
        let m = p(0.5, 2.0, 3, 3, 5); // n = 5 > β/α = 4
        for i in 0..200 {
            assert_eq!(error_term(&m, i as f64 * 0.37).unwrap(), 0.0);
        }
        assert!(!m.truncation_advisory());
        assert!(p(0.5, 2.0, 3, 3, 4).truncation_advisory());
    }

    #[test]
    fn overflow_is_reported() {
        let m = p(1.0, 1.0, 60, 1, 2);
        assert!(matches!(birth_rate(&m, u64::MAX / 2), Err(Error::Overflow { .. })));
        assert!(error_term(&m, 1e300).is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(ModelParams::new(0.0, 1.0, 1, 1, 1).is_err());
        assert!(ModelParams::new(1.0, -1.0, 1, 1, 1).is_err());
        assert!(ModelParams::new(1.0, 1.0, 0, 1, 1).is_err());
        assert!(ModelParams::new(1.0, 1.0, 1, 0, 1).is_err());
        assert!(ModelParams::new(1.0, 1.0, 1, 1, 0).is_err());
        assert!(ModelParams::new(f64::NAN, 1.0, 1, 1, 1).is_err());
        let anderson = ModelParams::new(1.0, 0.0, 1, 2, 10).unwrap();
        assert!(anderson.outside_theorem());
        assert_eq!(birth_rate(&anderson, 10).unwrap(), death_rate(&anderson, 10).unwrap());
    }

    #[test]
    fn single_site_coefficients() {
        let m = p(1.0, 1.0, 1, 1, 10);
        let c = discrete_coefficients(&m, &SiteKernel::single_site(), &DensityVector::new(vec![1.0]).unwrap()).unwrap();
        assert_eq!(c.drift, vec![-1.0]);
        assert_eq!(c.covariation, vec![vec![1.0]]);
        let l = limit_coefficients(1.0, 1.0, 1, 1, &SiteKernel::single_site(), &DensityVector::new(vec![1.0]).unwrap())
            .unwrap();
        assert_eq!(l.drift, vec![-1.0]);
        assert_eq!(l.covariation, vec![vec![1.0]]);
    }

    #[test]
    fn two_site_coefficients() {
        let m = p(1.0, 1.0, 1, 1, 10);
        let k = SiteKernel::complete(2, 1.0).unwrap();
        let z = DensityVector::new(vec![1.0, 0.0]).unwrap();
        let c = discrete_coefficients(&m, &k, &z).unwrap();
        assert_eq!(c.drift, vec![-2.0, 1.0]);
        assert!((c.covariation[0][1] + 0.1).abs() < 1e-15);
        assert!((c.covariation[1][0] + 0.1).abs() < 1e-15);
        assert!((c.covariation[0][0] - 1.1).abs() < 1e-15);
        assert!((c.covariation[1][1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_density_gives_zero_coefficients() {
        let m = p(1.3, 0.4, 2, 3, 7);
        let k = SiteKernel::complete(3, 2.0).unwrap();
        let z = DensityVector::zeros(3);
        let c = discrete_coefficients(&m, &k, &z).unwrap();
        let l = limit_coefficients(1.3, 0.4, 2, 3, &k, &z).unwrap();
        for coeffs in [c, l] {
            assert!(coeffs.drift.iter().all(|v| *v == 0.0));
            assert!(coeffs.covariation.iter().flatten().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn discrete_minus_limit_is_jump_term_plus_error() {
        let m = p(1.0, 2.0, 2, 1, 50);
        let k = SiteKernel::from_rows(&[vec![0.0, 1.0, 0.5], vec![0.2, 0.0, 0.0], vec![3.0, 1.0, 0.0]]).unwrap();
        let z = DensityVector::new(vec![0.4, 1.2, 30.0]).unwrap();
        let c = discrete_coefficients(&m, &k, &z).unwrap();
        let l = limit_coefficients(1.0, 2.0, 2, 1, &k, &z).unwrap();
        for x in 0..3 {
            let e = error_term(&m, z[x]).unwrap();
            assert!((c.drift[x] - l.drift[x] - e).abs() < 1e-9);
            for y in 0..3 {
                let flux = if x == y {
                    (0..3).filter(|w| *w != x).map(|w| k.rate(x, w) * z[x] + k.rate(w, x) * z[w]).sum::<f64>()
                } else {
                    -(k.rate(x, y) * z[x] + k.rate(y, x) * z[y])
                };
                assert!((c.covariation[x][y] - l.covariation[x][y] - flux / 50.0).abs() < 1e-12);
            }
        }
        // ζ = 30 > nα/β = 25: truncation active at site 2 only
        assert!(error_term(&m, 30.0).unwrap() > 0.0);
        assert_eq!(error_term(&m, 1.2).unwrap(), 0.0);
    }

    #[test]
    fn bruteforce_constant_function_vanishes() {
        let m = p(1.0, 1.0, 2, 1, 10);
        let k = SiteKernel::complete(3, 1.0).unwrap();
        let eta = [3, 0, 7];
        assert_eq!(apply_generator_bruteforce(&m, &k, &eta, |_| 4.2).unwrap().value, 0.0);
        assert_eq!(apply_carre_du_champ_bruteforce(&m, &k, &eta, |_| 4.2).unwrap().value, 0.0);
    }

    #[test]
    fn bruteforce_single_site_qn() {
        let m = p(1.0, 1.0, 1, 1, 10);
        let k = SiteKernel::single_site();
        let q = apply_carre_du_champ_bruteforce(&m, &k, &[10], |e| e[0] as f64 / 10.0).unwrap();
        assert!((q.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bruteforce_two_site_matches_coefficients() {
        let m = p(1.0, 1.0, 1, 1, 10);
        let k = SiteKernel::complete(2, 1.0).unwrap();
        let eta = [10u64, 0];
        let fx = |e: &[u64]| e[0] as f64 / 10.0;
        let fy = |e: &[u64]| e[1] as f64 / 10.0;
        let bx = apply_generator_bruteforce(&m, &k, &eta, fx).unwrap().value;
        let by = apply_generator_bruteforce(&m, &k, &eta, fy).unwrap().value;
        assert!((bx + 2.0).abs() < 1e-12);
        assert!((by - 1.0).abs() < 1e-12);
        let qx = apply_carre_du_champ_bruteforce(&m, &k, &eta, fx).unwrap().value;
        assert!((qx - 1.1).abs() < 1e-12);
        // L f_x f_y = b_x ζ_y + b_y ζ_x + a_xy
        let lxy = apply_generator_bruteforce(&m, &k, &eta, |e| fx(e) * fy(e)).unwrap().value;
        assert!((lxy - (bx * 0.0 + by * 1.0 - 0.1)).abs() < 1e-12);
    }

    #[test]
    fn rate_table_matches_direct_evaluation() {
        let m = p(0.7, 1.3, 2, 1, 13);
        let mut t = RateTable::new(m);
        for c in [5u64, 0, 300, 17, 1000, 64] {
            let (b, d) = t.get(c).unwrap();
            assert_eq!(b, birth_rate(&m, c).unwrap());
            assert_eq!(d, death_rate(&m, c).unwrap());
        }
    }

    proptest! {
        #[test]
        fn rates_nonnegative_and_sum_to_noise_term(
            alpha in 0.01f64..3.0, beta in 0.0f64..3.0, k in 1u32..5, ell in 1u32..5,
            n in 1u64..200, count in 0u64..5000,
        ) {
            let m = p(alpha, beta, k, ell, n);
            let b = birth_rate(&m, count).unwrap();
            let d = death_rate(&m, count).unwrap();
            prop_assert!(b >= 0.0 && d >= 0.0);
            let z = m.density(count);
            let total = (n as f64).powi(2) * alpha * z.powi(ell as i32);
            prop_assert!((b + d - total).abs() <= 1e-12 * total.max(f64::MIN_POSITIVE));
            if count == 0 {
                prop_assert_eq!(b, 0.0);
                prop_assert_eq!(d, 0.0);
            }
        }

        #[test]
        fn error_vanishes_where_noise_dominates(
            alpha in 0.01f64..3.0, beta in 0.0f64..3.0, k in 1u32..5, ell in 1u32..5,
            n in 1u64..200, zeta in 0.0f64..50.0,
        ) {
            let m = p(alpha, beta, k, ell, n);
            let nf = n as f64;
            let e = error_term(&m, zeta).unwrap();
            prop_assert!(e >= 0.0);
            if nf * nf * alpha * zeta.powi(ell as i32) >= nf * beta * zeta.powi(k as i32) {
                prop_assert_eq!(e, 0.0);
            }
        }
    }

    #[test]
    fn error_sup_shrinks_with_n() {
        // k ≥ ℓ: sup over a bounded grid decreases to 0
        for (k, ell) in [(2u32, 1u32), (3, 1), (2, 2), (4, 2)] {
            let grid: Vec<f64> = (0..=400).map(|i| i as f64 * 0.05).collect();
            let mut prev = f64::INFINITY;
            for n in [10u64, 100, 1000, 10_000] {
                let m = p(1.0, 1.0, k, ell, n);
                let sup = grid.iter().map(|z| error_term(&m, *z).unwrap()).fold(0.0, f64::max);
                assert!(sup <= prev, "k={k} ell={ell} n={n}: {sup} > {prev}");
                prev = sup;
            }
            assert_eq!(prev, 0.0);
        }
        // k < ℓ: the error lives below (β/(nα))^{1/(ℓ−k)} and its sup over all ζ shrinks
        let mut prev = f64::INFINITY;
        for n in [10u64, 100, 1000, 10_000] {
            let m = p(1.0, 1.0, 1, 2, n);
            let edge = 1.0 / n as f64;
            let sup = (0..=1000)
                .map(|i| error_term(&m, edge * i as f64 / 1000.0).unwrap())
                .fold(0.0, f64::max);
            assert_eq!(error_term(&m, edge * 1.0001).unwrap(), 0.0);
            assert!(sup < prev);
            prev = sup;
        }
        assert!(prev < 1e-4);
    }
}
