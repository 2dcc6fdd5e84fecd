//! Reference solver for the limit SDE
//!
//! ```text
//! dζ_t(x) = [Δ_{V,p} ζ_t(x) − β ζ_t(x)^k] dt + √(α ζ_t(x)^ℓ) dB_t^x
//! ```
//!
//! by full-truncation Euler–Maruyama: drift and noise are evaluated at
//! `ζ⁺ = max(ζ, 0)` while the state itself is left unclamped. Reported
//! values are `ζ⁺`.
//!
//! For `k = ℓ = 1` the first two moments solve closed linear ODEs, which
//! [`moment_oracle_linear`] integrates with RK4.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ensemble::run_replicas;
use crate::error::{Error, Result};
use crate::graph_kernel::{laplacian_into, DensityVector, SiteKernel};
use crate::rng::{RngStream, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeSpec {
    pub alpha: f64,
    pub beta: f64,
    pub k: u32,
    pub ell: u32,
    pub kernel: SiteKernel,
    pub rho0: DensityVector,
    pub dt: f64,
    pub horizon: f64,
    /// Defaults to `horizon` (initial and terminal values only).
    #[serde(default)]
    pub sample_dt: Option<f64>,
    /// Stop a path once its total mass exceeds this.
    #[serde(default)]
    pub mass_guard: Option<f64>,
}

impl SdeSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("dt", self.dt), ("horizon", self.horizon)] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite")));
            }
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::InvalidParameter("alpha and beta must be >= 0".into()));
        }
        if self.k == 0 || self.ell == 0 {
            return Err(Error::InvalidParameter("k and ell must be >= 1".into()));
        }
        if !(self.dt > 0.0 && self.dt <= self.horizon) {
            return Err(Error::InvalidParameter(format!("need 0 < dt <= horizon, got dt = {}", self.dt)));
        }
        if let Some(s) = self.sample_dt {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidParameter(format!("sample_dt must be positive, got {s}")));
            }
        }
        if self.rho0.len() != self.kernel.site_count() {
            return Err(Error::DimensionMismatch { expected: self.kernel.site_count(), actual: self.rho0.len() });
        }
        Ok(())
    }

    pub fn sites(&self) -> usize {
        self.kernel.site_count()
    }

    /// `β A^k dt < 1` for the configured guard `A`; without a guard there is
    /// nothing to check.
    pub fn stability_ok(&self) -> bool {
        self.mass_guard.is_none_or(|a| self.beta * a.powi(self.k as i32) * self.dt < 1.0)
    }

    /// Number of Euler steps and the grid step indices at which to sample.
    fn schedule(&self) -> (u64, Vec<(f64, u64)>) {
        let steps = (self.horizon / self.dt).round().max(1.0) as u64;
        let every = self.sample_dt.unwrap_or(self.horizon);
        let grid = crate::ctmc::sample_grid(self.horizon, every);
        let marks = grid
            .into_iter()
            .map(|t| (t, ((t / self.horizon) * steps as f64).round() as u64))
            .collect();
        (steps, marks)
    }
}

/// Reusable buffers for [`em_step_into`].
#[derive(Debug, Clone)]
pub struct EmScratch {
    pos: Vec<f64>,
    lap: Vec<f64>,
}

impl EmScratch {
    pub fn new(sites: usize) -> Self {
        Self { pos: vec![0.0; sites], lap: vec![0.0; sites] }
    }
}

/// One full-truncation step in place. `gaussians` holds one standard normal
/// per site.
pub fn em_step_into(state: &mut [f64], spec: &SdeSpec, gaussians: &[f64], scratch: &mut EmScratch) -> Result<()> {
    let v = state.len();
    if gaussians.len() != v {
        return Err(Error::DimensionMismatch { expected: v, actual: gaussians.len() });
    }
    let sqrt_dt = spec.dt.sqrt();
    if v == 1 {
        let z = state[0].max(0.0);
        state[0] += -spec.beta * z.powi(spec.k as i32) * spec.dt
            + (spec.alpha * z.powi(spec.ell as i32)).sqrt() * sqrt_dt * gaussians[0];
        return if state[0].is_finite() { Ok(()) } else { Err(Error::NonFinite("SDE state")) };
    }
    for (p, s) in scratch.pos.iter_mut().zip(state.iter()) {
        *p = s.max(0.0);
    }
    laplacian_into(&spec.kernel, &scratch.pos, &mut scratch.lap)?;
    for x in 0..v {
        let z = scratch.pos[x];
        state[x] += (scratch.lap[x] - spec.beta * z.powi(spec.k as i32)) * spec.dt
            + (spec.alpha * z.powi(spec.ell as i32)).sqrt() * sqrt_dt * gaussians[x];
        if !state[x].is_finite() {
            return Err(Error::NonFinite("SDE state"));
        }
    }
    Ok(())
}

/// Allocating wrapper around [`em_step_into`].
pub fn em_step(state: &[f64], spec: &SdeSpec, gaussians: &[f64]) -> Result<Vec<f64>> {
    let mut next = state.to_vec();
    em_step_into(&mut next, spec, gaussians, &mut EmScratch::new(state.len()))?;
    Ok(next)
}

/// One Euler path sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub sites: usize,
    pub sample_times: Vec<f64>,
    /// Post-truncation values, row-major by sample.
    values: Vec<f64>,
    /// First time the mass guard fired.
    pub guard_time: Option<f64>,
}

impl SamplePath {
    pub fn state(&self, i: usize) -> &[f64] {
        &self.values[i * self.sites..(i + 1) * self.sites]
    }

    pub fn len(&self) -> usize {
        self.sample_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_times.is_empty()
    }

    pub fn terminal(&self) -> &[f64] {
        self.state(self.len() - 1)
    }
}

/// Runs one path, calling `observe(step, state)` after every step with the
/// raw (unclamped) state. Site `x` draws its normals from substream `x`.
fn integrate(spec: &SdeSpec, stream: &RngStream, mut observe: impl FnMut(u64, &[f64])) -> Result<SamplePath> {
    let v = spec.sites();
    let (steps, marks) = spec.schedule();
    let mut rngs: Vec<StreamRng> = (0..v as u32).map(|x| stream.substream(x)).collect();
    let mut state = spec.rho0.as_slice().to_vec();
    let mut scratch = EmScratch::new(v);
    let mut g = vec![0.0; v];
    let mut values = Vec::with_capacity(marks.len() * v);
    let mut times = Vec::with_capacity(marks.len());
    let mut next_mark = 0;
    let mut guard_time = None;
    let record = |state: &[f64], values: &mut Vec<f64>| values.extend(state.iter().map(|s| s.max(0.0)));
    while next_mark < marks.len() && marks[next_mark].1 == 0 {
        record(&state, &mut values);
        times.push(marks[next_mark].0);
        next_mark += 1;
    }
    for step in 1..=steps {
        for (gx, r) in g.iter_mut().zip(rngs.iter_mut()) {
            *gx = r.sample(StandardNormal);
        }
        em_step_into(&mut state, spec, &g, &mut scratch)
            .map_err(|_| Error::SdeBlowUp { time: step as f64 * spec.dt })?;
        observe(step, &state);
        while next_mark < marks.len() && marks[next_mark].1 == step {
            record(&state, &mut values);
            times.push(marks[next_mark].0);
            next_mark += 1;
        }
        if let Some(a) = spec.mass_guard {
            if state.iter().map(|s| s.max(0.0)).sum::<f64>() > a {
                guard_time = Some(step as f64 * spec.dt);
                break;
            }
        }
    }
    Ok(SamplePath { sites: v, sample_times: times, values, guard_time })
}

/// `replicas` independent paths; replica `r` uses `RngStream::new(seed, r)`.
pub fn simulate_paths(spec: &SdeSpec, replicas: u64, seed: u64) -> Result<Vec<SamplePath>> {
    spec.validate()?;
    run_replicas(seed, replicas, |_, s| integrate(spec, &s, |_, _| {}))
}

/// Per-path terminal values only (avoids keeping whole paths around).
pub fn terminal_values(spec: &SdeSpec, replicas: u64, seed: u64) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    run_replicas(seed, replicas, |_, s| {
        let path = integrate(&SdeSpec { sample_dt: None, ..spec.clone() }, &s, |_, _| {})?;
        Ok(path.terminal().to_vec())
    })
}

/// Single site, `k = ℓ = 1`: a low-variance estimator of `E[ζ_T⁺]`.
///
/// With `q = 1 − βdt` and `ζ⁻ = max(−ζ, 0)`, the scheme gives
/// `E ζ_N = ρ₀ q^N − βdt Σ_j q^{N−1−j} E ζ_j⁻`, so
/// `Y = ρ₀ q^N − βdt Σ_j q^{N−1−j} ζ_j⁻ + ζ_N⁻` has the same mean as
/// `ζ_N⁺` but only the rare negative excursions contribute noise.
/// Returns one `Y` per path, on the same streams as [`simulate_paths`].
pub fn truncation_control_variate(spec: &SdeSpec, replicas: u64, seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    if spec.sites() != 1 || spec.k != 1 || spec.ell != 1 {
        return Err(Error::InvalidParameter("control variate needs one site and k = ell = 1".into()));
    }
    let (steps, _) = spec.schedule();
    let q = 1.0 - spec.beta * spec.dt;
    let rho0 = spec.rho0[0];
    run_replicas(seed, replicas, |_, s| {
        // Σ_j q^{N−1−j} ζ_j⁻ accumulated as a Horner recursion
        let mut acc = 0.0;
        let mut neg = 0.0;
        let mut prev_neg = 0.0; // ζ_0⁻ = 0 since ρ₀ ≥ 0
        let spec_t = SdeSpec { sample_dt: None, ..spec.clone() };
        integrate(&spec_t, &s, |_, st| {
            acc = acc * q + prev_neg;
            neg = (-st[0]).max(0.0);
            prev_neg = neg;
        })?;
        Ok(rho0 * q.powi(steps as i32) - spec.beta * spec.dt * acc + neg)
    })
}

/// `(E ζ_t, E ζ_t ζ_tᵀ)` for `k = ℓ = 1`, by RK4 at step `dt/100`.
pub fn moment_oracle_linear(spec: &SdeSpec, t: f64) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    spec.validate()?;
    if spec.k != 1 || spec.ell != 1 {
        return Err(Error::InvalidParameter(format!(
            "moment oracle needs k = ell = 1, got k = {}, ell = {}",
            spec.k, spec.ell
        )));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("time must be >= 0, got {t}")));
    }
    let v = spec.sites();
    // A = Pᵀ − diag(out-rate) − βI, so that m' = A m
    let mut a = vec![vec![0.0; v]; v];
    for x in 0..v {
        for y in 0..v {
            a[x][y] = spec.kernel.rate(y, x);
        }
        a[x][x] = -spec.kernel.out_rate(x) - spec.beta;
    }
    let rho = spec.rho0.as_slice();
    // state: m (v entries) then S (v² entries, row-major)
    let mut y: Vec<f64> = rho.to_vec();
    for x in 0..v {
        for z in 0..v {
            y.push(rho[x] * rho[z]);
        }
    }
    let alpha = spec.alpha;
    let rhs = |y: &[f64], out: &mut [f64]| {
        let (m, s) = y.split_at(v);
        for x in 0..v {
            out[x] = (0..v).map(|z| a[x][z] * m[z]).sum();
        }
        for x in 0..v {
            for z in 0..v {
                let as_ = (0..v).map(|w| a[x][w] * s[w * v + z]).sum::<f64>();
                let sa = (0..v).map(|w| s[x * v + w] * a[z][w]).sum::<f64>();
                out[v + x * v + z] = as_ + sa + if x == z { alpha * m[x] } else { 0.0 };
            }
        }
    };
    let h_target = spec.dt / 100.0;
    let steps = (t / h_target).ceil() as u64;
    if steps > 0 {
        let h = t / steps as f64;
        let len = y.len();
        let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
            (vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]);
        for _ in 0..steps {
            rhs(&y, &mut k1);
            for i in 0..len {
                tmp[i] = y[i] + 0.5 * h * k1[i];
            }
            rhs(&tmp, &mut k2);
            for i in 0..len {
                tmp[i] = y[i] + 0.5 * h * k2[i];
            }
            rhs(&tmp, &mut k3);
            for i in 0..len {
                tmp[i] = y[i] + h * k3[i];
            }
            rhs(&tmp, &mut k4);
            for i in 0..len {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
    }
    let mean = y[..v].to_vec();
    let second = (0..v).map(|x| y[v + x * v..v + (x + 1) * v].to_vec()).collect();
    Ok((mean, second))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::mean_se;

    fn single(alpha: f64, beta: f64, rho0: f64, dt: f64) -> SdeSpec {
        SdeSpec {
            alpha,
            beta,
            k: 1,
            ell: 1,
            kernel: SiteKernel::single_site(),
            rho0: DensityVector::new(vec![rho0]).unwrap(),
            dt,
            horizon: 1.0,
            sample_dt: None,
            mass_guard: None,
        }
    }

    fn two_site() -> SdeSpec {
        SdeSpec {
            kernel: SiteKernel::from_rows(&[vec![0.0, 1.0], vec![0.5, 0.0]]).unwrap(),
            rho0: DensityVector::new(vec![1.0, 0.5]).unwrap(),
            ..single(1.0, 1.0, 1.0, 1e-2)
        }
    }

    #[test]
    fn zero_is_fixed() {
        let s = single(1.0, 1.0, 0.0, 0.01);
        assert_eq!(em_step(&[0.0], &s, &[2.5]).unwrap(), vec![0.0]);
        let paths = simulate_paths(&s, 3, 0).unwrap();
        assert!(paths.iter().all(|p| p.terminal() == [0.0]));
    }

    #[test]
    fn negative_state_is_frozen_and_reported_as_zero() {
        let s = single(1.0, 1.0, 1.0, 0.01);
        assert_eq!(em_step(&[-0.3], &s, &[1.0]).unwrap(), vec![-0.3]);
    }

    #[test]
    fn step_formula() {
        let s = single(2.0, 0.5, 1.0, 0.04);
        let out = em_step(&[0.81], &s, &[1.5]).unwrap()[0];
        let expect = 0.81 - 0.5 * 0.81 * 0.04 + (2.0f64 * 0.81).sqrt() * 0.2 * 1.5;
        assert!((out - expect).abs() < 1e-15);
    }

    #[test]
    fn noiseless_limit_tracks_exponential() {
        let mut errs = Vec::new();
        for dt in [1e-2, 1e-3, 1e-4] {
            let s = single(0.0, 1.0, 2.0, dt);
            let p = simulate_paths(&s, 1, 0).unwrap();
            errs.push((p[0].terminal()[0] - 2.0 * (-1.0f64).exp()).abs());
        }
        assert!(errs[0] > errs[1] && errs[1] > errs[2]);
        assert!(errs[2] < 1e-4);
    }

    #[test]
    fn pure_diffusion_conserves_mass() {
        let mut s = two_site();
        s.alpha = 0.0;
        s.beta = 0.0;
        let mut state = vec![1.0, 0.5];
        let mut scratch = EmScratch::new(2);
        for _ in 0..100 {
            em_step_into(&mut state, &s, &[0.3, -1.2], &mut scratch).unwrap();
            assert!((state[0] + state[1] - 1.5).abs() < 1e-14);
        }
    }

    #[test]
    fn paths_are_reproducible() {
        let s = SdeSpec { sample_dt: Some(0.25), ..two_site() };
        let a = simulate_paths(&s, 4, 11).unwrap();
        let b = simulate_paths(&s, 4, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
        assert_eq!(a[0].sample_times, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(a[0].state(0), [1.0, 0.5]);
    }

    #[test]
    fn mass_guard_stops_paths() {
        let s = SdeSpec { mass_guard: Some(1.05), beta: 0.0, ..single(1.0, 0.0, 1.0, 0.01) };
        let paths = simulate_paths(&s, 20, 2).unwrap();
        assert!(paths.iter().any(|p| p.guard_time.is_some()));
        for p in paths.iter().filter(|p| p.guard_time.is_some()) {
            assert!(p.len() < 2);
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(single(1.0, 1.0, 1.0, 0.0).validate().is_err());
        assert!(single(1.0, 1.0, 1.0, 2.0).validate().is_err());
        let mut s = two_site();
        s.rho0 = DensityVector::new(vec![1.0]).unwrap();
        assert!(matches!(s.validate(), Err(Error::DimensionMismatch { .. })));
        let mut s = single(1.0, 1.0, 1.0, 0.01);
        s.k = 2;
        assert!(moment_oracle_linear(&s, 1.0).is_err());
    }

    #[test]
    fn oracle_initial_condition() {
        let (m, s) = moment_oracle_linear(&two_site(), 0.0).unwrap();
        assert_eq!(m, vec![1.0, 0.5]);
        assert_eq!(s, vec![vec![1.0, 0.5], vec![0.5, 0.25]]);
    }

    #[test]
    fn oracle_single_site_closed_form() {
        // m = ρe^{−βt}; E ζ² = ρ²e^{−2βt} + (αρ/β)(e^{−βt} − e^{−2βt})
        let (alpha, beta, rho) = (1.3, 0.7, 1.6);
        let s = single(alpha, beta, rho, 1e-2);
        for t in [0.5, 1.0, 2.0] {
            let (m, sec) = moment_oracle_linear(&s, t).unwrap();
            let e1 = (-beta * t).exp();
            let e2 = (-2.0 * beta * t).exp();
            assert!((m[0] - rho * e1).abs() < 1e-12);
            assert!((sec[0][0] - (rho * rho * e2 + alpha * rho / beta * (e1 - e2))).abs() < 1e-12);
        }
        let (m, sec) = moment_oracle_linear(&single(1.0, 1.0, 1.0, 1e-3), 1.0).unwrap();
        assert!((m[0] - 0.367879441171).abs() < 1e-11);
        assert!((sec[0][0] - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn oracle_two_site_mass_balance() {
        // Σ_x m(x) obeys M' = −βM since Δ moves mass without creating it
        let s = two_site();
        let (m, sec) = moment_oracle_linear(&s, 1.0).unwrap();
        assert!((m[0] + m[1] - 1.5 * (-1.0f64).exp()).abs() < 1e-12);
        assert!((sec[0][1] - sec[1][0]).abs() < 1e-14);
    }

    #[test]
    fn ensemble_mean_and_second_moment() {
        let s = single(1.0, 1.0, 1.0, 1e-3);
        let xs: Vec<f64> = terminal_values(&s, 20_000, 5).unwrap().into_iter().map(|v| v[0]).collect();
        let (m, sec) = moment_oracle_linear(&s, 1.0).unwrap();
        let (mean, se) = mean_se(&xs);
        assert!((mean - m[0]).abs() <= 4.0 * se + 0.01 * m[0], "{mean} vs {}", m[0]);
        let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let (m2, se2) = mean_se(&sq);
        assert!((m2 - sec[0][0]).abs() <= 4.0 * se2 + 0.01 * sec[0][0], "{m2} vs {}", sec[0][0]);
    }

    #[test]
    fn control_variate_has_the_plain_mean() {
        let s = single(1.0, 1.0, 1.0, 1e-2);
        let y = truncation_control_variate(&s, 20_000, 8).unwrap();
        let plain: Vec<f64> = terminal_values(&s, 20_000, 8).unwrap().into_iter().map(|v| v[0]).collect();
        let (my, sey) = mean_se(&y);
        let (mp, sep) = mean_se(&plain);
        assert!(sey < sep / 5.0, "{sey} vs {sep}");
        assert!((my - mp).abs() <= 4.0 * sep);
    }

    #[test]
    fn control_variate_is_exact_without_excursions() {
        // α = 0: no noise, never negative, so Y is the deterministic Euler value
        let s = single(0.0, 1.0, 1.0, 0.1);
        let y = truncation_control_variate(&s, 3, 0).unwrap();
        let p = simulate_paths(&s, 1, 0).unwrap();
        for v in y {
            assert!((v - p[0].terminal()[0]).abs() < 1e-14);
            assert!((v - 0.9f64.powi(10)).abs() < 1e-14);
        }
    }
}
