//! Statistical checks of the martingale characterization and of the
//! convergence `ζⁿ → ζ*`.
//!
//! Residuals replay a trajectory's event log. Between events the path is
//! constant, so compensators are integrated exactly rather than on the
//! sample grid.

use serde::Serialize;

use crate::ctmc::{self, Configuration, EventKind, SimOptions, Termination, Trajectory};
use crate::ensemble::{child_seed, mean_se, run_replicas};
use crate::error::{Error, Result};
use crate::graph_kernel::{DensityVector, SiteKernel};
use crate::rate_synthesis::{drift_fn, error_term, variance_gn, ModelParams};
use crate::sde::{self, SdeSpec};

pub const DEFAULT_Z: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub name: String,
    pub statistic: f64,
    pub std_err: f64,
    pub z: f64,
    pub threshold: f64,
    pub pass: bool,
    pub replicas: u64,
    /// Wall time; kept out of JSON so that reports are reproducible byte for
    /// byte.
    #[serde(skip)]
    pub runtime_secs: Option<f64>,
}

impl TestReport {
    /// z-test of `statistic` (a difference that should be 0) against its
    /// standard error. A zero standard error means exact comparison.
    pub fn z_test(name: impl Into<String>, statistic: f64, std_err: f64, replicas: u64, threshold: f64) -> Self {
        let z = if std_err > 0.0 {
            statistic / std_err
        } else if statistic.abs() <= 1e-12 {
            0.0
        } else {
            f64::INFINITY.copysign(statistic)
        };
        Self {
            name: name.into(),
            statistic,
            std_err,
            z,
            threshold,
            pass: z.abs() <= threshold,
            replicas,
            runtime_secs: None,
        }
    }

    pub fn timed(mut self, secs: f64) -> Self {
        self.runtime_secs = Some(secs);
        self
    }

    pub fn table_row(&self) -> String {
        let time = self.runtime_secs.map(|s| format!("{s:.2}s")).unwrap_or_default();
        format!(
            "{:<32} stat {:>12.4e}  se {:>10.3e}  z {:>7.2}  {}  (replicas {}) {}",
            self.name,
            self.statistic,
            self.std_err,
            self.z,
            if self.pass { "PASS" } else { "FAIL" },
            self.replicas,
            time
        )
    }
}

/// `M_t` of one replica on the trajectory's sample grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleSeries {
    pub sample_times: Vec<f64>,
    pub values: Vec<f64>,
    /// `[M]_t = Σ (ΔM)²` at the same times.
    pub quadratic_variation: Vec<f64>,
    /// `∫₀ᵗ Qₙf(η_s) ds` at the same times.
    pub compensator_qv: Vec<f64>,
}

impl MartingaleSeries {
    pub fn terminal(&self) -> f64 {
        *self.values.last().unwrap_or(&0.0)
    }
}

/// `bⁿ` and `aⁿ` at a configuration, without allocating.
struct CoeffEval<'a> {
    p: &'a ModelParams,
    kernel: &'a SiteKernel,
    out: Vec<f64>,
    n: f64,
}

impl<'a> CoeffEval<'a> {
    fn new(p: &'a ModelParams, kernel: &'a SiteKernel) -> Self {
        let out = (0..kernel.site_count()).map(|x| kernel.out_rate(x)).collect();
        Self { p, kernel, out, n: p.n as f64 }
    }

    fn z(&self, counts: &[u64], x: usize) -> f64 {
        counts[x] as f64 / self.n
    }

    fn drift(&self, counts: &[u64], x: usize) -> Result<f64> {
        let mut lap = -self.out[x] * self.z(counts, x);
        for y in 0..counts.len() {
            if y != x {
                lap += self.kernel.rate(y, x) * self.z(counts, y);
            }
        }
        Ok(lap + drift_fn(self.p, self.z(counts, x))?)
    }

    fn cov(&self, counts: &[u64], x: usize, y: usize) -> Result<f64> {
        if x != y {
            let flux = self.kernel.rate(x, y) * self.z(counts, x) + self.kernel.rate(y, x) * self.z(counts, y);
            return Ok(-flux / self.n);
        }
        let mut flux = 0.0;
        for w in 0..counts.len() {
            if w != x {
                flux += self.kernel.rate(x, w) * self.z(counts, x) + self.kernel.rate(w, x) * self.z(counts, w);
            }
        }
        Ok(flux / self.n + variance_gn(self.p, self.z(counts, x))?)
    }
}

/// Replays `traj` and returns `f(η_t) − f(η_0) − ∫₀ᵗ drift(η_s) ds` together
/// with the jump quadratic variation and `∫ qv_rate(η_s) ds`.
fn replay(
    traj: &Trajectory,
    f: impl Fn(&[u64]) -> f64,
    mut drift: impl FnMut(&[u64]) -> Result<f64>,
    mut qv_rate: impl FnMut(&[u64]) -> Result<f64>,
) -> Result<MartingaleSeries> {
    let events = traj.events.as_ref().ok_or(Error::MissingEventLog)?;
    let mut eta = traj.initial.clone();
    let f0 = f(&eta.0);
    let mut fcur = f0;
    let mut comp = 0.0;
    let mut qv = 0.0;
    let mut cqv = 0.0;
    let mut t = 0.0;
    let mut b = drift(&eta.0)?;
    let mut q = qv_rate(&eta.0)?;
    let mut next = events.iter().peekable();
    let mut series = MartingaleSeries {
        sample_times: traj.sample_times.clone(),
        values: Vec::with_capacity(traj.len()),
        quadratic_variation: Vec::with_capacity(traj.len()),
        compensator_qv: Vec::with_capacity(traj.len()),
    };
    for &g in &traj.sample_times {
        while let Some(ev) = next.next_if(|e| e.time <= g) {
            comp += b * (ev.time - t);
            cqv += q * (ev.time - t);
            t = ev.time;
            eta.apply(ev.kind)?;
            let fnew = f(&eta.0);
            qv += (fnew - fcur).powi(2);
            fcur = fnew;
            b = drift(&eta.0)?;
            q = qv_rate(&eta.0)?;
        }
        comp += b * (g - t);
        cqv += q * (g - t);
        t = g;
        series.values.push(fcur - f0 - comp);
        series.quadratic_variation.push(qv);
        series.compensator_qv.push(cqv);
    }
    Ok(series)
}

fn check_scale(traj: &Trajectory, p: &ModelParams, kernel: &SiteKernel, sites: &[usize]) -> Result<()> {
    if traj.scale != p.n as f64 {
        return Err(Error::InvalidParameter(format!("trajectory scale {} does not match n = {}", traj.scale, p.n)));
    }
    if traj.sites != kernel.site_count() {
        return Err(Error::DimensionMismatch { expected: kernel.site_count(), actual: traj.sites });
    }
    if let Some(&x) = sites.iter().find(|&&x| x >= traj.sites) {
        return Err(Error::InvalidParameter(format!("site {x} out of range")));
    }
    Ok(())
}

/// Dynkin martingale of the coordinate `ζ(x)`.
pub fn dynkin_residual(traj: &Trajectory, p: &ModelParams, kernel: &SiteKernel, x: usize) -> Result<MartingaleSeries> {
    check_scale(traj, p, kernel, &[x])?;
    let c = CoeffEval::new(p, kernel);
    replay(traj, |eta| c.z(eta, x), |eta| c.drift(eta, x), |eta| c.cov(eta, x, x))
}

/// Dynkin martingale of the product `ζ(x)ζ(y)` with compensator integrand
/// `bⁿ_x ζ(y) + bⁿ_y ζ(x) + aⁿ_{xy}`.
pub fn pair_residual(
    traj: &Trajectory,
    p: &ModelParams,
    kernel: &SiteKernel,
    x: usize,
    y: usize,
) -> Result<MartingaleSeries> {
    check_scale(traj, p, kernel, &[x, y])?;
    let c = CoeffEval::new(p, kernel);
    replay(
        traj,
        |eta| c.z(eta, x) * c.z(eta, y),
        |eta| Ok(c.drift(eta, x)? * c.z(eta, y) + c.drift(eta, y)? * c.z(eta, x) + c.cov(eta, x, y)?),
        |_| Ok(0.0),
    )
}

/// Paired z-test of `[M]_T` against `∫₀ᵀ aⁿ_xx ds` over an ensemble.
pub fn qv_test(series: &[MartingaleSeries], threshold: f64) -> Result<TestReport> {
    if series.is_empty() {
        return Err(Error::EmptySample);
    }
    let diffs: Vec<f64> = series
        .iter()
        .map(|s| s.quadratic_variation.last().unwrap_or(&0.0) - s.compensator_qv.last().unwrap_or(&0.0))
        .collect();
    let (m, se) = mean_se(&diffs);
    Ok(TestReport::z_test("quadratic variation", m, se, series.len() as u64, threshold))
}

/// Mean of terminal martingale values against 0.
pub fn mean_zero_test(name: &str, terminal: &[f64], threshold: f64) -> Result<TestReport> {
    if terminal.is_empty() {
        return Err(Error::EmptySample);
    }
    let (m, se) = mean_se(terminal);
    Ok(TestReport::z_test(name, m, se, terminal.len() as u64, threshold))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentComparison {
    pub mean: TestReport,
    pub second_moment: Option<TestReport>,
}

/// z-scores of the sample mean (and second moment) against oracle values.
pub fn moment_compare(samples: &[f64], mean: f64, second: Option<f64>, threshold: f64) -> Result<MomentComparison> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    if samples.len() < 100 {
        return Err(Error::InvalidParameter(format!("need at least 100 samples, got {}", samples.len())));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("samples"));
    }
    let (m, se) = mean_se(samples);
    let reps = samples.len() as u64;
    let mean_report = TestReport::z_test("mean", m - mean, se, reps, threshold);
    let second_moment = second.map(|target| {
        let sq: Vec<f64> = samples.iter().map(|s| s * s).collect();
        let (m2, se2) = mean_se(&sq);
        TestReport::z_test("second moment", m2 - target, se2, reps, threshold)
    });
    Ok(MomentComparison { mean: mean_report, second_moment })
}

/// Two-sample z-test of means (independent samples).
pub fn two_sample_mean(name: &str, a: &[f64], b: &[f64], threshold: f64) -> Result<TestReport> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let (ma, sa) = mean_se(a);
    let (mb, sb) = mean_se(b);
    Ok(TestReport::z_test(name, ma - mb, (sa * sa + sb * sb).sqrt(), a.len().min(b.len()) as u64, threshold))
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`. Ties (and
/// atoms, e.g. at 0) are stepped over together.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("KS sample"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let v = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] == v {
            i += 1;
        }
        while j < b.len() && b[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Summary of one martingale-suite run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleSuite {
    pub reports: Vec<TestReport>,
    pub guard_hits: u64,
}

impl MartingaleSuite {
    pub fn pass(&self) -> bool {
        self.guard_hits == 0 && self.reports.iter().all(|r| r.pass)
    }
}

/// Dynkin mean, pair mean and quadratic-variation tests on one model,
/// streamed replica by replica (no event log is kept beyond its replica).
pub fn martingale_suite(
    p: &ModelParams,
    kernel: &SiteKernel,
    eta0: &Configuration,
    horizon: f64,
    replicas: u64,
    seed: u64,
) -> Result<MartingaleSuite> {
    let v = kernel.site_count();
    let (x, y) = (0, if v > 1 { 1 } else { 0 });
    let opts = SimOptions::new(horizon, horizon).with_events();
    let per_replica = run_replicas(seed, replicas, |_, s| {
        let t = ctmc::simulate(p, kernel, eta0, &opts, &s)?;
        let single = dynkin_residual(&t, p, kernel, x)?;
        let pair = pair_residual(&t, p, kernel, x, y)?;
        Ok((single, pair.terminal(), t.guard_hit()))
    })?;
    let guard_hits = per_replica.iter().filter(|r| r.2).count() as u64;
    let m_single: Vec<f64> = per_replica.iter().map(|r| r.0.terminal()).collect();
    let m_pair: Vec<f64> = per_replica.iter().map(|r| r.1).collect();
    let series: Vec<MartingaleSeries> = per_replica.into_iter().map(|r| r.0).collect();
    Ok(MartingaleSuite {
        reports: vec![
            mean_zero_test(&format!("dynkin M_T site {x}"), &m_single, DEFAULT_Z)?,
            mean_zero_test(&format!("pair M_T sites ({x},{y})"), &m_pair, DEFAULT_Z)?,
            qv_test(&series, DEFAULT_Z)?,
        ],
        guard_hits,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: u64,
    pub replicas: u64,
    pub mean_z: f64,
    pub second_moment_z: f64,
    pub ks: f64,
    /// `max |error_n(c/n)|` over counts `0..=peak` visited at this `n`.
    pub max_error_term: f64,
    pub peak_count: u64,
    pub guard_hits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub sde_paths: u64,
    pub sde_dt: f64,
    /// "oracle" (closed moment ODE, k = ℓ = 1) or "sde" (Monte Carlo means).
    pub moment_reference: &'static str,
}

impl SweepTable {
    /// KS noise scale `√(1/m + 1/s)` of row `i`.
    pub fn ks_noise(&self, i: usize) -> f64 {
        (1.0 / self.rows[i].replicas as f64 + 1.0 / self.sde_paths as f64).sqrt()
    }

    /// Each KS value is at most the previous one plus `slack` noise scales.
    pub fn ks_nonincreasing(&self, slack: f64) -> bool {
        (1..self.rows.len()).all(|i| self.rows[i].ks <= self.rows[i - 1].ks + slack * self.ks_noise(i))
    }
}

/// Terminal site-0 densities of the particle system at several `n` against
/// the limit SDE at `T = sde.horizon`.
pub fn convergence_sweep(
    p: &ModelParams,
    kernel: &SiteKernel,
    rho0: &DensityVector,
    n_list: &[u64],
    sde_spec: &SdeSpec,
    replicas: u64,
    sde_paths: u64,
    seed: u64,
) -> Result<SweepTable> {
    let horizon = sde_spec.horizon;
    let sde_terminal: Vec<f64> =
        sde::terminal_values(sde_spec, sde_paths, child_seed(seed, u64::MAX))?.into_iter().map(|v| v[0]).collect();
    let linear = p.k == 1 && p.ell == 1;
    let oracle = if linear {
        let (m, s) = sde::moment_oracle_linear(sde_spec, horizon)?;
        Some((m[0], s[0][0]))
    } else {
        None
    };
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let pn = ModelParams { n, ..*p };
        pn.validate()?;
        let eta0 = ctmc::initial_configuration(rho0, n);
        let opts = SimOptions::new(horizon, horizon);
        let runs = run_replicas(child_seed(seed, n), replicas, |_, s| {
            let t = ctmc::simulate(&pn, kernel, &eta0, &opts, &s)?;
            Ok((t.terminal()[0], t.peak_count, t.termination == Termination::EventGuard))
        })?;
        let xs: Vec<f64> = runs.iter().map(|r| r.0).collect();
        let peak = runs.iter().map(|r| r.1).max().unwrap_or(0);
        let guard_hits = runs.iter().filter(|r| r.2).count() as u64;
        let (mean_z, second_moment_z) = match oracle {
            Some((m, s)) => {
                let c = moment_compare(&xs, m, Some(s), DEFAULT_Z)?;
                (c.mean.z, c.second_moment.map_or(0.0, |r| r.z))
            }
            None => {
                let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
                let sde_sq: Vec<f64> = sde_terminal.iter().map(|x| x * x).collect();
                (
                    two_sample_mean("mean", &xs, &sde_terminal, DEFAULT_Z)?.z,
                    two_sample_mean("second moment", &sq, &sde_sq, DEFAULT_Z)?.z,
                )
            }
        };
        let mut max_error_term = 0.0f64;
        for c in 0..=peak {
            max_error_term = max_error_term.max(error_term(&pn, pn.density(c))?.abs());
        }
        rows.push(SweepRow {
            n,
            replicas,
            mean_z,
            second_moment_z,
            ks: ks_distance(&xs, &sde_terminal)?,
            max_error_term,
            peak_count: peak,
            guard_hits,
        });
    }
    Ok(SweepTable {
        rows,
        sde_paths,
        sde_dt: sde_spec.dt,
        moment_reference: if linear { "oracle" } else { "sde" },
    })
}

/// Sample mean of terminal particle densities over replicas, per site.
pub fn terminal_means(
    p: &ModelParams,
    kernel: &SiteKernel,
    eta0: &Configuration,
    horizon: f64,
    replicas: u64,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let opts = SimOptions::new(horizon, horizon);
    let terminals = run_replicas(seed, replicas, |_, s| Ok(ctmc::simulate(p, kernel, eta0, &opts, &s)?.terminal().to_vec()))?;
    Ok((0..kernel.site_count())
        .map(|x| mean_se(&terminals.iter().map(|t| t[x]).collect::<Vec<_>>()))
        .collect())
}

/// True when the event kind changes site `x`.
pub fn touches(kind: EventKind, x: usize) -> bool {
    match kind {
        EventKind::Birth(s) | EventKind::Death(s) => s as usize == x,
        EventKind::Jump { from, to } => from as usize == x || to as usize == x,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rate_synthesis::discrete_coefficients;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    fn lin(n: u64) -> ModelParams {
        ModelParams::new(1.0, 1.0, 1, 1, n).unwrap()
    }

    fn run(p: &ModelParams, k: &SiteKernel, eta0: Vec<u64>, seed: u64) -> Trajectory {
        ctmc::simulate(p, k, &Configuration(eta0), &SimOptions::new(1.0, 0.1).with_events(), &RngStream::new(seed, 0)).unwrap()
    }

    #[test]
    fn zero_trajectory_gives_zero_series() {
        let k = SiteKernel::complete(2, 1.0).unwrap();
        let t = run(&lin(10), &k, vec![0, 0], 0);
        let m = dynkin_residual(&t, &lin(10), &k, 1).unwrap();
        assert!(m.values.iter().all(|v| *v == 0.0));
        let pr = pair_residual(&t, &lin(10), &k, 0, 1).unwrap();
        assert!(pr.values.iter().all(|v| *v == 0.0));
        let q = qv_test(&[m.clone(), m], 4.0).unwrap();
        assert_eq!((q.statistic, q.pass), (0.0, true));
    }

    #[test]
    fn residual_starts_at_zero() {
        let p = ModelParams::new(1.0, 0.5, 2, 1, 20).unwrap();
        let k = SiteKernel::complete(3, 0.7).unwrap();
        for seed in 0..10 {
            let t = run(&p, &k, vec![20, 5, 13], seed);
            for x in 0..3 {
                assert_eq!(dynkin_residual(&t, &p, &k, x).unwrap().values[0], 0.0);
            }
            assert_eq!(pair_residual(&t, &p, &k, 0, 2).unwrap().values[0], 0.0);
        }
    }

    #[test]
    fn missing_log_is_an_error() {
        let t = ctmc::simulate(&lin(10), &SiteKernel::single_site(), &Configuration(vec![10]), &SimOptions::new(1.0, 0.5), &RngStream::new(0, 0))
            .unwrap();
        assert_eq!(dynkin_residual(&t, &lin(10), &SiteKernel::single_site(), 0).unwrap_err(), Error::MissingEventLog);
    }

    #[test]
    fn mismatched_model_rejected() {
        let t = run(&lin(10), &SiteKernel::single_site(), vec![10], 0);
        assert!(dynkin_residual(&t, &lin(20), &SiteKernel::single_site(), 0).is_err());
        assert!(dynkin_residual(&t, &lin(10), &SiteKernel::single_site(), 1).is_err());
    }

    #[test]
    fn residual_by_hand_on_a_short_log() {
        // single site, n = 10, one birth at 0.25 then one death at 0.5
        let p = lin(10);
        let k = SiteKernel::single_site();
        let mut t = ctmc::simulate(&p, &k, &Configuration(vec![10]), &SimOptions::new(1.0, 0.5), &RngStream::new(0, 0)).unwrap();
        t.initial = Configuration(vec![10]);
        t.sample_times = vec![0.0, 0.5, 1.0];
        t.events = Some(vec![
            ctmc::Event { time: 0.25, kind: EventKind::Birth(0) },
            ctmc::Event { time: 0.5, kind: EventKind::Death(0) },
        ]);
        let m = dynkin_residual(&t, &p, &k, 0).unwrap();
        // drift is −ζ here (n > β/α): ∫ = 0.25·1 + 0.25·1.1 (+0.5·1 on the last leg)
        let at_half = 0.0 - (-(0.25 * 1.0 + 0.25 * 1.1));
        assert!((m.values[1] - at_half).abs() < 1e-12);
        assert!((m.values[2] - (at_half + 0.5)).abs() < 1e-12);
        assert!((m.quadratic_variation[2] - 2.0 / 100.0).abs() < 1e-15);
        // a_xx = αζ: 0.25·1 + 0.25·1.1 + 0.5·1
        assert!((m.compensator_qv[2] - 1.025).abs() < 1e-12);
    }

    #[test]
    fn pair_on_diagonal_uses_the_q_identity() {
        // x = y: integrand 2ζ b + a_xx, checked against the coefficient module
        let p = ModelParams::new(1.5, 0.5, 2, 1, 8).unwrap();
        let k = SiteKernel::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.0]]).unwrap();
        let c = CoeffEval::new(&p, &k);
        let eta = [9u64, 4];
        let coeffs = discrete_coefficients(&p, &k, &DensityVector::new(vec![9.0 / 8.0, 0.5]).unwrap()).unwrap();
        let want = 2.0 * (9.0 / 8.0) * coeffs.drift[0] + coeffs.covariation[0][0];
        let got = 2.0 * c.z(&eta, 0) * c.drift(&eta, 0).unwrap() + c.cov(&eta, 0, 0).unwrap();
        assert!((got - want).abs() < 1e-12 * want.abs().max(1.0));
    }

    proptest! {
        #[test]
        fn evaluator_matches_discrete_coefficients(
            alpha in 0.1f64..3.0, beta in 0.0f64..3.0, k in 1u32..4, ell in 1u32..4, n in 1u64..30,
            rates in proptest::collection::vec(0.0f64..3.0, 9), counts in proptest::collection::vec(0u64..60, 3),
        ) {
            let p = ModelParams::new(alpha, beta, k, ell, n).unwrap();
            let rows: Vec<Vec<f64>> = rates.chunks(3).map(|c| c.to_vec()).collect();
            let kern = SiteKernel::from_rows(&rows).unwrap();
            let z = DensityVector::new(counts.iter().map(|c| *c as f64 / n as f64).collect()).unwrap();
            let want = discrete_coefficients(&p, &kern, &z).unwrap();
            let c = CoeffEval::new(&p, &kern);
            for x in 0..3 {
                let d = c.drift(&counts, x).unwrap();
                prop_assert!((d - want.drift[x]).abs() <= 1e-12 * want.drift[x].abs().max(1.0));
                for y in 0..3 {
                    let a = c.cov(&counts, x, y).unwrap();
                    prop_assert!((a - want.covariation[x][y]).abs() <= 1e-12 * want.covariation[x][y].abs().max(1.0));
                }
            }
        }

        #[test]
        fn ks_symmetric_and_bounded(a in proptest::collection::vec(0.0f64..5.0, 1..60), b in proptest::collection::vec(0.0f64..5.0, 1..60)) {
            let d1 = ks_distance(&a, &b).unwrap();
            let d2 = ks_distance(&b, &a).unwrap();
            prop_assert_eq!(d1, d2);
            prop_assert!((0.0..=1.0).contains(&d1));
            prop_assert_eq!(ks_distance(&a, &a).unwrap(), 0.0);
        }
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_distance(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(ks_distance(&[0.0, 1.0], &[5.0, 6.0]).unwrap(), 1.0);
        // atoms: both have 50% at 0
        assert_eq!(ks_distance(&[0.0, 0.0, 1.0, 2.0], &[0.0, 0.0, 1.5, 2.5]).unwrap(), 0.25);
        assert!(ks_distance(&[], &[1.0]).is_err());
    }

    #[test]
    fn ks_against_brute_force() {
        // sup over all sample points of |F_a(v) − F_b(v)|
        let a = [0.0, 0.0, 0.3, 0.3, 0.9, 1.2, 1.2, 2.0];
        let b = [0.0, 0.3, 0.5, 0.9, 0.9, 0.9, 3.0];
        let cdf = |s: &[f64], v: f64| s.iter().filter(|x| **x <= v).count() as f64 / s.len() as f64;
        let brute = a.iter().chain(&b).map(|v| (cdf(&a, *v) - cdf(&b, *v)).abs()).fold(0.0, f64::max);
        assert!((ks_distance(&a, &b).unwrap() - brute).abs() < 1e-15);
    }

    #[test]
    fn moment_compare_calibration() {
        let xs: Vec<f64> = (0..1000).map(|i| (i % 10) as f64).collect();
        let (m, se) = mean_se(&xs);
        assert!(moment_compare(&xs, m, None, 4.0).unwrap().mean.pass);
        let off = moment_compare(&xs, m + 10.0 * se, None, 4.0).unwrap();
        assert!(!off.mean.pass);
        assert!((off.mean.z + 10.0).abs() < 1e-9);
        let flat = vec![0.5; 200];
        let c = moment_compare(&flat, 0.5, Some(0.25), 4.0).unwrap();
        assert_eq!(c.mean.z, 0.0);
        assert!(c.second_moment.unwrap().pass);
        assert!(!moment_compare(&flat, 0.6, None, 4.0).unwrap().mean.pass);
        assert!(moment_compare(&flat[..50], 0.5, None, 4.0).is_err());
    }

    #[test]
    fn kernel_only_model_gives_mean_zero_martingale() {
        // births and deaths frozen out: β = 0 and a count-independent table is
        // not available, so use n = 1 with α tiny on a jump-dominated kernel
        let p = ModelParams::new(1e-9, 0.0, 1, 1, 10).unwrap();
        let k = SiteKernel::from_rows(&[vec![0.0, 3.0], vec![1.0, 0.0]]).unwrap();
        let suite = martingale_suite(&p, &k, &Configuration(vec![10, 0]), 1.0, 4000, 3).unwrap();
        assert!(suite.pass(), "{:?}", suite.reports);
    }

    #[test]
    fn feller_suite_passes_small() {
        let suite = martingale_suite(&lin(50), &SiteKernel::single_site(), &Configuration(vec![50]), 1.0, 3000, 1).unwrap();
        assert!(suite.pass(), "{:?}", suite.reports);
    }

    #[test]
    fn qv_compensator_mean_near_moment_formula() {
        // E ∫ αζ ds = α(1 − e^{−β})/β ρ0 for k = ℓ = 1
        let p = lin(50);
        let reps = 3000;
        let s = run_replicas(9, reps, |_, st| {
            let t = ctmc::simulate(&p, &SiteKernel::single_site(), &Configuration(vec![50]), &SimOptions::new(1.0, 1.0).with_events(), &st)?;
            dynkin_residual(&t, &p, &SiteKernel::single_site(), 0)
        })
        .unwrap();
        let comp: Vec<f64> = s.iter().map(|m| *m.compensator_qv.last().unwrap()).collect();
        let (m, se) = mean_se(&comp);
        let exact = 1.0 - (-1.0f64).exp();
        assert!((m - exact).abs() <= 4.0 * se, "{m} vs {exact}");
    }

    #[test]
    fn degenerate_sweep_matches_direct_tests() {
        let p = lin(100);
        let k = SiteKernel::single_site();
        let rho0 = DensityVector::new(vec![1.0]).unwrap();
        let spec = crate::presets::Preset::named("feller").unwrap().sde(1e-2);
        let table = convergence_sweep(&p, &k, &rho0, &[100], &spec, 500, 2000, 4).unwrap();
        assert_eq!(table.rows.len(), 1);
        let opts = SimOptions::new(1.0, 1.0);
        let xs: Vec<f64> = run_replicas(child_seed(4, 100), 500, |_, s| {
            Ok(ctmc::simulate(&p, &k, &Configuration(vec![100]), &opts, &s)?.terminal()[0])
        })
        .unwrap();
        let sde_x: Vec<f64> = sde::terminal_values(&spec, 2000, child_seed(4, u64::MAX)).unwrap().into_iter().map(|v| v[0]).collect();
        let (m, s) = sde::moment_oracle_linear(&spec, 1.0).unwrap();
        let mc = moment_compare(&xs, m[0], Some(s[0][0]), 4.0).unwrap();
        assert_eq!(table.rows[0].ks, ks_distance(&xs, &sde_x).unwrap());
        assert_eq!(table.rows[0].mean_z, mc.mean.z);
        assert_eq!(table.rows[0].max_error_term, 0.0);
    }

    #[test]
    fn report_json_has_no_runtime() {
        let r = TestReport::z_test("x", 1.0, 0.5, 10, 4.0).timed(3.2);
        let s = serde_json::to_string(&r).unwrap();
        assert!(!s.contains("runtime"));
        assert_eq!(r.z, 2.0);
        assert!(r.pass);
        assert!(r.table_row().contains("PASS"));
    }

    #[test]
    fn touches_sites() {
        assert!(touches(EventKind::Jump { from: 0, to: 2 }, 2));
        assert!(!touches(EventKind::Birth(1), 0));
    }
}
