//! Domination coupling `(η, ξ)` and the hitting-probability bound
//! `P[τ_K < τ̂₀] ≤ C₀/K`.
//!
//! ξ is a passenger: it copies every birth and jump of η, and on an η-death
//! at `x` it either dies too (shared uniform above
//! `θ = (F⁻ − F⁺) / (2(F⁻ + F⁺))`) or gains a particle. η never sees ξ.
//!
//! The total mass `W` of ξ changes at rate `F⁺ − F⁻(1−θ) + F⁻θ`, which is
//! `F⁺(F⁺ − F⁻)/(F⁺ + F⁻) ≤ 0` per site. So `W` is a supermartingale, not a
//! symmetric walk in general. The bound only needs the former.

use rand::Rng;
use serde::Serialize;

use crate::ctmc::{self, Configuration, Engine, Event, EventKind, SimOptions, Termination};
use crate::ensemble::{mean_se, run_replicas};
use crate::error::{Error, Result};
use crate::graph_kernel::SiteKernel;
use crate::rate_synthesis::{birth_rate, death_rate, ModelParams, RateTable};
use crate::rng::{RngStream, StreamRng};

/// Uniform threshold below which ξ gains (instead of loses) a particle on
/// an η-death. Lies in `[0, 1/2]` because `F⁻ ≥ F⁺`.
pub fn death_threshold(birth: f64, death: f64) -> f64 {
    let total = birth + death;
    if total <= 0.0 {
        return 0.0;
    }
    (death - birth) / (2.0 * total)
}

/// Net rate of change of `W` contributed by one site.
pub fn passenger_drift(birth: f64, death: f64) -> f64 {
    let total = birth + death;
    if total <= 0.0 {
        return 0.0;
    }
    birth * (birth - death) / total
}

/// Applies the replication rule to ξ. `birth`/`death` are η's rates at the
/// site *before* the event; `u` is the shared uniform of this transition.
pub fn replicate(kind: EventKind, u: f64, birth: f64, death: f64, xi: &mut Configuration) -> Result<()> {
    match kind {
        EventKind::Death(x) if u <= death_threshold(birth, death) => {
            xi.0[x as usize] += 1;
            Ok(())
        }
        other => xi.apply(other),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledState {
    pub eta: Configuration,
    pub xi: Configuration,
    /// η-transitions so far; also the index of the next shared uniform.
    pub transitions: u64,
}

impl CoupledState {
    pub fn new(eta: Configuration) -> Self {
        Self { xi: eta.clone(), eta, transitions: 0 }
    }

    fn violation(&self) -> Option<usize> {
        self.eta.0.iter().zip(&self.xi.0).position(|(e, x)| x < e)
    }
}

/// One coupled transition from a frozen state. `uniforms` supplies the
/// shared stream and is advanced exactly once.
pub fn coupled_step<R: Rng + ?Sized, U: Rng + ?Sized>(
    state: &CoupledState,
    p: &ModelParams,
    kernel: &SiteKernel,
    rng: &mut R,
    uniforms: &mut U,
) -> Result<(Event, CoupledState)> {
    let (ev, eta) = ctmc::step(p, kernel, &state.eta, rng)?;
    let u: f64 = uniforms.random();
    let mut next = CoupledState { eta, xi: state.xi.clone(), transitions: state.transitions + 1 };
    let (b, d) = match ev.kind {
        EventKind::Death(x) => {
            let c = state.eta.0[x as usize];
            (birth_rate(p, c)?, death_rate(p, c)?)
        }
        _ => (0.0, 0.0),
    };
    replicate(ev.kind, u, b, d, &mut next.xi)?;
    if let Some(site) = next.violation() {
        return Err(Error::DominationViolated { site, transitions: next.transitions });
    }
    Ok((ev, next))
}

/// Incremental coupled simulator: η runs on the cached engine, the shared
/// uniforms come from substream 1 of the replica.
pub struct CoupledSimulator<'k> {
    engine: Engine<'k, RateTable>,
    xi: Configuration,
    uniforms: StreamRng,
}

impl<'k> CoupledSimulator<'k> {
    pub fn new(p: &ModelParams, kernel: &'k SiteKernel, eta0: &Configuration, stream: &RngStream) -> Result<Self> {
        p.validate()?;
        Ok(Self {
            engine: Engine::new(kernel, RateTable::new(*p), eta0, stream.rng())?,
            xi: eta0.clone(),
            uniforms: stream.substream(1),
        })
    }

    pub fn eta(&self) -> &[u64] {
        self.engine.counts()
    }

    pub fn xi(&self) -> &[u64] {
        &self.xi.0
    }

    pub fn transitions(&self) -> u64 {
        self.engine.event_count()
    }

    pub fn time(&self) -> f64 {
        self.engine.time()
    }

    /// Advances to the next η-event unless it falls after `horizon`.
    pub fn step_until(&mut self, horizon: f64) -> Result<Option<Event>> {
        let Some(t) = self.engine.next_time() else {
            return Ok(None);
        };
        if t > horizon {
            return Ok(None);
        }
        let ev = self.engine.fire(t)?;
        let u: f64 = self.uniforms.random();
        let (b, d) = match ev.kind {
            EventKind::Death(x) => {
                let before = self.engine.counts()[x as usize] + 1;
                ctmc::SiteReactions::rates(self.engine.reactions_mut(), before)?
            }
            _ => (0.0, 0.0),
        };
        replicate(ev.kind, u, b, d, &mut self.xi)?;
        Ok(Some(ev))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominationReport {
    pub violations: u64,
    /// Smallest `ξ(x) − η(x)` seen over all sites and events.
    pub min_margin: u64,
    /// `W − S` never decreased.
    pub gap_monotone: bool,
    pub transitions: u64,
    pub final_eta_mass: u64,
    pub final_xi_mass: u64,
}

/// Runs the coupling to `horizon`, checking `ξ ≥ η` after every event.
pub fn domination_run(
    p: &ModelParams,
    kernel: &SiteKernel,
    eta0: &Configuration,
    horizon: f64,
    stream: &RngStream,
) -> Result<DominationReport> {
    let mut sim = CoupledSimulator::new(p, kernel, eta0, stream)?;
    let mut report = DominationReport {
        violations: 0,
        min_margin: u64::MAX,
        gap_monotone: true,
        transitions: 0,
        final_eta_mass: 0,
        final_xi_mass: 0,
    };
    let mut gap = 0u64;
    let mut check = |sim: &CoupledSimulator, report: &mut DominationReport| {
        let mut w = 0u64;
        let mut s = 0u64;
        for (e, x) in sim.eta().iter().zip(sim.xi()) {
            match x.checked_sub(*e) {
                Some(m) => report.min_margin = report.min_margin.min(m),
                None => report.violations += 1,
            }
            w += x;
            s += e;
        }
        let g = w.saturating_sub(s);
        if g < gap {
            report.gap_monotone = false;
        }
        gap = g;
        (s, w)
    };
    let (mut s, mut w) = check(&sim, &mut report);
    while sim.step_until(horizon)?.is_some() {
        (s, w) = check(&sim, &mut report);
    }
    report.transitions = sim.transitions();
    report.final_eta_mass = s;
    report.final_xi_mass = w;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Mass exceeded K before reaching 0.
    Exceeded,
    HitZero,
    Guard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplicaOutcome {
    pub replica: u64,
    pub outcome: Outcome,
    pub stopping_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HittingEstimate {
    pub p_hat: f64,
    pub std_err: f64,
    pub replicas: u64,
    pub exceeded: u64,
    pub hit_zero: u64,
    /// Replicas stopped by the event guard; excluded from `p_hat`.
    pub guarded: u64,
    #[serde(skip)]
    pub outcomes: Vec<ReplicaOutcome>,
}

impl HittingEstimate {
    /// Binomial estimate from per-replica outcomes.
    pub fn from_outcomes(outcomes: Vec<ReplicaOutcome>) -> Result<Self> {
        let count = |o: Outcome| outcomes.iter().filter(|r| r.outcome == o).count() as u64;
        let (exceeded, hit_zero, guarded) = (count(Outcome::Exceeded), count(Outcome::HitZero), count(Outcome::Guard));
        let decided = exceeded + hit_zero;
        if decided == 0 {
            return Err(Error::EmptySample);
        }
        let xs: Vec<f64> = outcomes
            .iter()
            .filter(|r| r.outcome != Outcome::Guard)
            .map(|r| if r.outcome == Outcome::Exceeded { 1.0 } else { 0.0 })
            .collect();
        let (p_hat, std_err) = mean_se(&xs);
        Ok(Self { p_hat, std_err, replicas: outcomes.len() as u64, exceeded, hit_zero, guarded, outcomes })
    }

    /// `p_hat ≤ bound + z·SE`.
    pub fn within(&self, bound: f64, z: f64) -> bool {
        self.p_hat <= bound + z * self.std_err
    }

    /// `(replica, outcome, stopping time)` rows.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["replica", "outcome", "stopping_time"])?;
        for r in &self.outcomes {
            let outcome = match r.outcome {
                Outcome::Exceeded => "exceeded",
                Outcome::HitZero => "hit_zero",
                Outcome::Guard => "guard",
            };
            w.write_record([r.replica.to_string(), outcome.to_string(), format!("{:.11e}", r.stopping_time)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One replica of the particle system run until mass exceeds `k_cap` or
/// hits zero.
pub fn hitting_outcome(
    p: &ModelParams,
    kernel: &SiteKernel,
    eta0: &Configuration,
    k_cap: f64,
    max_events: u64,
    replica: u64,
    stream: &RngStream,
) -> Result<ReplicaOutcome> {
    let opts = SimOptions { mass_cap: Some(k_cap), max_events, ..SimOptions::new(f64::MAX, f64::MAX) };
    let t = ctmc::simulate(p, kernel, eta0, &opts, stream)?;
    let (outcome, stopping_time) = match t.termination {
        Termination::MassCap => (Outcome::Exceeded, t.first_passage.above_cap.unwrap_or(t.end_time)),
        Termination::AbsorbedAtZero => (Outcome::HitZero, t.first_passage.hit_zero.unwrap_or(t.end_time)),
        Termination::EventGuard | Termination::Horizon => (Outcome::Guard, t.end_time),
    };
    Ok(ReplicaOutcome { replica, outcome, stopping_time })
}

/// Monte Carlo estimate of `P[τ_K < τ̂₀]` for the particle system.
pub fn hitting_bound_estimate(
    p: &ModelParams,
    kernel: &SiteKernel,
    eta0: &Configuration,
    k_cap: f64,
    replicas: u64,
    max_events: u64,
    seed: u64,
) -> Result<HittingEstimate> {
    let c0 = eta0.total() as f64 / p.n as f64;
    if !(k_cap >= c0) {
        return Err(Error::InvalidParameter(format!("need C0 = {c0} <= K = {k_cap}")));
    }
    let outcomes = run_replicas(seed, replicas, |r, s| hitting_outcome(p, kernel, eta0, k_cap, max_events, r, &s))?;
    HittingEstimate::from_outcomes(outcomes)
}

/// The plain symmetric `±1/n` walk from `s0`, stopped when it exceeds `k_cap`
/// or reaches 0. Stopping time is in steps/n² (diffusive time).
pub fn walk_outcome(n: u64, s0: f64, k_cap: f64, max_steps: u64, replica: u64, stream: &RngStream) -> ReplicaOutcome {
    let mut rng = stream.rng();
    let mut pos = (s0 * n as f64).round() as i64;
    let mut steps = 0u64;
    let outcome = loop {
        if pos == 0 {
            break Outcome::HitZero;
        }
        if pos as f64 / n as f64 > k_cap {
            break Outcome::Exceeded;
        }
        if steps >= max_steps {
            break Outcome::Guard;
        }
        pos += if rng.random::<bool>() { 1 } else { -1 };
        steps += 1;
    };
    ReplicaOutcome { replica, outcome, stopping_time: steps as f64 / (n * n) as f64 }
}

/// Estimator applied to the walk, whose answer is known exactly.
pub fn walk_hitting_estimate(n: u64, s0: f64, k_cap: f64, replicas: u64, seed: u64) -> Result<HittingEstimate> {
    let outcomes = run_replicas(seed, replicas, |r, s| Ok(walk_outcome(n, s0, k_cap, u64::MAX, r, &s)))?;
    HittingEstimate::from_outcomes(outcomes)
}

/// First-step analysis: from `i` steps up, exceeding level `nK` (so reaching
/// `⌊nK⌋ + 1`) before 0 has probability `i / (⌊nK⌋ + 1)`.
pub fn walk_exact(n: u64, s0: f64, k_cap: f64) -> f64 {
    let i = (s0 * n as f64).round();
    let top = (k_cap * n as f64).floor() + 1.0;
    i / top
}
