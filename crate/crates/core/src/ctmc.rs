//! Exact event-driven simulation of the particle system.
//!
//! Direct method: one exponential waiting time at the total rate, then one
//! categorical pick proportional to the individual rates. Per-site rate
//! totals are cached and only the sites touched by an event are refreshed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_kernel::{DensityVector, SiteKernel};
use crate::rate_synthesis::{ModelParams, RateTable};
use crate::rng::{exponential, RngStream, StreamRng};

/// Particle counts per site.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Configuration(pub Vec<u64>);

impl Configuration {
    pub fn zeros(sites: usize) -> Self {
        Self(vec![0; sites])
    }

    pub fn counts(&self) -> &[u64] {
        &self.0
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn densities(&self, scale: f64) -> Vec<f64> {
        self.0.iter().map(|c| *c as f64 / scale).collect()
    }

    /// Applies one transition. Fails (instead of wrapping) if the source
    /// site is empty.
    pub fn apply(&mut self, kind: EventKind) -> Result<()> {
        let take = |c: &mut u64, site: usize| -> Result<()> {
            *c = c
                .checked_sub(1)
                .ok_or_else(|| Error::InvalidParameter(format!("event removes a particle from empty site {site}")))?;
            Ok(())
        };
        match kind {
            EventKind::Birth(x) => self.0[x as usize] += 1,
            EventKind::Death(x) => take(&mut self.0[x as usize], x as usize)?,
            EventKind::Jump { from, to } => {
                take(&mut self.0[from as usize], from as usize)?;
                self.0[to as usize] += 1;
            }
        }
        Ok(())
    }
}

/// `η⁰(x) = ⌊n ρ₀(x)⌋`, so `|η⁰(x)/n − ρ₀(x)| < 1/n`.
pub fn initial_configuration(rho0: &DensityVector, n: u64) -> Configuration {
    Configuration(rho0.as_slice().iter().map(|r| (r * n as f64).floor() as u64).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Jump { from: u32, to: u32 },
    Birth(u32),
    Death(u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
}

/// Per-site birth and death intensities as functions of the site count.
pub trait SiteReactions {
    fn rates(&mut self, count: u64) -> Result<(f64, f64)>;
}

impl SiteReactions for RateTable {
    #[inline]
    fn rates(&mut self, count: u64) -> Result<(f64, f64)> {
        self.get(count)
    }
}

/// All transitions out of `eta` with their rates: jumps `η(x)p(x,y)`, then
/// `F⁺(η(x))` and `F⁻(η(x))` per site. Zero-rate entries are included.
pub fn event_rates(p: &ModelParams, kernel: &SiteKernel, eta: &Configuration) -> Result<Vec<(EventKind, f64)>> {
    let v = kernel.site_count();
    if eta.0.len() != v {
        return Err(Error::DimensionMismatch { expected: v, actual: eta.0.len() });
    }
    let mut table = RateTable::new(*p);
    let mut out = Vec::with_capacity(v * v + 2 * v);
    for x in 0..v {
        for y in 0..v {
            if x != y {
                out.push((EventKind::Jump { from: x as u32, to: y as u32 }, eta.0[x] as f64 * kernel.rate(x, y)));
            }
        }
    }
    for x in 0..v {
        let (b, d) = table.get(eta.0[x])?;
        out.push((EventKind::Birth(x as u32), b));
        out.push((EventKind::Death(x as u32), d));
    }
    let total: f64 = out.iter().map(|(_, r)| r).sum();
    if !total.is_finite() {
        return Err(Error::NonFinite("total event rate"));
    }
    Ok(out)
}

/// One transition from a frozen state. The returned event time is the
/// waiting time.
pub fn step<R: Rng + ?Sized>(
    p: &ModelParams,
    kernel: &SiteKernel,
    eta: &Configuration,
    rng: &mut R,
) -> Result<(Event, Configuration)> {
    let rates = event_rates(p, kernel, eta)?;
    let total: f64 = rates.iter().map(|(_, r)| r).sum();
    if total <= 0.0 {
        return Err(Error::AbsorbedState);
    }
    let wait = exponential(rng, total);
    let mut u = rng.random::<f64>() * total;
    let mut chosen = None;
    for (kind, r) in &rates {
        if *r <= 0.0 {
            continue;
        }
        chosen = Some(*kind);
        if u < *r {
            break;
        }
        u -= r;
    }
    let kind = chosen.expect("positive total rate has a positive entry");
    let mut next = eta.clone();
    next.apply(kind)?;
    Ok((Event { time: wait, kind }, next))
}

/// Cached intensities of one site.
#[derive(Debug, Clone, Copy, Default)]
struct SiteState {
    count: u64,
    birth: f64,
    death: f64,
    /// `count · Σ_y p(x,y)`
    jump: f64,
    total: f64,
}

/// Incremental simulator state for one replica.
#[derive(Debug, Clone)]
pub struct Engine<'k, R> {
    kernel: &'k SiteKernel,
    reactions: R,
    out_rate: Vec<f64>,
    sites: Vec<SiteState>,
    counts: Vec<u64>,
    total: f64,
    total_count: u64,
    peak_count: u64,
    time: f64,
    events: u64,
    rng: StreamRng,
}

impl<'k, R: SiteReactions> Engine<'k, R> {
    pub fn new(kernel: &'k SiteKernel, reactions: R, eta0: &Configuration, rng: StreamRng) -> Result<Self> {
        let v = kernel.site_count();
        if eta0.0.len() != v {
            return Err(Error::DimensionMismatch { expected: v, actual: eta0.0.len() });
        }
        let mut engine = Self {
            kernel,
            reactions,
            out_rate: (0..v).map(|x| kernel.out_rate(x)).collect(),
            sites: eta0.0.iter().map(|&count| SiteState { count, ..Default::default() }).collect(),
            counts: eta0.0.clone(),
            total: 0.0,
            total_count: eta0.total(),
            peak_count: eta0.0.iter().copied().max().unwrap_or(0),
            time: 0.0,
            events: 0,
            rng,
        };
        for x in 0..v {
            engine.refresh_site(x)?;
        }
        engine.refresh_total()?;
        Ok(engine)
    }

    #[inline(always)]
    fn refresh_site(&mut self, x: usize) -> Result<()> {
        let s = &mut self.sites[x];
        let (b, d) = self.reactions.rates(s.count)?;
        s.birth = b;
        s.death = d;
        s.jump = s.count as f64 * self.out_rate[x];
        s.total = b + d + s.jump;
        Ok(())
    }

    #[inline(always)]
    fn refresh_total(&mut self) -> Result<()> {
        // full resum instead of a running delta: no drift over 10⁹ events
        self.total = match self.sites.as_slice() {
            [s] => s.total,
            all => all.iter().map(|s| s.total).sum(),
        };
        if !self.total.is_finite() {
            return Err(Error::NonFinite("total event rate"));
        }
        Ok(())
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total_count(&self) -> u64 {
        self.total_count
    }

    pub fn peak_count(&self) -> u64 {
        self.peak_count
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn event_count(&self) -> u64 {
        self.events
    }

    pub fn total_rate(&self) -> f64 {
        self.total
    }

    pub fn reactions_mut(&mut self) -> &mut R {
        &mut self.reactions
    }

    /// Time of the next event, or `None` in an absorbing state. Does not
    /// change the configuration; pair with [`Engine::fire`].
    #[inline]
    pub fn next_time(&mut self) -> Option<f64> {
        if self.total <= 0.0 {
            return None;
        }
        Some(self.time + exponential(&mut self.rng, self.total))
    }

    #[inline(always)]
    fn select(&mut self) -> EventKind {
        let mut u = self.rng.random::<f64>() * self.total;
        let x = if self.sites.len() == 1 {
            0
        } else {
            let mut x = usize::MAX;
            for (i, s) in self.sites.iter().enumerate() {
                if u < s.total {
                    x = i;
                    break;
                }
                u -= s.total;
            }
            if x == usize::MAX {
                // rounding ran past the end: take the top of the last live site
                x = self.sites.iter().rposition(|s| s.total > 0.0).unwrap_or(0);
                u = self.sites[x].total * (1.0 - f64::EPSILON);
            }
            x
        };
        let s = self.sites[x];
        if u < s.birth {
            return EventKind::Birth(x as u32);
        }
        u -= s.birth;
        if u < s.death || (s.jump <= 0.0 && s.death > 0.0) {
            return EventKind::Death(x as u32);
        }
        if s.jump <= 0.0 {
            return EventKind::Birth(x as u32);
        }
        self.pick_target(x, (u - s.death) / s.count as f64)
    }

    #[inline(never)]
    fn pick_target(&self, x: usize, mut acc: f64) -> EventKind {
        let mut last_target = x;
        for (y, &r) in self.kernel.row(x).iter().enumerate() {
            if r > 0.0 {
                last_target = y;
                if acc < r {
                    break;
                }
                acc -= r;
            }
        }
        EventKind::Jump { from: x as u32, to: last_target as u32 }
    }

    #[inline(always)]
    fn add(&mut self, x: usize) {
        let c = self.sites[x].count + 1;
        self.sites[x].count = c;
        self.counts[x] = c;
        self.peak_count = self.peak_count.max(c);
    }

    #[inline(always)]
    fn remove(&mut self, x: usize) {
        debug_assert!(self.sites[x].count > 0, "event at empty site {x}");
        let c = self.sites[x].count - 1;
        self.sites[x].count = c;
        self.counts[x] = c;
    }

    /// Chooses and applies the event occurring at `time`.
    #[inline]
    pub fn fire(&mut self, time: f64) -> Result<Event> {
        let kind = self.select();
        match kind {
            EventKind::Birth(x) => {
                self.add(x as usize);
                self.total_count += 1;
                self.refresh_site(x as usize)?;
            }
            EventKind::Death(x) => {
                self.remove(x as usize);
                self.total_count -= 1;
                self.refresh_site(x as usize)?;
            }
            EventKind::Jump { from, to } => {
                self.remove(from as usize);
                self.add(to as usize);
                self.refresh_site(from as usize)?;
                self.refresh_site(to as usize)?;
            }
        }
        self.refresh_total()?;
        self.time = time;
        self.events += 1;
        Ok(Event { time, kind })
    }

    /// Single-site fast path: fires the event at `t`, then keeps drawing and
    /// firing while the next event time stays below `until`. Consumes the
    /// random stream in the same order as `next_time` + `fire`, so paths are
    /// identical to the general loop. Returns the pending next event time
    /// (`None` when absorbed). Stops early when the site empties, the mass
    /// exceeds `cap = (K, scale)`, or `max_events` is reached.
    pub(crate) fn burst_single(&mut self, t: f64, until: f64, cap: Option<(f64, f64)>, max_events: u64) -> Result<Option<f64>> {
        debug_assert_eq!(self.sites.len(), 1);
        let SiteState { mut count, mut birth, mut death, .. } = self.sites[0];
        let mut time = t;
        let mut events = self.events;
        let mut peak = self.peak_count;
        let mut pending;
        let capped = cap.is_some();
        let (cap, scale) = cap.unwrap_or((f64::INFINITY, 1.0));
        loop {
            let total = birth + death;
            let u = self.rng.random::<f64>() * total;
            // coin-flip branch: written so it compiles to a select
            let up = u < birth || death <= 0.0;
            count = if up { count + 1 } else { count - 1 };
            peak = peak.max(count);
            events += 1;
            let (b, d) = self.reactions.rates(count)?;
            birth = b;
            death = d;
            let total = b + d;
            if !total.is_finite() {
                return Err(Error::NonFinite("total event rate"));
            }
            if total <= 0.0 {
                pending = None;
                break;
            }
            pending = Some(time + exponential(&mut self.rng, total));
            if count == 0 || events >= max_events || (capped && count as f64 / scale > cap) {
                break;
            }
            let next = pending.unwrap_or(f64::INFINITY);
            if next >= until {
                break;
            }
            time = next;
        }
        self.sites[0] = SiteState { count, birth, death, jump: 0.0, total: birth + death };
        self.counts[0] = count;
        self.total = birth + death;
        self.total_count = count;
        self.peak_count = peak;
        self.time = time;
        self.events = events;
        Ok(pending)
    }

    /// Waiting time plus transition. Errors in an absorbing state.
    pub fn step(&mut self) -> Result<Event> {
        let t = self.next_time().ok_or(Error::AbsorbedState)?;
        self.fire(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Horizon,
    /// No further event is possible (for the graph model: η ≡ 0).
    AbsorbedAtZero,
    MassCap,
    EventGuard,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FirstPassage {
    /// Threshold K, when one was configured.
    pub mass_cap: Option<f64>,
    /// τ_K = inf{t : S_t > K}
    pub above_cap: Option<f64>,
    /// τ̂₀ = inf{t : S_t = 0}
    pub hit_zero: Option<f64>,
}

pub const DEFAULT_MAX_EVENTS: u64 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub horizon: f64,
    pub sample_dt: f64,
    /// Stop once total mass exceeds this.
    pub mass_cap: Option<f64>,
    pub max_events: u64,
    pub record_events: bool,
}

impl SimOptions {
    pub fn new(horizon: f64, sample_dt: f64) -> Self {
        Self { horizon, sample_dt, mass_cap: None, max_events: DEFAULT_MAX_EVENTS, record_events: false }
    }

    pub fn with_events(mut self) -> Self {
        self.record_events = true;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.sample_dt > 0.0 && self.sample_dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("sample_dt must be positive, got {}", self.sample_dt)));
        }
        if self.max_events == 0 {
            return Err(Error::InvalidParameter("max_events must be positive".into()));
        }
        if let Some(k) = self.mass_cap {
            if !(k >= 0.0) {
                return Err(Error::InvalidParameter(format!("mass cap must be >= 0, got {k}")));
            }
        }
        Ok(())
    }
}

/// `0, dt, 2dt, …` strictly below the horizon, then the horizon itself.
pub fn sample_grid(horizon: f64, dt: f64) -> Vec<f64> {
    let mut grid = Vec::new();
    let mut k = 0u64;
    loop {
        let t = k as f64 * dt;
        if t >= horizon * (1.0 - 1e-12) {
            break;
        }
        grid.push(t);
        k += 1;
    }
    grid.push(horizon);
    grid
}

/// A simulated path sampled on a grid (càdlàg: the value at a grid time
/// includes every event at or before it).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Density divisor: `ζ = η / scale`.
    pub scale: f64,
    pub sites: usize,
    pub initial: Configuration,
    pub sample_times: Vec<f64>,
    densities: Vec<f64>,
    pub event_count: u64,
    pub events: Option<Vec<Event>>,
    pub first_passage: FirstPassage,
    pub termination: Termination,
    /// Time at which the simulation stopped.
    pub end_time: f64,
    /// Largest single-site count seen along the path.
    pub peak_count: u64,
}

impl Trajectory {
    /// Densities at sample index `i`.
    pub fn density(&self, i: usize) -> &[f64] {
        &self.densities[i * self.sites..(i + 1) * self.sites]
    }

    pub fn len(&self) -> usize {
        self.sample_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_times.is_empty()
    }

    /// Last recorded densities.
    pub fn terminal(&self) -> &[f64] {
        self.density(self.len() - 1)
    }

    pub fn guard_hit(&self) -> bool {
        self.termination == Termination::EventGuard
    }

    pub(crate) fn rescale_time(&mut self, factor: f64, grid: Vec<f64>) {
        debug_assert!(grid.len() >= self.sample_times.len());
        self.sample_times = grid[..self.sample_times.len()].to_vec();
        self.end_time /= factor;
        if let Some(t) = self.first_passage.above_cap.as_mut() {
            *t /= factor;
        }
        if let Some(t) = self.first_passage.hit_zero.as_mut() {
            *t /= factor;
        }
        if let Some(ev) = self.events.as_mut() {
            ev.iter_mut().for_each(|e| e.time /= factor);
        }
    }
}

/// Runs any [`SiteReactions`] model on `kernel`.
pub fn simulate_with<R: SiteReactions>(
    kernel: &SiteKernel,
    reactions: R,
    eta0: &Configuration,
    scale: f64,
    opts: &SimOptions,
    stream: &RngStream,
) -> Result<Trajectory> {
    opts.validate()?;
    let grid = sample_grid(opts.horizon, opts.sample_dt);
    let sites = kernel.site_count();
    let mut engine = Engine::new(kernel, reactions, eta0, stream.rng())?;
    let mut densities = Vec::with_capacity(grid.len() * sites);
    let mut events = opts.record_events.then(Vec::new);
    let mut passage = FirstPassage { mass_cap: opts.mass_cap, ..Default::default() };
    if engine.total_count() == 0 {
        passage.hit_zero = Some(0.0);
    }
    let record = |densities: &mut Vec<f64>, counts: &[u64]| {
        densities.extend(counts.iter().map(|c| *c as f64 / scale));
    };
    let mut next_sample = 0usize;
    // Only the single-site, unlogged case goes through the burst loop; the
    // kernel then has no jumps and every event is a birth or a death.
    let fast = sites == 1 && events.is_none();
    let above_cap = |count: u64| opts.mass_cap.is_some_and(|cap| count as f64 / scale > cap);
    let mut pending = engine.next_time();
    let termination = loop {
        let Some(t_next) = pending else {
            while next_sample < grid.len() {
                record(&mut densities, engine.counts());
                next_sample += 1;
            }
            break Termination::AbsorbedAtZero;
        };
        while next_sample < grid.len() && grid[next_sample] < t_next {
            record(&mut densities, engine.counts());
            next_sample += 1;
        }
        if t_next > opts.horizon {
            break Termination::Horizon;
        }
        if engine.event_count() >= opts.max_events {
            break Termination::EventGuard;
        }
        if fast {
            pending = engine.burst_single(t_next, grid[next_sample], opts.mass_cap.map(|c| (c, scale)), opts.max_events)?;
        } else {
            let ev = engine.fire(t_next)?;
            if let Some(log) = events.as_mut() {
                log.push(ev);
            }
            pending = engine.next_time();
        }
        if engine.total_count() == 0 && passage.hit_zero.is_none() {
            passage.hit_zero = Some(engine.time());
        }
        if above_cap(engine.total_count()) {
            passage.above_cap = Some(engine.time());
            break Termination::MassCap;
        }
    };
    let end_time = match termination {
        Termination::Horizon | Termination::AbsorbedAtZero => opts.horizon,
        _ => engine.time(),
    };
    Ok(Trajectory {
        scale,
        sites,
        initial: eta0.clone(),
        sample_times: grid[..next_sample].to_vec(),
        densities,
        event_count: engine.event_count(),
        events,
        first_passage: passage,
        termination,
        end_time,
        peak_count: engine.peak_count(),
    })
}

/// Simulates the n-th model of the family.
pub fn simulate(
    p: &ModelParams,
    kernel: &SiteKernel,
    eta0: &Configuration,
    opts: &SimOptions,
    stream: &RngStream,
) -> Result<Trajectory> {
    p.validate()?;
    simulate_with(kernel, RateTable::new(*p), eta0, p.n as f64, opts, stream)
}
