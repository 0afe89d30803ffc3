//! Closed-loop flow simulator with a stick-slip control valve.
//!
//! The loop is a PI controller driving a first-order process through a valve
//! described by the two-parameter deadband / slip-jump stiction model. One
//! Euler step is one minute, matching the sampling grid used everywhere else.
//! Noise comes from a ChaCha8 stream seeded by [`LoopConfig::seed`] and
//! mapped to Gaussians with `rand_distr::StandardNormal` (ziggurat), so a seed
//! fully determines a run.

use chrono::NaiveDateTime;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::series::UniformSeries;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid loop configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid stiction parameters: {0}")]
    InvalidStiction(String),
    #[error("episodes overlap: episode {second} starts at minute {start} before episode {first} ends at minute {end}")]
    OverlappingEpisodes { first: usize, second: usize, start: usize, end: usize },
    #[error("no episodes given")]
    NoEpisodes,
}

/// Deadband `S` and slip jump `J`, both in percent of valve span.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StictionParams {
    pub deadband_s: f64,
    pub slip_jump_j: f64,
}

impl StictionParams {
    pub const IDEAL: StictionParams = StictionParams { deadband_s: 0.0, slip_jump_j: 0.0 };

    pub fn new(deadband_s: f64, slip_jump_j: f64) -> Result<Self, SimError> {
        let p = StictionParams { deadband_s, slip_jump_j };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let (s, j) = (self.deadband_s, self.slip_jump_j);
        if !(s.is_finite() && j.is_finite()) || s < 0.0 || j < 0.0 {
            return Err(SimError::InvalidStiction(format!("S={s}, J={j} must be finite and non-negative")));
        }
        if j > s {
            return Err(SimError::InvalidStiction(format!("slip jump J={j} exceeds deadband S={s}")));
        }
        Ok(())
    }

    pub fn is_ideal(&self) -> bool {
        self.deadband_s == 0.0 && self.slip_jump_j == 0.0
    }
}

/// Stem state carried between valve updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValveState {
    /// Position at the last slip (or the last commanded position for an ideal valve).
    pub last_moved: f64,
}

/// Advances the valve one step towards `demand` (percent).
///
/// Inside the deadband the stem holds. Once the demand leaves it, the stem
/// slips to `demand - sign * (S - J)`.
pub fn valve_step(demand: f64, state: &mut ValveState, stiction: &StictionParams) -> f64 {
    if stiction.is_ideal() {
        state.last_moved = demand.clamp(0.0, 100.0);
        return state.last_moved;
    }
    let delta = demand - state.last_moved;
    if delta.abs() <= stiction.deadband_s {
        return state.last_moved;
    }
    let position = (demand - delta.signum() * (stiction.deadband_s - stiction.slip_jump_j)).clamp(0.0, 100.0);
    state.last_moved = position;
    position
}

/// Piecewise-constant setpoint: `(start_minute, value)` steps, sorted by start.
#[derive(Debug, Clone, PartialEq)]
pub struct SetpointProfile {
    steps: Vec<(usize, f64)>,
}

impl SetpointProfile {
    pub fn constant(value: f64) -> Self {
        SetpointProfile { steps: vec![(0, value)] }
    }

    /// The first step must start at minute 0.
    pub fn new(mut steps: Vec<(usize, f64)>) -> Result<Self, SimError> {
        steps.sort_by_key(|s| s.0);
        if steps.first().map(|s| s.0) != Some(0) {
            return Err(SimError::InvalidConfig("setpoint profile must start at minute 0".into()));
        }
        if steps.iter().any(|s| !s.1.is_finite()) {
            return Err(SimError::InvalidConfig("setpoint values must be finite".into()));
        }
        Ok(SetpointProfile { steps })
    }

    pub fn at(&self, minute: usize) -> f64 {
        let idx = self.steps.partition_point(|s| s.0 <= minute);
        self.steps[idx.saturating_sub(1)].1
    }

    pub fn steps(&self) -> &[(usize, f64)] {
        &self.steps
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub kp: f64,
    /// Integral time, minutes.
    pub ti: f64,
    pub process_gain: f64,
    /// Process time constant, minutes.
    pub process_tau: f64,
    pub sp_profile: SetpointProfile,
    /// Standard deviation of the white measurement noise on PV.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Run length, minutes.
    pub duration: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            kp: 0.5,
            ti: 2.0,
            process_gain: 1.0,
            process_tau: 5.0,
            sp_profile: SetpointProfile::constant(50.0),
            noise_sigma: 0.0,
            seed: 0,
            duration: 1440,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: &str| Err(SimError::InvalidConfig(msg.to_string()));
        if !(self.ti > 0.0) {
            return bad("ti must be > 0");
        }
        if !(self.process_tau > 0.0) {
            return bad("process_tau must be > 0");
        }
        if self.duration < 1 {
            return bad("duration must be >= 1 minute");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be >= 0");
        }
        if !(self.kp.is_finite() && self.process_gain.is_finite()) || self.process_gain == 0.0 {
            return bad("kp must be finite and process_gain finite and nonzero");
        }
        Ok(())
    }
}

/// Controller, process and valve state carried from minute to minute.
#[derive(Debug, Clone)]
struct LoopState {
    integral: f64,
    output: f64,
    pv: f64,
    valve: ValveState,
}

impl LoopState {
    /// Steady state at setpoint `sp` with the valve at the balancing position.
    fn at_rest(cfg: &LoopConfig) -> Self {
        let sp = cfg.sp_profile.at(0);
        let balance = (sp / cfg.process_gain).clamp(0.0, 100.0);
        LoopState { integral: balance, output: sp, pv: sp, valve: ValveState { last_moved: balance } }
    }
}

struct Trace {
    op: Vec<f64>,
    pv: Vec<f64>,
    valve: Vec<f64>,
}

/// Runs `minutes` steps of `cfg`, with the valve condition at each minute
/// given by `stiction_at(local_minute)`.
fn run(cfg: &LoopConfig, state: &mut LoopState, minutes: usize, stiction_at: impl Fn(usize) -> StictionParams, trace: &mut Trace) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let integral_gain = cfg.kp / cfg.ti;
    let alpha = 1.0 / cfg.process_tau;
    for minute in 0..minutes {
        let sp = cfg.sp_profile.at(minute);
        let error = sp - state.pv;
        let candidate = state.integral + integral_gain * error;
        let unclamped = cfg.kp * error + candidate;
        let op = unclamped.clamp(0.0, 100.0);
        // Anti-windup: freeze the integrator while the output saturates.
        if op == unclamped {
            state.integral = candidate;
        }
        let position = valve_step(op, &mut state.valve, &stiction_at(minute));
        state.output += alpha * (cfg.process_gain * position - state.output);
        let noise: f64 = if cfg.noise_sigma > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            cfg.noise_sigma * z
        } else {
            0.0
        };
        state.pv = state.output + noise;
        trace.op.push(op);
        trace.pv.push(state.pv);
        trace.valve.push(position);
    }
}

/// Result of a simulation: the aligned series plus per-minute ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub series: UniformSeries,
    /// True on minutes where the valve had nonzero stiction parameters.
    pub ground_truth: Vec<bool>,
    /// Valve stem position per minute (percent).
    pub valve_position: Vec<f64>,
    /// `(start_minute, end_minute)` per episode (end exclusive); one entry for a single run.
    pub episodes: Vec<(usize, usize)>,
}

pub fn default_start() -> NaiveDateTime {
    chrono::NaiveDate::from_ymd_opt(2024, 1, 1).and_then(|d| d.and_hms_opt(0, 0, 0)).expect("valid date")
}

/// Simulates one loop run with a fixed valve condition, starting at rest.
pub fn simulate_loop(cfg: &LoopConfig, stiction: StictionParams) -> Result<Simulation, SimError> {
    simulate_scheduled(cfg, &[(0, cfg.duration, stiction)])
}

/// Simulates one loop run whose valve condition follows `schedule`, a list of
/// `(start_minute, end_minute, params)` intervals. Minutes not covered by any
/// interval use an ideal valve.
pub fn simulate_scheduled(cfg: &LoopConfig, schedule: &[(usize, usize, StictionParams)]) -> Result<Simulation, SimError> {
    cfg.validate()?;
    for (_, _, p) in schedule {
        p.validate()?;
    }
    let stiction_at =
        |minute: usize| schedule.iter().find(|(s, e, _)| (*s..*e).contains(&minute)).map(|(_, _, p)| *p).unwrap_or(StictionParams::IDEAL);
    let mut state = LoopState::at_rest(cfg);
    let mut trace = Trace { op: Vec::new(), pv: Vec::new(), valve: Vec::new() };
    run(cfg, &mut state, cfg.duration, stiction_at, &mut trace);
    let ground_truth = (0..cfg.duration).map(|m| !stiction_at(m).is_ideal()).collect();
    let series = UniformSeries::from_observed(default_start(), trace.op, trace.pv).expect("duration >= 1");
    Ok(Simulation { series, ground_truth, valve_position: trace.valve, episodes: vec![(0, cfg.duration)] })
}

/// One scheduled stretch of operation inside a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub config: LoopConfig,
    pub stiction: StictionParams,
    /// Minute at which the episode starts within the dataset.
    pub start: usize,
}

/// Builds one continuous dataset from time-ordered episodes.
///
/// Controller, process and valve state carry over between episodes, so a
/// change of valve condition shows up as a transition rather than a restart.
/// Each episode re-seeds the noise stream from its own config. Gaps between
/// episodes continue the preceding episode's loop with an ideal valve.
pub fn make_dataset(episodes: &[Episode]) -> Result<Simulation, SimError> {
    if episodes.is_empty() {
        return Err(SimError::NoEpisodes);
    }
    let mut order: Vec<usize> = (0..episodes.len()).collect();
    order.sort_by_key(|&i| episodes[i].start);
    for pair in order.windows(2) {
        let (a, b) = (&episodes[pair[0]], &episodes[pair[1]]);
        let end = a.start + a.config.duration;
        if b.start < end {
            return Err(SimError::OverlappingEpisodes { first: pair[0], second: pair[1], start: b.start, end });
        }
    }
    for ep in episodes {
        ep.config.validate()?;
        ep.stiction.validate()?;
    }

    let origin = episodes[order[0]].start;
    let mut state = LoopState::at_rest(&episodes[order[0]].config);
    let mut trace = Trace { op: Vec::new(), pv: Vec::new(), valve: Vec::new() };
    let mut ground_truth = Vec::new();
    let mut bounds = Vec::with_capacity(episodes.len());
    for (k, &idx) in order.iter().enumerate() {
        let ep = &episodes[idx];
        let local_start = ep.start - origin;
        let gap = local_start - trace.op.len();
        if gap > 0 {
            let prev = &episodes[order[k - 1]].config;
            let filler = LoopConfig { duration: gap, seed: prev.seed.wrapping_add(1), ..prev.clone() };
            run(&filler, &mut state, gap, |_| StictionParams::IDEAL, &mut trace);
            ground_truth.extend(std::iter::repeat_n(false, gap));
        }
        run(&ep.config, &mut state, ep.config.duration, |_| ep.stiction, &mut trace);
        ground_truth.extend(std::iter::repeat_n(!ep.stiction.is_ideal(), ep.config.duration));
        bounds.push((local_start, local_start + ep.config.duration));
    }
    let t0 = default_start() + chrono::Duration::minutes(origin as i64);
    let series = UniformSeries::from_observed(t0, trace.op, trace.pv).expect("at least one minute");
    Ok(Simulation { series, ground_truth, valve_position: trace.valve, episodes: bounds })
}

/// Back-to-back episodes of `episode_minutes` each covering `total_minutes`,
/// alternating healthy (first) and sticky. Episode `k` is seeded `base.seed + k`.
pub fn alternating_episodes(base: &LoopConfig, sticky: StictionParams, episode_minutes: usize, total_minutes: usize) -> Vec<Episode> {
    let mut episodes = Vec::new();
    let mut start = 0;
    while start < total_minutes && episode_minutes > 0 {
        let k = episodes.len();
        let duration = episode_minutes.min(total_minutes - start);
        let stiction = if k % 2 == 1 { sticky } else { StictionParams::IDEAL };
        let config = LoopConfig { duration, seed: base.seed.wrapping_add(k as u64), ..base.clone() };
        episodes.push(Episode { config, stiction, start });
        start += duration;
    }
    episodes
}

/// Loop settings of the seeded benchmark: a slow first-order process under
/// tight integral action with light measurement noise.
pub fn benchmark_loop() -> LoopConfig {
    LoopConfig { kp: 0.3, ti: 0.5, process_tau: 30.0, noise_sigma: 0.01, seed: 100, ..LoopConfig::default() }
}

pub const BENCHMARK_STICTION: StictionParams = StictionParams { deadband_s: 5.0, slip_jump_j: 0.5 };
pub const BENCHMARK_DAYS: usize = 30;
pub const BENCHMARK_EPISODE_DAYS: usize = 5;

/// Thirty days of alternating five-day healthy and sticky episodes.
pub fn benchmark() -> Result<Simulation, SimError> {
    make_dataset(&alternating_episodes(&benchmark_loop(), BENCHMARK_STICTION, BENCHMARK_EPISODE_DAYS * 1440, BENCHMARK_DAYS * 1440))
}
