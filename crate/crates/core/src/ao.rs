//! Alternating optimization of beamformers, surface coefficients and element
//! positions, plus the fixed-surface, discrete-placement and OMA baselines.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::beamforming::{
    max_min_qos_slack, mrt_beamformers, rank_one_recover, solve_beamforming, BeamformingSettings, CovariancePool, RECOVERY_TOLERANCE,
};
use crate::channel::{assemble_channels, ChannelSet, NlosDraws};
use crate::coeffs::{aligned_coefficients, coeff_qos_slack_step, solve_coeff_subproblem, weighted_rate, CoeffSettings};
use crate::error::{Error, Result};
use crate::metrics::{effective_channels, evaluate, feasibility, Beamformers, Feasibility};
use crate::position::{optimize_positions, PositionSettings, PositionTrace};
use crate::scenario::Scenario;
use crate::surface::{uniform_grid_layout, ElementLayout, SurfaceCoeffs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    /// Movable elements.
    FStar,
    /// Elements placed once by greedy search over a discrete candidate grid.
    DFStar,
    /// Elements fixed on the uniform grid.
    TStar,
    /// Fixed grid, time-division access.
    Oma,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [BaselineKind::FStar, BaselineKind::DFStar, BaselineKind::TStar, BaselineKind::Oma];

    pub fn moves_elements(self) -> bool {
        self == BaselineKind::FStar
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineKind::FStar => "f-star",
            BaselineKind::TStar => "t-star",
            BaselineKind::DFStar => "d-f-star",
            BaselineKind::Oma => "oma",
        })
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "f-star" | "fstar" => Ok(BaselineKind::FStar),
            "t-star" | "tstar" => Ok(BaselineKind::TStar),
            "d-f-star" | "dfstar" | "df-star" => Ok(BaselineKind::DFStar),
            "oma" | "t-star-oma" => Ok(BaselineKind::Oma),
            other => Err(Error::InvalidScenario(format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Placement,
    Init,
    Beamforming,
    Coefficients,
    Positions,
    Oma,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(String::from));
        f.write_str(s.as_deref().unwrap_or("?"))
    }
}

/// One line of the run trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub iteration: usize,
    pub stage: Stage,
    /// Exact weighted sum rate after the stage, bps/Hz.
    pub objective: f64,
    /// Seconds since the run started.
    pub seconds: f64,
}

impl TraceEvent {
    pub fn json_line(&self) -> String {
        serde_json::to_string(self).expect("trace events serialize")
    }
}

#[derive(Debug, Clone)]
pub struct AoSettings {
    /// Relative objective change below which the outer loop stops.
    pub tolerance: f64,
    pub max_outer: usize,
    /// Alternating feasibility rounds before giving up on a QoS-feasible start.
    pub init_rounds: usize,
    /// Candidate pitch for discrete placement; `None` uses `max(λ/2, ΔD)`.
    pub candidate_pitch: Option<f64>,
    pub beamforming: BeamformingSettings,
    pub coeffs: CoeffSettings,
    pub position: PositionSettings,
}

impl Default for AoSettings {
    fn default() -> Self {
        AoSettings {
            tolerance: 1e-3,
            max_outer: 50,
            init_rounds: 12,
            candidate_pitch: None,
            beamforming: BeamformingSettings::default(),
            coeffs: CoeffSettings::default(),
            position: PositionSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AoState {
    pub kind: BaselineKind,
    pub beams: Beamformers,
    pub coeffs: SurfaceCoeffs,
    pub layout: ElementLayout,
    pub channels: ChannelSet,
    /// Current SINRs in [`Scenario::users`] order.
    pub ratios: Vec<f64>,
    /// Objective at the start and after every outer iteration.
    pub history: Vec<f64>,
    /// Objective after every inner step of every stage, in run order.
    pub inner_history: Vec<f64>,
    pub position_traces: Vec<PositionTrace>,
    pub trace: Vec<TraceEvent>,
    /// `λ₁/Tr W` per user of the last relaxed beamforming optimum.
    pub dominance: Vec<f64>,
    /// Whether rank penalty rounds or randomization were needed in the last beamforming solve.
    pub fallback: bool,
    pub iterations: usize,
    pub converged: bool,
    /// Failing stage and cause when the run stopped early.
    pub failure: Option<String>,
}

impl AoState {
    pub fn objective(&self) -> f64 {
        self.history.last().copied().unwrap_or(f64::NAN)
    }

    pub fn feasibility(&self, scenario: &Scenario) -> Result<Feasibility> {
        Ok(feasibility(scenario, &effective_channels(&self.channels, &self.coeffs)?, &self.beams))
    }

    pub fn trace_jsonl(&self) -> String {
        self.trace.iter().map(|e| e.json_line() + "\n").collect()
    }
}

struct Clock {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Clock {
    fn start() -> Self {
        Clock {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    fn seconds(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        return self.start.elapsed().as_secs_f64();
        #[cfg(target_arch = "wasm32")]
        return 0.0;
    }
}

fn recover_all(pool: &CovariancePool, scenario: &Scenario) -> Beamformers {
    let mut beams = Beamformers::zeros(scenario.antennas, scenario.num_reflect(), scenario.num_transmit());
    for u in scenario.users() {
        *beams.beam_mut(u) = rank_one_recover(pool.cov(u)).0;
    }
    beams
}

fn current_ratios(scenario: &Scenario, channels: &ChannelSet, coeffs: &SurfaceCoeffs, beams: &Beamformers) -> Result<Vec<f64>> {
    let report = evaluate(scenario, channels, coeffs, beams)?;
    Ok(scenario.users().into_iter().map(|u| report.gamma(u)).collect())
}

/// Finds QoS-feasible beamformers by alternating max-min slack steps over the
/// beams and the coefficients, then runs one full beamforming solve.
fn initialize(
    scenario: &Scenario,
    channels: &ChannelSet,
    coeffs: SurfaceCoeffs,
    settings: &AoSettings,
) -> Result<(SurfaceCoeffs, crate::beamforming::BeamformingOutcome)> {
    let bf = &settings.beamforming;
    let mut coeffs = coeffs;
    let mut slack = f64::NEG_INFINITY;
    for _ in 0..settings.init_rounds.max(1) {
        let eff = effective_channels(channels, &coeffs)?;
        let (pool, s) = max_min_qos_slack(&eff, scenario, bf.subspace, &bf.solver)?;
        slack = s;
        if s >= 0.0 {
            let out = solve_beamforming(&eff, &pool, scenario, bf)?;
            return Ok((coeffs, out));
        }
        if coeffs.is_empty() {
            break;
        }
        let beams = recover_all(&pool, scenario);
        coeffs = coeff_qos_slack_step(channels, &beams, &coeffs, scenario, &bf.solver)?.0;
    }
    Err(Error::Infeasible {
        stage: "feasibility search",
        family: format!("qos (best max-min slack {slack:.3e})"),
    })
}

/// Runs the alternating loop for `kind`. A prior state is used as the start
/// point instead of a fresh initialization. Hard infeasibility is reported in
/// [`AoState::failure`]; `Err` is reserved for invalid input.
pub fn run_ao(scenario: &Scenario, kind: BaselineKind, init: Option<&AoState>, settings: &AoSettings) -> Result<AoState> {
    scenario.validate()?;
    let clock = Clock::start();
    if kind == BaselineKind::Oma {
        return run_oma(scenario, init, settings, &clock);
    }
    let nlos = NlosDraws::draw(scenario, scenario.seed);
    let mut trace = Vec::new();
    let (layout, channels, coeffs, beams, dominance, fallback) = match init {
        Some(st) => (
            st.layout.clone(),
            st.channels.clone(),
            st.coeffs.clone(),
            st.beams.clone(),
            st.dominance.clone(),
            st.fallback,
        ),
        None => {
            let layout = match kind {
                BaselineKind::DFStar => {
                    let pitch = settings
                        .candidate_pitch
                        .unwrap_or((scenario.wavelength / 2.0).max(scenario.min_spacing));
                    let layout = greedy_discrete_placement(scenario, &nlos, pitch)?;
                    trace.push(TraceEvent {
                        iteration: 0,
                        stage: Stage::Placement,
                        objective: f64::NAN,
                        seconds: clock.seconds(),
                    });
                    layout
                }
                _ => uniform_grid_layout(scenario)?,
            };
            let channels = assemble_channels(scenario, &layout, &nlos)?;
            let coeffs = if layout.is_empty() {
                SurfaceCoeffs::zeros(0)
            } else {
                aligned_coefficients(&channels)
            };
            match initialize(scenario, &channels, coeffs.clone(), settings) {
                Ok((coeffs, out)) => {
                    let fallback = out.penalty_rounds > 0 || out.randomized;
                    (layout, channels, coeffs, out.beams, out.dominance, fallback)
                }
                Err(e) => {
                    let beams = Beamformers::zeros(scenario.antennas, scenario.num_reflect(), scenario.num_transmit());
                    return Ok(AoState {
                        kind,
                        ratios: current_ratios(scenario, &channels, &coeffs, &beams)?,
                        beams,
                        coeffs,
                        layout,
                        channels,
                        history: Vec::new(),
                        inner_history: Vec::new(),
                        position_traces: Vec::new(),
                        trace,
                        dominance: Vec::new(),
                        fallback: false,
                        iterations: 0,
                        converged: false,
                        failure: Some(format!("initialization: {e}")),
                    });
                }
            }
        }
    };
    let rate = weighted_rate(scenario, &channels, &coeffs, &beams)?;
    trace.push(TraceEvent {
        iteration: 0,
        stage: Stage::Init,
        objective: rate,
        seconds: clock.seconds(),
    });
    let mut st = AoState {
        kind,
        ratios: current_ratios(scenario, &channels, &coeffs, &beams)?,
        beams,
        coeffs,
        layout,
        channels,
        history: vec![rate],
        inner_history: vec![rate],
        position_traces: Vec::new(),
        trace,
        dominance,
        fallback,
        iterations: 0,
        converged: false,
        failure: None,
    };
    if !st.feasibility(scenario)?.holds(RECOVERY_TOLERANCE) {
        st.failure = Some("initialization: recovered beamformers violate the constraints".into());
        return Ok(st);
    }
    outer_loop(scenario, &mut st, settings, &clock)?;
    st.ratios = current_ratios(scenario, &st.channels, &st.coeffs, &st.beams)?;
    Ok(st)
}

fn outer_loop(scenario: &Scenario, st: &mut AoState, settings: &AoSettings, clock: &Clock) -> Result<()> {
    let mut prev = st.objective();
    while st.iterations < settings.max_outer {
        st.iterations += 1;
        let it = st.iterations;

        let eff = effective_channels(&st.channels, &st.coeffs)?;
        match solve_beamforming(&eff, &CovariancePool::from_beamformers(&st.beams), scenario, &settings.beamforming) {
            Ok(out) => {
                let r = weighted_rate(scenario, &st.channels, &st.coeffs, &out.beams)?;
                let cur = *st.inner_history.last().expect("non-empty history");
                st.dominance = out.dominance.clone();
                st.fallback = out.penalty_rounds > 0 || out.randomized;
                if out.feasibility.holds(RECOVERY_TOLERANCE) && r >= cur {
                    st.beams = out.beams;
                    st.inner_history.push(r);
                } else {
                    log::debug!("beamforming update kept the previous beams ({r} vs {cur})");
                }
            }
            Err(e) => log::warn!("beamforming step skipped: {e}"),
        }
        st.trace.push(TraceEvent {
            iteration: it,
            stage: Stage::Beamforming,
            objective: *st.inner_history.last().expect("non-empty history"),
            seconds: clock.seconds(),
        });

        if !st.coeffs.is_empty() {
            match solve_coeff_subproblem(&st.channels, &st.beams, &st.coeffs, scenario, &settings.coeffs) {
                Ok(out) => {
                    st.coeffs = out.coeffs;
                    st.inner_history.extend_from_slice(&out.rate_history[1..]);
                }
                Err(e) => {
                    st.failure = Some(format!("coefficients: {e}"));
                    return Ok(());
                }
            }
            st.trace.push(TraceEvent {
                iteration: it,
                stage: Stage::Coefficients,
                objective: *st.inner_history.last().expect("non-empty history"),
                seconds: clock.seconds(),
            });
        }

        if st.kind.moves_elements() && !st.layout.is_empty() {
            match optimize_positions(&st.channels, &st.layout, &st.coeffs, &st.beams, scenario, &settings.position) {
                Ok(out) => {
                    st.layout = out.layout;
                    st.channels = out.channels;
                    st.inner_history.extend_from_slice(&out.rate_history[1..]);
                    st.position_traces.extend(out.trace);
                }
                Err(e) => {
                    st.failure = Some(format!("positions: {e}"));
                    return Ok(());
                }
            }
            st.trace.push(TraceEvent {
                iteration: it,
                stage: Stage::Positions,
                objective: *st.inner_history.last().expect("non-empty history"),
                seconds: clock.seconds(),
            });
        }

        let rate = *st.inner_history.last().expect("non-empty history");
        st.history.push(rate);
        if (rate - prev) / prev.abs().max(1e-12) < settings.tolerance {
            st.converged = true;
            break;
        }
        prev = rate;
    }
    Ok(())
}

fn run_oma(scenario: &Scenario, init: Option<&AoState>, settings: &AoSettings, clock: &Clock) -> Result<AoState> {
    let base = match init {
        Some(st) => st.clone(),
        None => run_ao(scenario, BaselineKind::TStar, None, settings)?,
    };
    if let Some(f) = &base.failure {
        let mut st = base.clone();
        st.kind = BaselineKind::Oma;
        st.converged = false;
        st.failure = Some(format!("fixed-surface run: {f}"));
        return Ok(st);
    }
    let rate = oma_rate(&base.channels, &base.coeffs, scenario)?;
    let mut st = base;
    st.kind = BaselineKind::Oma;
    st.history = vec![rate];
    st.inner_history = vec![rate];
    st.position_traces.clear();
    st.iterations = 0;
    st.converged = true;
    st.failure = None;
    st.trace = vec![TraceEvent {
        iteration: 0,
        stage: Stage::Oma,
        objective: rate,
        seconds: clock.seconds(),
    }];
    Ok(st)
}

/// Coefficients come from the fixed-surface NOMA run; the state keeps its
/// beams for reference.
///
/// Equal-share TDMA: each user alone for `1/(K+Q)` of the time with
/// full-power MRT, rate `Σ_u w_u/(K+Q) · log2(1 + P_max ‖F_u‖²/σ²_u)`.
pub fn oma_rate(channels: &ChannelSet, coeffs: &SurfaceCoeffs, scenario: &Scenario) -> Result<f64> {
    let eff = effective_channels(channels, coeffs)?;
    let users = scenario.users();
    let share = 1.0 / users.len() as f64;
    Ok(users
        .into_iter()
        .map(|u| {
            let snr = scenario.max_power * eff.row(u).norm_squared() / scenario.noise_power(u);
            share * scenario.weight(u) * (1.0 + snr).log2()
        })
        .sum())
}

/// Square candidate lattice at `pitch`, centered in the movement region.
pub fn candidate_grid(scenario: &Scenario, pitch: f64) -> Result<Vec<[f64; 2]>> {
    if !(pitch > 0.0) {
        return Err(Error::NonPositive("candidate pitch"));
    }
    if pitch < scenario.min_spacing * (1.0 - 1e-12) {
        return Err(Error::InfeasibleGeometry(format!(
            "candidate pitch {pitch:.4} m is below the minimum spacing {:.4} m",
            scenario.min_spacing
        )));
    }
    let n = (scenario.aperture_side / pitch + 1e-9).floor() as usize + 1;
    let origin = -pitch * (n - 1) as f64 / 2.0;
    Ok((0..n * n)
        .map(|i| [origin + (i % n) as f64 * pitch, origin + (i / n) as f64 * pitch])
        .collect())
}

/// Places elements one at a time on the free candidate giving the largest
/// probe rate. A probe uses co-phased coefficients and full-power MRT beams on
/// the partial surface.
pub fn greedy_discrete_placement(scenario: &Scenario, nlos: &NlosDraws, candidate_pitch: f64) -> Result<ElementLayout> {
    let candidates = candidate_grid(scenario, candidate_pitch)?;
    let total = scenario.elements;
    if candidates.len() < total {
        return Err(Error::InfeasibleGeometry(format!(
            "{} candidates for {total} elements",
            candidates.len()
        )));
    }
    let mut taken = vec![false; candidates.len()];
    let mut placed: Vec<[f64; 2]> = Vec::with_capacity(total);
    for count in 1..=total {
        let mut partial = scenario.clone();
        partial.elements = count;
        let draws = nlos.truncated(count);
        let mut best: Option<(f64, usize)> = None;
        for (i, &c) in candidates.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let mut positions = placed.clone();
            positions.push(c);
            let layout = ElementLayout::new(positions);
            let channels = assemble_channels(&partial, &layout, &draws)?;
            let coeffs = aligned_coefficients(&channels);
            let beams = mrt_beamformers(&effective_channels(&channels, &coeffs)?, partial.max_power);
            let rate = weighted_rate(&partial, &channels, &coeffs, &beams)?;
            if best.map_or(true, |(r, _)| rate > r) {
                best = Some((rate, i));
            }
        }
        let (_, i) = best.expect("a free candidate remains");
        taken[i] = true;
        placed.push(candidates[i]);
    }
    Ok(ElementLayout::new(placed))
}
