//! STAR coefficient subproblem: received amplitudes as affine functions of
//! `(v₁, v₂)`, the log-ratio minorant with linearized signal powers, and the
//! per-element energy caps.
//!
//! With the beams frozen, the amplitude of beam `w` at receiver `u` is
//! `z = vᴴ b + c₀` where `b_l = conj(h_{u,l}) (G w)_l`, `v` is `v₂` for R users and
//! `v₁` for T users, and `c₀ = H_{b,u} w` (zero for T users). The rank-one
//! matrix `b bᴴ` is both `U` and `Y ∘ Zᵀ`, `diag X = c₀ conj(b)` and `D = |c₀|²`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelSet;
use crate::conic::{solve_conic, AffineExpr, ConicProblem, SolveStatus, SolverSettings};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, interferers, sic_links, Beamformers};
use crate::scenario::{Scenario, UserId};
use crate::surface::SurfaceCoeffs;
use crate::surrogate::log_ratio_weights;
use crate::{CMat, CVec};

/// Allowance (noise units) on QoS and SIC rows, absorbing the round-off left
/// by rank-one recovery in the incoming beams.
pub const ROW_SLACK: f64 = 1e-6;

/// Amplitude of one beam at one receiver as a function of the coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoeffTerm {
    pub b: CVec,
    pub c0: Complex64,
}

impl CoeffTerm {
    pub fn amplitude(&self, v: &CVec) -> Complex64 {
        v.dotc(&self.b) + self.c0
    }

    pub fn power(&self, v: &CVec) -> f64 {
        self.amplitude(v).norm_sqr()
    }

    /// `b bᴴ`, the quadratic block of the received power.
    pub fn quadratic_block(&self) -> CMat {
        &self.b * self.b.adjoint()
    }

    /// `diag X = c₀ conj(b)`; the cross term is `2Re{vᵀ diag X}`.
    pub fn cross_diag(&self) -> CVec {
        self.b.map(|z| self.c0 * z.conj())
    }

    pub fn constant_power(&self) -> f64 {
        self.c0.norm_sqr()
    }

    pub fn is_zero(&self) -> bool {
        self.c0 == Complex64::new(0.0, 0.0) && self.b.iter().all(|z| *z == Complex64::new(0.0, 0.0))
    }

    fn scaled(&self, factor: f64) -> Self {
        let f = Complex64::from(factor);
        CoeffTerm {
            b: &self.b * f,
            c0: self.c0 * f,
        }
    }
}

/// Every receiver/beam term, indexed `[receiver][beam owner]` in [`Scenario::users`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoeffSubproblemData {
    pub terms: Vec<Vec<CoeffTerm>>,
}

impl CoeffSubproblemData {
    pub fn term(&self, scenario: &Scenario, rx: UserId, owner: UserId) -> &CoeffTerm {
        &self.terms[scenario.user_index(rx)][scenario.user_index(owner)]
    }
}

/// The coefficient vector seen by a receiver: `v₂` for R users, `v₁` for T users.
pub fn side_of(coeffs: &SurfaceCoeffs, rx: UserId) -> &CVec {
    match rx {
        UserId::Reflect(_) => &coeffs.v2,
        UserId::Transmit(_) => &coeffs.v1,
    }
}

pub fn build_coeff_data(channels: &ChannelSet, beams: &Beamformers, scenario: &Scenario) -> Result<CoeffSubproblemData> {
    let m = channels.antennas();
    for (what, expected, got) in [
        ("reflection beams", scenario.num_reflect(), beams.w_r.len()),
        ("transmission beams", scenario.num_transmit(), beams.w_t.len()),
        ("reflection channels", scenario.num_reflect(), channels.h_r.len()),
        ("transmission channels", scenario.num_transmit(), channels.h_t.len()),
    ] {
        if expected != got {
            return Err(Error::Dimension { what, expected, got });
        }
    }
    if let Some(w) = beams.w_r.iter().chain(&beams.w_t).find(|w| w.len() != m) {
        return Err(Error::Dimension {
            what: "beam length",
            expected: m,
            got: w.len(),
        });
    }
    let users = scenario.users();
    let through: Vec<CVec> = users.iter().map(|&u| &channels.g * beams.beam(u)).collect();
    let terms = users
        .iter()
        .map(|&rx| {
            let h = match rx {
                UserId::Reflect(k) => &channels.h_r[k],
                UserId::Transmit(q) => &channels.h_t[q],
            };
            users
                .iter()
                .zip(&through)
                .map(|(&owner, gw)| CoeffTerm {
                    b: h.zip_map(gw, |a, g| a.conj() * g),
                    c0: match rx {
                        UserId::Reflect(k) => channels.h_b[k].dot(beams.beam(owner)),
                        UserId::Transmit(_) => Complex64::new(0.0, 0.0),
                    },
                })
                .collect()
        })
        .collect();
    Ok(CoeffSubproblemData { terms })
}

/// Variable layout: `Re v₁, Im v₁, Re v₂, Im v₂`, each of length `L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoeffVars {
    pub offset: usize,
    pub len: usize,
}

impl CoeffVars {
    fn re(&self, side: usize, l: usize) -> usize {
        self.offset + 2 * side * self.len + l
    }

    fn im(&self, side: usize, l: usize) -> usize {
        self.re(side, l) + self.len
    }

    fn side(rx: UserId) -> usize {
        match rx {
            UserId::Transmit(_) => 0,
            UserId::Reflect(_) => 1,
        }
    }

    /// `(Re z, Im z)` of `z = vᴴ b + c₀` on the side seen by `rx`.
    pub fn amplitude(&self, term: &CoeffTerm, rx: UserId) -> (AffineExpr, AffineExpr) {
        let side = Self::side(rx);
        let mut re = AffineExpr::constant(term.c0.re);
        let mut im = AffineExpr::constant(term.c0.im);
        for (l, b) in term.b.iter().enumerate() {
            // (vr - j vi)(br + j bi)
            re.push(self.re(side, l), b.re);
            re.push(self.im(side, l), b.im);
            im.push(self.re(side, l), b.im);
            im.push(self.im(side, l), -b.re);
        }
        (re, im)
    }

    /// `2Re{conj(zₙ) z} - |zₙ|² ≤ |z|²`.
    pub fn linearized_power(&self, term: &CoeffTerm, rx: UserId, z_n: Complex64) -> AffineExpr {
        let (re, im) = self.amplitude(term, rx);
        let mut e = re * (2.0 * z_n.re) + im * (2.0 * z_n.im);
        e.constant -= z_n.norm_sqr();
        e
    }

    pub fn store(&self, coeffs: &SurfaceCoeffs, x: &mut [f64]) {
        for l in 0..self.len {
            x[self.re(0, l)] = coeffs.v1[l].re;
            x[self.im(0, l)] = coeffs.v1[l].im;
            x[self.re(1, l)] = coeffs.v2[l].re;
            x[self.im(1, l)] = coeffs.v2[l].im;
        }
    }

    pub fn extract(&self, x: &[f64]) -> SurfaceCoeffs {
        let side = |s: usize| CVec::from_fn(self.len, |l, _| Complex64::new(x[self.re(s, l)], x[self.im(s, l)]));
        SurfaceCoeffs { v1: side(0), v2: side(1) }
    }
}

#[derive(Debug, Clone)]
pub struct CoeffProblem {
    pub problem: ConicProblem,
    pub vars: CoeffVars,
    pub tau: Vec<usize>,
    pub chi: Vec<usize>,
}

/// Users whose own amplitude does not vanish identically.
fn active(data: &CoeffSubproblemData, scenario: &Scenario, u: UserId) -> bool {
    !data.term(scenario, u, u).is_zero()
}

/// Noise-normalized terms so every power is an SNR.
fn normalized(data: &CoeffSubproblemData, scenario: &Scenario) -> CoeffSubproblemData {
    let users = scenario.users();
    CoeffSubproblemData {
        terms: users
            .iter()
            .map(|&rx| {
                let f = 1.0 / scenario.noise_power(rx).sqrt();
                data.terms[scenario.user_index(rx)].iter().map(|t| t.scaled(f)).collect()
            })
            .collect(),
    }
}

/// Variables, caps and linearized SIC links shared by the coefficient programs.
fn coeff_skeleton(data: &CoeffSubproblemData, v_n: &SurfaceCoeffs, scenario: &Scenario) -> (ConicProblem, CoeffVars) {
    let l = v_n.v1.len();
    let mut problem = ConicProblem::new(0);
    let vars = CoeffVars {
        offset: problem.add_vars(4 * l),
        len: l,
    };
    for e in 0..l {
        let xs = [vars.re(0, e), vars.im(0, e), vars.re(1, e), vars.im(1, e)]
            .into_iter()
            .map(AffineExpr::var)
            .collect();
        problem.soc(format!("cap:{e}"), AffineExpr::constant(1.0), xs);
    }
    for (rx, weak, strong) in sic_links(&scenario.decode_chain()) {
        let tw = data.term(scenario, rx, weak);
        let ts = data.term(scenario, rx, strong);
        let (re, im) = vars.amplitude(tw, rx);
        let rhs = vars.linearized_power(ts, rx, ts.amplitude(side_of(v_n, rx))) + AffineExpr::constant(ROW_SLACK);
        problem.squared_norm_le(format!("sic:{rx}:{weak}<{strong}"), vec![re, im], rhs);
    }
    (problem, vars)
}

/// `s ≥ 1 + Σ_j |z_{u,j}|²` for the interferers of `u`.
fn add_interference_epigraph(
    problem: &mut ConicProblem,
    vars: &CoeffVars,
    data: &CoeffSubproblemData,
    scenario: &Scenario,
    u: UserId,
    s: usize,
) {
    let mut zs = Vec::new();
    for j in interferers(u, scenario.num_reflect(), scenario.num_transmit()) {
        let (re, im) = vars.amplitude(data.term(scenario, u, j), u);
        zs.push(re);
        zs.push(im);
    }
    problem.squared_norm_le(format!("chi:{u}"), zs, AffineExpr::var(s) - AffineExpr::constant(1.0));
}

fn chi_value(data: &CoeffSubproblemData, scenario: &Scenario, v: &SurfaceCoeffs, u: UserId) -> f64 {
    1.0 + interferers(u, scenario.num_reflect(), scenario.num_transmit())
        .into_iter()
        .map(|j| data.term(scenario, u, j).power(side_of(v, u)))
        .sum::<f64>()
}

/// The convexified coefficient problem at the expansion point `v_n`.
pub fn build_coeff_problem(data: &CoeffSubproblemData, v_n: &SurfaceCoeffs, scenario: &Scenario) -> Result<CoeffProblem> {
    let data = normalized(data, scenario);
    let (mut problem, vars) = coeff_skeleton(&data, v_n, scenario);
    let users = scenario.users();
    let mut objective = AffineExpr::default();
    let mut tau = Vec::new();
    let mut chi = Vec::new();
    let mut x0_extra = Vec::new();
    for &u in &users {
        let own = data.term(scenario, u, u);
        let s = problem.add_var();
        chi.push(s);
        add_interference_epigraph(&mut problem, &vars, &data, scenario, u, s);
        let chi_n = chi_value(&data, scenario, v_n, u);
        if !(chi_n > 0.0) {
            return Err(Error::Degenerate(format!("interference-plus-noise of {u} is {chi_n:e}")));
        }
        x0_extra.push((s, chi_n * (1.0 + 1e-3) + 1e-3));
        let z_n = own.amplitude(side_of(v_n, u));
        let beta_n = z_n.norm_sqr();
        let beta = vars.linearized_power(own, u, z_n);
        problem.less_eq(
            format!("qos:{u}"),
            AffineExpr::var(s) * scenario.sinr_min,
            beta.clone() + AffineExpr::constant(ROW_SLACK),
        );
        if own.is_zero() {
            continue;
        }
        if !(beta_n > 0.0) {
            return Err(Error::Degenerate(format!("signal power of {u} is {beta_n:e}")));
        }
        let t = problem.add_var();
        tau.push(t);
        x0_extra.push((t, 1.5));
        let (c, a, b) = log_ratio_weights(beta_n, chi_n);
        let w = scenario.weight(u) / std::f64::consts::LN_2;
        objective.constant -= w * c;
        objective.push(t, w * a);
        objective.push(s, w * b);
        problem.rotated_soc(format!("surrogate:{u}"), AffineExpr::var(t), beta * (1.0 / beta_n), AffineExpr::constant(1.0));
    }
    problem.minimize(&objective);
    let mut x0 = vec![0.0; problem.num_vars];
    vars.store(v_n, &mut x0);
    for (i, v) in x0_extra {
        x0[i] = v;
    }
    problem.warm_start = Some(x0);
    Ok(CoeffProblem { problem, vars, tau, chi })
}

#[derive(Debug, Clone)]
pub struct CoeffSettings {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub solver: SolverSettings,
}

impl Default for CoeffSettings {
    fn default() -> Self {
        CoeffSettings {
            max_iterations: 30,
            tolerance: 1e-3,
            solver: SolverSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoeffOutcome {
    pub coeffs: SurfaceCoeffs,
    /// Exact weighted sum rate after each accepted iteration, starting with the initializer.
    pub rate_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn weighted_rate(scenario: &Scenario, channels: &ChannelSet, coeffs: &SurfaceCoeffs, beams: &Beamformers) -> Result<f64> {
    Ok(evaluate(scenario, channels, coeffs, beams)?.weighted_sum_rate(scenario))
}

fn usable(problem: &ConicProblem, sol: &crate::conic::ConicSolution) -> bool {
    sol.is_optimal() || (sol.status != SolveStatus::Infeasible && problem.max_violation(&sol.x) <= 1e-9)
}

/// Pulls coefficients back inside the energy caps after solver round-off.
fn clamp_caps(mut c: SurfaceCoeffs) -> SurfaceCoeffs {
    for l in 0..c.v1.len() {
        let e = c.v1[l].norm_sqr() + c.v2[l].norm_sqr();
        if e > 1.0 {
            let f = Complex64::from(1.0 / e.sqrt());
            c.v1[l] *= f;
            c.v2[l] *= f;
        }
    }
    c
}

pub fn solve_coeff_subproblem(
    channels: &ChannelSet,
    beams: &Beamformers,
    coeffs_init: &SurfaceCoeffs,
    scenario: &Scenario,
    settings: &CoeffSettings,
) -> Result<CoeffOutcome> {
    let data = build_coeff_data(channels, beams, scenario)?;
    let mut coeffs = coeffs_init.clone();
    let mut rate = weighted_rate(scenario, channels, &coeffs, beams)?;
    let mut history = vec![rate];
    let users = scenario.users();
    if users.iter().all(|&u| !active(&data, scenario, u)) {
        return Ok(CoeffOutcome {
            coeffs,
            rate_history: history,
            iterations: 0,
            converged: true,
        });
    }
    let mut converged = false;
    let mut iterations = 0;
    while iterations < settings.max_iterations {
        let built = build_coeff_problem(&data, &coeffs, scenario)?;
        let sol = solve_conic(&built.problem, &settings.solver);
        iterations += 1;
        if !usable(&built.problem, &sol) {
            if iterations == 1 && sol.status == SolveStatus::Infeasible {
                return Err(Error::Infeasible {
                    stage: "coefficients",
                    family: sol.binding.unwrap_or_else(|| "unknown".into()),
                });
            }
            log::warn!("coefficient SCA stopped: {}", sol.status);
            break;
        }
        let next = clamp_caps(built.vars.extract(&sol.x));
        let next_rate = weighted_rate(scenario, channels, &next, beams)?;
        if next_rate < rate - 1e-9 * rate.abs().max(1.0) {
            log::debug!("coefficient step rejected: {next_rate} < {rate}");
            converged = true;
            break;
        }
        let gain = (next_rate - rate) / rate.abs().max(1e-12);
        coeffs = next;
        rate = next_rate;
        history.push(rate);
        if gain < settings.tolerance {
            converged = true;
            break;
        }
    }
    Ok(CoeffOutcome {
        coeffs,
        rate_history: history,
        iterations,
        converged,
    })
}

/// One SCA step maximizing the smallest linearized QoS slack `β̃ - γ_min χ`
/// (noise units) over the coefficients, SIC links and caps kept. Returns the
/// new coefficients and the exact smallest slack they attain.
pub fn coeff_qos_slack_step(
    channels: &ChannelSet,
    beams: &Beamformers,
    v_n: &SurfaceCoeffs,
    scenario: &Scenario,
    solver: &SolverSettings,
) -> Result<(SurfaceCoeffs, f64)> {
    let data = normalized(&build_coeff_data(channels, beams, scenario)?, scenario);
    let (mut problem, vars) = coeff_skeleton(&data, v_n, scenario);
    let t = problem.add_var();
    let mut extra = Vec::new();
    for u in scenario.users() {
        let s = problem.add_var();
        add_interference_epigraph(&mut problem, &vars, &data, scenario, u, s);
        extra.push((s, chi_value(&data, scenario, v_n, u) + 1e-3));
        let own = data.term(scenario, u, u);
        let beta = vars.linearized_power(own, u, own.amplitude(side_of(v_n, u)));
        problem.less_eq(
            format!("qos:{u}"),
            AffineExpr::var(t),
            beta - AffineExpr::var(s) * scenario.sinr_min,
        );
    }
    problem.minimize(&AffineExpr::term(t, -1.0));
    let mut x0 = vec![0.0; problem.num_vars];
    vars.store(v_n, &mut x0);
    for (i, v) in extra {
        x0[i] = v;
    }
    x0[t] = -1e3;
    problem.warm_start = Some(x0);
    let sol = solve_conic(&problem, solver);
    if !usable(&problem, &sol) {
        return Err(Error::Solver {
            stage: "coefficient feasibility",
            detail: sol.status.to_string(),
        });
    }
    let next = clamp_caps(vars.extract(&sol.x));
    let slack = exact_qos_slack(&data, scenario, &next);
    Ok((next, slack))
}

/// Smallest `β - γ_min χ` over users, in noise units.
fn exact_qos_slack(data: &CoeffSubproblemData, scenario: &Scenario, v: &SurfaceCoeffs) -> f64 {
    scenario
        .users()
        .into_iter()
        .map(|u| data.term(scenario, u, u).power(side_of(v, u)) - scenario.sinr_min * chi_value(data, scenario, v, u))
        .fold(f64::INFINITY, f64::min)
}

/// Coefficients with equal energy split whose phases co-phase each element's
/// cascaded path to the first user of each half-space, for a beam along the
/// BS departure direction.
pub fn aligned_coefficients(channels: &ChannelSet) -> SurfaceCoeffs {
    let l = channels.elements();
    let a = std::f64::consts::FRAC_1_SQRT_2;
    let along = &channels.g * &channels.a_t;
    let phase = |h: Option<&CVec>| -> CVec {
        CVec::from_fn(l, |i, _| {
            let b = h.map_or(Complex64::from(1.0), |h| h[i].conj() * along[i]);
            if b.norm() > 0.0 {
                b * (a / b.norm())
            } else {
                Complex64::from(a)
            }
        })
    };
    SurfaceCoeffs {
        v1: phase(channels.h_t.first()),
        v2: phase(channels.h_r.first()),
    }
}

#[cfg(test)]
mod tests;
