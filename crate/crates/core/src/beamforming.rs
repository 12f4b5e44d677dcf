//! Beamforming subproblem: semidefinite relaxation with the log-ratio
//! minorant, iterated to a fixed point, then rank-one recovery.
//!
//! Covariances are optimized in a reduced basis `B` spanning the conjugated
//! effective channels, `W = P_max · B X Bᴴ`. Every received power and the
//! power budget only see `W` through that span, so the reduction is exact.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::conic::{solve_conic, AffineExpr, ConicProblem, HermitianBlock, SolveStatus, SolverSettings};
use crate::error::{Error, Result};
use crate::metrics::{feasibility, feasibility_with, interferers, sic_links, Beamformers, EffectiveChannels, Feasibility};
use crate::scenario::{Scenario, UserId};
use crate::surrogate::log_ratio_weights;
use crate::{CMat, CVec};

/// Slack used when judging recovered beamformers feasible.
pub const RECOVERY_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariancePool {
    pub w_r: Vec<CMat>,
    pub w_t: Vec<CMat>,
}

impl CovariancePool {
    pub fn from_beamformers(beams: &Beamformers) -> Self {
        let outer = |w: &CVec| w * w.adjoint();
        CovariancePool {
            w_r: beams.w_r.iter().map(outer).collect(),
            w_t: beams.w_t.iter().map(outer).collect(),
        }
    }

    pub fn cov(&self, user: UserId) -> &CMat {
        match user {
            UserId::Reflect(k) => &self.w_r[k],
            UserId::Transmit(q) => &self.w_t[q],
        }
    }

    pub fn cov_mut(&mut self, user: UserId) -> &mut CMat {
        match user {
            UserId::Reflect(k) => &mut self.w_r[k],
            UserId::Transmit(q) => &mut self.w_t[q],
        }
    }

    pub fn total_power(&self) -> f64 {
        self.w_r.iter().chain(&self.w_t).map(|w| w.trace().re).sum()
    }

    /// `(ξ, ψ)` of `user` in units of its noise power.
    pub fn signal_terms(&self, eff: &EffectiveChannels, scenario: &Scenario, user: UserId) -> (f64, f64) {
        let f = eff.row(user);
        let noise = scenario.noise_power(user);
        let xi = received(f, self.cov(user)) / noise;
        let psi = 1.0
            + interferers(user, scenario.num_reflect(), scenario.num_transmit())
                .into_iter()
                .map(|j| received(f, self.cov(j)))
                .sum::<f64>()
                / noise;
        (xi, psi)
    }

    /// Weighted sum rate in bps/Hz.
    pub fn weighted_rate(&self, eff: &EffectiveChannels, scenario: &Scenario) -> f64 {
        scenario
            .users()
            .into_iter()
            .map(|u| {
                let (xi, psi) = self.signal_terms(eff, scenario, u);
                scenario.weight(u) * (1.0 + xi / psi).log2()
            })
            .sum()
    }

    pub fn feasibility(&self, eff: &EffectiveChannels, scenario: &Scenario) -> Feasibility {
        feasibility_with(scenario, self.total_power(), |rx, u| received(eff.row(rx), self.cov(u)))
    }
}

/// `fᵀ W conj(f)`, the power received through row `f`.
pub fn received(f: &CVec, w: &CMat) -> f64 {
    (f.transpose() * w * f.map(|z| z.conj()))[(0, 0)].re
}

/// Equal-power maximum-ratio beams, scaled to `P_max`.
pub fn mrt_beamformers(eff: &EffectiveChannels, max_power: f64) -> Beamformers {
    let users = eff.f_r.len() + eff.f_t.len();
    let amp = (max_power / users.max(1) as f64).sqrt();
    let steer = |f: &CVec| -> CVec {
        let n = f.norm();
        if n > 0.0 {
            f.map(|z| z.conj()) * Complex64::from(amp / n)
        } else {
            let mut w = CVec::zeros(f.len());
            if !w.is_empty() {
                w[0] = Complex64::from(amp);
            }
            w
        }
    };
    Beamformers {
        w_r: eff.f_r.iter().map(steer).collect(),
        w_t: eff.f_t.iter().map(steer).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingSettings {
    pub max_iterations: usize,
    /// Relative surrogate improvement below which the SCA loop stops.
    pub tolerance: f64,
    /// Optimize in the span of the effective channels.
    pub subspace: bool,
    pub dominance_threshold: f64,
    pub randomization_samples: usize,
    /// Rank penalty rounds run while any dominance stays below `penalty_target`.
    pub max_penalty_rounds: usize,
    pub penalty_start: f64,
    pub penalty_target: f64,
    pub seed: u64,
    pub solver: SolverSettings,
}

impl Default for BeamformingSettings {
    fn default() -> Self {
        BeamformingSettings {
            max_iterations: 30,
            tolerance: 1e-3,
            subspace: true,
            dominance_threshold: 0.99,
            randomization_samples: 200,
            max_penalty_rounds: 40,
            penalty_start: 1.0,
            penalty_target: 1.0 - 1e-6,
            seed: 0,
            solver: SolverSettings::default(),
        }
    }
}

/// One convexified beamforming problem and the map back to covariances.
#[derive(Debug, Clone)]
pub struct BeamformingProblem {
    pub problem: ConicProblem,
    /// Users in [`Scenario::users`] order with their covariance blocks.
    pub blocks: Vec<(UserId, HermitianBlock)>,
    pub tau: Vec<usize>,
    /// Orthonormal `M × r` basis.
    pub basis: CMat,
    pub max_power: f64,
}

impl BeamformingProblem {
    pub fn pool(&self, x: &[f64]) -> CovariancePool {
        let m = self.basis.nrows();
        let k = self.blocks.iter().filter(|(u, _)| matches!(u, UserId::Reflect(_))).count();
        let q = self.blocks.len() - k;
        let mut pool = CovariancePool {
            w_r: vec![CMat::zeros(m, m); k],
            w_t: vec![CMat::zeros(m, m); q],
        };
        let scale = Complex64::from(self.max_power);
        for (u, block) in &self.blocks {
            let w = &self.basis * block.extract(x) * self.basis.adjoint() * scale;
            *pool.cov_mut(*u) = (&w + w.adjoint()) * Complex64::from(0.5);
        }
        pool
    }

    /// Parameters reproducing `pool` as closely as the basis allows.
    pub fn embed_pool(&self, pool: &CovariancePool, x: &mut [f64]) {
        let scale = Complex64::from(1.0 / self.max_power);
        for (u, block) in &self.blocks {
            let reduced = self.basis.adjoint() * pool.cov(*u) * &self.basis * scale;
            block.store(&reduced, x);
        }
    }
}

/// Orthonormal basis of the span of `vectors` (modified Gram-Schmidt, two passes).
pub fn orthonormal_span(vectors: &[CVec], dim: usize) -> CMat {
    let scale = vectors.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut basis: Vec<CVec> = Vec::new();
    for v in vectors {
        let mut u = v.clone();
        for _ in 0..2 {
            for b in &basis {
                let c = b.dotc(&u);
                u -= b * c;
            }
        }
        let n = u.norm();
        if n > 1e-10 * scale && n > 0.0 {
            basis.push(u / Complex64::from(n));
        }
    }
    if basis.is_empty() {
        let mut e = CVec::zeros(dim);
        if dim > 0 {
            e[0] = Complex64::from(1.0);
        }
        basis.push(e);
    }
    CMat::from_columns(&basis)
}

fn check_rows(eff: &EffectiveChannels, scenario: &Scenario) -> Result<()> {
    for (what, expected, got) in [
        ("reflection channels", scenario.num_reflect(), eff.f_r.len()),
        ("transmission channels", scenario.num_transmit(), eff.f_t.len()),
    ] {
        if expected != got {
            return Err(Error::Dimension { what, expected, got });
        }
    }
    for f in eff.f_r.iter().chain(&eff.f_t) {
        if f.len() != scenario.antennas {
            return Err(Error::Dimension {
                what: "effective channel length",
                expected: scenario.antennas,
                got: f.len(),
            });
        }
    }
    Ok(())
}

/// Covariance blocks with the power, SIC and PSD constraints shared by every
/// beamforming program.
struct Skeleton {
    problem: ConicProblem,
    blocks: Vec<(UserId, HermitianBlock)>,
    basis: CMat,
    /// `(P/σ²) g gᴴ` with `g = Bᴴ conj(f)`, per receiver.
    gains: Vec<CMat>,
}

impl Skeleton {
    fn new(eff: &EffectiveChannels, scenario: &Scenario, subspace: bool) -> Result<Self> {
        check_rows(eff, scenario)?;
        let users = scenario.users();
        let m = scenario.antennas;
        let conj_rows: Vec<CVec> = users.iter().map(|&u| eff.row(u).map(|z| z.conj())).collect();
        let basis = if subspace {
            orthonormal_span(&conj_rows, m)
        } else {
            CMat::identity(m, m)
        };
        let r = basis.ncols();
        let mut problem = ConicProblem::new(0);
        let blocks: Vec<(UserId, HermitianBlock)> = users
            .iter()
            .map(|&u| (u, HermitianBlock::new(problem.add_vars(HermitianBlock::num_params(r)), r)))
            .collect();
        let gains = users
            .iter()
            .zip(&conj_rows)
            .map(|(&u, c)| {
                let g = basis.adjoint() * c;
                &g * g.adjoint() * Complex64::from(scenario.max_power / scenario.noise_power(u))
            })
            .collect();
        let mut sk = Skeleton {
            problem,
            blocks,
            basis,
            gains,
        };
        let mut budget = AffineExpr::default();
        for (_, b) in &sk.blocks {
            budget += b.trace();
        }
        sk.problem.less_eq("power", budget, AffineExpr::constant(1.0));
        for (rx, weak, strong) in sic_links(&scenario.decode_chain()) {
            let (lhs, rhs) = (sk.recv(scenario, rx, weak), sk.recv(scenario, rx, strong));
            sk.problem.less_eq(format!("sic:{rx}:{weak}<{strong}"), lhs, rhs);
        }
        for i in 0..sk.blocks.len() {
            let (u, b) = sk.blocks[i];
            sk.problem.psd(format!("psd:{u}"), 2 * r, b.embedded_entries())?;
        }
        Ok(sk)
    }

    /// Power of `owner`'s beam at `rx`, in units of the receiver noise.
    fn recv(&self, scenario: &Scenario, rx: UserId, owner: UserId) -> AffineExpr {
        self.blocks[scenario.user_index(owner)]
            .1
            .trace_form(&self.gains[scenario.user_index(rx)])
    }

    /// `1 + Σ` interference at `u`, in noise units.
    fn psi(&self, scenario: &Scenario, u: UserId) -> AffineExpr {
        let mut psi = AffineExpr::constant(1.0);
        for j in interferers(u, scenario.num_reflect(), scenario.num_transmit()) {
            psi += self.recv(scenario, u, j);
        }
        psi
    }

    fn finish(self, tau: Vec<usize>, max_power: f64, pool: Option<&CovariancePool>, extra_start: f64) -> BeamformingProblem {
        let mut out = BeamformingProblem {
            problem: self.problem,
            blocks: self.blocks,
            tau,
            basis: self.basis,
            max_power,
        };
        let mut x0 = vec![0.0; out.problem.num_vars];
        match pool {
            Some(pool) => out.embed_pool(pool, &mut x0),
            None => {
                let share = 1.0 / (2.0 * (out.blocks.len() * out.basis.ncols()) as f64);
                for (_, b) in &out.blocks {
                    b.store(&(CMat::identity(b.dim, b.dim) * Complex64::from(share)), &mut x0);
                }
            }
        }
        for &t in &out.tau {
            x0[t] = extra_start;
        }
        out.problem.warm_start = Some(x0);
        out
    }
}

pub fn build_beamforming_problem(
    eff: &EffectiveChannels,
    pool_prev: &CovariancePool,
    scenario: &Scenario,
    subspace: bool,
) -> Result<BeamformingProblem> {
    let mut sk = Skeleton::new(eff, scenario, subspace)?;
    let users = scenario.users();
    let tau: Vec<usize> = users.iter().map(|_| sk.problem.add_var()).collect();
    let mut objective = AffineExpr::default();
    for (idx, &u) in users.iter().enumerate() {
        let (xi_n, psi_n) = pool_prev.signal_terms(eff, scenario, u);
        if !(xi_n > 0.0) || !psi_n.is_finite() {
            return Err(Error::Degenerate(format!("signal power of {u} is {xi_n:e}")));
        }
        let xi = sk.recv(scenario, u, u);
        let psi = sk.psi(scenario, u);
        let (c, a, b) = log_ratio_weights(xi_n, psi_n);
        let w = scenario.weight(u) / std::f64::consts::LN_2;
        objective.constant -= w * c;
        objective.push(tau[idx], w * a);
        objective += psi.clone() * (w * b);
        sk.problem.rotated_soc(
            format!("surrogate:{u}"),
            AffineExpr::var(tau[idx]),
            xi.clone() * (1.0 / xi_n),
            AffineExpr::constant(1.0),
        );
        sk.problem.less_eq(format!("qos:{u}"), psi * scenario.sinr_min, xi);
    }
    sk.problem.minimize(&objective);
    Ok(sk.finish(tau, scenario.max_power, Some(pool_prev), 1.5))
}

/// Maximizes the smallest QoS slack `ξ_u - γ_min ψ_u` (noise units) under the
/// power and SIC constraints. Returns the covariances and the attained slack;
/// a non-negative slack certifies a QoS-feasible starting point.
pub fn max_min_qos_slack(
    eff: &EffectiveChannels,
    scenario: &Scenario,
    subspace: bool,
    solver: &SolverSettings,
) -> Result<(CovariancePool, f64)> {
    let mut sk = Skeleton::new(eff, scenario, subspace)?;
    let t = sk.problem.add_var();
    for u in scenario.users() {
        let slack = sk.recv(scenario, u, u) - sk.psi(scenario, u) * scenario.sinr_min;
        sk.problem.less_eq(format!("qos:{u}"), AffineExpr::var(t), slack);
    }
    sk.problem.minimize(&AffineExpr::term(t, -1.0));
    let mut built = sk.finish(vec![t], scenario.max_power, None, 0.0);
    let sol = solve_conic(&built.problem, solver);
    if !(sol.is_optimal() || built.problem.max_violation(&sol.x) <= 1e-9) {
        return Err(Error::Solver {
            stage: "beamforming feasibility",
            detail: sol.status.to_string(),
        });
    }
    let slack = sol.x[t];
    built.tau.clear();
    Ok((built.pool(&sol.x), slack))
}

/// Leading eigenpair of a Hermitian PSD matrix as `(√λ₁ u₁, λ₁ / Tr W)`.
pub fn rank_one_recover(w: &CMat) -> (CVec, f64) {
    let n = w.nrows();
    let trace = w.trace().re;
    if n == 0 || !(trace > 0.0) || w.iter().all(|z| z.norm() == 0.0) {
        return (CVec::zeros(n), 0.0);
    }
    let herm = (w + w.adjoint()) * Complex64::from(0.5);
    let eig = herm.symmetric_eigen();
    let (i, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty spectrum");
    let lambda = lambda.max(0.0);
    let mut u: CVec = eig.eigenvectors.column(i).into_owned();
    let (_, pivot) = u
        .iter()
        .enumerate()
        .map(|(j, z)| (j, *z))
        .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
        .expect("non-empty vector");
    if pivot.norm() > 0.0 {
        u *= pivot.conj() / pivot.norm();
    }
    (u * Complex64::from(lambda.sqrt()), lambda / trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamformingOutcome {
    pub beams: Beamformers,
    /// Relaxed covariances at the last SCA iterate.
    pub relaxed: CovariancePool,
    /// `λ₁/Tr W` of the relaxed optimum per user in [`Scenario::users`] order.
    pub dominance: Vec<f64>,
    /// Dominance after the rank penalty rounds.
    pub final_dominance: Vec<f64>,
    pub penalty_rounds: usize,
    pub randomized: bool,
    /// Surrogate optimum (bps/Hz) per SCA iteration.
    pub surrogate_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Feasibility of the recovered beams.
    pub feasibility: Feasibility,
}

pub fn solve_beamforming(
    eff: &EffectiveChannels,
    pool_init: &CovariancePool,
    scenario: &Scenario,
    settings: &BeamformingSettings,
) -> Result<BeamformingOutcome> {
    let mut pool = pool_init.clone();
    let mut relaxed: Option<CovariancePool> = None;
    let mut history: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < settings.max_iterations {
        let built = build_beamforming_problem(eff, &pool, scenario, settings.subspace)?;
        let sol = solve_conic(&built.problem, &settings.solver);
        iterations += 1;
        let usable = sol.is_optimal() || (sol.status != SolveStatus::Infeasible && built.problem.max_violation(&sol.x) <= 1e-9);
        if !usable {
            if relaxed.is_some() {
                log::warn!("beamforming SCA stopped early: {}", sol.status);
                break;
            }
            return Err(match sol.status {
                SolveStatus::Infeasible => Error::Infeasible {
                    stage: "beamforming",
                    family: sol.binding.unwrap_or_else(|| "unknown".into()),
                },
                other => Error::Solver {
                    stage: "beamforming",
                    detail: other.to_string(),
                },
            });
        }
        let value = -sol.objective;
        let next = built.pool(&sol.x);
        let improvement = history
            .last()
            .map(|&prev: &f64| (value - prev) / prev.abs().max(1e-12));
        history.push(value);
        pool = next.clone();
        relaxed = Some(next);
        if let Some(gain) = improvement {
            if gain < settings.tolerance {
                converged = true;
                break;
            }
        }
    }
    let relaxed = relaxed.expect("at least one SCA iteration");
    let dominance = dominance_of(&relaxed, scenario);
    let mut refined = relaxed.clone();
    let mut penalty_rounds = 0;
    let mut rho = settings.penalty_start;
    while penalty_rounds < settings.max_penalty_rounds
        && dominance_of(&refined, scenario).iter().any(|&d| d < settings.penalty_target && d > 0.0)
    {
        let mut built = build_beamforming_problem(eff, &refined, scenario, settings.subspace)?;
        add_rank_penalty(&mut built, &refined, rho);
        let sol = solve_conic(&built.problem, &settings.solver);
        if !(sol.is_optimal() || built.problem.max_violation(&sol.x) <= 1e-9) {
            log::warn!("rank penalty round failed: {}", sol.status);
            break;
        }
        refined = built.pool(&sol.x);
        penalty_rounds += 1;
        rho *= 2.0;
    }
    let (beams, final_dominance, randomized) = recover_beams(eff, &refined, scenario, settings);
    let feasibility = feasibility(scenario, eff, &beams);
    Ok(BeamformingOutcome {
        beams,
        relaxed,
        dominance,
        final_dominance,
        penalty_rounds,
        randomized,
        surrogate_history: history,
        iterations,
        converged,
        feasibility,
    })
}

fn dominance_of(pool: &CovariancePool, scenario: &Scenario) -> Vec<f64> {
    scenario.users().into_iter().map(|u| rank_one_recover(pool.cov(u)).1).collect()
}

/// Adds `ρ Σ_u (Tr X_u - u₁ᴴ X_u u₁)`, a linearization of the gap between the
/// trace and the largest eigenvalue, taken at `pool`.
pub fn add_rank_penalty(built: &mut BeamformingProblem, pool: &CovariancePool, rho: f64) {
    let scale = Complex64::from(1.0 / built.max_power);
    let mut penalty = AffineExpr::default();
    for (u, block) in &built.blocks {
        let reduced = built.basis.adjoint() * pool.cov(*u) * &built.basis * scale;
        let (lead, _) = rank_one_recover(&reduced);
        let n = lead.norm();
        let dir = if n > 0.0 { lead / Complex64::from(n) } else { lead };
        penalty += block.trace() * rho;
        penalty += block.trace_form(&(&dir * dir.adjoint())) * (-rho);
    }
    built.problem.minimize(&penalty);
}

fn weighted_rate(eff: &EffectiveChannels, beams: &Beamformers, scenario: &Scenario) -> f64 {
    CovariancePool::from_beamformers(beams).weighted_rate(eff, scenario)
}

/// Eigen recovery, with Gaussian randomization when any covariance is not
/// dominated by one eigenvalue.
fn recover_beams(
    eff: &EffectiveChannels,
    relaxed: &CovariancePool,
    scenario: &Scenario,
    settings: &BeamformingSettings,
) -> (Beamformers, Vec<f64>, bool) {
    let users = scenario.users();
    let mut beams = Beamformers::zeros(scenario.antennas, scenario.num_reflect(), scenario.num_transmit());
    let mut dominance = Vec::with_capacity(users.len());
    for &u in &users {
        let (w, d) = rank_one_recover(relaxed.cov(u));
        *beams.beam_mut(u) = w;
        dominance.push(d);
    }
    if dominance.iter().all(|&d| d >= settings.dominance_threshold || d == 0.0) {
        return (beams, dominance, false);
    }
    let eigen_ok = feasibility(scenario, eff, &beams).holds(RECOVERY_TOLERANCE);
    let mut best = eigen_ok.then(|| (weighted_rate(eff, &beams, scenario), beams.clone()));
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let factors: Vec<(CMat, f64)> = users
        .iter()
        .map(|&u| {
            let w = relaxed.cov(u);
            let herm = (w + w.adjoint()) * Complex64::from(0.5);
            let eig = herm.symmetric_eigen();
            let sqrt_l = eig.eigenvalues.map(|l| Complex64::from(l.max(0.0).sqrt()));
            (eig.eigenvectors * DMatrix::from_diagonal(&sqrt_l), w.trace().re.max(0.0))
        })
        .collect();
    let mut from_samples = false;
    for _ in 0..settings.randomization_samples {
        let mut cand = Beamformers::zeros(scenario.antennas, scenario.num_reflect(), scenario.num_transmit());
        for (&u, (root, power)) in users.iter().zip(&factors) {
            let xi = CVec::from_fn(root.ncols(), |_, _| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
            });
            let w = root * xi;
            let n = w.norm();
            *cand.beam_mut(u) = if n > 0.0 { w * Complex64::from(power.sqrt() / n) } else { w };
        }
        if !feasibility(scenario, eff, &cand).holds(RECOVERY_TOLERANCE) {
            continue;
        }
        let rate = weighted_rate(eff, &cand, scenario);
        if best.as_ref().map_or(true, |(r, _)| rate > *r) {
            best = Some((rate, cand));
            from_samples = true;
        }
    }
    match best {
        Some((_, b)) => (b, dominance, from_samples),
        None => {
            log::warn!("no feasible rank-one beamformer found; keeping the eigen recovery");
            (beams, dominance, false)
        }
    }
}

#[cfg(test)]
mod tests;
