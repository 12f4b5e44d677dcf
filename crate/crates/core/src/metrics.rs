//! Effective channels, SINRs, sum rate and SIC ordering diagnostics.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::scenario::{Scenario, UserId};
use crate::surface::SurfaceCoeffs;
use crate::CVec;

/// Tolerance on the power budget.
pub const POWER_TOLERANCE: f64 = 1e-6;
/// Tolerance on the SINR floor.
pub const QOS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Beamformers {
    pub w_r: Vec<CVec>,
    pub w_t: Vec<CVec>,
}

impl Beamformers {
    pub fn zeros(antennas: usize, k: usize, q: usize) -> Self {
        Beamformers {
            w_r: vec![CVec::zeros(antennas); k],
            w_t: vec![CVec::zeros(antennas); q],
        }
    }

    pub fn beam(&self, user: UserId) -> &CVec {
        match user {
            UserId::Reflect(k) => &self.w_r[k],
            UserId::Transmit(q) => &self.w_t[q],
        }
    }

    pub fn beam_mut(&mut self, user: UserId) -> &mut CVec {
        match user {
            UserId::Reflect(k) => &mut self.w_r[k],
            UserId::Transmit(q) => &mut self.w_t[q],
        }
    }

    pub fn total_power(&self) -> f64 {
        self.w_r
            .iter()
            .chain(&self.w_t)
            .map(|w| w.norm_squared())
            .sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let c = Complex64::from(factor);
        Beamformers {
            w_r: self.w_r.iter().map(|w| w * c).collect(),
            w_t: self.w_t.iter().map(|w| w * c).collect(),
        }
    }
}

/// Effective rows `F_{R,k}` and `F_{T,q}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveChannels {
    pub f_r: Vec<CVec>,
    pub f_t: Vec<CVec>,
}

impl EffectiveChannels {
    pub fn row(&self, user: UserId) -> &CVec {
        match user {
            UserId::Reflect(k) => &self.f_r[k],
            UserId::Transmit(q) => &self.f_t[q],
        }
    }

    /// `|F_user w|²`.
    pub fn gain(&self, receiver: UserId, w: &CVec) -> f64 {
        self.row(receiver).dot(w).norm_sqr()
    }
}

/// `F_{R,k} = h_{R,k}ᴴ Φᴴ G + H_{b,k}` and `F_{T,q} = h_{T,q}ᴴ Θᴴ G`.
pub fn effective_channels(channels: &ChannelSet, coeffs: &SurfaceCoeffs) -> Result<EffectiveChannels> {
    let l = channels.elements();
    for (what, got) in [("v1 length", coeffs.v1.len()), ("v2 length", coeffs.v2.len())] {
        if got != l {
            return Err(Error::Dimension {
                what,
                expected: l,
                got,
            });
        }
    }
    let gt = channels.g.transpose();
    let through = |h: &CVec, v: &CVec| -> CVec {
        let weights = h.zip_map(v, |a, b| (a * b).conj());
        &gt * weights
    };
    let f_r = channels
        .h_r
        .iter()
        .zip(&channels.h_b)
        .map(|(h, hb)| through(h, &coeffs.v2) + hb)
        .collect();
    let f_t = channels.h_t.iter().map(|h| through(h, &coeffs.v1)).collect();
    Ok(EffectiveChannels { f_r, f_t })
}

/// Per-user SINR terms and rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinrReport {
    pub gamma_r: Vec<f64>,
    pub gamma_t: Vec<f64>,
    /// Useful power `ξ_{R,k}`.
    pub numer_r: Vec<f64>,
    /// Interference plus noise `ψ_{R,k}`.
    pub denom_r: Vec<f64>,
    /// Useful power `β_{T,q}`.
    pub numer_t: Vec<f64>,
    /// Interference plus noise `χ_{T,q}`.
    pub denom_t: Vec<f64>,
    /// Unweighted `Σ log2(1+γ)`.
    pub sum_rate: f64,
}

impl SinrReport {
    pub fn gamma(&self, user: UserId) -> f64 {
        match user {
            UserId::Reflect(k) => self.gamma_r[k],
            UserId::Transmit(q) => self.gamma_t[q],
        }
    }

    pub fn weighted_sum_rate(&self, scenario: &Scenario) -> f64 {
        scenario
            .users()
            .into_iter()
            .map(|u| scenario.weight(u) * (1.0 + self.gamma(u)).log2())
            .sum()
    }
}

/// Interferers of `user` under the fixed SIC order.
pub fn interferers(user: UserId, k: usize, q: usize) -> Vec<UserId> {
    match user {
        UserId::Reflect(i) => (i + 1..k).map(UserId::Reflect).collect(),
        UserId::Transmit(i) => (i + 1..q)
            .map(UserId::Transmit)
            .chain((0..k).map(UserId::Reflect))
            .collect(),
    }
}

pub fn sinr_all(
    eff: &EffectiveChannels,
    beams: &Beamformers,
    noise_r: &[f64],
    noise_t: &[f64],
) -> Result<SinrReport> {
    let (k, q) = (eff.f_r.len(), eff.f_t.len());
    for (what, expected, got) in [
        ("reflection beams", k, beams.w_r.len()),
        ("transmission beams", q, beams.w_t.len()),
        ("reflection noise", k, noise_r.len()),
        ("transmission noise", q, noise_t.len()),
    ] {
        if expected != got {
            return Err(Error::Dimension {
                what,
                expected,
                got,
            });
        }
    }
    if noise_r.iter().chain(noise_t).any(|&n| !(n > 0.0)) {
        return Err(Error::NonPositive("noise power"));
    }
    let terms = |user: UserId, noise: f64| -> (f64, f64) {
        let s = eff.gain(user, beams.beam(user));
        let i: f64 = interferers(user, k, q)
            .into_iter()
            .map(|j| eff.gain(user, beams.beam(j)))
            .sum();
        (s, i + noise)
    };
    let (numer_r, denom_r): (Vec<f64>, Vec<f64>) = (0..k)
        .map(|i| terms(UserId::Reflect(i), noise_r[i]))
        .unzip();
    let (numer_t, denom_t): (Vec<f64>, Vec<f64>) = (0..q)
        .map(|i| terms(UserId::Transmit(i), noise_t[i]))
        .unzip();
    let ratio = |n: &[f64], d: &[f64]| n.iter().zip(d).map(|(a, b)| a / b).collect::<Vec<_>>();
    let gamma_r = ratio(&numer_r, &denom_r);
    let gamma_t = ratio(&numer_t, &denom_t);
    let sum_rate = gamma_r.iter().chain(&gamma_t).map(|g| (1.0 + g).log2()).sum();
    Ok(SinrReport {
        gamma_r,
        gamma_t,
        numer_r,
        denom_r,
        numer_t,
        denom_t,
        sum_rate,
    })
}

/// Full evaluation for a scenario: effective channels then SINRs.
pub fn evaluate(
    scenario: &Scenario,
    channels: &ChannelSet,
    coeffs: &SurfaceCoeffs,
    beams: &Beamformers,
) -> Result<SinrReport> {
    let eff = effective_channels(channels, coeffs)?;
    let noise_r: Vec<f64> = scenario.reflect_users.iter().map(|u| u.noise_power).collect();
    let noise_t: Vec<f64> = scenario.transmit_users.iter().map(|u| u.noise_power).collect();
    sinr_all(&eff, beams, &noise_r, &noise_t)
}

/// Every SIC link as `(receiver, weaker beam, stronger beam)`: received power
/// of the first beam must not exceed that of the second.
pub fn sic_links(chain: &[UserId]) -> Vec<(UserId, UserId, UserId)> {
    let mut out = Vec::new();
    for &rx in chain {
        for pair in chain.windows(2) {
            out.push((rx, pair[0], pair[1]));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    /// First adjacent pair breaking `‖F_{T,1}‖ ≤ … ≤ ‖F_{T,Q}‖ ≤ ‖F_{R,1}‖ ≤ … ≤ ‖F_{R,K}‖`.
    pub gain_violation: Option<(UserId, UserId)>,
    /// First SIC link broken, `(receiver, weaker, stronger)`.
    pub sic_violation: Option<(UserId, UserId, UserId)>,
}

impl OrderingReport {
    pub fn gains_ordered(&self) -> bool {
        self.gain_violation.is_none()
    }

    pub fn sic_ordered(&self) -> bool {
        self.sic_violation.is_none()
    }
}

/// Checks gain and SIC orderings; `slack` is an absolute allowance on received powers.
pub fn check_orderings(eff: &EffectiveChannels, beams: &Beamformers, slack: f64) -> OrderingReport {
    let (k, q) = (eff.f_r.len(), eff.f_t.len());
    let gain_chain: Vec<UserId> = (0..q)
        .map(UserId::Transmit)
        .chain((0..k).map(UserId::Reflect))
        .collect();
    let gain_violation = gain_chain
        .windows(2)
        .find(|p| eff.row(p[0]).norm_squared() > eff.row(p[1]).norm_squared() + slack)
        .map(|p| (p[0], p[1]));
    let chain: Vec<UserId> = (0..k)
        .rev()
        .map(UserId::Reflect)
        .chain((0..q).rev().map(UserId::Transmit))
        .collect();
    let sic_violation = sic_links(&chain).into_iter().find(|&(rx, a, b)| {
        eff.gain(rx, beams.beam(a)) > eff.gain(rx, beams.beam(b)) + slack
    });
    OrderingReport {
        gain_violation,
        sic_violation,
    }
}

pub fn qos_feasible(report: &SinrReport, gamma_min: f64) -> bool {
    report
        .gamma_r
        .iter()
        .chain(&report.gamma_t)
        .all(|&g| g >= gamma_min - QOS_TOLERANCE)
}

/// Worst excess of each constraint family; non-positive means satisfied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    /// `Σ Tr W / P_max - 1`.
    pub power_excess: f64,
    /// `max(γ_min - γ)`.
    pub qos_shortfall: f64,
    /// Worst SIC link excess in units of the receiver's noise power.
    pub sic_excess: f64,
}

impl Feasibility {
    pub fn worst(&self) -> f64 {
        self.power_excess.max(self.qos_shortfall).max(self.sic_excess)
    }

    pub fn holds(&self, tolerance: f64) -> bool {
        self.worst() <= tolerance
    }
}

/// Feasibility from a received-power oracle `gain(receiver, beam owner)`.
pub fn feasibility_with(scenario: &Scenario, total_power: f64, gain: impl Fn(UserId, UserId) -> f64) -> Feasibility {
    let (k, q) = (scenario.num_reflect(), scenario.num_transmit());
    let qos_shortfall = scenario
        .users()
        .into_iter()
        .map(|u| {
            let i: f64 = interferers(u, k, q).into_iter().map(|j| gain(u, j)).sum();
            scenario.sinr_min - gain(u, u) / (i + scenario.noise_power(u))
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let sic_excess = sic_links(&scenario.decode_chain())
        .into_iter()
        .map(|(rx, a, b)| (gain(rx, a) - gain(rx, b)) / scenario.noise_power(rx))
        .fold(f64::NEG_INFINITY, f64::max);
    Feasibility {
        power_excess: total_power / scenario.max_power - 1.0,
        qos_shortfall,
        sic_excess,
    }
}

pub fn feasibility(scenario: &Scenario, eff: &EffectiveChannels, beams: &Beamformers) -> Feasibility {
    feasibility_with(scenario, beams.total_power(), |rx, u| eff.gain(rx, beams.beam(u)))
}
