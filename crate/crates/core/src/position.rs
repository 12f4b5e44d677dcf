//! Element position subproblem: received power as a sum of plane-wave
//! sinusoids in one element's position, quadratic sandwiches around the
//! current point, and the sequential per-element sweep.
//!
//! Moving element `l` to `p` with everything else frozen changes the amplitude
//! of beam `w` at receiver `u` to `z(p) = R + A e^{j k_Δ·p} + N e^{-j k_S·p}`,
//! where `R` collects the other elements and the direct path, `A` is the LoS
//! cascade through `l` and `N` its NLoS part. Expanding `|z|²` gives
//!
//! * `A₁`: LoS of `l` against LoS of the other elements, wave `k_Δ`;
//! * `T`: LoS of `l` against the direct path, wave `k_Δ`;
//! * residual waves from the NLoS parts at `k_Δ`, `-k_S` and `k_r`;
//! * a position-independent constant.
//!
//! `k_Δ = (2π/λ)(u_r - u_S)` is the `D̂` direction vector, `u = (sin φ cos ψ, sin ψ)`.

use std::f64::consts::{LN_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelSet;
use crate::coeffs::{side_of, weighted_rate, ROW_SLACK};
use crate::conic::{solve_conic, AffineExpr, ConicProblem, ConicSolution, SolveStatus, SolverSettings};
use crate::error::{Error, Result};
use crate::metrics::{feasibility, effective_channels, interferers, sic_links, Beamformers, Feasibility};
use crate::scenario::{Scenario, UserId};
use crate::surface::{ElementLayout, SurfaceCoeffs};

/// Value, gradient and Hessian of a scalar function of one element position.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ValueGradHess {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
}

impl std::ops::Add for ValueGradHess {
    type Output = ValueGradHess;
    fn add(self, o: ValueGradHess) -> ValueGradHess {
        ValueGradHess {
            value: self.value + o.value,
            grad: [self.grad[0] + o.grad[0], self.grad[1] + o.grad[1]],
            hess: [
                [self.hess[0][0] + o.hess[0][0], self.hess[0][1] + o.hess[0][1]],
                [self.hess[1][0] + o.hess[1][0], self.hess[1][1] + o.hess[1][1]],
            ],
        }
    }
}

/// `Re{c e^{j k·p}}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub k: [f64; 2],
    pub c: Complex64,
}

impl Wave {
    pub fn value_grad_hess(&self, p: [f64; 2]) -> ValueGradHess {
        let e = self.c * Complex64::from_polar(1.0, self.k[0] * p[0] + self.k[1] * p[1]);
        let (re, im) = (e.re, e.im);
        let k = self.k;
        ValueGradHess {
            value: re,
            grad: [-im * k[0], -im * k[1]],
            hess: [
                [-re * k[0] * k[0], -re * k[0] * k[1]],
                [-re * k[1] * k[0], -re * k[1] * k[1]],
            ],
        }
    }
}

/// `constant + Σ Re{c e^{j k·p}}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SinusoidSum {
    pub constant: f64,
    pub waves: Vec<Wave>,
}

impl SinusoidSum {
    pub fn value_grad_hess(&self, p: [f64; 2]) -> ValueGradHess {
        self.waves.iter().fold(
            ValueGradHess {
                value: self.constant,
                ..Default::default()
            },
            |acc, w| acc + w.value_grad_hess(p),
        )
    }

    pub fn value(&self, p: [f64; 2]) -> f64 {
        self.value_grad_hess(p).value
    }

    /// Adds `f · other`, merging waves that share a wave vector.
    pub fn add_scaled(&mut self, other: &SinusoidSum, f: f64) {
        self.constant += f * other.constant;
        for w in &other.waves {
            match self.waves.iter_mut().find(|x| x.k == w.k) {
                Some(x) => x.c += w.c * f,
                None => self.waves.push(Wave { k: w.k, c: w.c * f }),
            }
        }
    }

    /// `Σ |c| ‖k‖²`, an upper bound on `‖∇²f(p)‖_F` over the whole plane.
    pub fn curvature_bound(&self) -> f64 {
        self.waves
            .iter()
            .map(|w| w.c.norm() * (w.k[0] * w.k[0] + w.k[1] * w.k[1]))
            .sum()
    }
}

/// Everything needed to evaluate one `|F_u w|²` as a function of `p_l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionTermContext {
    pub element: usize,
    /// `ζ_G ζ_u κ/(κ+1) |a_tᴴ w|²`.
    pub z1: f64,
    /// `s_i = v_i conj(v_l) e^{-j k_Δ·p_i}` for `i ≠ l`, in element order.
    pub s: Vec<Complex64>,
    /// `c₀ conj(A)`; zero for T receivers.
    pub z2: Complex64,
    /// `k_Δ`, rad/m.
    pub d_hat: [f64; 2],
    pub residual: Vec<Wave>,
    pub constant: f64,
}

impl PositionTermContext {
    /// Context of beam `w` at receiver `rx` for element `l` of `layout`.
    pub fn build(
        channels: &ChannelSet,
        layout: &ElementLayout,
        coeffs: &SurfaceCoeffs,
        scenario: &Scenario,
        rx: UserId,
        w: &crate::CVec,
        l: usize,
    ) -> Result<Self> {
        let n = layout.len();
        if channels.elements() != n || coeffs.len() != n {
            return Err(Error::Dimension {
                what: "layout vs channel elements",
                expected: channels.elements(),
                got: n,
            });
        }
        if l >= n {
            return Err(Error::Dimension {
                what: "element index",
                expected: n,
                got: l,
            });
        }
        let k0 = 2.0 * PI / scenario.wavelength;
        let u_r = scenario.arrival.plane_cosines();
        let u_s = scenario.user_direction(rx).plane_cosines();
        let k_d = [k0 * (u_r[0] - u_s[0]), k0 * (u_r[1] - u_s[1])];
        let k_s = [k0 * u_s[0], k0 * u_s[1]];
        let k_r = [k0 * u_r[0], k0 * u_r[1]];
        let zeta = match rx {
            UserId::Reflect(k) => channels.path_losses.reflect[k],
            UserId::Transmit(q) => channels.path_losses.transmit[q],
        };
        let sz = zeta.sqrt();
        let alpha = channels.los_amplitude;
        let a = channels.a_t.dotc(w);
        let nlos = &channels.g_nlos * w;
        let v = side_of(coeffs, rx);
        let c0 = match rx {
            UserId::Reflect(k) => channels.h_b[k].dot(w),
            UserId::Transmit(_) => Complex64::new(0.0, 0.0),
        };
        let phase = |k: [f64; 2], p: [f64; 2]| Complex64::from_polar(1.0, k[0] * p[0] + k[1] * p[1]);

        let (mut r_los, mut r_nlos) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
        let mut s = Vec::with_capacity(n.saturating_sub(1));
        let vl = v[l];
        for i in (0..n).filter(|&i| i != l) {
            let p = layout.positions[i];
            r_los += v[i].conj() * sz * alpha * a * phase(k_d, p);
            r_nlos += v[i].conj() * sz * nlos[i] * phase(k_s, p).conj();
            s.push(v[i] * vl.conj() * phase(k_d, p).conj());
        }
        let big_a = vl.conj() * sz * alpha * a;
        let big_n = vl.conj() * sz * nlos[l];
        let rest = r_los + r_nlos + c0;
        let two = Complex64::from(2.0);
        let residual = vec![
            Wave {
                k: k_d,
                c: two * r_nlos.conj() * big_a,
            },
            Wave {
                k: [-k_s[0], -k_s[1]],
                c: two * rest.conj() * big_n,
            },
            Wave {
                k: k_r,
                c: two * big_a * big_n.conj(),
            },
        ];
        Ok(PositionTermContext {
            element: l,
            z1: zeta * alpha * alpha * a.norm_sqr(),
            s,
            z2: c0 * big_a.conj(),
            d_hat: k_d,
            residual,
            constant: rest.norm_sqr() + big_a.norm_sqr() + big_n.norm_sqr(),
        })
    }

    /// The whole `|F_u w|²` as one sinusoid sum, waves merged by direction.
    pub fn function(&self) -> SinusoidSum {
        let mut c = self.s.iter().sum::<Complex64>() * (2.0 * self.z1) + self.z2.conj() * 2.0;
        let mut waves = Vec::with_capacity(3);
        for w in &self.residual {
            if w.k == self.d_hat {
                c += w.c;
            } else {
                waves.push(*w);
            }
        }
        waves.insert(0, Wave { k: self.d_hat, c });
        let mut out = SinusoidSum {
            constant: self.constant,
            waves: Vec::new(),
        };
        out.add_scaled(
            &SinusoidSum {
                constant: 0.0,
                waves,
            },
            1.0,
        );
        out
    }

    pub fn value_grad_hess(&self, p: [f64; 2]) -> ValueGradHess {
        let residual = self
            .residual
            .iter()
            .fold(ValueGradHess::default(), |acc, w| acc + w.value_grad_hess(p));
        let base = ValueGradHess {
            value: self.constant,
            ..Default::default()
        };
        base + a1_value_grad_hess(self, p) + t_value_grad_hess(self, p) + residual
    }
}

/// `A₁(p) = Z₁ Σ_{i≠l} 2|s_i| cos(∠s_i + k_Δ·p)` with derivatives.
pub fn a1_value_grad_hess(ctx: &PositionTermContext, p: [f64; 2]) -> ValueGradHess {
    let d = ctx.d_hat;
    let theta = d[0] * p[0] + d[1] * p[1];
    let (mut cs, mut sn) = (0.0, 0.0);
    for s in &ctx.s {
        let arg = s.arg() + theta;
        cs += 2.0 * s.norm() * arg.cos();
        sn += 2.0 * s.norm() * arg.sin();
    }
    let z = ctx.z1;
    ValueGradHess {
        value: z * cs,
        grad: [-z * d[0] * sn, -z * d[1] * sn],
        hess: [
            [-z * d[0] * d[0] * cs, -z * d[0] * d[1] * cs],
            [-z * d[1] * d[0] * cs, -z * d[1] * d[1] * cs],
        ],
    }
}

/// `T(p) = 2Re(Z̃₂) cos(k_Δ·p) + 2Im(Z̃₂) sin(k_Δ·p)` with derivatives.
pub fn t_value_grad_hess(ctx: &PositionTermContext, p: [f64; 2]) -> ValueGradHess {
    let d = ctx.d_hat;
    let theta = d[0] * p[0] + d[1] * p[1];
    let (re, im) = (2.0 * ctx.z2.re, 2.0 * ctx.z2.im);
    let value = re * theta.cos() + im * theta.sin();
    let slope = -re * theta.sin() + im * theta.cos();
    ValueGradHess {
        value,
        grad: [slope * d[0], slope * d[1]],
        hess: [
            [-value * d[0] * d[0], -value * d[0] * d[1]],
            [-value * d[1] * d[0], -value * d[1] * d[1]],
        ],
    }
}

/// The T-side counterpart of [`a1_value_grad_hess`]; the context carries the
/// transmission user's angles.
pub fn b_value_grad_hess(ctx: &PositionTermContext, p: [f64; 2]) -> ValueGradHess {
    a1_value_grad_hess(ctx, p)
}

/// Frobenius norm of a 2×2 Hessian.
pub fn curvature_cap(h: [[f64; 2]; 2]) -> f64 {
    h.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

/// Curvature coefficient of the quadratic surrogates: the larger of the
/// Frobenius norm at `p_n` and the global bound.
pub fn surrogate_delta(f: &SinusoidSum, p_n: [f64; 2]) -> f64 {
    curvature_cap(f.value_grad_hess(p_n).hess).max(f.curvature_bound())
}

/// Every `|F_rx w_owner|²` as a function of one element, indexed
/// `[receiver][owner]` in [`Scenario::users`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementContexts {
    pub element: usize,
    pub anchor: [f64; 2],
    pub terms: Vec<Vec<PositionTermContext>>,
}

impl ElementContexts {
    pub fn build(
        channels: &ChannelSet,
        layout: &ElementLayout,
        coeffs: &SurfaceCoeffs,
        beams: &Beamformers,
        scenario: &Scenario,
        l: usize,
    ) -> Result<Self> {
        let users = scenario.users();
        let terms = users
            .iter()
            .map(|&rx| {
                users
                    .iter()
                    .map(|&o| PositionTermContext::build(channels, layout, coeffs, scenario, rx, beams.beam(o), l))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ElementContexts {
            element: l,
            anchor: layout.positions[l],
            terms,
        })
    }

    pub fn term(&self, scenario: &Scenario, rx: UserId, owner: UserId) -> &PositionTermContext {
        &self.terms[scenario.user_index(rx)][scenario.user_index(owner)]
    }

    /// Useful power of `u` in units of its noise power.
    pub fn signal(&self, scenario: &Scenario, u: UserId) -> SinusoidSum {
        let mut f = SinusoidSum::default();
        f.add_scaled(&self.term(scenario, u, u).function(), 1.0 / scenario.noise_power(u));
        f
    }

    /// Interference plus noise of `u` in units of its noise power.
    pub fn interference(&self, scenario: &Scenario, u: UserId) -> SinusoidSum {
        let mut f = SinusoidSum {
            constant: 1.0,
            waves: Vec::new(),
        };
        for j in interferers(u, scenario.num_reflect(), scenario.num_transmit()) {
            f.add_scaled(&self.term(scenario, u, j).function(), 1.0 / scenario.noise_power(u));
        }
        f
    }

    /// `(C, D)` of every user at `p`, noise units.
    pub fn ratios(&self, scenario: &Scenario, p: [f64; 2]) -> Vec<(f64, f64)> {
        scenario
            .users()
            .into_iter()
            .map(|u| (self.signal(scenario, u).value(p), self.interference(scenario, u).value(p)))
            .collect()
    }
}

/// Lower Taylor model `f(pₙ) + ∇fᵀ r x - (δ r²/2) e` (or upper with `+`),
/// in the scaled step `x = (p - pₙ)/r` and the epigraph `e ≥ ‖x‖²`.
fn taylor_expr(f: &SinusoidSum, p_n: [f64; 2], radius: f64, vars: &StepVars, upper: bool) -> AffineExpr {
    let t = f.value_grad_hess(p_n);
    let delta = surrogate_delta(f, p_n);
    let sign = if upper { 1.0 } else { -1.0 };
    let mut e = AffineExpr::constant(t.value);
    e.push(vars.x, t.grad[0] * radius);
    e.push(vars.x + 1, t.grad[1] * radius);
    e.push(vars.e, sign * 0.5 * delta * radius * radius);
    e
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct StepVars {
    /// `x` and `x + 1` hold the scaled step.
    x: usize,
    e: usize,
}

/// One convexified position problem for element `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionProblem {
    pub problem: ConicProblem,
    pub element: usize,
    pub anchor: [f64; 2],
    pub radius: f64,
    step: StepVars,
    /// `Ξ_u` in [`Scenario::users`] order.
    pub xi: Vec<usize>,
}

impl PositionProblem {
    pub fn position(&self, x: &[f64]) -> [f64; 2] {
        [
            self.anchor[0] + self.radius * x[self.step.x],
            self.anchor[1] + self.radius * x[self.step.x + 1],
        ]
    }
}

/// Allowance on the QoS rows keeping the expansion point strictly inside.
const RATIO_SLACK: f64 = 1e-9;

/// Spacing rows whose linearization is `≤ ΔD` at the anchor; nearby elements only.
fn spacing_neighbours(layout: &ElementLayout, scenario: &Scenario, l: usize, radius: f64) -> Vec<(usize, [f64; 2], f64)> {
    let p_n = layout.positions[l];
    let reach = scenario.min_spacing + 2.0 * radius * std::f64::consts::SQRT_2;
    layout
        .positions
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != l)
        .filter_map(|(i, q)| {
            let d = [p_n[0] - q[0], p_n[1] - q[1]];
            let norm = d[0].hypot(d[1]);
            (norm <= reach).then_some((i, [d[0] / norm, d[1] / norm], norm))
        })
        .collect()
}

/// True when some direction strictly increases every active constraint.
fn has_free_direction(normals: &[[f64; 2]]) -> bool {
    if normals.is_empty() {
        return true;
    }
    let mut angles: Vec<f64> = normals.iter().map(|n| n[1].atan2(n[0])).collect();
    angles.sort_by(f64::total_cmp);
    let mut gap = angles[0] + 2.0 * PI - angles[angles.len() - 1];
    for w in angles.windows(2) {
        gap = gap.max(w[1] - w[0]);
    }
    gap > PI + 1e-9
}

/// Constraints at the anchor that are already tight (spacing at `ΔD`, region edge).
fn active_normals(layout: &ElementLayout, scenario: &Scenario, l: usize) -> Vec<[f64; 2]> {
    let p = layout.positions[l];
    let tight = 1e-12 * scenario.wavelength;
    let mut out: Vec<[f64; 2]> = spacing_neighbours(layout, scenario, l, 0.0)
        .into_iter()
        .filter(|&(_, _, d)| d <= scenario.min_spacing + tight)
        .map(|(_, n, _)| n)
        .collect();
    let half = scenario.aperture_side / 2.0;
    for axis in 0..2 {
        if p[axis] >= half - tight {
            out.push(if axis == 0 { [-1.0, 0.0] } else { [0.0, -1.0] });
        }
        if p[axis] <= -half + tight {
            out.push(if axis == 0 { [1.0, 0.0] } else { [0.0, 1.0] });
        }
    }
    out
}

/// Builds the convexified subproblem for element `ctx.element` around its
/// current position, with Dinkelbach ratios `y` (users order, noise units).
pub fn build_position_problem(
    ctx: &ElementContexts,
    y: &[f64],
    layout: &ElementLayout,
    scenario: &Scenario,
    radius: f64,
) -> Result<PositionProblem> {
    let users = scenario.users();
    if y.len() != users.len() {
        return Err(Error::Dimension {
            what: "Dinkelbach ratios",
            expected: users.len(),
            got: y.len(),
        });
    }
    if !(radius > 0.0) {
        return Err(Error::NonPositive("trust radius"));
    }
    let l = ctx.element;
    let p_n = layout.positions[l];
    if let Some((i, _, d)) = spacing_neighbours(layout, scenario, l, 0.0)
        .into_iter()
        .find(|&(_, _, d)| d < scenario.min_spacing)
    {
        return Err(Error::InfeasibleGeometry(format!(
            "elements {l},{i} are {d:.4e} m apart at the expansion point"
        )));
    }

    let mut problem = ConicProblem::new(0);
    let step = StepVars {
        x: problem.add_vars(2),
        e: problem.add_var(),
    };
    problem.squared_norm_le(
        "trust:epigraph",
        vec![AffineExpr::var(step.x), AffineExpr::var(step.x + 1)],
        AffineExpr::var(step.e),
    );
    for i in 0..2 {
        problem.less_eq(format!("trust:{i}+"), AffineExpr::var(step.x + i), AffineExpr::constant(1.0));
        problem.less_eq(format!("trust:{i}-"), AffineExpr::constant(-1.0), AffineExpr::var(step.x + i));
    }
    let half = scenario.aperture_side / 2.0;
    for i in 0..2 {
        let coord = AffineExpr::constant(p_n[i]) + AffineExpr::term(step.x + i, radius);
        problem.less_eq(format!("region:{i}+"), coord.clone(), AffineExpr::constant(half));
        problem.less_eq(format!("region:{i}-"), AffineExpr::constant(-half), coord);
    }
    for (i, n, d) in spacing_neighbours(layout, scenario, l, radius) {
        // nᵀ(p - p_i) ≥ ΔD with p = p_n + r x and nᵀ(p_n - p_i) = d.
        let lin = AffineExpr::constant(d) + AffineExpr::term(step.x, n[0] * radius) + AffineExpr::term(step.x + 1, n[1] * radius);
        problem.less_eq(format!("spacing:{l}:{i}"), AffineExpr::constant(scenario.min_spacing), lin);
    }

    let mut xi = Vec::with_capacity(users.len());
    for (idx, &u) in users.iter().enumerate() {
        let signal = ctx.signal(scenario, u);
        let interference = ctx.interference(scenario, u);
        // `log2(1 + Ξ)` is then the first-order rate gain of `u`.
        let scale = (1.0 + y[idx]) * interference.value(p_n);
        let c = taylor_expr(&signal, p_n, radius, &step, false);
        let d = taylor_expr(&interference, p_n, radius, &step, true);
        let x = problem.add_var();
        let r = problem.add_var();
        xi.push(x);
        problem.less_eq(
            format!("dinkelbach:{u}"),
            AffineExpr::var(x),
            (c.clone() - d.clone() * y[idx]) * (1.0 / scale),
        );
        let floor = scenario.sinr_min.min(y[idx]);
        problem.nonneg(
            format!("qos:{u}"),
            c - d * floor + AffineExpr::constant(RATIO_SLACK),
        );
        problem.exp_cone(
            format!("log:{u}"),
            AffineExpr::var(r),
            AffineExpr::constant(1.0),
            AffineExpr::constant(1.0) + AffineExpr::var(x),
        );
        problem.minimize(&AffineExpr::term(r, -scenario.weight(u) / LN_2));
    }

    for (rx, weak, strong) in sic_links(&scenario.decode_chain()) {
        let scale = 1.0 / scenario.noise_power(rx);
        let mut fw = SinusoidSum::default();
        fw.add_scaled(&ctx.term(scenario, rx, weak).function(), scale);
        let mut fs = SinusoidSum::default();
        fs.add_scaled(&ctx.term(scenario, rx, strong).function(), scale);
        let now = fw.value(p_n) - fs.value(p_n);
        let allowance = ROW_SLACK.max(now + RATIO_SLACK);
        problem.less_eq(
            format!("sic:{rx}:{weak}<{strong}"),
            taylor_expr(&fw, p_n, radius, &step, true) - taylor_expr(&fs, p_n, radius, &step, false),
            AffineExpr::constant(allowance),
        );
    }

    let mut x0 = vec![0.0; problem.num_vars];
    x0[step.e] = 1e-12;
    for &x in &xi {
        // `r` was allocated right after `Ξ`.
        x0[x] = -1e-6;
        x0[x + 1] = -1.0;
    }
    problem.warm_start = Some(x0);
    Ok(PositionProblem {
        problem,
        element: l,
        anchor: p_n,
        radius,
        step,
        xi,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionSettings {
    /// Initial trust half-width as a fraction of λ.
    pub trust_fraction: f64,
    /// Smallest trust half-width before a move is abandoned, fraction of λ.
    pub min_trust_fraction: f64,
    /// Inner Dinkelbach stop: largest relative ratio change.
    pub ratio_tolerance: f64,
    pub max_inner: usize,
    pub solver: SolverSettings,
}

impl Default for PositionSettings {
    fn default() -> Self {
        PositionSettings {
            trust_fraction: 0.25,
            min_trust_fraction: 1.0 / 32.0,
            ratio_tolerance: 1e-1,
            max_inner: 10,
            solver: SolverSettings::default(),
        }
    }
}

/// Per-element record of one sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionTrace {
    pub element: usize,
    pub inner_iterations: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// True when every direction is blocked by tight constraints.
    pub locked: bool,
    pub objective_before: f64,
    pub objective_after: f64,
    /// Dinkelbach ratios (users order) at the start and after each accepted move.
    pub ratios: Vec<Vec<f64>>,
}

impl PositionTrace {
    pub fn csv_header() -> &'static str {
        "element,inner_iterations,accepted,rejected,locked,objective_before,objective_after"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.12e},{:.12e}",
            self.element,
            self.inner_iterations,
            self.accepted,
            self.rejected,
            self.locked,
            self.objective_before,
            self.objective_after
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionOutcome {
    pub layout: ElementLayout,
    pub channels: ChannelSet,
    /// Exact weighted sum rate before the sweep and after each element.
    pub rate_history: Vec<f64>,
    pub trace: Vec<PositionTrace>,
}

fn usable(problem: &ConicProblem, sol: &ConicSolution) -> bool {
    sol.is_optimal() || (sol.status != SolveStatus::Infeasible && problem.max_violation(&sol.x) <= 1e-9)
}

/// Pulls a candidate back toward the anchor until region and spacing hold exactly.
fn repair(layout: &ElementLayout, scenario: &Scenario, l: usize, anchor: [f64; 2], candidate: [f64; 2]) -> Option<[f64; 2]> {
    let half = scenario.aperture_side / 2.0;
    let ok = |p: [f64; 2]| {
        p[0].abs() <= half
            && p[1].abs() <= half
            && layout
                .positions
                .iter()
                .enumerate()
                .all(|(i, q)| i == l || (p[0] - q[0]).hypot(p[1] - q[1]) >= scenario.min_spacing)
    };
    let mut t = 1.0;
    for _ in 0..40 {
        let p = [anchor[0] + t * (candidate[0] - anchor[0]), anchor[1] + t * (candidate[1] - anchor[1])];
        if ok(p) {
            return (t > 0.0).then_some(p);
        }
        t *= 0.5;
    }
    None
}

fn ratio_values(cd: &[(f64, f64)]) -> Vec<f64> {
    cd.iter().map(|&(c, d)| c / d).collect()
}

fn sic_and_qos_ok(before: &Feasibility, after: &Feasibility) -> bool {
    let tol = 1e-9;
    after.sic_excess <= before.sic_excess.max(ROW_SLACK) + tol && after.qos_shortfall <= before.qos_shortfall.max(0.0) + tol
}

/// Result of optimizing one element.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementMove {
    pub layout: ElementLayout,
    pub channels: ChannelSet,
    pub rate: f64,
    pub trace: PositionTrace,
}

/// Inner Dinkelbach loop for element `l` with the trust-region rejection safeguard.
pub fn optimize_element(
    channels: &ChannelSet,
    layout: &ElementLayout,
    coeffs: &SurfaceCoeffs,
    beams: &Beamformers,
    scenario: &Scenario,
    settings: &PositionSettings,
    l: usize,
) -> Result<ElementMove> {
    let mut layout = layout.clone();
    let mut channels = channels.clone();
    let mut rate = weighted_rate(scenario, &channels, coeffs, beams)?;
    let lam = scenario.wavelength;
    let mut radius = settings.trust_fraction * lam;
    let mut record = PositionTrace {
        element: l,
        inner_iterations: 0,
        accepted: 0,
        rejected: 0,
        locked: false,
        objective_before: rate,
        objective_after: rate,
        ratios: Vec::new(),
    };
    if !has_free_direction(&active_normals(&layout, scenario, l)) {
        record.locked = true;
        return Ok(ElementMove {
            layout,
            channels,
            rate,
            trace: record,
        });
    }
    let mut ctx = ElementContexts::build(&channels, &layout, coeffs, beams, scenario, l)?;
    let mut y = ratio_values(&ctx.ratios(scenario, layout.positions[l]));
    record.ratios.push(y.clone());
    let mut feas = feasibility(scenario, &effective_channels(&channels, coeffs)?, beams);
    while record.inner_iterations < settings.max_inner {
        record.inner_iterations += 1;
        let built = build_position_problem(&ctx, &y, &layout, scenario, radius)?;
        let sol = solve_conic(&built.problem, &settings.solver);
        let candidate = usable(&built.problem, &sol)
            .then(|| built.position(&sol.x))
            .and_then(|p| repair(&layout, scenario, l, built.anchor, p));
        let moved = candidate.and_then(|p| {
            let mut next = layout.clone();
            next.positions[l] = p;
            let ch = channels.relocate(scenario, &next).ok()?;
            let r = weighted_rate(scenario, &ch, coeffs, beams).ok()?;
            let f = feasibility(scenario, &effective_channels(&ch, coeffs).ok()?, beams);
            let yn = ratio_values(&ctx.ratios(scenario, p));
            (r >= rate - 1e-12 * rate.abs().max(1.0) && sic_and_qos_ok(&feas, &f)).then_some((next, ch, r, f, yn))
        });
        match moved {
            Some((next, ch, r, f, yn)) => {
                record.accepted += 1;
                let change = yn
                    .iter()
                    .zip(&y)
                    .map(|(a, b)| (a - b).abs() / b.abs().max(1e-12))
                    .fold(0.0, f64::max);
                layout = next;
                channels = ch;
                rate = r;
                feas = f;
                y = yn;
                record.ratios.push(y.clone());
                if change < settings.ratio_tolerance {
                    break;
                }
                ctx = ElementContexts::build(&channels, &layout, coeffs, beams, scenario, l)?;
            }
            None => {
                record.rejected += 1;
                radius *= 0.5;
                if radius < settings.min_trust_fraction * lam * (1.0 - 1e-12) {
                    break;
                }
            }
        }
    }
    record.objective_after = rate;
    Ok(ElementMove {
        layout,
        channels,
        rate,
        trace: record,
    })
}

/// One sweep over all elements in index order.
pub fn optimize_positions(
    channels: &ChannelSet,
    layout: &ElementLayout,
    coeffs: &SurfaceCoeffs,
    beams: &Beamformers,
    scenario: &Scenario,
    settings: &PositionSettings,
) -> Result<PositionOutcome> {
    let mut layout = layout.clone();
    let mut channels = channels.clone();
    let mut history = vec![weighted_rate(scenario, &channels, coeffs, beams)?];
    let mut trace = Vec::with_capacity(layout.len());
    for l in 0..layout.len() {
        let m = optimize_element(&channels, &layout, coeffs, beams, scenario, settings, l)?;
        layout = m.layout;
        channels = m.channels;
        history.push(m.rate);
        trace.push(m.trace);
    }
    Ok(PositionOutcome {
        layout,
        channels,
        rate_history: history,
        trace,
    })
}

#[cfg(test)]
mod tests;
