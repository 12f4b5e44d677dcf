use super::*;
use crate::beamforming::{mrt_beamformers, solve_beamforming, BeamformingSettings, CovariancePool};
use crate::channel::{assemble_channels, NlosDraws};
use crate::metrics::effective_channels;
use crate::scenario::{rate_to_sinr, Direction};
use crate::surface::{uniform_grid_layout, validate_layout};
use crate::{CMat, CVec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LAM: f64 = 0.03;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn random_c(rng: &mut ChaCha8Rng) -> Complex64 {
    c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

fn random_k(rng: &mut ChaCha8Rng) -> [f64; 2] {
    let k0 = 2.0 * PI / LAM;
    [k0 * rng.gen_range(-2.0..2.0), k0 * rng.gen_range(-2.0..2.0)]
}

fn random_context(rng: &mut ChaCha8Rng, transmit: bool) -> PositionTermContext {
    let d_hat = random_k(rng);
    PositionTermContext {
        element: 0,
        z1: rng.gen_range(0.1..2.0),
        s: (0..rng.gen_range(1..30)).map(|_| random_c(rng)).collect(),
        z2: if transmit { c(0.0, 0.0) } else { random_c(rng) },
        d_hat,
        residual: vec![
            Wave { k: d_hat, c: random_c(rng) },
            Wave { k: random_k(rng), c: random_c(rng) },
        ],
        constant: rng.gen_range(0.0..5.0),
    }
}

fn random_point(rng: &mut ChaCha8Rng) -> [f64; 2] {
    [rng.gen_range(-2.0 * LAM..2.0 * LAM), rng.gen_range(-2.0 * LAM..2.0 * LAM)]
}

fn rel_err(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / b.abs().max(scale)
}

/// Worst relative error of central differences of the value (gradient) and
/// gradient (Hessian); `curv` and `k` set the floor below which errors are absolute.
fn check_derivatives(f: impl Fn([f64; 2]) -> ValueGradHess, p: [f64; 2], curv: f64, k: f64) -> f64 {
    let h = 1e-6;
    let at = f(p);
    let mut worst: f64 = 0.0;
    for d in 0..2 {
        let mut up = p;
        let mut dn = p;
        up[d] += h;
        dn[d] -= h;
        let mut up2 = p;
        let mut dn2 = p;
        up2[d] += 2.0 * h;
        dn2[d] -= 2.0 * h;
        let (fu, fd, fu2, fd2) = (f(up), f(dn), f(up2), f(dn2));
        // five-point central stencil
        let stencil = |a: f64, b: f64, a2: f64, b2: f64| (8.0 * (a - b) - (a2 - b2)) / (12.0 * h);
        let g_fd = stencil(fu.value, fd.value, fu2.value, fd2.value);
        worst = worst.max(rel_err(g_fd, at.grad[d], 1e-3 * curv / k));
        for e in 0..2 {
            let h_fd = stencil(fu.grad[e], fd.grad[e], fu2.grad[e], fd2.grad[e]);
            worst = worst.max(rel_err(h_fd, at.hess[d][e], 1e-3 * curv));
        }
    }
    worst
}

#[test]
fn a1_flat_phases_example() {
    let ctx = PositionTermContext {
        element: 0,
        z1: 1.7,
        s: vec![c(0.5, 0.0); 24],
        z2: c(0.0, 0.0),
        d_hat: [40.0, -15.0],
        residual: Vec::new(),
        constant: 0.0,
    };
    let v = a1_value_grad_hess(&ctx, [0.0, 0.0]);
    assert!((v.value - 1.7 * 24.0).abs() < 1e-12);
    assert!(v.grad[0].abs() < 1e-12 && v.grad[1].abs() < 1e-12);
    assert_eq!(v.hess[0][1], v.hess[1][0]);
}

#[test]
fn t_real_coefficient_example() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ctx = random_context(&mut rng, false);
    ctx.z2 = c(0.8, 0.0);
    let v = t_value_grad_hess(&ctx, [0.0, 0.0]);
    assert!((v.value - 1.6).abs() < 1e-12);
    assert!(v.grad[0].abs() < 1e-12 && v.grad[1].abs() < 1e-12);
    ctx.z2 = c(0.8, 0.3);
    let v = t_value_grad_hess(&ctx, [0.0, 0.0]);
    assert!((v.grad[0] - 0.6 * ctx.d_hat[0]).abs() < 1e-9);
}

#[test]
fn analytic_derivatives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let k = 2.0 * PI / LAM;
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let ctx = random_context(&mut rng, trial % 2 == 1);
        let curv = ctx.function().curvature_bound();
        let p = random_point(&mut rng);
        worst = worst.max(check_derivatives(|q| a1_value_grad_hess(&ctx, q), p, curv, k));
        worst = worst.max(check_derivatives(|q| t_value_grad_hess(&ctx, q), p, curv, k));
        worst = worst.max(check_derivatives(|q| b_value_grad_hess(&ctx, q), p, curv, k));
        worst = worst.max(check_derivatives(|q| ctx.value_grad_hess(q), p, curv, k));
    }
    assert!(worst < 1e-6, "worst relative error {worst:e}");
}

#[test]
fn curvature_cap_examples() {
    assert!((curvature_cap([[1.0, 0.0], [0.0, 1.0]]) - 2f64.sqrt()).abs() < 1e-15);
    assert_eq!(curvature_cap([[0.0; 2]; 2]), 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let (a, b, d): (f64, f64, f64) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let want = (a * a + 2.0 * b * b + d * d).sqrt();
        assert!((curvature_cap([[a, b], [b, d]]) - want).abs() < 1e-12);
    }
}

#[test]
fn merged_function_matches_term_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let ctx = random_context(&mut rng, false);
        let f = ctx.function();
        assert!(f.waves.len() <= 3);
        let p = random_point(&mut rng);
        let a = f.value_grad_hess(p);
        let b = ctx.value_grad_hess(p);
        assert!((a.value - b.value).abs() < 1e-9 * (1.0 + b.value.abs()));
        assert!((a.grad[0] - b.grad[0]).abs() < 1e-9 * (1.0 + b.grad[0].abs()));
    }
}

fn lam_scenario() -> Scenario {
    let s = Scenario::reference();
    assert_eq!(s.wavelength, LAM);
    s
}

fn random_beams(rng: &mut ChaCha8Rng, s: &Scenario) -> Beamformers {
    let mut b = Beamformers::zeros(s.antennas, s.num_reflect(), s.num_transmit());
    for u in s.users() {
        *b.beam_mut(u) = CVec::from_fn(s.antennas, |_, _| random_c(rng) * 0.01);
    }
    b
}

fn random_coeffs(rng: &mut ChaCha8Rng, l: usize) -> SurfaceCoeffs {
    let mut v1 = CVec::from_fn(l, |_, _| random_c(rng));
    let mut v2 = CVec::from_fn(l, |_, _| random_c(rng));
    for i in 0..l {
        let e = (v1[i].norm_sqr() + v2[i].norm_sqr()).sqrt().max(1.0);
        v1[i] /= e;
        v2[i] /= e;
    }
    SurfaceCoeffs { v1, v2 }
}

#[test]
fn context_reproduces_received_power_after_moving() {
    let s = lam_scenario();
    let layout = uniform_grid_layout(&s).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for trial in 0..20 {
        let ch = assemble_channels(&s, &layout, &NlosDraws::draw(&s, trial)).unwrap();
        let coeffs = random_coeffs(&mut rng, s.elements);
        let beams = random_beams(&mut rng, &s);
        let l = rng.gen_range(0..s.elements);
        let ctx = ElementContexts::build(&ch, &layout, &coeffs, &beams, &s, l).unwrap();
        let p = [
            layout.positions[l][0] + rng.gen_range(-LAM..LAM),
            layout.positions[l][1] + rng.gen_range(-LAM..LAM),
        ];
        let mut moved = layout.clone();
        moved.positions[l] = p;
        let eff = effective_channels(&ch.relocate(&s, &moved).unwrap(), &coeffs).unwrap();
        for rx in s.users() {
            for o in s.users() {
                let want = eff.gain(rx, beams.beam(o));
                let got = ctx.term(&s, rx, o).value_grad_hess(p).value;
                assert!((got - want).abs() <= 1e-9 * want.max(1e-30), "{rx} {o}: {got:e} vs {want:e}");
            }
        }
    }
}

#[test]
fn coincident_angles_flatten_b() {
    let mut s = lam_scenario();
    s.transmit_users[0].direction = s.arrival;
    let layout = uniform_grid_layout(&s).unwrap();
    let ch = assemble_channels(&s, &layout, &NlosDraws::draw(&s, 1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let coeffs = random_coeffs(&mut rng, s.elements);
    let beams = random_beams(&mut rng, &s);
    let ctx = PositionTermContext::build(&ch, &layout, &coeffs, &s, UserId::Transmit(0), beams.beam(UserId::Reflect(0)), 7).unwrap();
    assert_eq!(ctx.d_hat, [0.0, 0.0]);
    for _ in 0..10 {
        let g = b_value_grad_hess(&ctx, random_point(&mut rng)).grad;
        assert_eq!(g, [0.0, 0.0]);
    }
}

#[test]
fn b_is_invariant_along_the_null_direction() {
    let s = lam_scenario();
    let layout = uniform_grid_layout(&s).unwrap();
    let ch = assemble_channels(&s, &layout, &NlosDraws::draw(&s, 2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let coeffs = random_coeffs(&mut rng, s.elements);
    let beams = random_beams(&mut rng, &s);
    let rx = UserId::Transmit(1);
    let l = 12;
    let ctx = PositionTermContext::build(&ch, &layout, &coeffs, &s, rx, beams.beam(rx), l).unwrap();
    let d = ctx.d_hat;
    let norm = d[0].hypot(d[1]);
    let shift = [-d[1] / norm * 0.37 * LAM, d[0] / norm * 0.37 * LAM];
    let moved = ElementLayout::new(layout.positions.iter().map(|p| [p[0] + shift[0], p[1] + shift[1]]).collect());
    let ch2 = ch.relocate(&s, &moved).unwrap();
    let ctx2 = PositionTermContext::build(&ch2, &moved, &coeffs, &s, rx, beams.beam(rx), l).unwrap();
    let p = layout.positions[l];
    let a = b_value_grad_hess(&ctx, p).value;
    let b = b_value_grad_hess(&ctx2, [p[0] + shift[0], p[1] + shift[1]]).value;
    assert!((a - b).abs() < 1e-9 * a.abs().max(1e-30), "{a:e} vs {b:e}");
}

#[test]
fn quadratic_bounds_sandwich_every_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut violations = 0;
    for trial in 0..1000 {
        let ctx = random_context(&mut rng, trial % 2 == 0);
        let f = ctx.function();
        let p_n = random_point(&mut rng);
        let t = f.value_grad_hess(p_n);
        let delta = surrogate_delta(&f, p_n);
        let r = LAM / 4.0;
        let p = [p_n[0] + rng.gen_range(-r..r), p_n[1] + rng.gen_range(-r..r)];
        let exact = f.value(p);
        let lo = crate::surrogate::quad_lower_taylor(t.value, t.grad, p, p_n, delta).unwrap();
        let hi = crate::surrogate::quad_upper_taylor(t.value, t.grad, p, p_n, delta).unwrap();
        let tol = 1e-9 * (1.0 + exact.abs());
        if lo > exact + tol || exact > hi + tol {
            violations += 1;
        }
    }
    assert_eq!(violations, 0);
}

#[test]
fn free_direction_detection() {
    assert!(has_free_direction(&[]));
    assert!(has_free_direction(&[[1.0, 0.0], [0.0, 1.0]]));
    assert!(!has_free_direction(&[[1.0, 0.0], [-1.0, 0.0]]));
    assert!(!has_free_direction(&[[1.0, 0.0], [-0.5, 0.8], [-0.5, -0.8]]));
    assert!(has_free_direction(&[[1.0, 0.0], [0.0, 1.0], [-0.1, 0.99]]));
}

proptest! {
    #[test]
    fn spacing_linearization_never_exceeds_distance(
        ax in -1.0f64..1.0, ay in -1.0f64..1.0, bx in -1.0f64..1.0, by in -1.0f64..1.0,
        qx in -1.0f64..1.0, qy in -1.0f64..1.0,
    ) {
        let d = [ax - qx, ay - qy];
        let n = d[0].hypot(d[1]);
        prop_assume!(n > 1e-6);
        let lin = (d[0] * (bx - qx) + d[1] * (by - qy)) / n;
        prop_assert!(lin <= (bx - qx).hypot(by - qy) + 1e-12);
    }
}

/// Reference scenario with beams from the beamforming stage at a low QoS target.
fn feasible_reference() -> (Scenario, ElementLayout, ChannelSet, SurfaceCoeffs, Beamformers) {
    let mut s = Scenario::reference();
    s.sinr_min = rate_to_sinr(0.05);
    let layout = uniform_grid_layout(&s).unwrap();
    let ch = assemble_channels(&s, &layout, &NlosDraws::draw(&s, 4)).unwrap();
    let coeffs = SurfaceCoeffs::equal_split(s.elements);
    let eff = effective_channels(&ch, &coeffs).unwrap();
    let init = CovariancePool::from_beamformers(&mrt_beamformers(&eff, s.max_power));
    let bf = solve_beamforming(&eff, &init, &s, &BeamformingSettings::default()).unwrap();
    (s, layout, ch, coeffs, bf.beams)
}

#[test]
fn expansion_point_rows_are_exact() {
    let (s, layout, ch, coeffs, beams) = feasible_reference();
    let l = 0;
    let ctx = ElementContexts::build(&ch, &layout, &coeffs, &beams, &s, l).unwrap();
    let p_n = layout.positions[l];
    let cd = ctx.ratios(&s, p_n);
    let y: Vec<f64> = cd.iter().map(|&(c, d)| c / d).collect();
    let built = build_position_problem(&ctx, &y, &layout, &s, LAM / 4.0).unwrap();
    let mut x = vec![0.0; built.problem.num_vars];
    for &xi in &built.xi {
        x[xi] = 0.0;
    }
    for b in built.problem.blocks.iter().filter(|b| b.label.starts_with("dinkelbach:")) {
        assert!(b.rows[0].eval(&x).abs() < 1e-9, "{}: {}", b.label, b.rows[0].eval(&x));
    }
    assert_eq!(built.position(&x), p_n);
    let eff = effective_channels(&ch, &coeffs).unwrap();
    let report = crate::metrics::sinr_all(
        &eff,
        &beams,
        &s.reflect_users.iter().map(|u| u.noise_power).collect::<Vec<_>>(),
        &s.transmit_users.iter().map(|u| u.noise_power).collect::<Vec<_>>(),
    )
    .unwrap();
    for (i, u) in s.users().into_iter().enumerate() {
        assert!((y[i] - report.gamma(u)).abs() < 1e-9 * report.gamma(u).max(1.0));
    }
}

#[test]
fn coincident_expansion_point_is_rejected() {
    let (s, mut layout, ch, coeffs, beams) = feasible_reference();
    layout.positions[1] = [layout.positions[0][0] + 1e-4, layout.positions[0][1]];
    let ch = ch.relocate(&s, &layout).unwrap();
    let ctx = ElementContexts::build(&ch, &layout, &coeffs, &beams, &s, 0).unwrap();
    let y = vec![1.0; s.num_users()];
    assert!(matches!(
        build_position_problem(&ctx, &y, &layout, &s, LAM / 4.0),
        Err(Error::InfeasibleGeometry(_))
    ));
}

#[test]
fn reference_sweep_is_monotone_and_valid() {
    let (s, layout, ch, coeffs, beams) = feasible_reference();
    let out = optimize_positions(&ch, &layout, &coeffs, &beams, &s, &PositionSettings::default()).unwrap();
    for w in out.rate_history.windows(2) {
        assert!(w[1] >= w[0] - 1e-6 * w[0].abs().max(1.0), "{:?}", out.rate_history);
    }
    assert!(validate_layout(&out.layout, &s).is_empty());
    let users = s.users();
    for t in &out.trace {
        let rates: Vec<f64> = t
            .ratios
            .iter()
            .map(|y| users.iter().zip(y).map(|(&u, g)| s.weight(u) * (1.0 + g).log2()).sum())
            .collect();
        for w in rates.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "element {}: {:?}", t.element, rates);
        }
        if let Some(last) = rates.last() {
            assert!((last - t.objective_after).abs() < 1e-9);
        }
    }
    assert!(out.trace.iter().any(|t| t.accepted > 0));
    let eff = effective_channels(&out.channels, &coeffs).unwrap();
    assert!(crate::metrics::feasibility(&s, &eff, &beams).holds(1e-5));
    // the uniform grid jams every interior element at first
    assert!(out.trace.iter().filter(|t| t.locked).count() >= 9);
    assert!(out.rate_history.last().unwrap() > &out.rate_history[0]);
}

fn los_only(s: &Scenario) -> NlosDraws {
    NlosDraws {
        g_nlos: CMat::zeros(s.elements, s.antennas),
        h_nlos: vec![CVec::zeros(s.antennas); s.num_reflect()],
    }
}

fn toy(elements: usize, aperture: f64) -> Scenario {
    let mut s = Scenario::reference();
    s.reflect_users.truncate(1);
    s.transmit_users.clear();
    s.elements = elements;
    s.aperture_side = aperture;
    s.sinr_min = 0.0;
    s
}

#[test]
fn flat_objective_leaves_single_element_in_place() {
    let mut s = toy(1, 2.0 * LAM);
    s.reflect_users[0].direction = Direction::new(0.0, 0.0);
    s.arrival = Direction::new(0.0, 0.0);
    let layout = uniform_grid_layout(&s).unwrap();
    let ch = assemble_channels(&s, &layout, &los_only(&s)).unwrap();
    let coeffs = SurfaceCoeffs::equal_split(1);
    let eff = effective_channels(&ch, &coeffs).unwrap();
    let beams = mrt_beamformers(&eff, s.max_power);
    let out = optimize_positions(&ch, &layout, &coeffs, &beams, &s, &PositionSettings::default()).unwrap();
    assert_eq!(out.layout, layout);
}

/// Exact rate of `toy` with the first element at `p`.
fn toy_rate(s: &Scenario, ch: &ChannelSet, layout: &ElementLayout, coeffs: &SurfaceCoeffs, beams: &Beamformers, p: [f64; 2]) -> f64 {
    let mut moved = layout.clone();
    moved.positions[0] = p;
    weighted_rate(s, &ch.relocate(s, &moved).unwrap(), coeffs, beams).unwrap()
}

#[test]
fn two_elements_match_grid_search() {
    let s = toy(2, 2.0 * LAM);
    let layout = uniform_grid_layout(&s).unwrap();
    let ch = assemble_channels(&s, &layout, &los_only(&s)).unwrap();
    let coeffs = SurfaceCoeffs::equal_split(2);
    let eff = effective_channels(&ch, &coeffs).unwrap();
    let beams = mrt_beamformers(&eff, s.max_power);

    let half = s.aperture_side / 2.0;
    let step = LAM / 100.0;
    let n = (2.0 * half / step).round() as usize;
    let other = layout.positions[1];
    let mut best = f64::NEG_INFINITY;
    for i in 0..=n {
        for j in 0..=n {
            let p = [-half + i as f64 * step, -half + j as f64 * step];
            if (p[0] - other[0]).hypot(p[1] - other[1]) < s.min_spacing {
                continue;
            }
            best = best.max(toy_rate(&s, &ch, &layout, &coeffs, &beams, p));
        }
    }

    let settings = PositionSettings {
        ratio_tolerance: 1e-9,
        max_inner: 50,
        ..Default::default()
    };
    let mut cur_layout = layout.clone();
    let mut cur_ch = ch.clone();
    let mut rate = 0.0;
    for _ in 0..20 {
        let moved = optimize_element(&cur_ch, &cur_layout, &coeffs, &beams, &s, &settings, 0).unwrap();
        cur_layout = moved.layout;
        cur_ch = moved.channels;
        rate = moved.rate;
    }
    assert!(validate_layout(&cur_layout, &s).is_empty());
    assert!((rate - best).abs() < 1e-2, "element search {rate} vs grid {best}");
}
