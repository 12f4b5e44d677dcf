use super::*;
use crate::beamforming::{mrt_beamformers, solve_beamforming, BeamformingSettings, CovariancePool};
use crate::channel::{assemble_channels, NlosDraws};
use crate::metrics::effective_channels;
use crate::scenario::rate_to_sinr;
use crate::surface::{uniform_grid_layout, validate_coeffs, ElementLayout};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn random_cvec(rng: &mut ChaCha8Rng, n: usize) -> CVec {
    CVec::from_fn(n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

fn random_coeffs(rng: &mut ChaCha8Rng, l: usize) -> SurfaceCoeffs {
    let mut v1 = random_cvec(rng, l);
    let mut v2 = random_cvec(rng, l);
    for i in 0..l {
        let e = (v1[i].norm_sqr() + v2[i].norm_sqr()).sqrt().max(1.0);
        v1[i] /= e;
        v2[i] /= e;
    }
    SurfaceCoeffs { v1, v2 }
}

fn reference() -> (Scenario, ChannelSet) {
    let s = Scenario::reference();
    let layout = uniform_grid_layout(&s).unwrap();
    let ch = assemble_channels(&s, &layout, &NlosDraws::draw(&s, 4)).unwrap();
    (s, ch)
}

/// Reference channels with MRT beams for the given coefficients.
fn reference_with_beams(coeffs: &SurfaceCoeffs) -> (Scenario, ChannelSet, Beamformers) {
    let (s, ch) = reference();
    let eff = effective_channels(&ch, coeffs).unwrap();
    let beams = mrt_beamformers(&eff, s.max_power);
    (s, ch, beams)
}

/// `v₂ᴴ(Y∘Zᵀ)v₂ + 2Re{v₂ᵀ diag X} + D` from the explicit matrix definitions.
fn hadamard_oracle(ch: &ChannelSet, k: usize, w: &CVec, v2: &CVec) -> f64 {
    let gw = &ch.g * w;
    let h = &ch.h_r[k];
    let hb_w = ch.h_b[k].dot(w);
    let y = &gw * gw.adjoint();
    let z = h * h.adjoint();
    let yz = y.component_mul(&z.transpose());
    let x = h * (gw.adjoint() * hb_w);
    let quad = (v2.adjoint() * &yz * v2)[(0, 0)].re;
    let cross: Complex64 = (0..v2.len()).map(|l| v2[l] * x[(l, l)]).sum();
    quad + 2.0 * cross.re + hb_w.norm_sqr()
}

#[test]
fn zero_beams_give_zero_blocks() {
    let (s, ch) = reference();
    let beams = Beamformers::zeros(8, 2, 2);
    let data = build_coeff_data(&ch, &beams, &s).unwrap();
    assert!(data.terms.iter().flatten().all(|t| t.is_zero()));
    let init = SurfaceCoeffs::equal_split(25);
    let out = solve_coeff_subproblem(&ch, &beams, &init, &s, &CoeffSettings::default()).unwrap();
    assert_eq!(out.coeffs, init);
    assert_eq!(out.rate_history, vec![0.0]);
}

#[test]
fn hadamard_identity_matches_direct_power() {
    let (s, ch) = reference();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..100 {
        let coeffs = random_coeffs(&mut rng, 25);
        let beams = Beamformers {
            w_r: (0..2).map(|_| random_cvec(&mut rng, 8)).collect(),
            w_t: (0..2).map(|_| random_cvec(&mut rng, 8)).collect(),
        };
        let eff = effective_channels(&ch, &coeffs).unwrap();
        let data = build_coeff_data(&ch, &beams, &s).unwrap();
        for k in 0..2 {
            let rx = UserId::Reflect(k);
            for owner in s.users() {
                let w = beams.beam(owner);
                let direct = eff.gain(rx, w);
                let oracle = hadamard_oracle(&ch, k, w, &coeffs.v2);
                let term = data.term(&s, rx, owner);
                assert!((oracle - direct).abs() <= 1e-10 * direct);
                assert!((term.power(&coeffs.v2) - direct).abs() <= 1e-10 * direct);
                // the stored blocks reproduce the same expansion
                let quad = (coeffs.v2.adjoint() * term.quadratic_block() * &coeffs.v2)[(0, 0)].re;
                let cross = coeffs.v2.dot(&term.cross_diag()).re;
                let expanded = quad + 2.0 * cross + term.constant_power();
                assert!((expanded - direct).abs() <= 1e-10 * direct);
            }
        }
        for q in 0..2 {
            let rx = UserId::Transmit(q);
            for owner in s.users() {
                let direct = eff.gain(rx, beams.beam(owner));
                let got = data.term(&s, rx, owner).power(&coeffs.v1);
                assert!((got - direct).abs() <= 1e-10 * direct.max(1e-300));
            }
        }
    }
}

#[test]
fn single_element_scalar_form() {
    // L = 1: β = |v₂|² Y Z + 2Re{v₂ X} + D
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (s, mut ch) = reference();
    ch.g = ch.g.rows(0, 1).into_owned();
    ch.h_r = ch.h_r.iter().map(|h| h.rows(0, 1).into_owned()).collect();
    ch.h_t = ch.h_t.iter().map(|h| h.rows(0, 1).into_owned()).collect();
    let w = random_cvec(&mut rng, 8);
    let beams = Beamformers {
        w_r: vec![w.clone(), CVec::zeros(8)],
        w_t: vec![CVec::zeros(8); 2],
    };
    let v2 = c(0.3, -0.5);
    let gw = (&ch.g * &w)[0];
    let h = ch.h_r[0][0];
    let hb_w = ch.h_b[0].dot(&w);
    let scalar = v2.norm_sqr() * gw.norm_sqr() * h.norm_sqr() + 2.0 * (v2 * h * hb_w * gw.conj()).re + hb_w.norm_sqr();
    let data = build_coeff_data(&ch, &beams, &s).unwrap();
    let got = data.term(&s, UserId::Reflect(0), UserId::Reflect(0)).power(&CVec::from_element(1, v2));
    assert!((got - scalar).abs() <= 1e-12 * scalar);
}

#[test]
fn census_on_reference() {
    let coeffs = SurfaceCoeffs::equal_split(25);
    let (s, ch, beams) = reference_with_beams(&coeffs);
    let data = build_coeff_data(&ch, &beams, &s).unwrap();
    let built = build_coeff_problem(&data, &coeffs, &s).unwrap();
    assert_eq!(built.problem.count_labelled("cap:"), 25);
    assert_eq!(built.problem.count_labelled("qos:"), 4);
    assert_eq!(built.problem.count_labelled("sic:"), 12);
    assert_eq!(built.problem.count_labelled("surrogate:"), 4);
    built.problem.validate().unwrap();
}

#[test]
fn expansion_point_is_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let coeffs = random_coeffs(&mut rng, 25);
    let (s, ch, beams) = reference_with_beams(&coeffs);
    let data = build_coeff_data(&ch, &beams, &s).unwrap();
    let vars = CoeffVars { offset: 0, len: 25 };
    let mut x = vec![0.0; 100];
    vars.store(&coeffs, &mut x);
    assert_eq!(vars.extract(&x), coeffs);
    for rx in s.users() {
        for owner in s.users() {
            let t = data.term(&s, rx, owner);
            let z = t.amplitude(side_of(&coeffs, rx));
            let lin = vars.linearized_power(t, rx, z).eval(&x);
            assert!((lin - z.norm_sqr()).abs() <= 1e-9 * z.norm_sqr().max(1e-300));
        }
    }
    // surrogate equals the exact rate at the expansion point
    let built = build_coeff_problem(&data, &coeffs, &s).unwrap();
    let mut x0 = built.problem.warm_start.clone().unwrap();
    for &t in &built.tau {
        x0[t] = 1.0;
    }
    let report = evaluate(&s, &ch, &coeffs, &beams).unwrap();
    for (&si, u) in built.chi.iter().zip(s.users()) {
        let noise = s.noise_power(u);
        let den = match u {
            UserId::Reflect(k) => report.denom_r[k],
            UserId::Transmit(q) => report.denom_t[q],
        };
        x0[si] = den / noise;
    }
    let surrogate = -built.problem.objective_value(&x0);
    assert!((surrogate - report.weighted_sum_rate(&s)).abs() < 1e-9);
}

fn single_element_scenario() -> (Scenario, ChannelSet, Beamformers) {
    let mut s = Scenario::reference();
    s.elements = 1;
    s.reflect_users.truncate(1);
    s.transmit_users.clear();
    s.sinr_min = 1e-3;
    // Cascaded link comparable to the direct one.
    s.reflect_users[0].direct_distance = 400.0;
    let layout = ElementLayout::new(vec![[0.0, 0.0]]);
    let ch = assemble_channels(&s, &layout, &NlosDraws::draw(&s, 8)).unwrap();
    let eff = effective_channels(&ch, &SurfaceCoeffs::equal_split(1)).unwrap();
    let beams = mrt_beamformers(&eff, s.max_power);
    (s, ch, beams)
}

#[test]
fn single_element_matches_grid_search() {
    let (s, ch, beams) = single_element_scenario();
    let init = SurfaceCoeffs::equal_split(1);
    let out = solve_coeff_subproblem(&ch, &beams, &init, &s, &CoeffSettings::default()).unwrap();
    let rate = |v2: Complex64| {
        let coeffs = SurfaceCoeffs {
            v1: CVec::zeros(1),
            v2: CVec::from_element(1, v2),
        };
        weighted_rate(&s, &ch, &coeffs, &beams).unwrap()
    };
    let mut best = (0.0, c(0.0, 0.0));
    for a in 0..100 {
        let amp = a as f64 / 99.0;
        for p in 0..360 {
            let v = Complex64::from_polar(amp, (p as f64).to_radians());
            let r = rate(v);
            if r > best.0 {
                best = (r, v);
            }
        }
    }
    let got = out.rate_history.last().copied().unwrap();
    assert!((got - best.0).abs() <= 1e-2, "{got} vs {}", best.0);
    assert!(best.1.norm() > 0.99);
    assert!(out.coeffs.v2[0].norm() > 0.99);
    assert!(validate_coeffs(&out.coeffs).is_empty());
}

/// Reference scenario at a floor the unaligned start can meet, with beams
/// from the beamforming stage so every SIC link holds.
fn feasible_reference() -> (Scenario, ChannelSet, SurfaceCoeffs, Beamformers) {
    let (mut s, ch) = reference();
    s.sinr_min = rate_to_sinr(0.05);
    let coeffs = SurfaceCoeffs::equal_split(25);
    let eff = effective_channels(&ch, &coeffs).unwrap();
    let init = CovariancePool::from_beamformers(&mrt_beamformers(&eff, s.max_power));
    let bf = solve_beamforming(&eff, &init, &s, &BeamformingSettings::default()).unwrap();
    (s, ch, coeffs, bf.beams)
}

#[test]
fn reference_run_is_monotone_and_valid() {
    let (s, ch, coeffs, beams) = feasible_reference();
    let out = solve_coeff_subproblem(&ch, &beams, &coeffs, &s, &CoeffSettings::default()).unwrap();
    assert!(out.iterations <= 30);
    assert!(out.rate_history.len() >= 2);
    for w in out.rate_history.windows(2) {
        assert!(w[1] >= w[0] - 1e-6, "{:?}", out.rate_history);
    }
    assert!(validate_coeffs(&out.coeffs).is_empty());
    let eff = effective_channels(&ch, &out.coeffs).unwrap();
    assert!(crate::metrics::feasibility(&s, &eff, &beams).holds(1e-5));
    // restarting from the output cannot lose rate
    let again = solve_coeff_subproblem(&ch, &beams, &out.coeffs, &s, &CoeffSettings::default()).unwrap();
    assert!(*again.rate_history.last().unwrap() >= *out.rate_history.last().unwrap() - 1e-6);
}

#[test]
fn slack_step_raises_qos_slack() {
    let (mut s, ch, coeffs, beams) = feasible_reference();
    s.sinr_min = rate_to_sinr(1.0);
    let data = normalized(&build_coeff_data(&ch, &beams, &s).unwrap(), &s);
    let before = exact_qos_slack(&data, &s, &coeffs);
    let (next, after) = coeff_qos_slack_step(&ch, &beams, &coeffs, &s, &SolverSettings::default()).unwrap();
    assert!(after >= before - 1e-9, "{before} -> {after}");
    assert!(validate_coeffs(&next).is_empty());
}

#[test]
fn alignment_is_coherent_for_pure_los() {
    let (mut s, _) = reference();
    s.rician_factor = 1e12;
    let layout = uniform_grid_layout(&s).unwrap();
    let ch = assemble_channels(&s, &layout, &NlosDraws::draw(&s, 4)).unwrap();
    let coeffs = aligned_coefficients(&ch);
    assert!(validate_coeffs(&coeffs).is_empty());
    let beams = Beamformers {
        w_r: vec![CVec::zeros(8); 2],
        w_t: vec![ch.a_t.clone(), CVec::zeros(8)],
    };
    let data = build_coeff_data(&ch, &beams, &s).unwrap();
    let t = data.term(&s, UserId::Transmit(0), UserId::Transmit(0));
    let coherent: f64 = t.b.iter().map(|b| b.norm()).sum::<f64>() * std::f64::consts::FRAC_1_SQRT_2;
    let got = t.amplitude(&coeffs.v1).norm();
    assert!((got - coherent).abs() <= 1e-4 * coherent, "{got} vs {coherent}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn affine_amplitude_matches(seed in 0u64..10_000, l in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let term = CoeffTerm { b: random_cvec(&mut rng, l), c0: c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) };
        let coeffs = random_coeffs(&mut rng, l);
        let vars = CoeffVars { offset: 0, len: l };
        let mut x = vec![0.0; 4 * l];
        vars.store(&coeffs, &mut x);
        for rx in [UserId::Reflect(0), UserId::Transmit(0)] {
            let (re, im) = vars.amplitude(&term, rx);
            let z = term.amplitude(side_of(&coeffs, rx));
            prop_assert!((re.eval(&x) - z.re).abs() < 1e-12);
            prop_assert!((im.eval(&x) - z.im).abs() < 1e-12);
        }
    }

    #[test]
    fn linearized_power_is_a_minorant(seed in 0u64..10_000, l in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let term = CoeffTerm { b: random_cvec(&mut rng, l), c0: c(rng.gen_range(-1.0..1.0), 0.0) };
        let at = random_coeffs(&mut rng, l);
        let other = random_coeffs(&mut rng, l);
        let vars = CoeffVars { offset: 0, len: l };
        let mut x = vec![0.0; 4 * l];
        vars.store(&other, &mut x);
        let rx = UserId::Reflect(0);
        let lin = vars.linearized_power(&term, rx, term.amplitude(&at.v2)).eval(&x);
        prop_assert!(lin <= term.power(&other.v2) + 1e-12);
    }
}
