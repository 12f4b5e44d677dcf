use super::*;
use crate::channel::{assemble_channels, NlosDraws};
use crate::conic::ConeKind;
use crate::metrics::effective_channels;
use crate::scenario::rate_to_sinr;
use crate::surface::{uniform_grid_layout, SurfaceCoeffs};
use proptest::prelude::*;
use rand::Rng;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn random_cvec(rng: &mut ChaCha8Rng, n: usize) -> CVec {
    CVec::from_fn(n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

fn reference_eff() -> (Scenario, EffectiveChannels) {
    let s = Scenario::reference();
    let layout = uniform_grid_layout(&s).unwrap();
    let ch = assemble_channels(&s, &layout, &NlosDraws::draw(&s, 4)).unwrap();
    let eff = effective_channels(&ch, &SurfaceCoeffs::equal_split(s.elements)).unwrap();
    // Unaligned coefficients cannot carry the 1 bps/Hz floor to the far transmit user.
    let s = Scenario {
        sinr_min: rate_to_sinr(0.05),
        ..s
    };
    (s, eff)
}

fn single_user(antennas: usize) -> Scenario {
    let mut s = Scenario::reference();
    s.antennas = antennas;
    s.reflect_users.truncate(1);
    s.transmit_users.clear();
    s
}

fn fro(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

#[test]
fn single_user_matches_mrt() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let s = single_user(4);
    // SNR around 20 dB at full power.
    let f = random_cvec(&mut rng, 4) * c((1e-9f64).sqrt(), 0.0);
    let eff = EffectiveChannels {
        f_r: vec![f.clone()],
        f_t: vec![],
    };
    let init = CovariancePool::from_beamformers(&mrt_beamformers(&eff, s.max_power).scaled(0.3));
    let out = solve_beamforming(&eff, &init, &s, &BeamformingSettings::default()).unwrap();
    let oracle = (1.0 + s.max_power * f.norm_squared() / s.reflect_users[0].noise_power).log2();
    let rate = crate::metrics::sinr_all(&eff, &out.beams, &[s.reflect_users[0].noise_power], &[])
        .unwrap()
        .sum_rate;
    assert!((rate - oracle).abs() <= 1e-3 * oracle, "{rate} vs {oracle}");
    assert!(out.dominance[0] > 0.999);
    assert!(out.converged);
}

#[test]
fn single_user_census() {
    let s = single_user(8);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let eff = EffectiveChannels {
        f_r: vec![random_cvec(&mut rng, 8) * c(1e-4, 0.0)],
        f_t: vec![],
    };
    let pool = CovariancePool::from_beamformers(&mrt_beamformers(&eff, s.max_power));
    let built = build_beamforming_problem(&eff, &pool, &s, false).unwrap();
    let p = &built.problem;
    assert_eq!(p.count(ConeKind::Psd(16)), 1);
    assert_eq!(p.count_labelled("power"), 1);
    assert_eq!(p.count_labelled("qos:"), 1);
    assert_eq!(p.count_labelled("sic:"), 0);
}

#[test]
fn reference_census() {
    let (s, eff) = reference_eff();
    let pool = CovariancePool::from_beamformers(&mrt_beamformers(&eff, s.max_power));
    let u = s.num_users();
    for subspace in [false, true] {
        let built = build_beamforming_problem(&eff, &pool, &s, subspace).unwrap();
        let p = &built.problem;
        let psd: Vec<usize> = p
            .blocks
            .iter()
            .filter_map(|b| match b.kind {
                ConeKind::Psd(n) => Some(n),
                _ => None,
            })
            .collect();
        assert_eq!(psd.len(), u);
        let complex_dim = if subspace { u.min(8) } else { 8 };
        assert!(psd.iter().all(|&n| n == 2 * complex_dim));
        assert_eq!(p.count_labelled("power"), 1);
        assert_eq!(p.count_labelled("qos:"), u);
        assert_eq!(p.count_labelled("sic:"), u * (u - 1));
        p.validate().unwrap();
    }
}

#[test]
fn zero_pool_is_degenerate() {
    let (s, eff) = reference_eff();
    let pool = CovariancePool::from_beamformers(&Beamformers::zeros(8, 2, 2));
    assert!(matches!(
        build_beamforming_problem(&eff, &pool, &s, true),
        Err(Error::Degenerate(_))
    ));
}

#[test]
fn unreachable_qos_reports_family() {
    let (mut s, eff) = reference_eff();
    s.sinr_min = 1e9;
    let pool = CovariancePool::from_beamformers(&mrt_beamformers(&eff, s.max_power));
    match solve_beamforming(&eff, &pool, &s, &BeamformingSettings::default()) {
        Err(Error::Infeasible { stage, family }) => {
            assert_eq!(stage, "beamforming");
            assert!(!family.is_empty());
        }
        other => panic!("expected infeasibility, got {other:?}"),
    }
}

#[test]
fn subspace_matches_full_space() {
    let (s, eff) = reference_eff();
    let pool = CovariancePool::from_beamformers(&mrt_beamformers(&eff, s.max_power));
    let settings = SolverSettings::default();
    let full = build_beamforming_problem(&eff, &pool, &s, false).unwrap();
    let sub = build_beamforming_problem(&eff, &pool, &s, true).unwrap();
    let a = solve_conic(&full.problem, &settings);
    let b = solve_conic(&sub.problem, &settings);
    assert!(a.is_optimal() && b.is_optimal(), "{:?} {:?}", a.status, b.status);
    assert!((a.objective - b.objective).abs() <= 1e-5 * a.objective.abs().max(1.0));
}

#[test]
fn more_power_never_hurts_surrogate() {
    let (s, eff) = reference_eff();
    let pool = CovariancePool::from_beamformers(&mrt_beamformers(&eff, s.max_power));
    let mut s2 = s.clone();
    s2.max_power *= 2.0;
    let settings = SolverSettings::default();
    let a = solve_conic(&build_beamforming_problem(&eff, &pool, &s, true).unwrap().problem, &settings);
    let b = solve_conic(&build_beamforming_problem(&eff, &pool, &s2, true).unwrap().problem, &settings);
    assert!(a.is_optimal() && b.is_optimal());
    assert!(-b.objective >= -a.objective - 1e-6);
}

#[test]
fn surrogate_touches_rate_at_expansion_point() {
    let (s, eff) = reference_eff();
    let pool = CovariancePool::from_beamformers(&mrt_beamformers(&eff, s.max_power));
    let built = build_beamforming_problem(&eff, &pool, &s, true).unwrap();
    let mut x = vec![0.0; built.problem.num_vars];
    built.embed_pool(&pool, &mut x);
    for &t in &built.tau {
        x[t] = 1.0;
    }
    let surrogate = -built.problem.objective_value(&x);
    assert!((surrogate - pool.weighted_rate(&eff, &s)).abs() < 1e-9);
    let back = built.pool(&x);
    for u in s.users() {
        assert!(fro(&(back.cov(u) - pool.cov(u))) <= 1e-12 * fro(pool.cov(u)).max(1e-30));
    }
}

#[test]
fn reference_run_is_monotone_and_feasible() {
    let (s, eff) = reference_eff();
    let init = CovariancePool::from_beamformers(&mrt_beamformers(&eff, s.max_power));
    let out = solve_beamforming(&eff, &init, &s, &BeamformingSettings::default()).unwrap();
    assert!(out.iterations <= 30);
    for w in out.surrogate_history.windows(2) {
        assert!(w[1] >= w[0] - 1e-8 * w[0].abs().max(1.0), "{:?}", out.surrogate_history);
    }
    assert!(out.relaxed.total_power() <= s.max_power * (1.0 + 1e-6));
    assert!(out.feasibility.holds(RECOVERY_TOLERANCE), "{:?} dom {:?} rand {} hist {:?}", out.feasibility, out.dominance, out.randomized, out.surrogate_history);
    assert!(out.final_dominance.iter().all(|&d| d >= 0.99));
    let recovered = CovariancePool::from_beamformers(&out.beams);
    assert!(recovered.feasibility(&eff, &s).holds(RECOVERY_TOLERANCE));
}

#[test]
fn recover_rank_one_exactly() {
    let w = CVec::from_vec(vec![c(0.3, -0.4), c(-1.2, 0.5), c(0.1, 0.9)]);
    let (r, d) = rank_one_recover(&(&w * w.adjoint()));
    assert!((d - 1.0).abs() < 1e-12);
    assert!(fro(&(&r * r.adjoint() - &w * w.adjoint())) < 1e-12);
    // largest entry real positive
    assert!(r[1].im.abs() < 1e-12 && r[1].re > 0.0);
}

#[test]
fn identity_has_half_dominance() {
    let (_, d) = rank_one_recover(&CMat::identity(2, 2));
    assert!((d - 0.5).abs() < 1e-12);
}

#[test]
fn zero_matrix_recovers_zero() {
    let (w, d) = rank_one_recover(&CMat::zeros(3, 3));
    assert_eq!(d, 0.0);
    assert!(w.iter().all(|z| *z == c(0.0, 0.0)));
}

#[test]
fn perturbed_rank_one_is_close() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = random_cvec(&mut rng, 5);
    let m = &w * w.adjoint() + CMat::identity(5, 5) * c(1e-8, 0.0);
    let (r, _) = rank_one_recover(&m);
    assert!(fro(&(&r * r.adjoint() - &m)) <= 1e-3 * fro(&m));
}

#[test]
fn randomization_keeps_a_feasible_candidate() {
    let (s, eff) = reference_eff();
    let init = CovariancePool::from_beamformers(&mrt_beamformers(&eff, s.max_power));
    let out = solve_beamforming(&eff, &init, &s, &BeamformingSettings::default()).unwrap();
    // Mix a second direction into every covariance to force the fallback.
    let mut pool = out.relaxed.clone();
    for u in s.users() {
        let w = pool.cov(u).clone();
        *pool.cov_mut(u) = &w * c(0.9, 0.0) + CMat::identity(8, 8) * c(0.1 * w.trace().re / 8.0, 0.0);
    }
    let settings = BeamformingSettings {
        randomization_samples: 50,
        ..Default::default()
    };
    let (beams, dominance, _) = recover_beams(&eff, &pool, &s, &settings);
    assert!(dominance.iter().all(|&d| d < 0.99));
    assert!(beams.total_power() <= pool.total_power() * (1.0 + 1e-9));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn recovery_reproduces_outer_products(seed in 0u64..10_000, n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_cvec(&mut rng, n);
        let outer = &w * w.adjoint();
        let (r, d) = rank_one_recover(&outer);
        prop_assert!((d - 1.0).abs() < 1e-9);
        prop_assert!(fro(&(&r * r.adjoint() - &outer)) <= 1e-9 * fro(&outer));
    }

    #[test]
    fn span_is_orthonormal_and_complete(seed in 0u64..10_000, count in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vs: Vec<CVec> = (0..count).map(|_| random_cvec(&mut rng, 6)).collect();
        let b = orthonormal_span(&vs, 6);
        prop_assert_eq!(b.ncols(), count);
        prop_assert!(fro(&(b.adjoint() * &b - CMat::identity(count, count))) < 1e-10);
        for v in &vs {
            let proj = &b * (b.adjoint() * v);
            prop_assert!((proj - v).norm() < 1e-10 * v.norm());
        }
    }

    #[test]
    fn received_power_matches_beam_gain(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_cvec(&mut rng, 4);
        let w = random_cvec(&mut rng, 4);
        let direct = f.dot(&w).norm_sqr();
        prop_assert!((received(&f, &(&w * w.adjoint())) - direct).abs() < 1e-10 * direct.max(1.0));
    }
}

#[test]
fn slack_sign_predicts_feasibility() {
    let (mut s, eff) = reference_eff();
    let init = CovariancePool::from_beamformers(&mrt_beamformers(&eff, s.max_power));
    for rate in [0.05, 1.0] {
        s.sinr_min = rate_to_sinr(rate);
        let (pool, slack) = max_min_qos_slack(&eff, &s, true, &SolverSettings::default()).unwrap();
        assert!(pool.total_power() <= s.max_power * (1.0 + 1e-6));
        let solved = solve_beamforming(&eff, &init, &s, &BeamformingSettings::default());
        assert_eq!(slack >= 0.0, solved.is_ok(), "rate {rate}: slack {slack}");
    }
}
