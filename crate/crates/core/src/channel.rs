//! Geometric channel synthesis: steering vectors, Rician BS links, LoS surface links.
//!
//! Row channels (`H_{b,k}`, `F`) are stored as plain vectors and applied with
//! the unconjugated product `Σ_m F_m w_m`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{Direction, Scenario};
use crate::surface::ElementLayout;
use crate::{CMat, CVec};

/// `p_x sin φ cos ψ + p_y sin ψ`.
pub fn path_difference(p: [f64; 2], phi: f64, psi: f64) -> f64 {
    p[0] * phi.sin() * psi.cos() + p[1] * psi.sin()
}

/// Surface array response toward `dir`; unit-modulus entries.
pub fn surface_steering(layout: &ElementLayout, wavelength: f64, dir: Direction) -> CVec {
    let k0 = 2.0 * PI / wavelength;
    CVec::from_iterator(
        layout.len(),
        layout.positions.iter().map(|&p| {
            Complex64::from_polar(1.0, k0 * path_difference(p, dir.azimuth, dir.elevation))
        }),
    )
}

/// Half-wavelength ULA response `exp(jπ m sin φ)`, `m = 0..M-1`.
pub fn ula_steering(m: usize, phi_t: f64) -> CVec {
    let s = phi_t.sin();
    CVec::from_fn(m, |i, _| Complex64::from_polar(1.0, PI * i as f64 * s))
}

/// Frozen Rayleigh components, unit variance per entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlosDraws {
    /// `L × M`, BS to surface.
    pub g_nlos: CMat,
    /// One length-`M` row per reflection user, BS to user.
    pub h_nlos: Vec<CVec>,
}

impl NlosDraws {
    /// Draws `G_NLoS` row-major, then `H_NLoS,1..K`, from ChaCha8 seeded with `seed`.
    pub fn draw(scenario: &Scenario, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = std::f64::consts::FRAC_1_SQRT_2;
        let mut cn = || {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re * scale, im * scale)
        };
        let (l, m) = (scenario.elements, scenario.antennas);
        let mut g_nlos = CMat::zeros(l, m);
        for i in 0..l {
            for j in 0..m {
                g_nlos[(i, j)] = cn();
            }
        }
        let h_nlos = (0..scenario.num_reflect())
            .map(|_| CVec::from_fn(m, |_, _| cn()))
            .collect();
        NlosDraws { g_nlos, h_nlos }
    }

    /// Keeps only the first `count` surface rows.
    pub fn truncated(&self, count: usize) -> Self {
        NlosDraws {
            g_nlos: self.g_nlos.rows(0, count).into_owned(),
            h_nlos: self.h_nlos.clone(),
        }
    }
}

/// Large-scale gains of every link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathLosses {
    pub bs_surface: f64,
    pub reflect: Vec<f64>,
    pub transmit: Vec<f64>,
    pub direct: Vec<f64>,
}

impl PathLosses {
    pub fn compute(scenario: &Scenario) -> Result<Self> {
        let lam = scenario.wavelength;
        let s = scenario.path_loss.surface_links;
        let d = scenario.path_loss.direct_links;
        Ok(PathLosses {
            bs_surface: s.gain(scenario.bs_surface_distance, lam)?,
            reflect: scenario
                .reflect_users
                .iter()
                .map(|u| s.gain(u.surface_distance, lam))
                .collect::<Result<_>>()?,
            transmit: scenario
                .transmit_users
                .iter()
                .map(|u| s.gain(u.surface_distance, lam))
                .collect::<Result<_>>()?,
            direct: scenario
                .reflect_users
                .iter()
                .map(|u| d.gain(u.direct_distance, lam))
                .collect::<Result<_>>()?,
        })
    }
}

/// All channels for one layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSet {
    /// `L × M`, BS to surface.
    pub g: CMat,
    /// Position-independent part of `g` (scaled NLoS).
    pub g_nlos: CMat,
    /// BS departure response toward the surface, `a_t`.
    pub a_t: CVec,
    /// Amplitude of the LoS outer product in `g`, `√(κ/(κ+1)) √ζ_G`.
    pub los_amplitude: f64,
    pub h_r: Vec<CVec>,
    pub h_t: Vec<CVec>,
    /// Direct BS-user rows `H_{b,k}`.
    pub h_b: Vec<CVec>,
    pub path_losses: PathLosses,
}

impl ChannelSet {
    pub fn elements(&self) -> usize {
        self.g.nrows()
    }

    pub fn antennas(&self) -> usize {
        self.g.ncols()
    }

    /// Moves only the position-dependent LoS factors to a new layout.
    pub fn relocate(&self, scenario: &Scenario, layout: &ElementLayout) -> Result<Self> {
        if layout.len() != self.elements() {
            return Err(Error::Dimension {
                what: "layout elements",
                expected: self.elements(),
                got: layout.len(),
            });
        }
        let mut out = self.clone();
        let a_r = surface_steering(layout, scenario.wavelength, scenario.arrival);
        out.g = &self.g_nlos + (a_r * self.a_t.adjoint()) * Complex64::from(self.los_amplitude);
        for (k, u) in scenario.reflect_users.iter().enumerate() {
            out.h_r[k] = surface_steering(layout, scenario.wavelength, u.direction)
                * Complex64::from(self.path_losses.reflect[k].sqrt());
        }
        for (q, u) in scenario.transmit_users.iter().enumerate() {
            out.h_t[q] = surface_steering(layout, scenario.wavelength, u.direction)
                * Complex64::from(self.path_losses.transmit[q].sqrt());
        }
        Ok(out)
    }
}

/// Builds every channel of `scenario` for `layout` with the frozen `nlos` draws.
///
/// Large-scale gains multiply the whole Rician channel, NLoS included.
pub fn assemble_channels(
    scenario: &Scenario,
    layout: &ElementLayout,
    nlos: &NlosDraws,
) -> Result<ChannelSet> {
    let (l, m, k) = (layout.len(), scenario.antennas, scenario.num_reflect());
    if nlos.g_nlos.nrows() != l {
        return Err(Error::Dimension {
            what: "NLoS rows vs layout elements",
            expected: nlos.g_nlos.nrows(),
            got: l,
        });
    }
    if nlos.g_nlos.ncols() != m {
        return Err(Error::Dimension {
            what: "NLoS columns vs antennas",
            expected: m,
            got: nlos.g_nlos.ncols(),
        });
    }
    if nlos.h_nlos.len() != k {
        return Err(Error::Dimension {
            what: "direct NLoS draws",
            expected: k,
            got: nlos.h_nlos.len(),
        });
    }
    let kappa = scenario.rician_factor;
    let los_w = (kappa / (kappa + 1.0)).sqrt();
    let nlos_w = (1.0 / (kappa + 1.0)).sqrt();
    let path_losses = PathLosses::compute(scenario)?;

    let a_t = ula_steering(m, scenario.bs_azimuth);
    let los_amplitude = los_w * path_losses.bs_surface.sqrt();
    let g_nlos = &nlos.g_nlos * Complex64::from(nlos_w * path_losses.bs_surface.sqrt());
    let h_b = scenario
        .reflect_users
        .iter()
        .zip(&nlos.h_nlos)
        .zip(&path_losses.direct)
        .map(|((u, h), &z)| {
            let los = ula_steering(m, u.direct_azimuth).map(|c| c.conj());
            (los * Complex64::from(los_w) + h * Complex64::from(nlos_w)) * Complex64::from(z.sqrt())
        })
        .collect();

    let seed = ChannelSet {
        g: g_nlos.clone(),
        g_nlos,
        a_t,
        los_amplitude,
        h_r: vec![CVec::zeros(l); k],
        h_t: vec![CVec::zeros(l); scenario.num_transmit()],
        h_b,
        path_losses,
    };
    seed.relocate(scenario, layout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::uniform_grid_layout;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const LAM: f64 = 0.03;

    #[test]
    fn path_difference_examples() {
        assert_eq!(path_difference([0.0, 0.0], 0.7, -0.3), 0.0);
        assert_relative_eq!(
            path_difference([LAM / 2.0, 0.0], PI / 2.0, 0.0),
            LAM / 2.0,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            path_difference([0.0, LAM / 2.0], 1.234, PI / 6.0),
            LAM / 4.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn steering_examples() {
        let one = ElementLayout::new(vec![[0.0, 0.0]]);
        let a = surface_steering(&one, LAM, Direction::new(0.4, 0.2));
        assert_eq!(a[0], Complex64::new(1.0, 0.0));

        let two = ElementLayout::new(vec![[0.0, 0.0], [LAM / 2.0, 0.0]]);
        let a = surface_steering(&two, LAM, Direction::new(PI / 2.0, 0.0));
        assert_relative_eq!(a[1].re, -1.0, epsilon = 1e-12);
        assert!(a[1].im.abs() < 1e-12);

        assert_eq!(ula_steering(1, 0.9)[0], Complex64::new(1.0, 0.0));
        assert!(ula_steering(6, 0.0).iter().all(|z| *z == Complex64::new(1.0, 0.0)));
        let u = ula_steering(2, PI / 2.0);
        assert_relative_eq!(u[1].re, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn channel_shapes() {
        let s = Scenario::reference();
        let layout = uniform_grid_layout(&s).unwrap();
        let ch = assemble_channels(&s, &layout, &NlosDraws::draw(&s, 3)).unwrap();
        assert_eq!((ch.g.nrows(), ch.g.ncols()), (25, 8));
        assert!(ch.h_r.iter().all(|h| h.len() == 25));
        assert!(ch.h_t.iter().all(|h| h.len() == 25));
        assert!(ch.h_b.iter().all(|h| h.len() == 8));
        assert_eq!(ch.h_b.len(), 2);
    }

    #[test]
    fn pure_los_limit_is_rank_one() {
        let mut s = Scenario::reference();
        s.rician_factor = 1e12;
        let layout = uniform_grid_layout(&s).unwrap();
        let ch = assemble_channels(&s, &layout, &NlosDraws::draw(&s, 5)).unwrap();
        let a_r = surface_steering(&layout, s.wavelength, s.arrival);
        let los = (a_r * ch.a_t.adjoint()) * Complex64::from(ch.path_losses.bs_surface.sqrt());
        assert!((&ch.g - &los).norm() <= 1e-5 * ch.g.norm());
        let sv = ch.g.clone().singular_values();
        assert!(sv[1] <= 1e-6 * sv[0]);
    }

    #[test]
    fn zero_rician_factor_is_pure_nlos() {
        let mut s = Scenario::reference();
        s.rician_factor = 0.0;
        let layout = uniform_grid_layout(&s).unwrap();
        let nlos = NlosDraws::draw(&s, 5);
        let ch = assemble_channels(&s, &layout, &nlos).unwrap();
        let expect = &nlos.g_nlos * Complex64::from(ch.path_losses.bs_surface.sqrt());
        assert_eq!(ch.g, expect);
    }

    #[test]
    fn reflection_norm_matches_path_loss() {
        let s = Scenario::reference();
        let layout = uniform_grid_layout(&s).unwrap();
        let ch = assemble_channels(&s, &layout, &NlosDraws::draw(&s, 1)).unwrap();
        for (h, z) in ch.h_r.iter().zip(&ch.path_losses.reflect) {
            assert_relative_eq!(h.norm_squared(), z * 25.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let s = Scenario::reference();
        let layout = ElementLayout::new(vec![[0.0, 0.0]]);
        assert!(matches!(
            assemble_channels(&s, &layout, &NlosDraws::draw(&s, 1)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn draws_are_deterministic() {
        let s = Scenario::reference();
        let layout = uniform_grid_layout(&s).unwrap();
        let a = assemble_channels(&s, &layout, &NlosDraws::draw(&s, 9)).unwrap();
        let b = assemble_channels(&s, &layout, &NlosDraws::draw(&s, 9)).unwrap();
        assert_eq!(a, b);
        let c = NlosDraws::draw(&s, 10);
        assert_ne!(NlosDraws::draw(&s, 9), c);
    }

    proptest! {
        #[test]
        fn moving_layout_keeps_nlos(dx in -0.01f64..0.01, dy in -0.01f64..0.01, seed in 0u64..50) {
            let s = Scenario::reference();
            let layout = uniform_grid_layout(&s).unwrap();
            let nlos = NlosDraws::draw(&s, seed);
            let a = assemble_channels(&s, &layout, &nlos).unwrap();
            let mut moved = layout.clone();
            moved.positions[7][0] += dx;
            moved.positions[7][1] += dy;
            let b = assemble_channels(&s, &moved, &nlos).unwrap();
            prop_assert_eq!(&a.g_nlos, &b.g_nlos);
            prop_assert_eq!(&a.h_b, &b.h_b);
            let los_a = &a.g - &a.g_nlos;
            let los_b = &b.g - &b.g_nlos;
            for j in 0..s.antennas {
                prop_assert!((los_a[(7, j)].norm() - los_b[(7, j)].norm()).abs() < 1e-15);
                for i in (0..25).filter(|&i| i != 7) {
                    prop_assert!((los_a[(i, j)] - los_b[(i, j)]).norm() < 1e-18);
                }
            }
        }

        #[test]
        fn steering_is_unit_modulus(px in -0.1f64..0.1, py in -0.1f64..0.1, phi in -3.2f64..3.2, psi in -1.6f64..1.6) {
            let layout = ElementLayout::new(vec![[px, py]]);
            let a = surface_steering(&layout, LAM, Direction::new(phi, psi));
            prop_assert!((a[0].norm() - 1.0).abs() < 1e-12);
        }
    }
}
