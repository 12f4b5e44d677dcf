//! Static simulation parameters.
//!
//! Everything in a [`Scenario`] is stored in SI units with angles in radians
//! and powers in watts. Human-facing configs (degrees, dBm) are converted at
//! the boundary by the bench crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Large-scale attenuation law for one class of links.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum PathLossModel {
    /// Friis law `(λ / 4πd)²`.
    FreeSpace,
    /// `C0 · d^(-exponent)` with `C0` given in dB at 1 m.
    LogDistance { reference_db: f64, exponent: f64 },
}

impl PathLossModel {
    pub fn gain(&self, distance: f64, wavelength: f64) -> Result<f64> {
        match *self {
            PathLossModel::FreeSpace => path_loss(distance, wavelength),
            PathLossModel::LogDistance {
                reference_db,
                exponent,
            } => {
                if !(distance > 0.0) {
                    return Err(Error::NonPositive("distance"));
                }
                Ok(10f64.powf(reference_db / 10.0) * distance.powf(-exponent))
            }
        }
    }
}

/// Free-space path gain `(λ / (4π d))²`.
pub fn path_loss(distance: f64, wavelength: f64) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(Error::NonPositive("distance"));
    }
    if !(wavelength > 0.0) {
        return Err(Error::NonPositive("wavelength"));
    }
    let r = wavelength / (4.0 * std::f64::consts::PI * distance);
    Ok(r * r)
}

/// Path-loss laws for the cascaded (surface) links and the direct BS-user links.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossConfig {
    pub surface_links: PathLossModel,
    pub direct_links: PathLossModel,
}

impl Default for PathLossConfig {
    fn default() -> Self {
        PathLossConfig {
            surface_links: PathLossModel::LogDistance {
                reference_db: -30.0,
                exponent: 1.8,
            },
            direct_links: PathLossModel::LogDistance {
                reference_db: -30.0,
                exponent: 3.5,
            },
        }
    }
}

/// Direction seen from the surface, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub azimuth: f64,
    pub elevation: f64,
}

impl Direction {
    pub fn new(azimuth: f64, elevation: f64) -> Self {
        Direction { azimuth, elevation }
    }

    /// In-plane direction cosines `(sin φ cos ψ, sin ψ)`.
    pub fn plane_cosines(&self) -> [f64; 2] {
        [
            self.azimuth.sin() * self.elevation.cos(),
            self.elevation.sin(),
        ]
    }
}

/// A user in the reflection half-space. It also has a direct link to the BS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectUser {
    pub direction: Direction,
    pub surface_distance: f64,
    pub direct_azimuth: f64,
    pub direct_distance: f64,
    pub noise_power: f64,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

/// A user in the transmission half-space (served only through the surface).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmitUser {
    pub direction: Direction,
    pub surface_distance: f64,
    pub noise_power: f64,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// BS ULA size `M`.
    pub antennas: usize,
    /// Number of movable surface elements `L`.
    pub elements: usize,
    pub wavelength: f64,
    /// Rician factor (linear).
    pub rician_factor: f64,
    /// Side of the square movement region, centered at the surface origin.
    pub aperture_side: f64,
    pub min_spacing: f64,
    /// BS power budget in watts.
    pub max_power: f64,
    /// Per-user SINR floor (linear, already converted from a rate target).
    pub sinr_min: f64,
    /// Departure azimuth of the BS-surface link at the BS array.
    pub bs_azimuth: f64,
    /// Arrival direction of the BS signal at the surface.
    pub arrival: Direction,
    pub bs_surface_distance: f64,
    /// Reflection users, weakest first (SIC order).
    pub reflect_users: Vec<ReflectUser>,
    /// Transmission users, weakest first (SIC order).
    pub transmit_users: Vec<TransmitUser>,
    #[serde(default)]
    pub path_loss: PathLossConfig,
    pub seed: u64,
}

/// Identifies one user across the two half-spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UserId {
    Reflect(usize),
    Transmit(usize),
}

impl std::fmt::Display for UserId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UserId::Reflect(k) => write!(f, "R{}", k + 1),
            UserId::Transmit(q) => write!(f, "T{}", q + 1),
        }
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

/// SINR threshold equivalent to a rate floor in bps/Hz.
pub fn rate_to_sinr(rate: f64) -> f64 {
    2f64.powf(rate) - 1.0
}

impl Scenario {
    pub fn num_reflect(&self) -> usize {
        self.reflect_users.len()
    }

    pub fn num_transmit(&self) -> usize {
        self.transmit_users.len()
    }

    pub fn num_users(&self) -> usize {
        self.num_reflect() + self.num_transmit()
    }

    /// Beam order along which received power must be non-decreasing at every
    /// receiver for SIC to work: `R_K, ..., R_1, T_Q, ..., T_1`.
    pub fn decode_chain(&self) -> Vec<UserId> {
        let mut chain: Vec<UserId> = (0..self.num_reflect()).rev().map(UserId::Reflect).collect();
        chain.extend((0..self.num_transmit()).rev().map(UserId::Transmit));
        chain
    }

    /// All users, R users first then T users (the canonical index order).
    pub fn users(&self) -> Vec<UserId> {
        let mut all: Vec<UserId> = (0..self.num_reflect()).map(UserId::Reflect).collect();
        all.extend((0..self.num_transmit()).map(UserId::Transmit));
        all
    }

    pub fn noise_power(&self, user: UserId) -> f64 {
        match user {
            UserId::Reflect(k) => self.reflect_users[k].noise_power,
            UserId::Transmit(q) => self.transmit_users[q].noise_power,
        }
    }

    pub fn weight(&self, user: UserId) -> f64 {
        match user {
            UserId::Reflect(k) => self.reflect_users[k].weight,
            UserId::Transmit(q) => self.transmit_users[q].weight,
        }
    }

    pub fn user_direction(&self, user: UserId) -> Direction {
        match user {
            UserId::Reflect(k) => self.reflect_users[k].direction,
            UserId::Transmit(q) => self.transmit_users[q].direction,
        }
    }

    /// Index of `user` in [`Scenario::users`].
    pub fn user_index(&self, user: UserId) -> usize {
        match user {
            UserId::Reflect(k) => k,
            UserId::Transmit(q) => self.num_reflect() + q,
        }
    }

    /// Grid side needed to lay out `L` elements on a square lattice.
    pub fn grid_side(&self) -> usize {
        (self.elements as f64).sqrt().ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidScenario(m.to_string()));
        if self.antennas == 0 {
            return bad("antenna count must be at least 1");
        }
        if self.num_users() == 0 {
            return bad("at least one user is required");
        }
        if !(self.wavelength > 0.0) {
            return bad("wavelength must be positive");
        }
        if !(self.min_spacing > 0.0) {
            return bad("minimum spacing must be positive");
        }
        if !(self.rician_factor >= 0.0) {
            return bad("Rician factor must be non-negative");
        }
        if !(self.max_power > 0.0) {
            return bad("power budget must be positive");
        }
        if !(self.sinr_min >= 0.0) {
            return bad("SINR floor must be non-negative");
        }
        if !(self.bs_surface_distance > 0.0) {
            return bad("BS-surface distance must be positive");
        }
        for u in &self.reflect_users {
            if !(u.surface_distance > 0.0 && u.direct_distance > 0.0 && u.noise_power > 0.0) {
                return bad("reflection user distances and noise must be positive");
            }
            if !(u.weight >= 0.0) {
                return bad("user weights must be non-negative");
            }
        }
        for u in &self.transmit_users {
            if !(u.surface_distance > 0.0 && u.noise_power > 0.0) {
                return bad("transmission user distances and noise must be positive");
            }
            if !(u.weight >= 0.0) {
                return bad("user weights must be non-negative");
            }
        }
        if self.elements > 0 {
            let side = self.grid_side();
            let needed = self.min_spacing * (side.saturating_sub(1)) as f64;
            if self.aperture_side + 1e-12 < needed {
                return Err(Error::InfeasibleGeometry(format!(
                    "aperture {:.4} m cannot hold a {side}x{side} grid at pitch {:.4} m",
                    self.aperture_side, self.min_spacing
                )));
            }
        }
        Ok(())
    }

    /// The evaluation setup: 10 GHz, `M = 8`, two users per half-space,
    /// 25 elements in a `4.5λ` square, `P_max = 10 dBm`, noise `-80 dBm`,
    /// 1 bps/Hz QoS per user.
    pub fn reference() -> Scenario {
        let deg = |d: f64| d.to_radians();
        let lambda = 0.03;
        let noise = dbm_to_watts(-80.0);
        let user_elevation = deg(-30.0);
        Scenario {
            antennas: 8,
            elements: 25,
            wavelength: lambda,
            rician_factor: 1.0,
            aperture_side: 4.5 * lambda,
            min_spacing: lambda / 2.0,
            max_power: dbm_to_watts(10.0),
            sinr_min: rate_to_sinr(1.0),
            bs_azimuth: deg(120.0),
            arrival: Direction::new(deg(330.0), deg(30.0)),
            bs_surface_distance: 70.0,
            reflect_users: vec![
                ReflectUser {
                    direction: Direction::new(deg(-45.0), user_elevation),
                    surface_distance: 15.0,
                    direct_azimuth: deg(100.0),
                    direct_distance: 60.0,
                    noise_power: noise,
                    weight: 1.0,
                },
                ReflectUser {
                    direction: Direction::new(deg(30.0), user_elevation),
                    surface_distance: 30.0,
                    direct_azimuth: deg(130.0),
                    direct_distance: 50.0,
                    noise_power: noise,
                    weight: 1.0,
                },
            ],
            transmit_users: vec![
                TransmitUser {
                    direction: Direction::new(deg(140.0), user_elevation),
                    surface_distance: 5.0,
                    noise_power: noise,
                    weight: 1.0,
                },
                TransmitUser {
                    direction: Direction::new(deg(210.0), user_elevation),
                    surface_distance: 3.0,
                    noise_power: noise,
                    weight: 1.0,
                },
            ],
            path_loss: PathLossConfig::default(),
            seed: 1,
        }
    }
}
