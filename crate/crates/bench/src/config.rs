//! Human-editable scenario files: JSON with angles in degrees, powers in dBm
//! and distances in meters.

use std::fs;
use std::path::Path;

use fstar_core::scenario::{
    dbm_to_watts, rate_to_sinr, watts_to_dbm, Direction, PathLossConfig, ReflectUser, Scenario, TransmitUser,
};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

/// The reference setup shipped with the crate.
pub const REFERENCE_JSON: &str = include_str!("../configs/reference.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionConfig {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
}

impl DirectionConfig {
    fn to_core(&self) -> Direction {
        Direction::new(self.azimuth_deg.to_radians(), self.elevation_deg.to_radians())
    }

    fn from_core(d: Direction) -> Self {
        DirectionConfig {
            azimuth_deg: d.azimuth.to_degrees(),
            elevation_deg: d.elevation.to_degrees(),
        }
    }
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReflectUserConfig {
    pub direction: DirectionConfig,
    pub surface_distance_m: f64,
    pub direct_azimuth_deg: f64,
    pub direct_distance_m: f64,
    pub noise_dbm: f64,
    #[serde(default = "unit")]
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransmitUserConfig {
    pub direction: DirectionConfig,
    pub surface_distance_m: f64,
    pub noise_dbm: f64,
    #[serde(default = "unit")]
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub antennas: usize,
    pub elements: usize,
    pub wavelength_m: f64,
    pub rician_factor: f64,
    pub aperture_side_m: f64,
    pub min_spacing_m: f64,
    pub max_power_dbm: f64,
    /// Per-user rate floor, bps/Hz.
    pub qos_rate_bps: f64,
    pub bs_azimuth_deg: f64,
    pub arrival: DirectionConfig,
    pub bs_surface_distance_m: f64,
    /// Weakest first.
    pub reflect_users: Vec<ReflectUserConfig>,
    /// Weakest first.
    pub transmit_users: Vec<TransmitUserConfig>,
    #[serde(default)]
    pub path_loss: PathLossConfig,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn reference() -> Self {
        serde_json::from_str(REFERENCE_JSON).expect("shipped config parses")
    }

    pub fn to_scenario(&self) -> Result<Scenario> {
        let s = Scenario {
            antennas: self.antennas,
            elements: self.elements,
            wavelength: self.wavelength_m,
            rician_factor: self.rician_factor,
            aperture_side: self.aperture_side_m,
            min_spacing: self.min_spacing_m,
            max_power: dbm_to_watts(self.max_power_dbm),
            sinr_min: rate_to_sinr(self.qos_rate_bps),
            bs_azimuth: self.bs_azimuth_deg.to_radians(),
            arrival: self.arrival.to_core(),
            bs_surface_distance: self.bs_surface_distance_m,
            reflect_users: self
                .reflect_users
                .iter()
                .map(|u| ReflectUser {
                    direction: u.direction.to_core(),
                    surface_distance: u.surface_distance_m,
                    direct_azimuth: u.direct_azimuth_deg.to_radians(),
                    direct_distance: u.direct_distance_m,
                    noise_power: dbm_to_watts(u.noise_dbm),
                    weight: u.weight,
                })
                .collect(),
            transmit_users: self
                .transmit_users
                .iter()
                .map(|u| TransmitUser {
                    direction: u.direction.to_core(),
                    surface_distance: u.surface_distance_m,
                    noise_power: dbm_to_watts(u.noise_dbm),
                    weight: u.weight,
                })
                .collect(),
            path_loss: self.path_loss,
            seed: self.seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn from_scenario(s: &Scenario) -> Self {
        ScenarioConfig {
            antennas: s.antennas,
            elements: s.elements,
            wavelength_m: s.wavelength,
            rician_factor: s.rician_factor,
            aperture_side_m: s.aperture_side,
            min_spacing_m: s.min_spacing,
            max_power_dbm: watts_to_dbm(s.max_power),
            qos_rate_bps: (1.0 + s.sinr_min).log2(),
            bs_azimuth_deg: s.bs_azimuth.to_degrees(),
            arrival: DirectionConfig::from_core(s.arrival),
            bs_surface_distance_m: s.bs_surface_distance,
            reflect_users: s
                .reflect_users
                .iter()
                .map(|u| ReflectUserConfig {
                    direction: DirectionConfig::from_core(u.direction),
                    surface_distance_m: u.surface_distance,
                    direct_azimuth_deg: u.direct_azimuth.to_degrees(),
                    direct_distance_m: u.direct_distance,
                    noise_dbm: watts_to_dbm(u.noise_power),
                    weight: u.weight,
                })
                .collect(),
            transmit_users: s
                .transmit_users
                .iter()
                .map(|u| TransmitUserConfig {
                    direction: DirectionConfig::from_core(u.direction),
                    surface_distance_m: u.surface_distance,
                    noise_dbm: watts_to_dbm(u.noise_power),
                    weight: u.weight,
                })
                .collect(),
            path_loss: s.path_loss,
            seed: s.seed,
        }
    }
}

pub fn parse_config(text: &str, origin: &Path) -> Result<ScenarioConfig> {
    serde_json::from_str(text).map_err(|e| BenchError::parse(origin, &e))
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    parse_config(&text, path)
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    load_config(path)?.to_scenario()
}

pub fn write_config(config: &ScenarioConfig, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(config).expect("config serializes") + "\n";
    fs::write(path, text).map_err(|e| BenchError::io(path, e))
}
