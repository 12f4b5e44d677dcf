//! WebAssembly front end for the browser demo.
//!
//! [`Session`] holds one scenario, a short fixed-surface run and the current
//! layout; [`Demo`] exposes it to JavaScript with JSON results.

use fstar_core::ao::{run_ao, AoSettings, AoState, BaselineKind};
use fstar_core::coeffs::weighted_rate;
use fstar_core::position::{optimize_element, PositionSettings};
use fstar_core::scenario::{dbm_to_watts, Scenario};
use serde::Serialize;
use thiserror::Error;
use wasm_bindgen::prelude::*;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error(transparent)]
    Core(#[from] fstar_core::Error),
    #[error("element {0} out of range (surface has {1})")]
    Element(usize, usize),
    #[error("resolution must be between 2 and 200, got {0}")]
    Resolution(usize),
    #[error("no feasible starting point: {0}")]
    Start(String),
}

pub type Result<T> = std::result::Result<T, DemoError>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayoutView {
    pub wavelength: f64,
    pub aperture_side: f64,
    pub min_spacing: f64,
    /// Element positions in wavelengths.
    pub positions: Vec<[f64; 2]>,
    pub rate: f64,
}

/// Exact weighted rate with one element placed on an `n × n` grid; `None`
/// where the spacing rule is broken.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Landscape {
    pub element: usize,
    pub n: usize,
    /// Grid coordinates in wavelengths, shared by both axes.
    pub axis: Vec<f64>,
    /// Row-major, `rates[j * n + i]` at `(axis[i], axis[j])`.
    pub rates: Vec<Option<f64>>,
    pub best: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MoveView {
    pub element: usize,
    pub from: [f64; 2],
    pub to: [f64; 2],
    pub rate_before: f64,
    pub rate_after: f64,
    pub accepted: usize,
    pub rejected: usize,
    pub locked: bool,
}

pub struct Session {
    scenario: Scenario,
    state: AoState,
    rate: f64,
}

impl Session {
    /// Reference scenario at `power_dbm`, seeded, after one fixed-surface
    /// outer iteration.
    pub fn new(seed: u64, power_dbm: f64) -> Result<Self> {
        let mut scenario = Scenario::reference();
        scenario.seed = seed;
        scenario.max_power = dbm_to_watts(power_dbm);
        scenario.validate()?;
        let settings = AoSettings {
            max_outer: 1,
            ..Default::default()
        };
        let state = run_ao(&scenario, BaselineKind::TStar, None, &settings)?;
        if let Some(f) = &state.failure {
            return Err(DemoError::Start(f.clone()));
        }
        let rate = state.objective();
        Ok(Session { scenario, state, rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn layout(&self) -> LayoutView {
        let lam = self.scenario.wavelength;
        LayoutView {
            wavelength: lam,
            aperture_side: self.scenario.aperture_side / lam,
            min_spacing: self.scenario.min_spacing / lam,
            positions: self.state.layout.positions.iter().map(|p| [p[0] / lam, p[1] / lam]).collect(),
            rate: self.rate,
        }
    }

    fn check(&self, element: usize) -> Result<()> {
        let len = self.state.layout.len();
        if element >= len {
            return Err(DemoError::Element(element, len));
        }
        Ok(())
    }

    pub fn landscape(&self, element: usize, n: usize) -> Result<Landscape> {
        self.check(element)?;
        if !(2..=200).contains(&n) {
            return Err(DemoError::Resolution(n));
        }
        let s = &self.scenario;
        let half = s.aperture_side / 2.0;
        let step = s.aperture_side / (n - 1) as f64;
        let coords: Vec<f64> = (0..n).map(|i| -half + i as f64 * step).collect();
        let mut rates = Vec::with_capacity(n * n);
        let mut best = f64::NEG_INFINITY;
        let mut layout = self.state.layout.clone();
        for &y in &coords {
            for &x in &coords {
                let clear = self
                    .state
                    .layout
                    .positions
                    .iter()
                    .enumerate()
                    .all(|(i, q)| i == element || (x - q[0]).hypot(y - q[1]) >= s.min_spacing);
                if !clear {
                    rates.push(None);
                    continue;
                }
                layout.positions[element] = [x, y];
                let ch = self.state.channels.relocate(s, &layout)?;
                let r = weighted_rate(s, &ch, &self.state.coeffs, &self.state.beams)?;
                best = best.max(r);
                rates.push(Some(r));
            }
        }
        Ok(Landscape {
            element,
            n,
            axis: coords.iter().map(|c| c / s.wavelength).collect(),
            rates,
            best,
        })
    }

    /// One inner position loop on `element` with beams and coefficients held.
    pub fn move_element(&mut self, element: usize) -> Result<MoveView> {
        self.check(element)?;
        let lam = self.scenario.wavelength;
        let from = self.state.layout.positions[element];
        let st = &self.state;
        let out = optimize_element(
            &st.channels,
            &st.layout,
            &st.coeffs,
            &st.beams,
            &self.scenario,
            &PositionSettings::default(),
            element,
        )?;
        let view = MoveView {
            element,
            from: [from[0] / lam, from[1] / lam],
            to: [out.layout.positions[element][0] / lam, out.layout.positions[element][1] / lam],
            rate_before: self.rate,
            rate_after: out.rate,
            accepted: out.trace.accepted,
            rejected: out.trace.rejected,
            locked: out.trace.locked,
        };
        self.state.layout = out.layout;
        self.state.channels = out.channels;
        self.rate = out.rate;
        Ok(view)
    }
}

fn to_js<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("views serialize")
}

fn js_err(e: DemoError) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo(Session);

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, power_dbm: f64) -> std::result::Result<Demo, JsError> {
        Session::new(seed, power_dbm).map(Demo).map_err(js_err)
    }

    pub fn layout(&self) -> String {
        to_js(&self.0.layout())
    }

    pub fn landscape(&self, element: usize, n: usize) -> std::result::Result<String, JsError> {
        self.0.landscape(element, n).map(|l| to_js(&l)).map_err(js_err)
    }

    #[wasm_bindgen(js_name = moveElement)]
    pub fn move_element(&mut self, element: usize) -> std::result::Result<String, JsError> {
        self.0.move_element(element).map(|m| to_js(&m)).map_err(js_err)
    }
}
