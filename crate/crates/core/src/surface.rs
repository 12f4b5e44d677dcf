//! The fluid surface: movable element layout and energy-splitting coefficients.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::{CMat, CVec};

/// Tolerance applied to coefficient checks to absorb solver round-off.
pub const COEFF_TOLERANCE: f64 = 1e-9;

/// Planar positions of the `L` elements, meters, in a frame centered on the
/// movement region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementLayout {
    pub positions: Vec<[f64; 2]>,
}

impl ElementLayout {
    pub fn new(positions: Vec<[f64; 2]>) -> Self {
        ElementLayout { positions }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.positions.iter().enumerate() {
            for b in &self.positions[i + 1..] {
                best = best.min(distance(a, b));
            }
        }
        best
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y\n");
        for p in &self.positions {
            out.push_str(&format!("{},{}\n", p[0], p[1]));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let rows = parse_rows(text, 2)?;
        Ok(ElementLayout {
            positions: rows.into_iter().map(|r| [r[0], r[1]]).collect(),
        })
    }
}

pub(crate) fn distance(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// ES-mode coefficients: `v1` transmission, `v2` reflection, one entry per element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceCoeffs {
    pub v1: CVec,
    pub v2: CVec,
}

impl SurfaceCoeffs {
    pub fn new(v1: CVec, v2: CVec) -> Self {
        SurfaceCoeffs { v1, v2 }
    }

    /// Equal energy split with zero phase on every element.
    pub fn equal_split(len: usize) -> Self {
        let a = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        SurfaceCoeffs {
            v1: CVec::from_element(len, a),
            v2: CVec::from_element(len, a),
        }
    }

    pub fn zeros(len: usize) -> Self {
        SurfaceCoeffs {
            v1: CVec::zeros(len),
            v2: CVec::zeros(len),
        }
    }

    pub fn len(&self) -> usize {
        self.v1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v1.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("v1_re,v1_im,v2_re,v2_im\n");
        for (a, b) in self.v1.iter().zip(self.v2.iter()) {
            out.push_str(&format!("{},{},{},{}\n", a.re, a.im, b.re, b.im));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let rows = parse_rows(text, 4)?;
        let v1 = CVec::from_iterator(rows.len(), rows.iter().map(|r| Complex64::new(r[0], r[1])));
        let v2 = CVec::from_iterator(rows.len(), rows.iter().map(|r| Complex64::new(r[2], r[3])));
        Ok(SurfaceCoeffs { v1, v2 })
    }
}

fn parse_rows(text: &str, width: usize) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.chars().next().is_some_and(|c| c.is_alphabetic())) {
            continue;
        }
        let vals: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        match vals {
            Ok(v) if v.len() == width => rows.push(v),
            _ => {
                return Err(Error::InvalidScenario(format!(
                    "csv line {}: expected {width} numeric fields",
                    n + 1
                )))
            }
        }
    }
    Ok(rows)
}

/// Centered square lattice at pitch `max(λ/2, ΔD)`, filled row by row.
pub fn uniform_grid_layout(scenario: &Scenario) -> Result<ElementLayout> {
    let count = scenario.elements;
    if count == 0 {
        return Ok(ElementLayout::new(Vec::new()));
    }
    let side = scenario.grid_side();
    let pitch = (scenario.wavelength / 2.0).max(scenario.min_spacing);
    let span = pitch * (side - 1) as f64;
    if span > scenario.aperture_side + 1e-12 {
        return Err(Error::InfeasibleGeometry(format!(
            "{side}x{side} grid at pitch {pitch:.4} m spans {span:.4} m > aperture {:.4} m",
            scenario.aperture_side
        )));
    }
    let origin = -span / 2.0;
    let positions = (0..count)
        .map(|i| {
            let (row, col) = (i / side, i % side);
            [origin + col as f64 * pitch, origin + row as f64 * pitch]
        })
        .collect();
    Ok(ElementLayout::new(positions))
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayoutViolation {
    /// Element outside the square region; `margin` is how far (m) past the edge.
    OutsideRegion { element: usize, margin: f64 },
    /// Pair closer than `ΔD`; `margin` is the shortfall (m).
    Spacing { first: usize, second: usize, margin: f64 },
    /// Layout size does not match the scenario.
    Count { expected: usize, got: usize },
}

impl fmt::Display for LayoutViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayoutViolation::OutsideRegion { element, margin } => {
                write!(f, "element {element} lies {margin:.3e} m outside the region")
            }
            LayoutViolation::Spacing {
                first,
                second,
                margin,
            } => write!(f, "elements {first},{second} are {margin:.3e} m too close"),
            LayoutViolation::Count { expected, got } => {
                write!(f, "layout has {got} elements, scenario expects {expected}")
            }
        }
    }
}

/// Region and spacing checks, both exact.
pub fn validate_layout(layout: &ElementLayout, scenario: &Scenario) -> Vec<LayoutViolation> {
    let mut out = Vec::new();
    if layout.len() != scenario.elements {
        out.push(LayoutViolation::Count {
            expected: scenario.elements,
            got: layout.len(),
        });
    }
    let half = scenario.aperture_side / 2.0;
    for (l, p) in layout.positions.iter().enumerate() {
        let excess = p[0].abs().max(p[1].abs()) - half;
        if excess > 0.0 || !excess.is_finite() {
            out.push(LayoutViolation::OutsideRegion {
                element: l,
                margin: excess,
            });
        }
    }
    for i in 0..layout.len() {
        for j in i + 1..layout.len() {
            let d = distance(&layout.positions[i], &layout.positions[j]);
            if d < scenario.min_spacing {
                out.push(LayoutViolation::Spacing {
                    first: i,
                    second: j,
                    margin: scenario.min_spacing - d,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum CoeffViolation {
    /// `|v1|² + |v2|² - 1` exceeds the tolerance.
    EnergySplit { element: usize, margin: f64 },
    /// A single amplitude above 1.
    Amplitude { element: usize, transmit: bool, value: f64 },
    NonFinite { element: usize },
    Length { v1: usize, v2: usize },
}

impl fmt::Display for CoeffViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoeffViolation::EnergySplit { element, margin } => {
                write!(f, "element {element} energy split exceeds 1 by {margin:.3e}")
            }
            CoeffViolation::Amplitude {
                element,
                transmit,
                value,
            } => write!(
                f,
                "element {element} {} amplitude {value:.6} > 1",
                if *transmit { "transmission" } else { "reflection" }
            ),
            CoeffViolation::NonFinite { element } => write!(f, "element {element} is not finite"),
            CoeffViolation::Length { v1, v2 } => write!(f, "v1 has {v1} entries, v2 has {v2}"),
        }
    }
}

pub fn validate_coeffs(coeffs: &SurfaceCoeffs) -> Vec<CoeffViolation> {
    let mut out = Vec::new();
    if coeffs.v1.len() != coeffs.v2.len() {
        out.push(CoeffViolation::Length {
            v1: coeffs.v1.len(),
            v2: coeffs.v2.len(),
        });
        return out;
    }
    for (l, (a, b)) in coeffs.v1.iter().zip(coeffs.v2.iter()).enumerate() {
        if !(a.re.is_finite() && a.im.is_finite() && b.re.is_finite() && b.im.is_finite()) {
            out.push(CoeffViolation::NonFinite { element: l });
            continue;
        }
        let (ta, tb) = (a.norm_sqr(), b.norm_sqr());
        let margin = ta + tb - 1.0;
        if margin > COEFF_TOLERANCE {
            out.push(CoeffViolation::EnergySplit { element: l, margin });
        }
        for (transmit, amp) in [(true, ta.sqrt()), (false, tb.sqrt())] {
            if amp > 1.0 + COEFF_TOLERANCE {
                out.push(CoeffViolation::Amplitude {
                    element: l,
                    transmit,
                    value: amp,
                });
            }
        }
    }
    out
}

/// `(Φ_b, Θ_b) = (diag(v2), diag(v1))`.
pub fn coeffs_to_diagonals(coeffs: &SurfaceCoeffs) -> (CMat, CMat) {
    (
        CMat::from_diagonal(&coeffs.v2),
        CMat::from_diagonal(&coeffs.v1),
    )
}
