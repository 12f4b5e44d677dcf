//! Joint beamforming, STAR coefficient and element position optimization for
//! a fluid STAR-RIS assisted NOMA downlink.

pub mod ao;
pub mod beamforming;
pub mod channel;
pub mod coeffs;
pub mod conic;
pub mod error;
pub mod metrics;
pub mod position;
pub mod scenario;
pub mod surface;
pub mod surrogate;

pub use error::{Error, Result};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CVec = DVector<Complex64>;
pub type CMat = DMatrix<Complex64>;
