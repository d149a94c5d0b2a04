//! Modeling toolkit for Rydberg excitation experiments in ultracold atomic gases.
//!
//! The crate covers the computational chain of a cold-atom Rydberg apparatus:
//! single-channel Rydberg level structure and radial matrix elements, Stark
//! maps in crossed level manifolds, the electrostatic field of an in-vacuum
//! electrode assembly together with its inverse problem, Ioffe-Pritchard
//! magnetic trapping, ion extraction trajectories, two-photon excitation
//! spectra, and absorption-image analysis of thermal and condensed clouds.
//!
//! All physical quantities carry their units in the name (`_hz`, `_v_cm`,
//! `_mm`, `_au`) unless the surrounding type documents a single convention.

pub mod acceptance;
pub mod angular;
pub mod cloudfit;
pub mod constants;
pub mod efield;
pub mod error;
pub mod fitting;
pub mod magtrap;
pub mod radial;
pub mod rydberg;
pub mod spectra;
pub mod stark;
pub mod transport;

pub use error::{Error, Result};
