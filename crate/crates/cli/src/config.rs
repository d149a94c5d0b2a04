//! Run configuration: one JSON document with a named section per
//! subsystem. Every field has a built-in default matching the standard
//! working point, so commands run without a file; command-line flags
//! override the file where both exist. Unknown keys are rejected so a
//! typo cannot silently fall back to a default.
//!
//! The full schema with units is documented in `configs/README.md`, and
//! `configs/example.json` spells out every default value.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rydbec::{Error, Result};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Seed for synthesis commands. Those commands refuse to run when
    /// neither this nor `--seed` is given.
    pub seed: Option<u64>,
    /// Output directory; `--out` overrides, `out` is the fallback.
    pub out_dir: Option<PathBuf>,
    pub trap: TrapSection,
    pub level: LevelSection,
    pub charges: ChargesSection,
    pub cloud: CloudSection,
    pub spectrum: SpectrumSection,
    pub scan: ScanSection,
    pub trajectory: TrajectorySection,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<ExperimentConfig> {
        let Some(path) = path else {
            return Ok(ExperimentConfig::default());
        };
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("config {}: {e}", path.display())))
    }
}

/// Magnetic-trap working point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrapSection {
    /// Offset field at the trap minimum, G.
    pub b0_g: f64,
    /// Coil current, A.
    pub current_a: f64,
}

impl Default for TrapSection {
    fn default() -> Self {
        TrapSection { b0_g: 1.0, current_a: 400.0 }
    }
}

/// Level-structure settings for the Stark map.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LevelSection {
    /// Principal quantum number of the target S state.
    pub n: u32,
    /// Shells included on each side of `n`.
    pub spread: u32,
    /// Twice the magnetic quantum number (odd).
    pub mj2: i32,
    /// Upper end of the mapped field range, V/cm (lower end is 0).
    pub field_max_v_cm: f64,
    /// Field samples across the range; 1 lists zero-field energies only.
    pub samples: usize,
}

impl Default for LevelSection {
    fn default() -> Self {
        LevelSection {
            n: 43,
            spread: 3,
            mj2: 1,
            field_max_v_cm: 0.5,
            samples: 11,
        }
    }
}

/// Plate-charge construction for `field` and `trajectory`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChargesSection {
    /// Preset name: constant_full, constant_BH, gradient_all, saddle_alternate.
    pub preset: String,
    /// Volts-to-charge anchor: "theory" or "measured".
    pub anchor: String,
    /// Plate voltage applied to the preset pattern, V.
    pub volts: f64,
}

impl Default for ChargesSection {
    fn default() -> Self {
        ChargesSection {
            preset: "constant_BH".into(),
            anchor: "measured".into(),
            volts: 5.0,
        }
    }
}

/// Cloud synthesis and image-analysis settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CloudSection {
    /// Total atom number shared between the two components.
    pub total_atoms: f64,
    /// Condensed share of `total_atoms`, in [0, 1].
    pub condensate_fraction: f64,
    /// Thermal temperature, nK. Unset: the transition-line scaling
    /// Tc(total) * (1 - fraction)^(1/3) for the configured trap.
    pub temperature_nk: Option<f64>,
    /// Free flight before the exposure, ms.
    pub tof_ms: f64,
    /// Gaussian pixel noise, optical-density units.
    pub noise_od: f64,
    pub nx: usize,
    pub ny: usize,
    /// Pixel pitch, um.
    pub pixel_um: f64,
    /// Trap frequencies used for synthesis and for back-scaling fitted
    /// radii to in-trap values, Hz.
    pub radial_hz: f64,
    pub axial_hz: f64,
    /// Wing-exclusion half-width in units of the first-pass sigma.
    pub exclusion_widths: f64,
    /// Multiplier on the resonant absorption cross section.
    pub cross_section_factor: f64,
}

impl Default for CloudSection {
    fn default() -> Self {
        CloudSection {
            total_atoms: 3e5,
            condensate_fraction: 0.65,
            temperature_nk: None,
            tof_ms: 21.0,
            noise_od: 0.01,
            nx: 121,
            ny: 121,
            pixel_um: 10.0,
            radial_hz: 250.0,
            axial_hz: 18.0,
            exclusion_widths: 2.0,
            cross_section_factor: 1.0,
        }
    }
}

/// Excitation-spectrum synthesis settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSection {
    /// Excitation scheme by name; "two_photon_43s" is the one on file.
    pub scheme: String,
    /// Detuning grid, MHz.
    pub min_mhz: f64,
    pub max_mhz: f64,
    pub steps: usize,
    /// Atoms sampled per spectrum.
    pub atoms: usize,
    /// Cloud temperature, uK.
    pub temperature_uk: f64,
    /// Uniform electric field at the cloud, V/cm.
    pub e_field_v_cm: f64,
    /// Default window for `spectrum fit`, MHz.
    pub fit_window_mhz: (f64, f64),
}

impl Default for SpectrumSection {
    fn default() -> Self {
        SpectrumSection {
            scheme: "two_photon_43s".into(),
            min_mhz: -10.0,
            max_mhz: 5.0,
            steps: 601,
            atoms: 100_000,
            temperature_uk: 15.0,
            e_field_v_cm: 0.0,
            fit_window_mhz: (-1.5, 4.0),
        }
    }
}

/// Plate-voltage scan settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanSection {
    /// Plate voltages, V.
    pub voltages_v: Vec<f64>,
    /// Residual field at zero voltage, V/cm.
    pub offset_field_v_cm: f64,
    /// Field change per plate volt, (V/cm)/V.
    pub field_per_volt_v_cm: f64,
    pub atoms: usize,
    /// Half-width of the tracking window per spectrum, MHz.
    pub window_half_mhz: f64,
    pub steps_per_spectrum: usize,
    /// Cloud temperature for the scan, uK. Scans resolve line centers,
    /// so a cold cloud keeps them sharp.
    pub temperature_uk: f64,
}

impl Default for ScanSection {
    fn default() -> Self {
        ScanSection {
            voltages_v: (0..9).map(|k| -15.0 + 3.75 * k as f64).collect(),
            offset_field_v_cm: 0.27,
            field_per_volt_v_cm: -0.2,
            atoms: 4000,
            window_half_mhz: 8.0,
            steps_per_spectrum: 161,
            temperature_uk: 2.0,
        }
    }
}

/// Ion-extraction scenario for `trajectory`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectorySection {
    /// Extraction-pulse plate voltage on the push pair, V.
    pub pulse_volts: f64,
    /// Detector-cage bias, V; 0 removes the cage from the model.
    pub cage_volts: f64,
    /// Whether the magnetic trap stays on during extraction.
    pub trap_on: bool,
    pub dt_us: f64,
    pub t_max_us: f64,
    /// Launch position, mm.
    pub start_mm: [f64; 3],
    /// Launch velocity, m/s.
    pub velocity_m_s: [f64; 3],
}

impl Default for TrajectorySection {
    fn default() -> Self {
        TrajectorySection {
            pulse_volts: 1000.0,
            cage_volts: -15.0,
            trap_on: true,
            dt_us: 1e-3,
            t_max_us: 20.0,
            start_mm: [0.0; 3],
            velocity_m_s: [0.0; 3],
        }
    }
}
