//! Two-photon excitation spectra: beam intensities, Rabi frequencies,
//! Zeeman-split line synthesis over a trapped thermal cloud, Gaussian
//! peak fitting, and the plate-voltage scan analysis that calibrates the
//! electric field at the atoms.
//!
//! Conventions. Rabi frequencies are quoted in ordinary-frequency units
//! (d·E/h), so ratios like Omega_r·Omega_b/2Delta can mix kHz and MHz
//! after unit conversion without factors of 2 pi. Linewidths and fitted
//! peak widths are full width at half maximum; fit reports also carry
//! the Gaussian sigma. The natural linewidth of the Rydberg line (kHz)
//! is neglected against the instrument profile, so synthesized lines are
//! pure Gaussians.

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::angular::{c1_element, small_d1};
use crate::constants::Constants;
use crate::error::{Error, Result};
use crate::fitting::levenberg_marquardt;
use crate::magtrap::{IoffePritchardTrap, TrappedState};
use crate::rydberg::{Model, RydbergLevel};

/// Converts a Gaussian full width at half maximum to its sigma.
pub const FWHM_PER_SIGMA: f64 = 2.354820045030949;
/// Width convention used in every report this module emits.
pub const WIDTH_CONVENTION: &str = "fwhm";

/// Photon polarization relative to the laboratory z axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarization {
    SigmaPlus,
    Pi,
    SigmaMinus,
}

impl Polarization {
    /// Spherical-tensor component the photon drives.
    pub fn q(self) -> i32 {
        match self {
            Polarization::SigmaPlus => 1,
            Polarization::Pi => 0,
            Polarization::SigmaMinus => -1,
        }
    }
}

/// Gaussian laser beam propagating along z, described at the atoms.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GaussianBeam {
    pub wavelength_nm: f64,
    pub power_w: f64,
    /// 1/e^2 intensity radius at the cloud.
    pub waist_um: f64,
    pub polarization: Polarization,
}

impl GaussianBeam {
    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength_nm.is_finite() && self.wavelength_nm > 0.0) {
            return Err(Error::domain("beam wavelength must be finite and > 0"));
        }
        if !(self.power_w.is_finite() && self.power_w >= 0.0) {
            return Err(Error::domain("beam power must be finite and >= 0"));
        }
        if !(self.waist_um.is_finite() && self.waist_um > 0.0) {
            return Err(Error::domain("beam waist must be finite and > 0"));
        }
        Ok(())
    }

    /// Peak intensity 2P/(pi w^2) in W/m^2.
    pub fn peak_intensity_w_m2(&self) -> f64 {
        let w_m = self.waist_um * 1e-6;
        2.0 * self.power_w / (std::f64::consts::PI * w_m * w_m)
    }

    /// Electric-field amplitude at radius `rho_um`, V/m.
    pub fn field_amplitude_v_m(&self, rho_um: f64) -> f64 {
        let c = Constants::standard();
        let eps0 = c.e * c.e / (4.0 * std::f64::consts::PI * c.alpha_fs * c.hbar * c.c);
        (2.0 * beam_intensity(self, rho_um) / (eps0 * c.c)).sqrt()
    }
}

/// Intensity of a Gaussian beam at radius `rho_um` from its axis, W/m^2.
/// Axial variation over the cloud is neglected (Rayleigh ranges are far
/// longer than the cloud).
pub fn beam_intensity(beam: &GaussianBeam, rho_um: f64) -> f64 {
    beam.peak_intensity_w_m2() * (-2.0 * rho_um * rho_um / (beam.waist_um * beam.waist_um)).exp()
}

/// Ordinary-frequency Rabi frequency d·E/h in kHz.
pub fn single_photon_rabi_khz(dipole_ea0: f64, field_v_m: f64) -> f64 {
    let c = Constants::standard();
    dipole_ea0 * c.e * c.a0 * field_v_m / c.h / 1e3
}

/// Effective two-photon Rabi frequency Omega_r·Omega_b/(2 Delta) in kHz.
pub fn two_photon_rabi_khz(omega_red_khz: f64, omega_blue_khz: f64, delta_mhz: f64) -> Result<f64> {
    if delta_mhz == 0.0 || !delta_mhz.is_finite() {
        return Err(Error::domain(
            "two-photon reduction needs a nonzero intermediate detuning",
        ));
    }
    Ok(omega_red_khz * omega_blue_khz / (2.0 * delta_mhz * 1e3))
}

/// Far-detuned spontaneous scattering rate Gamma·Omega^2/(4 Delta^2), kHz.
pub fn scattering_rate_khz(omega_red_khz: f64, delta_mhz: f64, gamma_mhz: f64) -> f64 {
    let delta_khz = delta_mhz * 1e3;
    gamma_mhz * 1e3 * omega_red_khz * omega_red_khz / (4.0 * delta_khz * delta_khz)
}

/// Fraction of a radially Gaussian cloud (sigma per axis `sigma_rho_um`)
/// that sees at least `threshold` of the on-axis two-photon Rabi
/// frequency. The Rabi profile is exp(-rho^2 (1/w_r^2 + 1/w_b^2)), so
/// the covered region is a disk and the closed form is
/// 1 - exp(-rho_c^2 / 2 sigma^2).
pub fn rabi_coverage(
    sigma_rho_um: f64,
    w_red_um: f64,
    w_blue_um: f64,
    threshold: f64,
) -> Result<f64> {
    if !(sigma_rho_um > 0.0 && w_red_um > 0.0 && w_blue_um > 0.0) {
        return Err(Error::domain("coverage needs positive cloud and beam sizes"));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::domain("coverage threshold must lie in [0, 1]"));
    }
    if threshold == 0.0 {
        return Ok(1.0);
    }
    if threshold == 1.0 {
        return Ok(0.0);
    }
    let falloff = 1.0 / (w_red_um * w_red_um) + 1.0 / (w_blue_um * w_blue_um);
    let rho_c2 = -threshold.ln() / falloff;
    Ok(1.0 - (-rho_c2 / (2.0 * sigma_rho_um * sigma_rho_um)).exp())
}

/// Two-photon excitation settings: both beams, the intermediate-state
/// detuning, the target level, and the instrument linewidth (FWHM).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExcitationScheme {
    pub red: GaussianBeam,
    pub blue: GaussianBeam,
    /// Detuning from the intermediate 5P3/2 state, MHz.
    pub delta_mhz: f64,
    pub target: RydbergLevel,
    /// Instrument (laser) linewidth, FWHM in MHz.
    pub instrument_fwhm_mhz: f64,
}

impl ExcitationScheme {
    /// Default two-photon drive of the 43S1/2 state: 780 nm sigma+ at
    /// 50 uW in a 550 um waist, 480 nm sigma- at 55 mW in a 35 um waist,
    /// 480 MHz above the intermediate state, 1.5 MHz instrument width.
    pub fn two_photon_43s() -> Self {
        let c = Constants::standard();
        ExcitationScheme {
            red: GaussianBeam {
                wavelength_nm: c.d2_wavelength_m * 1e9,
                power_w: 50e-6,
                waist_um: 550.0,
                polarization: Polarization::SigmaPlus,
            },
            blue: GaussianBeam {
                wavelength_nm: 480.0,
                power_w: 55e-3,
                waist_um: 35.0,
                polarization: Polarization::SigmaMinus,
            },
            delta_mhz: 480.0,
            target: RydbergLevel::s(43),
            instrument_fwhm_mhz: 1.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.red.validate()?;
        self.blue.validate()?;
        if self.delta_mhz == 0.0 || !self.delta_mhz.is_finite() {
            return Err(Error::domain(
                "the effective two-level reduction needs |Delta| > 0",
            ));
        }
        if self.target.l != 0 {
            return Err(Error::domain(
                "the Zeeman line model assumes an S1/2 target state",
            ));
        }
        if !(self.instrument_fwhm_mhz.is_finite() && self.instrument_fwhm_mhz > 0.0) {
            return Err(Error::domain("instrument linewidth must be > 0"));
        }
        Ok(())
    }

    /// On-axis Rabi frequency of the lower leg in kHz, for the stretched
    /// sigma+ transition out of the spin-polarized ground state. The
    /// dipole moment is anchored to the measured lower-line strength
    /// (reduced element / sqrt(2) for the stretched path), because the
    /// model potential used for Rydberg wavefunctions is not reliable in
    /// the core region that dominates this low-lying transition.
    pub fn red_rabi_khz(&self) -> Result<f64> {
        self.red.validate()?;
        let c = Constants::standard();
        let dipole_ea0 = c.d2_reduced_dipole_ea0 / std::f64::consts::SQRT_2;
        Ok(single_photon_rabi_khz(
            dipole_ea0,
            self.red.field_amplitude_v_m(0.0),
        ))
    }

    /// On-axis Rabi frequency of the upper leg in kHz, out of the
    /// stretched intermediate sublevel. The radial integral comes from
    /// the model wavefunctions; the angular factor from the blue-beam
    /// polarization.
    pub fn blue_rabi_khz(&self, model: &Model) -> Result<f64> {
        self.validate()?;
        let intermediate = RydbergLevel::new(5, 1, 3, 3)?;
        let radial = model.radial_matrix_element_a0(&intermediate, &self.target)?;
        let q = self.blue.polarization.q();
        let angular = c1_element(
            self.target.l,
            self.target.j2,
            3 + 2 * q,
            intermediate.l,
            intermediate.j2,
            3,
            q,
        );
        let dipole_ea0 = (radial * angular).abs();
        if dipole_ea0 == 0.0 {
            return Err(Error::domain(
                "no dipole path from the stretched intermediate state for this polarization",
            ));
        }
        Ok(single_photon_rabi_khz(
            dipole_ea0,
            self.blue.field_amplitude_v_m(0.0),
        ))
    }

    /// Effective two-photon Rabi frequency on axis, kHz.
    pub fn effective_rabi_khz(&self, model: &Model) -> Result<f64> {
        two_photon_rabi_khz(self.red_rabi_khz()?, self.blue_rabi_khz(model)?, self.delta_mhz)
    }

    /// Spontaneous scattering rate off the intermediate state, kHz.
    pub fn scattering_rate_khz(&self) -> Result<f64> {
        let c = Constants::standard();
        Ok(scattering_rate_khz(
            self.red_rabi_khz()?,
            self.delta_mhz,
            c.d2_linewidth_mhz,
        ))
    }
}

/// Relative two-photon amplitudes into the target-state mj = +1/2 and
/// mj = -1/2 sublevels, for a local magnetic field tilted away from the
/// lab z axis. The ground-state electron follows the local field
/// (mj = +1/2 in the local frame); the beam polarizations are fixed in
/// the lab, so they acquire admixtures in the local frame and open the
/// nominally forbidden path. Returned pair is normalized,
/// a_plus^2 + a_minus^2 = 1.
///
/// The mj labels refer to the LOCAL field direction, which is what sets
/// the line positions. Under a full field inversion the local labels
/// follow the field, so the pair reads (1, 0) again while the final
/// state's lab-frame projection has flipped sign.
pub fn zeeman_amplitudes(
    b_direction_g: [f64; 3],
    red_pol: Polarization,
    blue_pol: Polarization,
) -> Result<(f64, f64)> {
    let [bx, by, bz] = b_direction_g;
    let transverse = (bx * bx + by * by).sqrt();
    let magnitude = (transverse * transverse + bz * bz).sqrt();
    if !(magnitude.is_finite() && magnitude > 0.0) {
        return Err(Error::domain(
            "Zeeman amplitudes need a nonzero local field direction",
        ));
    }
    let theta = transverse.atan2(bz);
    let d = small_d1(theta);
    // Spherical index order (+1, 0, -1) matches the rotation matrix rows.
    let idx = |q: i32| (1 - q) as usize;
    let local = |pol: Polarization, q_local: i32| d[idx(q_local)][idx(pol.q())];

    // Ground state: stretched spin-polarized atom, electronic mj = +1/2
    // along the local field. Compose red then blue through all
    // intermediate 5P3/2 sublevels (their Zeeman splitting is negligible
    // against the intermediate detuning).
    let mut amp = [0.0f64; 2]; // [mj = +1/2, mj = -1/2]
    for (slot, mj_final2) in [(0usize, 1i32), (1, -1)] {
        for m_int2 in [-3i32, -1, 1, 3] {
            for q1 in -1..=1 {
                let up = c1_element(1, 3, m_int2, 0, 1, 1, q1);
                if up == 0.0 {
                    continue;
                }
                for q2 in -1..=1 {
                    let down = c1_element(0, 1, mj_final2, 1, 3, m_int2, q2);
                    if down == 0.0 {
                        continue;
                    }
                    amp[slot] += local(red_pol, q1) * local(blue_pol, q2) * up * down;
                }
            }
        }
    }
    let norm = (amp[0] * amp[0] + amp[1] * amp[1]).sqrt();
    if norm == 0.0 {
        return Err(Error::domain(
            "no two-photon dipole path for this polarization pair",
        ));
    }
    Ok((amp[0] / norm, amp[1] / norm))
}

/// Synthesis context: the excitation settings plus the trapped cloud and
/// the uniform electric field at the atoms.
#[derive(Debug, Clone)]
pub struct SpectrumModel {
    pub scheme: ExcitationScheme,
    pub trap: IoffePritchardTrap,
    pub state: TrappedState,
    pub temperature_k: f64,
    /// Uniform electric-field magnitude at the cloud, V/cm.
    pub e_field_v_cm: f64,
    /// Quadratic Stark coefficient of the target line, MHz/(V/cm)^2.
    pub alpha_half_mhz_cm2_v2: f64,
}

impl SpectrumModel {
    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        self.trap.validate()?;
        self.state.validate()?;
        if !(self.temperature_k.is_finite() && self.temperature_k >= 0.0) {
            return Err(Error::domain("cloud temperature must be finite and >= 0"));
        }
        if !self.e_field_v_cm.is_finite() || !(self.alpha_half_mhz_cm2_v2 >= 0.0) {
            return Err(Error::domain(
                "field and Stark coefficient must be finite, alpha/2 >= 0",
            ));
        }
        Ok(())
    }

    /// Demonstration settings for the magnetic doublet: a 15 uK thermal
    /// cloud held at a 1.0 G field minimum with the coils at full
    /// current, driven on the 43S1/2 line at zero applied electric field.
    pub fn trapped_cloud_43s() -> Self {
        SpectrumModel {
            scheme: ExcitationScheme::two_photon_43s(),
            trap: IoffePritchardTrap::at_current(1.0, 400.0)
                .expect("preset trap parameters are valid"),
            state: TrappedState::rb87_f2_mf2(),
            temperature_k: 15e-6,
            e_field_v_cm: 0.0,
            alpha_half_mhz_cm2_v2: crate::stark::ALPHA_HALF_43S_MHZ_CM2_V2,
        }
    }
}

/// Uniform detuning grid in MHz.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DetuningGrid {
    pub min_mhz: f64,
    pub max_mhz: f64,
    pub steps: usize,
}

impl DetuningGrid {
    pub fn values(&self) -> Result<Vec<f64>> {
        if self.steps < 2 || !(self.max_mhz > self.min_mhz) {
            return Err(Error::domain("detuning grid needs max > min and >= 2 steps"));
        }
        let h = (self.max_mhz - self.min_mhz) / (self.steps - 1) as f64;
        Ok((0..self.steps).map(|k| self.min_mhz + h * k as f64).collect())
    }
}

/// Provenance of a synthesized spectrum.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpectrumMetadata {
    pub seed: u64,
    pub atom_count: usize,
    pub temperature_k: f64,
    pub trap_b0_g: f64,
    pub trap_bp_g_per_cm: f64,
    pub trap_bpp_g_per_cm2: f64,
    pub e_field_v_cm: f64,
    pub alpha_half_mhz_cm2_v2: f64,
    pub instrument_fwhm_mhz: f64,
}

/// A spectrum: aligned detuning and signal samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Spectrum {
    pub detunings_mhz: Vec<f64>,
    pub signal: Vec<f64>,
    pub metadata: Option<SpectrumMetadata>,
}

impl Spectrum {
    pub fn validate(&self) -> Result<()> {
        if self.detunings_mhz.len() != self.signal.len() || self.detunings_mhz.is_empty() {
            return Err(Error::domain("spectrum samples must align and be nonempty"));
        }
        let ok = self
            .detunings_mhz
            .iter()
            .all(|v| v.is_finite())
            && self.signal.iter().all(|v| v.is_finite() && *v >= 0.0);
        if !ok {
            return Err(Error::domain("spectrum samples must be finite, signal >= 0"));
        }
        Ok(())
    }

    /// Integrated signal (rectangle rule on the uniform grid).
    pub fn area(&self) -> f64 {
        if self.detunings_mhz.len() < 2 {
            return 0.0;
        }
        let h = (self.detunings_mhz[self.detunings_mhz.len() - 1] - self.detunings_mhz[0])
            / (self.detunings_mhz.len() - 1) as f64;
        self.signal.iter().sum::<f64>() * h
    }

    /// CSV export: `detuning_mhz,signal`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("detuning_mhz,signal\n");
        for (d, s) in self.detunings_mhz.iter().zip(&self.signal) {
            out.push_str(&format!("{d:.6},{s:.9e}\n"));
        }
        out
    }

    /// Parses the CSV produced by `to_csv` (metadata is not carried).
    pub fn from_csv(text: &str) -> Result<Spectrum> {
        let mut detunings = Vec::new();
        let mut signal = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (k == 0 && line.starts_with("detuning")) {
                continue;
            }
            let mut parts = line.split(',');
            let d = parts
                .next()
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Parse(format!("bad detuning on line {}", k + 1)))?;
            let s = parts
                .next()
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Parse(format!("bad signal on line {}", k + 1)))?;
            detunings.push(d);
            signal.push(s);
        }
        let spectrum = Spectrum {
            detunings_mhz: detunings,
            signal,
            metadata: None,
        };
        spectrum.validate()?;
        Ok(spectrum)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn atom_rng(seed: u64, index: u64) -> rand_chacha::ChaCha8Rng {
    rand_chacha::ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(index)))
}

/// Monte Carlo synthesis of the excitation line over a thermal cloud in
/// the trap. Every atom contributes two Gaussian components of the
/// instrument width: the field-insensitive mj = +1/2 line at the Stark
/// shift -(alpha/2) E^2, and the mj = -1/2 line additionally shifted by
/// -2 mu_B |B(r)|/h, weighted by the local Zeeman amplitudes times the
/// beam-overlap factor I_red(rho)·I_blue(rho) (signal is quadratic in
/// the local two-photon Rabi frequency, so the narrow upper beam selects
/// atoms near the axis). Sampling is seeded per atom, so results are
/// deterministic and independent of parallel scheduling.
pub fn synthesize_spectrum(
    model: &SpectrumModel,
    grid: &DetuningGrid,
    atom_count: usize,
    seed: u64,
) -> Result<Spectrum> {
    model.validate()?;
    if atom_count == 0 {
        return Err(Error::domain("synthesis needs at least one atom"));
    }
    let detunings = grid.values()?;
    let c = Constants::standard();
    let (sigma_rho_m, sigma_z_m) = model.trap.thermal_cloud_sigma(&model.state, model.temperature_k)?;
    let (sigma_rho_mm, sigma_z_mm) = (sigma_rho_m * 1e3, sigma_z_m * 1e3);
    let stark_mhz = -model.alpha_half_mhz_cm2_v2 * model.e_field_v_cm * model.e_field_v_cm;
    let zeeman_mhz_per_g = 2.0 * c.mu_b * 1e-4 / c.h / 1e6;
    let red_pol = model.scheme.red.polarization;
    let blue_pol = model.scheme.blue.polarization;
    // Rabi-squared radial falloff of the two-beam overlap, 1/um^2.
    let wr = model.scheme.red.waist_um;
    let wb = model.scheme.blue.waist_um;
    let overlap_falloff = 2.0 * (1.0 / (wr * wr) + 1.0 / (wb * wb));

    // Per-atom line list: (center+, weight+, center-, weight-).
    let lines: Vec<[f64; 4]> = (0..atom_count)
        .into_par_iter()
        .map(|i| -> Result<[f64; 4]> {
            let mut rng = atom_rng(seed, i as u64);
            let unit = Normal::new(0.0, 1.0)
                .map_err(|e| Error::numerical("synthesize_spectrum", e.to_string()))?;
            let position_mm = [
                unit.sample(&mut rng) * sigma_rho_mm,
                unit.sample(&mut rng) * sigma_rho_mm,
                unit.sample(&mut rng) * sigma_z_mm,
            ];
            let b = model.trap.field_vector_g(position_mm);
            let b_mag = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
            let (a_plus, a_minus) = zeeman_amplitudes(b, red_pol, blue_pol)?;
            let rho2_um2 =
                (position_mm[0] * position_mm[0] + position_mm[1] * position_mm[1]) * 1e6;
            let beam = (-overlap_falloff * rho2_um2).exp();
            Ok([
                stark_mhz,
                beam * a_plus * a_plus,
                stark_mhz - zeeman_mhz_per_g * b_mag,
                beam * a_minus * a_minus,
            ])
        })
        .collect::<Result<Vec<_>>>()?;

    let sigma = model.scheme.instrument_fwhm_mhz / FWHM_PER_SIGMA;
    let kernel_norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let signal: Vec<f64> = detunings
        .par_iter()
        .map(|&d| {
            lines
                .iter()
                .map(|line| {
                    let mut s = 0.0;
                    for k in [0, 2] {
                        let t = (d - line[k]) / sigma;
                        if t.abs() < 8.5 {
                            s += line[k + 1] * kernel_norm * (-0.5 * t * t).exp();
                        }
                    }
                    s
                })
                .sum()
        })
        .collect();

    Ok(Spectrum {
        detunings_mhz: detunings,
        signal,
        metadata: Some(SpectrumMetadata {
            seed,
            atom_count,
            temperature_k: model.temperature_k,
            trap_b0_g: model.trap.b0_g,
            trap_bp_g_per_cm: model.trap.bp_g_per_cm,
            trap_bpp_g_per_cm2: model.trap.bpp_g_per_cm2,
            e_field_v_cm: model.e_field_v_cm,
            alpha_half_mhz_cm2_v2: model.alpha_half_mhz_cm2_v2,
            instrument_fwhm_mhz: model.scheme.instrument_fwhm_mhz,
        }),
    })
}

/// Detunings of local signal maxima above `min_height_frac` of the
/// global maximum.
pub fn peak_detunings(spectrum: &Spectrum, min_height_frac: f64) -> Vec<f64> {
    let s = &spectrum.signal;
    if s.len() < 3 {
        return Vec::new();
    }
    let floor = min_height_frac * s.iter().cloned().fold(0.0, f64::max);
    (1..s.len() - 1)
        .filter(|&i| s[i] > s[i - 1] && s[i] > s[i + 1] && s[i] > floor)
        .map(|i| spectrum.detunings_mhz[i])
        .collect()
}

/// Gaussian-plus-baseline peak fit. Widths are FWHM; the sigma parameter
/// is reported alongside.
#[derive(Debug, Clone, Serialize)]
pub struct GaussianPeakFit {
    pub center_mhz: f64,
    pub center_uncertainty_mhz: f64,
    pub fwhm_mhz: f64,
    pub fwhm_uncertainty_mhz: f64,
    pub sigma_mhz: f64,
    pub amplitude: f64,
    pub baseline: f64,
    /// Integrated area of the fitted Gaussian, amplitude * sigma * sqrt(2 pi).
    pub area: f64,
    pub residual_rms: f64,
    pub iterations: usize,
    pub width_convention: &'static str,
}

impl GaussianPeakFit {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit report serializes")
    }
}

/// Least-squares Gaussian + constant baseline over a detuning window.
pub fn fit_gaussian_peak(spectrum: &Spectrum, window_mhz: (f64, f64)) -> Result<GaussianPeakFit> {
    spectrum.validate()?;
    let (lo, hi) = window_mhz;
    let points: Vec<(f64, f64)> = spectrum
        .detunings_mhz
        .iter()
        .zip(&spectrum.signal)
        .filter(|(d, _)| **d >= lo && **d <= hi)
        .map(|(d, s)| (*d, *s))
        .collect();
    if points.len() < 6 {
        return Err(Error::domain(format!(
            "window [{lo}, {hi}] MHz holds {} samples; need >= 6",
            points.len()
        )));
    }
    let smax = points.iter().map(|p| p.1).fold(f64::MIN, f64::max);
    let smin = points.iter().map(|p| p.1).fold(f64::MAX, f64::min);
    if smax - smin <= 0.0 || (smax - smin) < 1e-12 * smax.abs() {
        return Err(Error::fit("fit_gaussian_peak", "window is flat, no peak", 0.0));
    }
    let c0 = points
        .iter()
        .cloned()
        .fold((0.0, f64::MIN), |acc, p| if p.1 > acc.1 { p } else { acc })
        .0;
    // Moment-based width start: RMS of detuning about the peak, weighted
    // by the signal above baseline.
    let wsum: f64 = points.iter().map(|p| (p.1 - smin).max(0.0)).sum();
    let var: f64 = points
        .iter()
        .map(|p| (p.1 - smin).max(0.0) * (p.0 - c0) * (p.0 - c0))
        .sum::<f64>()
        / wsum.max(1e-300);
    let span = hi - lo;
    let sigma0 = var.sqrt().clamp(span / points.len() as f64, span / 2.0);

    let model = |p: &[f64], d: f64| {
        let t = (d - p[1]) / p[2];
        p[0] * (-0.5 * t * t).exp() + p[3]
    };
    let residuals = |p: &[f64], out: &mut [f64]| {
        for (k, (d, s)) in points.iter().enumerate() {
            out[k] = model(p, *d) - s;
        }
    };
    let fit = levenberg_marquardt(
        &residuals,
        &[smax - smin, c0, sigma0, smin],
        points.len(),
        1e-10,
        500,
    )?;
    let amplitude = fit.parameters[0];
    let center = fit.parameters[1];
    let sigma = fit.parameters[2].abs();
    let baseline = fit.parameters[3];
    if !(amplitude > 0.0 && sigma.is_finite() && center.is_finite()) {
        return Err(Error::fit(
            "fit_gaussian_peak",
            "converged to a non-peak solution",
            fit.chi2,
        ));
    }

    // Parameter uncertainties from the local linearization,
    // cov = (J^T J)^(-1) * chi2 / dof.
    let n = points.len();
    let mut jac = nalgebra::DMatrix::<f64>::zeros(n, 4);
    let p = [amplitude, center, sigma, baseline];
    for j in 0..4 {
        let step = 1e-6 * p[j].abs().max(1e-9);
        for (k, (d, _)) in points.iter().enumerate() {
            let mut ph = p;
            ph[j] += step;
            let mut pl = p;
            pl[j] -= step;
            jac[(k, j)] = (model(&ph, *d) - model(&pl, *d)) / (2.0 * step);
        }
    }
    let dof = (n.saturating_sub(4)).max(1) as f64;
    let scale = fit.chi2 / dof;
    let cov_diag = (jac.transpose() * &jac)
        .try_inverse()
        .map(|m| [m[(0, 0)], m[(1, 1)], m[(2, 2)], m[(3, 3)]]);
    let unc = |idx: usize| {
        cov_diag
            .map(|d| (d[idx].max(0.0) * scale).sqrt())
            .unwrap_or(f64::NAN)
    };

    Ok(GaussianPeakFit {
        center_mhz: center,
        center_uncertainty_mhz: unc(1),
        fwhm_mhz: sigma * FWHM_PER_SIGMA,
        fwhm_uncertainty_mhz: unc(2) * FWHM_PER_SIGMA,
        sigma_mhz: sigma,
        amplitude,
        baseline,
        area: amplitude * sigma * (2.0 * std::f64::consts::PI).sqrt(),
        residual_rms: (fit.chi2 / n as f64).sqrt(),
        iterations: fit.iterations,
        width_convention: WIDTH_CONVENTION,
    })
}

/// Signal-weighted mean detuning over a window, MHz.
pub fn spectrum_center_of_mass(spectrum: &Spectrum, window_mhz: (f64, f64)) -> Result<f64> {
    spectrum.validate()?;
    let (lo, hi) = window_mhz;
    let mut wsum = 0.0;
    let mut dsum = 0.0;
    for (d, s) in spectrum.detunings_mhz.iter().zip(&spectrum.signal) {
        if *d >= lo && *d <= hi {
            wsum += *s;
            dsum += *s * *d;
        }
    }
    if wsum <= 0.0 {
        return Err(Error::domain("window holds no signal"));
    }
    Ok(dsum / wsum)
}

/// One voltage step of a plate-voltage scan.
#[derive(Debug, Clone)]
pub struct StarkScanPoint {
    pub voltage_v: f64,
    pub center_mhz: f64,
    pub spectrum: Spectrum,
}

/// A plate-voltage scan: spectra and their fitted line centers.
#[derive(Debug, Clone)]
pub struct StarkScan {
    pub points: Vec<StarkScanPoint>,
}

impl StarkScan {
    /// Builds a scan from (voltage, spectrum) pairs, taking each line
    /// center as the signal-weighted mean over the spectrum's full grid.
    pub fn from_spectra(pairs: Vec<(f64, Spectrum)>) -> Result<StarkScan> {
        let points = pairs
            .into_iter()
            .map(|(voltage_v, spectrum)| {
                let window = (
                    spectrum.detunings_mhz[0],
                    spectrum.detunings_mhz[spectrum.detunings_mhz.len() - 1],
                );
                let center_mhz = spectrum_center_of_mass(&spectrum, window)?;
                Ok(StarkScanPoint {
                    voltage_v,
                    center_mhz,
                    spectrum,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(StarkScan { points })
    }

    pub fn voltages(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.voltage_v).collect()
    }

    pub fn centers_mhz(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.center_mhz).collect()
    }
}

/// Settings for synthesizing a plate-voltage scan. The field at the
/// atoms is linear in the plate voltage, E(V) = offset + slope * V; the
/// slope is negative in this plate sign convention, which puts the
/// parabola vertex at positive voltage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StarkScanConfig {
    pub voltages_v: Vec<f64>,
    /// Residual field at zero applied voltage, V/cm.
    pub offset_field_v_cm: f64,
    /// Signed field change per plate volt, (V/cm)/V.
    pub field_per_volt_v_cm: f64,
    pub atom_count: usize,
    pub seed: u64,
    /// Half-width of the per-voltage detuning window around the
    /// predicted line, MHz.
    pub window_half_mhz: f64,
    pub steps_per_spectrum: usize,
}

impl StarkScanConfig {
    pub fn field_at_voltage(&self, voltage_v: f64) -> f64 {
        self.offset_field_v_cm + self.field_per_volt_v_cm * voltage_v
    }
}

/// Synthesizes one spectrum per plate voltage, with the detuning window
/// tracking the predicted quadratic line shift.
pub fn synthesize_stark_scan(model: &SpectrumModel, cfg: &StarkScanConfig) -> Result<StarkScan> {
    if cfg.voltages_v.len() < 5 {
        return Err(Error::domain("a scan needs at least 5 voltage points"));
    }
    if cfg.window_half_mhz <= 0.0 || cfg.steps_per_spectrum < 2 {
        return Err(Error::domain("scan window and steps must be positive"));
    }
    let pairs = cfg
        .voltages_v
        .iter()
        .map(|&v| {
            let mut at_voltage = model.clone();
            at_voltage.e_field_v_cm = cfg.field_at_voltage(v);
            let predicted =
                -at_voltage.alpha_half_mhz_cm2_v2 * at_voltage.e_field_v_cm.powi(2);
            let grid = DetuningGrid {
                min_mhz: predicted - cfg.window_half_mhz,
                max_mhz: predicted + cfg.window_half_mhz,
                steps: cfg.steps_per_spectrum,
            };
            let spectrum = synthesize_spectrum(&at_voltage, &grid, cfg.atom_count, cfg.seed)?;
            Ok((v, spectrum))
        })
        .collect::<Result<Vec<_>>>()?;
    StarkScan::from_spectra(pairs)
}

/// Result of the parabola analysis of a plate-voltage scan.
#[derive(Debug, Clone, Serialize)]
pub struct StarkScanAnalysis {
    /// Voltage at which the line shift peaks (zero net field).
    pub vertex_voltage_v: f64,
    /// Magnitude of the residual field at zero applied voltage, V/cm.
    pub offset_field_v_cm: f64,
    /// Plate volts needed per V/cm of field at the atoms.
    pub volts_per_field_unit: f64,
    /// Field magnitude change per plate volt, (V/cm)/V.
    pub field_per_volt_v_cm: f64,
    /// Fitted parabola curvature, MHz/V^2 (negative for a real line).
    pub curvature_mhz_per_v2: f64,
    /// Line position at the vertex, MHz.
    pub vertex_center_mhz: f64,
    pub residual_rms_mhz: f64,
}

/// Fits center(V) = -(alpha/2) (k (V - V0))^2 + c to the scan centers
/// and converts the curvature into the voltage-to-field calibration.
/// The parabola determines k up to sign, so the calibration and offset
/// field are reported as magnitudes.
pub fn stark_scan_analysis(
    scan: &StarkScan,
    alpha_half_mhz_cm2_v2: f64,
) -> Result<StarkScanAnalysis> {
    if scan.points.len() < 5 {
        return Err(Error::domain("parabola fitting needs at least 5 centers"));
    }
    if !(alpha_half_mhz_cm2_v2 > 0.0 && alpha_half_mhz_cm2_v2.is_finite()) {
        return Err(Error::domain("alpha/2 must be positive"));
    }
    let volts = scan.voltages();
    let centers = scan.centers_mhz();
    let coeffs = crate::fitting::polyfit(&volts, &centers, 2)?;
    let (c0, c1, c2) = (coeffs[0], coeffs[1], coeffs[2]);
    let span = centers.iter().cloned().fold(f64::MIN, f64::max)
        - centers.iter().cloned().fold(f64::MAX, f64::min);
    let rms = (volts
        .iter()
        .zip(&centers)
        .map(|(v, c)| {
            let r = c0 + c1 * v + c2 * v * v - c;
            r * r
        })
        .sum::<f64>()
        / volts.len() as f64)
        .sqrt();
    if c2 >= 0.0 {
        return Err(Error::fit(
            "stark_scan_analysis",
            "centers do not bend downward; no quadratic Stark vertex",
            rms,
        ));
    }
    if rms > 0.1 * span {
        return Err(Error::fit(
            "stark_scan_analysis",
            format!("residual {rms:.3} MHz exceeds 10% of the {span:.3} MHz center span"),
            rms,
        ));
    }
    let vertex = -c1 / (2.0 * c2);
    let k = (-c2 / alpha_half_mhz_cm2_v2).sqrt();
    Ok(StarkScanAnalysis {
        vertex_voltage_v: vertex,
        offset_field_v_cm: (k * vertex).abs(),
        volts_per_field_unit: 1.0 / k,
        field_per_volt_v_cm: k,
        curvature_mhz_per_v2: c2,
        vertex_center_mhz: c0 + c1 * vertex + c2 * vertex * vertex,
        residual_rms_mhz: rms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn trapped_cloud() -> SpectrumModel {
        SpectrumModel::trapped_cloud_43s()
    }

    #[test]
    fn beam_intensity_profile() {
        let blue = GaussianBeam {
            wavelength_nm: 480.0,
            power_w: 55e-3,
            waist_um: 35.0,
            polarization: Polarization::SigmaMinus,
        };
        let peak = beam_intensity(&blue, 0.0);
        assert_relative_eq!(peak, 2.8585e7, max_relative = 1e-3);
        assert_relative_eq!(peak, 2.86e7, max_relative = 0.01);
        assert_relative_eq!(
            beam_intensity(&blue, 35.0) / peak,
            (-2.0f64).exp(),
            max_relative = 1e-12
        );
        let dark = GaussianBeam { power_w: 0.0, ..blue };
        assert_eq!(beam_intensity(&dark, 0.0), 0.0);
    }

    #[test]
    fn two_photon_reduction_algebra() {
        assert_relative_eq!(
            two_photon_rabi_khz(100.0, 200.0, 0.01).unwrap(),
            1000.0,
            max_relative = 1e-12
        );
        assert_eq!(two_photon_rabi_khz(0.0, 200.0, 480.0).unwrap(), 0.0);
        let once = two_photon_rabi_khz(300.0, 400.0, 480.0).unwrap();
        let twice = two_photon_rabi_khz(300.0, 400.0, 960.0).unwrap();
        assert_relative_eq!(once, 2.0 * twice, max_relative = 1e-12);
        assert!(two_photon_rabi_khz(100.0, 100.0, 0.0).is_err());
    }

    #[test]
    fn scattering_rate_scales_inversely_with_detuning_squared() {
        let r1 = scattering_rate_khz(1000.0, 480.0, 6.0666);
        let r2 = scattering_rate_khz(1000.0, 960.0, 6.0666);
        assert_relative_eq!(r1, 4.0 * r2, max_relative = 1e-12);
        assert_eq!(scattering_rate_khz(0.0, 480.0, 6.0666), 0.0);
    }

    #[test]
    fn coverage_closed_form_and_limits() {
        let f = rabi_coverage(8.6, 550.0, 35.0, 0.8).unwrap();
        assert_relative_eq!(f, 0.84127, max_relative = 1e-4);
        assert!((f - 0.85).abs() <= 0.02, "coverage = {f}");
        assert_eq!(rabi_coverage(8.6, 550.0, 35.0, 0.0).unwrap(), 1.0);
        assert_eq!(rabi_coverage(8.6, 550.0, 35.0, 1.0).unwrap(), 0.0);
        assert!(rabi_coverage(8.6, 550.0, 35.0, 1.5).is_err());
    }

    #[test]
    fn coverage_matches_a_direct_sampling_oracle() {
        // Sample cloud radii and count atoms above the Rabi threshold.
        let mut rng = atom_rng(99, 0);
        let unit = Normal::new(0.0, 1.0).unwrap();
        let (sigma, wr, wb, th) = (8.6, 550.0, 35.0, 0.8);
        let falloff = 1.0 / (wr * wr) + 1.0 / (wb * wb);
        let n = 200_000;
        let mut covered = 0usize;
        for _ in 0..n {
            let x: f64 = unit.sample(&mut rng) * sigma;
            let y: f64 = unit.sample(&mut rng) * sigma;
            let rho2 = x * x + y * y;
            if (-rho2 * falloff).exp() >= th {
                covered += 1;
            }
        }
        let mc = covered as f64 / n as f64;
        let exact = rabi_coverage(sigma, wr, wb, th).unwrap();
        // 3 sigma binomial band.
        let band = 3.0 * (exact * (1.0 - exact) / n as f64).sqrt();
        assert!((mc - exact).abs() < band, "mc {mc} vs exact {exact}");
    }

    proptest! {
        #[test]
        fn coverage_is_monotone(
            t1 in 0.05f64..0.95,
            t2 in 0.05f64..0.95,
            w in 20.0f64..600.0,
        ) {
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            let f_lo = rabi_coverage(8.6, 550.0, w, lo).unwrap();
            let f_hi = rabi_coverage(8.6, 550.0, w, hi).unwrap();
            prop_assert!(f_lo >= f_hi);
            // Wider beams flatten the profile and cover more atoms.
            let wider = rabi_coverage(8.6, 550.0, w * 1.5, hi).unwrap();
            prop_assert!(wider >= f_hi);
        }

        #[test]
        fn zeeman_pair_is_normalized(theta in 1e-6f64..std::f64::consts::PI) {
            let b = [theta.sin(), 0.0, theta.cos()];
            let (ap, am) = zeeman_amplitudes(
                b, Polarization::SigmaPlus, Polarization::SigmaMinus,
            ).unwrap();
            prop_assert!((ap * ap + am * am - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn aligned_field_selects_the_stretched_path() {
        let (ap, am) = zeeman_amplitudes(
            [0.0, 0.0, 2.5],
            Polarization::SigmaPlus,
            Polarization::SigmaMinus,
        )
        .unwrap();
        assert_relative_eq!(ap.abs(), 1.0, max_relative = 1e-12);
        assert!(am.abs() < 1e-12);

        // Reversed field: the local labels follow the field, so the
        // stretched local path still carries everything while the final
        // state's lab-frame mj has swapped sign with the field.
        let (rp, rm) = zeeman_amplitudes(
            [0.0, 0.0, -2.5],
            Polarization::SigmaPlus,
            Polarization::SigmaMinus,
        )
        .unwrap();
        assert_relative_eq!(rp.abs(), 1.0, max_relative = 1e-12);
        assert!(rm.abs() < 1e-12);

        assert!(zeeman_amplitudes(
            [0.0; 3],
            Polarization::SigmaPlus,
            Polarization::SigmaMinus
        )
        .is_err());
    }

    #[test]
    fn small_tilts_open_the_second_path_linearly() {
        let amp_minus = |theta: f64| {
            let b = [theta.sin(), 0.0, theta.cos()];
            zeeman_amplitudes(b, Polarization::SigmaPlus, Polarization::SigmaMinus)
                .unwrap()
                .1
                .abs()
        };
        let r1 = amp_minus(1e-4) / 1e-4;
        let r2 = amp_minus(2e-4) / 2e-4;
        assert_relative_eq!(r1, r2, max_relative = 1e-4);
        assert!(r1 > 0.0);
    }

    #[test]
    fn center_of_mass_basics() {
        let spectrum = Spectrum {
            detunings_mhz: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
            signal: vec![0.0, 1.0, 0.0, 1.0, 0.0],
            metadata: None,
        };
        assert_relative_eq!(
            spectrum_center_of_mass(&spectrum, (-2.0, 2.0)).unwrap(),
            0.0,
            epsilon = 1e-15
        );
        assert!(spectrum_center_of_mass(&spectrum, (1.5, 2.0)).is_err());
    }

    #[test]
    fn center_of_mass_matches_the_analytic_moment() {
        // Skewed double-Gaussian line with known analytic moments.
        let (a1, c1, s1) = (1.0, -0.8, 0.5);
        let (a2, c2, s2) = (0.4, 1.4, 1.1);
        let grid = DetuningGrid { min_mhz: -12.0, max_mhz: 12.0, steps: 4801 };
        let detunings = grid.values().unwrap();
        let signal: Vec<f64> = detunings
            .iter()
            .map(|d| {
                a1 * (-0.5 * ((d - c1) / s1).powi(2)).exp()
                    + a2 * (-0.5 * ((d - c2) / s2).powi(2)).exp()
            })
            .collect();
        let spectrum = Spectrum { detunings_mhz: detunings, signal, metadata: None };
        let analytic = (a1 * s1 * c1 + a2 * s2 * c2) / (a1 * s1 + a2 * s2);
        let com = spectrum_center_of_mass(&spectrum, (-12.0, 12.0)).unwrap();
        assert_relative_eq!(com, analytic, epsilon = 1e-6);
    }

    #[test]
    fn gaussian_fit_recovers_known_parameters() {
        let grid = DetuningGrid { min_mhz: -6.0, max_mhz: 6.0, steps: 241 };
        let detunings = grid.values().unwrap();
        // Deterministic 1% multiplicative jitter stands in for noise.
        let mut rng = atom_rng(5, 0);
        let unit = Normal::new(0.0, 1.0).unwrap();
        let signal: Vec<f64> = detunings
            .iter()
            .map(|d| {
                let clean = 2.0 * (-0.5 * (d / (1.5 / FWHM_PER_SIGMA)).powi(2)).exp() + 0.1;
                (clean * (1.0 + 0.01 * unit.sample(&mut rng))).max(0.0)
            })
            .collect();
        let spectrum = Spectrum { detunings_mhz: detunings, signal, metadata: None };
        let fit = fit_gaussian_peak(&spectrum, (-6.0, 6.0)).unwrap();
        assert!(fit.center_mhz.abs() < 0.045, "center {}", fit.center_mhz);
        assert_relative_eq!(fit.fwhm_mhz, 1.5, max_relative = 0.03);
        assert_relative_eq!(fit.amplitude, 2.0, max_relative = 0.03);
        assert_eq!(fit.width_convention, "fwhm");
        assert!(fit.fwhm_uncertainty_mhz.is_finite());
        let json = fit.to_json();
        assert!(json.contains("\"center_mhz\""));
        assert!(json.contains("\"residual_rms\""));
    }

    #[test]
    fn flat_window_is_rejected() {
        let spectrum = Spectrum {
            detunings_mhz: (0..50).map(|k| k as f64 * 0.1).collect(),
            signal: vec![1.0; 50],
            metadata: None,
        };
        assert!(fit_gaussian_peak(&spectrum, (0.0, 5.0)).is_err());
    }

    #[test]
    fn spectrum_csv_round_trip() {
        let spectrum = Spectrum {
            detunings_mhz: vec![-1.0, 0.0, 1.0],
            signal: vec![0.5, 2.0, 0.25],
            metadata: None,
        };
        let parsed = Spectrum::from_csv(&spectrum.to_csv()).unwrap();
        for k in 0..3 {
            assert_relative_eq!(
                parsed.detunings_mhz[k],
                spectrum.detunings_mhz[k],
                epsilon = 1e-6
            );
            assert_relative_eq!(parsed.signal[k], spectrum.signal[k], max_relative = 1e-8);
        }
        assert!(Spectrum::from_csv("detuning_mhz,signal\nbad,1\n").is_err());
    }

    #[test]
    fn synthesis_is_deterministic_and_scales_with_atom_count() {
        let model = trapped_cloud();
        let grid = DetuningGrid { min_mhz: -8.0, max_mhz: 4.0, steps: 121 };
        let a = synthesize_spectrum(&model, &grid, 4000, 11).unwrap();
        let b = synthesize_spectrum(&model, &grid, 4000, 11).unwrap();
        assert_eq!(a.signal, b.signal);
        let c = synthesize_spectrum(&model, &grid, 4000, 12).unwrap();
        assert_ne!(a.signal, c.signal);

        let doubled = synthesize_spectrum(&model, &grid, 8000, 11).unwrap();
        assert_relative_eq!(doubled.area() / a.area(), 2.0, max_relative = 0.02);
        a.validate().unwrap();
        assert_eq!(a.metadata.unwrap().atom_count, 4000);
    }

    #[test]
    fn degenerate_splitting_leaves_one_peak() {
        let mut model = trapped_cloud();
        model.trap = IoffePritchardTrap::new(1e-6, 244.0, 224.0).unwrap();
        // Keep the cloud small so the quadrupole term cannot move lines.
        model.temperature_k = 50e-9;
        let grid = DetuningGrid { min_mhz: -3.0, max_mhz: 3.0, steps: 241 };
        let spectrum = synthesize_spectrum(&model, &grid, 5000, 3).unwrap();
        assert_eq!(peak_detunings(&spectrum, 0.05).len(), 1);
    }

    #[test]
    fn stark_scan_recovers_its_generating_parameters() {
        let mut model = trapped_cloud();
        // Uniform-field scans do not need the Zeeman structure resolved;
        // a compact window around the line keeps the runtime small.
        model.temperature_k = 2e-6;
        let cfg = StarkScanConfig {
            voltages_v: (0..9).map(|k| -15.0 + 3.75 * k as f64).collect(),
            offset_field_v_cm: 0.27,
            field_per_volt_v_cm: -0.2,
            atom_count: 4000,
            seed: 21,
            window_half_mhz: 8.0,
            steps_per_spectrum: 161,
        };
        let scan = synthesize_stark_scan(&model, &cfg).unwrap();
        assert_eq!(scan.points.len(), 9);
        let analysis = stark_scan_analysis(&scan, model.alpha_half_mhz_cm2_v2).unwrap();

        let true_vertex = -cfg.offset_field_v_cm / cfg.field_per_volt_v_cm;
        assert_relative_eq!(analysis.vertex_voltage_v, true_vertex, max_relative = 5e-3);
        assert_relative_eq!(
            analysis.field_per_volt_v_cm,
            cfg.field_per_volt_v_cm.abs(),
            max_relative = 5e-3
        );
        assert_relative_eq!(
            analysis.offset_field_v_cm,
            cfg.offset_field_v_cm,
            max_relative = 5e-3
        );
        // Chain anchors: vertex near 1.34 V, offset near 0.27 V/cm, and
        // 5 V of plate drive per V/cm of field at the atoms.
        assert!((analysis.vertex_voltage_v - 1.34).abs() / 1.34 < 0.10);
        assert!((analysis.offset_field_v_cm - 0.27).abs() / 0.27 < 0.10);
        assert_relative_eq!(analysis.volts_per_field_unit, 5.0, max_relative = 0.01);
    }

    #[test]
    fn non_parabolic_scans_are_rejected() {
        let grid = DetuningGrid { min_mhz: -2.0, max_mhz: 2.0, steps: 41 };
        let detunings = grid.values().unwrap();
        let line_at = |c: f64| {
            let signal: Vec<f64> = detunings
                .iter()
                .map(|d| (-0.5 * ((d - c) / 0.3).powi(2)).exp())
                .collect();
            Spectrum { detunings_mhz: detunings.clone(), signal, metadata: None }
        };
        // V-shaped centers: |V| is as non-parabolic as it gets upward.
        let pairs: Vec<(f64, Spectrum)> = (-3..=3)
            .map(|v| (v as f64, line_at((v as f64).abs() * 0.5)))
            .collect();
        let scan = StarkScan::from_spectra(pairs).unwrap();
        assert!(stark_scan_analysis(&scan, 8.06).is_err());

        // Too few points is a domain error.
        let short = StarkScan {
            points: scan.points[0..4].to_vec(),
        };
        assert!(stark_scan_analysis(&short, 8.06).is_err());
    }

    #[test]
    fn drive_chain_frozen_values() {
        let model = Model::rb87();
        let scheme = ExcitationScheme::two_photon_43s();
        let red = scheme.red_rabi_khz().unwrap();
        let blue = scheme.blue_rabi_khz(&model).unwrap();
        let eff = scheme.effective_rabi_khz(&model).unwrap();
        let scatter = scheme.scattering_rate_khz().unwrap();

        assert_relative_eq!(red, 10770.0774, max_relative = 1e-4);
        assert_relative_eq!(blue, 18251.4718, max_relative = 1e-4);
        assert_relative_eq!(
            eff,
            red * blue / (2.0 * scheme.delta_mhz * 1e3),
            max_relative = 1e-12
        );
        assert_relative_eq!(eff, 204.7602, max_relative = 1e-4);
        // The effective drive stays within a factor 1.5 of the 250 kHz
        // working point, and excitation outruns intermediate-state
        // scattering by more than two orders of magnitude.
        assert!((125.0..375.0).contains(&eff), "effective {eff} kHz");
        assert_relative_eq!(scatter, 0.763555, max_relative = 1e-4);
        assert!(scatter < 1.0, "scattering {scatter} kHz");
    }

    #[test]
    fn trapped_cloud_spectrum_shows_the_magnetic_doublet() {
        let model = SpectrumModel::trapped_cloud_43s();
        let grid = DetuningGrid { min_mhz: -10.0, max_mhz: 5.0, steps: 601 };
        let spectrum = synthesize_spectrum(&model, &grid, 100_000, 7).unwrap();

        // Exactly two lines stand above half a percent of the maximum:
        // the field-insensitive one at zero detuning and the sensitive
        // one pushed down by twice the Bohr-magneton shift of the local
        // field magnitude across the cloud.
        let peaks = peak_detunings(&spectrum, 0.005);
        assert_eq!(peaks.len(), 2, "peaks: {peaks:?}");
        assert!(peaks[0] < -2.0 && peaks[1].abs() < 0.1, "peaks: {peaks:?}");

        // The insensitive line reproduces the instrument profile.
        let right = fit_gaussian_peak(&spectrum, (-1.5, 4.0)).unwrap();
        assert!(right.center_mhz.abs() < 0.02, "center {}", right.center_mhz);
        assert_relative_eq!(right.fwhm_mhz, 1.5, max_relative = 0.02);
        assert_eq!(right.width_convention, WIDTH_CONVENTION);

        // Frozen shape of the sensitive line. The window spans the left
        // tail up to the inter-peak valley near -2.25 MHz. The fitted
        // center sits below -2.8 MHz because the second path only opens
        // off axis, where the field magnitude exceeds its minimum; the
        // beam profiles pull the selection back toward the axis but do
        // not cancel the bias.
        let left = fit_gaussian_peak(&spectrum, (-7.0, -2.0)).unwrap();
        assert_abs_diff_eq!(left.center_mhz, -3.3585, epsilon = 0.02);
        assert_abs_diff_eq!(left.fwhm_mhz, 1.9754, epsilon = 0.02);
        assert!(
            left.amplitude > 0.0 && left.amplitude < 0.05 * right.amplitude,
            "left amplitude {} vs right {}",
            left.amplitude,
            right.amplitude
        );
    }
}
