//! Physical constants registry.
//!
//! All literature inputs (SI/CODATA values, Rb data, quantum defects) live in
//! one annotated text file with `name = value # source` lines. The file is
//! embedded at compile time and parsed once at startup; an alternative
//! registry can be loaded from disk for sensitivity studies. Everything else
//! in the crate derives its unit conversions from this table, so there is a
//! single point of truth for numbers that did not come out of a computation.

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::path::Path;
use std::sync::OnceLock;

/// Registry text compiled into the crate.
pub const EMBEDDED_REGISTRY: &str = include_str!("../data/constants.txt");

/// Parsed `name = value # source` table, order-preserving.
#[derive(Debug, Clone)]
pub struct Registry {
    names: Vec<String>,
    values: HashMap<String, (f64, String)>,
}

impl Registry {
    pub fn parse(text: &str) -> Result<Self> {
        let mut names = Vec::new();
        let mut values = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (entry, source) = match line.split_once('#') {
                Some((e, s)) => (e.trim(), s.trim().to_string()),
                None => (line, String::new()),
            };
            let (name, value) = entry.split_once('=').ok_or_else(|| {
                Error::Parse(format!("registry line {}: missing '='", lineno + 1))
            })?;
            let name = name.trim().to_string();
            let value: f64 = value.trim().parse().map_err(|_| {
                Error::Parse(format!(
                    "registry line {}: bad numeric value {:?}",
                    lineno + 1,
                    value.trim()
                ))
            })?;
            if values.insert(name.clone(), (value, source)).is_some() {
                return Err(Error::Parse(format!("duplicate registry entry {name:?}")));
            }
            names.push(name);
        }
        Ok(Registry { names, values })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, name: &str) -> Result<f64> {
        self.values
            .get(name)
            .map(|(v, _)| *v)
            .ok_or_else(|| Error::Parse(format!("registry entry {name:?} missing")))
    }

    pub fn source(&self, name: &str) -> Option<&str> {
        self.values.get(name).map(|(_, s)| s.as_str())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// One Rydberg-Ritz channel: delta(n) = d0 + d2 / (n - d0)^2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RitzChannel {
    pub d0: f64,
    pub d2: f64,
}

/// Quantum-defect table per (l, j) channel plus the lowest valence shell
/// for each l. Channels above l = 3 carry zero defect.
#[derive(Debug, Clone)]
pub struct DefectTable {
    /// Indexed `[l][j_index]` with `j_index = 0` for j = l - 1/2 and
    /// `j_index = 1` for j = l + 1/2. For l = 0 only index 1 is meaningful.
    channels: [[RitzChannel; 2]; 4],
    lowest_valence_n: [u32; 4],
}

impl DefectTable {
    fn from_registry(r: &Registry) -> Result<Self> {
        let zero = RitzChannel { d0: 0.0, d2: 0.0 };
        let ch = |d0: &str, d2: &str| -> Result<RitzChannel> {
            Ok(RitzChannel {
                d0: r.get(d0)?,
                d2: r.get(d2)?,
            })
        };
        Ok(DefectTable {
            channels: [
                [zero, ch("defect_s12_d0", "defect_s12_d2")?],
                [
                    ch("defect_p12_d0", "defect_p12_d2")?,
                    ch("defect_p32_d0", "defect_p32_d2")?,
                ],
                [
                    ch("defect_d32_d0", "defect_d32_d2")?,
                    ch("defect_d52_d0", "defect_d52_d2")?,
                ],
                [
                    ch("defect_f52_d0", "defect_f52_d2")?,
                    ch("defect_f72_d0", "defect_f72_d2")?,
                ],
            ],
            lowest_valence_n: [
                r.get("lowest_valence_n_s")? as u32,
                r.get("lowest_valence_n_p")? as u32,
                r.get("lowest_valence_n_d")? as u32,
                r.get("lowest_valence_n_f")? as u32,
            ],
        })
    }

    /// Ritz coefficients for channel (l, j). `j2` is 2j. Zero above l = 3.
    pub fn channel(&self, l: u32, j2: u32) -> RitzChannel {
        if l > 3 {
            return RitzChannel { d0: 0.0, d2: 0.0 };
        }
        let hi = j2 == 2 * l + 1;
        self.channels[l as usize][usize::from(hi)]
    }

    /// Lowest n with a valence state of angular momentum l.
    pub fn lowest_valence_n(&self, l: u32) -> u32 {
        if (l as usize) < 4 {
            self.lowest_valence_n[l as usize]
        } else {
            l + 1
        }
    }

    /// A hydrogen-like table (all defects zero), used by tests and checks
    /// against analytic Coulomb results.
    pub fn hydrogenic() -> Self {
        let zero = RitzChannel { d0: 0.0, d2: 0.0 };
        DefectTable {
            channels: [[zero; 2]; 4],
            lowest_valence_n: [1, 2, 3, 4],
        }
    }
}

/// Typed constants snapshot derived from a registry.
#[derive(Debug, Clone)]
pub struct Constants {
    // SI / CODATA
    pub c: f64,
    pub h: f64,
    pub hbar: f64,
    pub e: f64,
    pub k_b: f64,
    pub a0: f64,
    pub m_e: f64,
    pub alpha_fs: f64,
    pub mu_b: f64,
    pub hartree: f64,
    pub atomic_field_v_per_m: f64,
    pub atomic_time_s: f64,
    pub rydberg_inf_per_m: f64,

    // Rubidium-87
    pub rb87_mass_kg: f64,
    pub rb87_ion_mass_kg: f64,
    pub core_polarizability_au: f64,
    pub d2_wavelength_m: f64,
    pub d2_linewidth_mhz: f64,
    pub d2_reduced_dipole_ea0: f64,
    pub p32_5_offset_ghz: f64,
    pub ionization_5s_ghz: f64,
    pub ground_f2_gf: f64,
    pub rydberg_s_g_j: f64,
    pub scattering_length_m: f64,

    // Derived
    /// Mass-corrected Rydberg constant for Rb 87, in Hz.
    pub rydberg_rb87_hz: f64,
    /// Dipole coupling scale: MHz of level shift per (e a0 of dipole x V/cm).
    pub dipole_mhz_per_ea0_v_cm: f64,
    /// Atomic unit of electric field in V/cm.
    pub atomic_field_v_per_cm: f64,
    /// E_h / h in Hz (converts atomic-unit energies to frequencies).
    pub hartree_hz: f64,

    pub defects: DefectTable,
}

impl Constants {
    pub fn from_registry(r: &Registry) -> Result<Self> {
        let c = r.get("speed_of_light_m_per_s")?;
        let h = r.get("planck_h_j_s")?;
        let e = r.get("elementary_charge_c")?;
        let k_b = r.get("boltzmann_k_j_per_k")?;
        let a0 = r.get("bohr_radius_m")?;
        let m_e = r.get("electron_mass_kg")?;
        let alpha_fs = r.get("fine_structure_constant")?;
        let mu_b = r.get("bohr_magneton_j_per_t")?;
        let hartree = r.get("hartree_j")?;
        let atomic_field_v_per_m = r.get("atomic_field_v_per_m")?;
        let atomic_time_s = r.get("atomic_time_s")?;
        let rydberg_inf_per_m = r.get("rydberg_constant_inf_per_m")?;
        let rb87_mass_kg = r.get("rb87_mass_u")? * r.get("atomic_mass_unit_kg")?;
        let rb87_ion_mass_kg = rb87_mass_kg - m_e;
        // Reduced-mass correction with the ionic core as the heavy partner.
        let rydberg_rb87_hz = c * rydberg_inf_per_m / (1.0 + m_e / rb87_ion_mass_kg);
        Ok(Constants {
            c,
            h,
            hbar: h / (2.0 * std::f64::consts::PI),
            e,
            k_b,
            a0,
            m_e,
            alpha_fs,
            mu_b,
            hartree,
            atomic_field_v_per_m,
            atomic_time_s,
            rydberg_inf_per_m,
            rb87_mass_kg,
            rb87_ion_mass_kg,
            core_polarizability_au: r.get("rb_core_polarizability_au")?,
            d2_wavelength_m: r.get("rb87_d2_wavelength_nm")? * 1e-9,
            d2_linewidth_mhz: r.get("rb87_d2_linewidth_mhz")?,
            d2_reduced_dipole_ea0: r.get("rb87_d2_reduced_dipole_ea0")?,
            p32_5_offset_ghz: r.get("rb87_5p32_offset_ghz")?,
            ionization_5s_ghz: r.get("rb87_ionization_5s_ghz")?,
            ground_f2_gf: r.get("rb87_ground_f2_gf")?,
            rydberg_s_g_j: r.get("rydberg_s_g_j")?,
            scattering_length_m: r.get("rb87_scattering_length_a0")? * a0,
            rydberg_rb87_hz,
            dipole_mhz_per_ea0_v_cm: e * a0 / h * 100.0 / 1e6,
            atomic_field_v_per_cm: atomic_field_v_per_m / 100.0,
            hartree_hz: hartree / h,
            defects: DefectTable::from_registry(r)?,
        })
    }

    /// Constants parsed from the embedded registry.
    pub fn standard() -> &'static Constants {
        static STANDARD: OnceLock<Constants> = OnceLock::new();
        STANDARD.get_or_init(|| {
            let reg = Registry::parse(EMBEDDED_REGISTRY)
                .expect("embedded constants registry must parse");
            Constants::from_registry(&reg).expect("embedded constants registry must be complete")
        })
    }

    /// Resonant absorption cross section 3 lambda^2 / (2 pi) for the D2 line, m^2.
    pub fn d2_absorption_cross_section_m2(&self) -> f64 {
        3.0 * self.d2_wavelength_m * self.d2_wavelength_m / (2.0 * std::f64::consts::PI)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedded_registry_parses_and_derives() {
        let c = Constants::standard();
        // Mass-corrected Rydberg constant lands on the published Rb 87 value.
        let per_cm = c.rydberg_rb87_hz / c.c / 100.0;
        assert!(
            (per_cm - 109736.623).abs() < 2e-3,
            "Rb Rydberg constant {per_cm} cm^-1"
        );
        // 1 e*a0 dipole in a 1 V/cm field shifts by about 1.28 MHz.
        assert!((c.dipole_mhz_per_ea0_v_cm - 1.27951).abs() < 1e-4);
        assert!((c.atomic_field_v_per_cm - 5.14220674763e9).abs() / 5.14e9 < 1e-9);
    }

    #[test]
    fn registry_rejects_malformed_lines() {
        assert!(Registry::parse("x 3.0").is_err());
        assert!(Registry::parse("x = notanumber").is_err());
        assert!(Registry::parse("x = 1\nx = 2").is_err());
        let r = Registry::parse("a = 1.5 # src\n# comment\n\nb = 2").unwrap();
        assert_eq!(r.get("a").unwrap(), 1.5);
        assert_eq!(r.source("a"), Some("src"));
        assert!(r.get("zz").is_err());
    }

    #[test]
    fn defect_table_channels() {
        let c = Constants::standard();
        let s = c.defects.channel(0, 1);
        assert!((s.d0 - 3.1311804).abs() < 1e-12);
        // High-l channels carry zero defect.
        let g = c.defects.channel(4, 9);
        assert_eq!(g.d0, 0.0);
        assert_eq!(c.defects.lowest_valence_n(1), 5);
        assert_eq!(c.defects.lowest_valence_n(2), 4);
        assert_eq!(c.defects.lowest_valence_n(7), 8);
    }
}
