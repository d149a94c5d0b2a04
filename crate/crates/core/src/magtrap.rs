//! Ioffe-Pritchard magnetic trap: near-axis field expansion, trap
//! frequencies, and thermal cloud geometry.
//!
//! The trap is described by its three measurable numbers: offset field
//! B0, radial gradient B', and axial curvature B''. The field follows the
//! standard second-order expansion (a transverse quadrupole plus an axial
//! dipole with the curvature-consistent transverse terms), which is both
//! divergence and curl free; the full coil geometry is out of scope.
//! Valid within roughly 10 mm of the trap center.
//!
//! Units: the trap is specified in lab units (G, G/cm, G/cm^2), points in
//! mm; frequencies come back in Hz and cloud widths in m.

use serde::{Deserialize, Serialize};

use crate::constants::Constants;
use crate::error::{Error, Result};

/// Radial gradient produced by the leaf coils per ampere, G/cm/A.
pub const LEAF_GRADIENT_G_PER_CM_PER_A: f64 = 0.61;
/// Axial curvature produced by the pinch coils per ampere, G/cm^2/A.
pub const PINCH_CURVATURE_G_PER_CM2_PER_A: f64 = 0.56;

/// Ioffe-Pritchard trap parameters; the trap axis is z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IoffePritchardTrap {
    /// Offset field at the trap center, G.
    pub b0_g: f64,
    /// Radial quadrupole gradient, G/cm.
    pub bp_g_per_cm: f64,
    /// Axial curvature, G/cm^2.
    pub bpp_g_per_cm2: f64,
}

impl IoffePritchardTrap {
    pub fn new(b0_g: f64, bp_g_per_cm: f64, bpp_g_per_cm2: f64) -> Result<Self> {
        let trap = IoffePritchardTrap {
            b0_g,
            bp_g_per_cm,
            bpp_g_per_cm2,
        };
        trap.validate()?;
        Ok(trap)
    }

    /// Trap at a given coil current using the per-ampere coefficients of
    /// the cloverleaf assembly.
    pub fn at_current(b0_g: f64, current_a: f64) -> Result<Self> {
        if !(current_a.is_finite() && current_a >= 0.0) {
            return Err(Error::domain("coil current must be finite and >= 0"));
        }
        Self::new(
            b0_g,
            LEAF_GRADIENT_G_PER_CM_PER_A * current_a,
            PINCH_CURVATURE_G_PER_CM2_PER_A * current_a,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b0_g.is_finite() && self.b0_g > 0.0) {
            return Err(Error::domain("offset field B0 must be finite and > 0"));
        }
        if !(self.bp_g_per_cm.is_finite() && self.bp_g_per_cm >= 0.0)
            || !(self.bpp_g_per_cm2.is_finite() && self.bpp_g_per_cm2 >= 0.0)
        {
            return Err(Error::domain(
                "gradient B' and curvature B'' must be finite and >= 0",
            ));
        }
        Ok(())
    }

    /// Magnetic field vector in G at a point given in mm.
    ///
    /// Second-order expansion around the trap center; trustworthy within
    /// about 10 mm of the origin.
    pub fn field_vector_g(&self, point_mm: [f64; 3]) -> [f64; 3] {
        let x = 0.1 * point_mm[0];
        let y = 0.1 * point_mm[1];
        let z = 0.1 * point_mm[2];
        let bp = self.bp_g_per_cm;
        let half_bpp = 0.5 * self.bpp_g_per_cm2;
        [
            bp * x - half_bpp * x * z,
            -bp * y - half_bpp * y * z,
            self.b0_g + half_bpp * (z * z - 0.5 * (x * x + y * y)),
        ]
    }

    pub fn field_magnitude_g(&self, point_mm: [f64; 3]) -> f64 {
        let b = self.field_vector_g(point_mm);
        (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt()
    }

    /// Angle between the local field and the +z trap axis, rad.
    ///
    /// The direction tilts away from the axis with the transverse
    /// quadrupole; the tilt across a trapped cloud is what mixes the
    /// spectroscopic coupling of the two spin branches.
    pub fn field_angle_to_z(&self, point_mm: [f64; 3]) -> Result<f64> {
        let b = self.field_vector_g(point_mm);
        let transverse = (b[0] * b[0] + b[1] * b[1]).sqrt();
        if transverse == 0.0 && b[2] == 0.0 {
            return Err(Error::domain(
                "field vanishes at the requested point; the direction is undefined",
            ));
        }
        Ok(transverse.atan2(b[2]))
    }

    /// Harmonic trap frequencies (radial, axial) in Hz.
    pub fn trap_frequencies(&self, state: &TrappedState) -> Result<(f64, f64)> {
        self.validate()?;
        state.validate()?;
        // The stability inequality has identical numeric values in G-cm
        // and SI units.
        let radial_term = self.bp_g_per_cm * self.bp_g_per_cm / self.b0_g;
        let half_bpp = 0.5 * self.bpp_g_per_cm2;
        if radial_term <= half_bpp {
            return Err(Error::domain(format!(
                "radial confinement requires Bp^2/B0 > Bpp/2, got {radial_term:.4} <= {half_bpp:.4} G/cm^2"
            )));
        }
        let c = Constants::standard();
        let mu = state.mu_bohr * c.mu_b;
        let bp_si = self.bp_g_per_cm * 1e-2; // T/m
        let bpp_si = self.bpp_g_per_cm2; // T/m^2, numerically equal
        let b0_si = self.b0_g * 1e-4; // T
        let omega_rho = (mu / state.mass_kg * (bp_si * bp_si / b0_si - 0.5 * bpp_si)).sqrt();
        let omega_z = (mu * bpp_si / state.mass_kg).sqrt();
        let two_pi = 2.0 * std::f64::consts::PI;
        Ok((omega_rho / two_pi, omega_z / two_pi))
    }

    /// Gaussian widths (σ_ρ, σ_z) in m of a thermal cloud at the given
    /// temperature, harmonic regime.
    pub fn thermal_cloud_sigma(
        &self,
        state: &TrappedState,
        temperature_k: f64,
    ) -> Result<(f64, f64)> {
        if !(temperature_k.is_finite() && temperature_k >= 0.0) {
            return Err(Error::domain("temperature must be finite and >= 0"));
        }
        let (radial_hz, axial_hz) = self.trap_frequencies(state)?;
        if temperature_k == 0.0 {
            return Ok((0.0, 0.0));
        }
        if axial_hz == 0.0 {
            return Err(Error::domain(
                "axial confinement vanishes; the thermal cloud is unbounded along z",
            ));
        }
        let c = Constants::standard();
        let speed = (c.k_b * temperature_k / state.mass_kg).sqrt();
        let two_pi = 2.0 * std::f64::consts::PI;
        Ok((
            speed / (two_pi * radial_hz),
            speed / (two_pi * axial_hz),
        ))
    }
}

/// Magnetic moment and mass of the trapped species.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrappedState {
    /// Magnetic moment in Bohr magnetons (g_F * m_F for a stretched
    /// ground-state atom).
    pub mu_bohr: f64,
    pub mass_kg: f64,
}

impl TrappedState {
    pub fn new(mu_bohr: f64, mass_kg: f64) -> Result<Self> {
        let state = TrappedState { mu_bohr, mass_kg };
        state.validate()?;
        Ok(state)
    }

    /// The workhorse state: ground-state atoms in F=2, m_F=2, where
    /// g_F m_F = 1 Bohr magneton.
    pub fn rb87_f2_mf2() -> Self {
        let c = Constants::standard();
        TrappedState {
            mu_bohr: 2.0 * c.ground_f2_gf,
            mass_kg: c.rb87_mass_kg,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu_bohr.is_finite() && self.mu_bohr > 0.0) {
            return Err(Error::domain(
                "magnetic moment must be > 0 for a trappable state",
            ));
        }
        if !(self.mass_kg.is_finite() && self.mass_kg > 0.0) {
            return Err(Error::domain("mass must be finite and > 0"));
        }
        Ok(())
    }
}

/// JSON document form of a trap: either direct (B0, B', B'') or an offset
/// plus a coil current with per-ampere coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrapConfig {
    pub b0_g: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bp_g_per_cm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bpp_g_per_cm2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bp_g_per_cm_per_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bpp_g_per_cm2_per_a: Option<f64>,
}

impl TrapConfig {
    pub fn build(&self) -> Result<IoffePritchardTrap> {
        match (self.current_a, self.bp_g_per_cm, self.bpp_g_per_cm2) {
            (Some(current), None, None) => {
                let bp = self
                    .bp_g_per_cm_per_a
                    .unwrap_or(LEAF_GRADIENT_G_PER_CM_PER_A);
                let bpp = self
                    .bpp_g_per_cm2_per_a
                    .unwrap_or(PINCH_CURVATURE_G_PER_CM2_PER_A);
                if !(current.is_finite() && current >= 0.0) {
                    return Err(Error::domain("coil current must be finite and >= 0"));
                }
                IoffePritchardTrap::new(self.b0_g, bp * current, bpp * current)
            }
            (None, Some(bp), Some(bpp)) => IoffePritchardTrap::new(self.b0_g, bp, bpp),
            (Some(_), _, _) => Err(Error::domain(
                "give either current_a or the direct gradient/curvature fields, not both",
            )),
            _ => Err(Error::domain(
                "trap config needs current_a or both bp_g_per_cm and bpp_g_per_cm2",
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn section_ii_trap() -> IoffePritchardTrap {
        IoffePritchardTrap::at_current(1.5, 400.0).unwrap()
    }

    #[test]
    fn origin_field_is_the_offset_along_z() {
        let trap = section_ii_trap();
        assert_eq!(trap.field_vector_g([0.0; 3]), [0.0, 0.0, 1.5]);
        assert_eq!(trap.field_magnitude_g([0.0; 3]), 1.5);
    }

    #[test]
    fn magnitude_has_a_single_minimum_at_the_origin() {
        let trap = section_ii_trap();
        for &x in &[-10.0, -5.0, -1.0, -0.1, 0.0, 0.1, 1.0, 5.0, 10.0] {
            for &z in &[-10.0, -5.0, -1.0, 0.0, 1.0, 5.0, 10.0] {
                if x == 0.0 && z == 0.0 {
                    continue;
                }
                let b = trap.field_magnitude_g([x, 0.7 * x, z]);
                assert!(b > 1.5, "|B|({x}, {}, {z}) = {b} <= B0", 0.7 * x);
            }
        }
    }

    #[test]
    fn radial_growth_is_quadratic_near_the_axis() {
        let trap = section_ii_trap();
        // Harmonic only while B' rho << B0, i.e. within tens of um here.
        let d1 = trap.field_magnitude_g([1e-3, 0.0, 0.0]) - trap.b0_g;
        let d2 = trap.field_magnitude_g([2e-3, 0.0, 0.0]) - trap.b0_g;
        assert_relative_eq!(d2 / d1, 4.0, max_relative = 1e-3);
    }

    #[test]
    fn trap_frequencies_match_the_coil_settings() {
        let trap = section_ii_trap();
        assert_relative_eq!(trap.bp_g_per_cm, 244.0, max_relative = 1e-12);
        assert_relative_eq!(trap.bpp_g_per_cm2, 224.0, max_relative = 1e-12);
        let state = TrappedState::rb87_f2_mf2();
        assert_relative_eq!(state.mu_bohr, 1.0, max_relative = 1e-6);
        let (radial, axial) = trap.trap_frequencies(&state).unwrap();
        // Hand evaluation of the closed formulas gives (253.8, 19.09) Hz.
        assert_relative_eq!(radial, 253.8, max_relative = 5e-3);
        assert_relative_eq!(axial, 19.09, max_relative = 5e-3);
        // Measured working point: 250 Hz radial, 18 Hz axial.
        assert!((radial / 250.0 - 1.0).abs() < 0.10);
        assert!((axial / 18.0 - 1.0).abs() < 0.10);
    }

    #[test]
    fn frequencies_agree_with_the_numerical_potential_curvature() {
        // Independent oracle: second difference of mu*|B(r)| along each
        // axis, compared to the closed-form frequencies within 0.5%.
        let c = Constants::standard();
        let state = TrappedState::rb87_f2_mf2();
        for trap in [
            section_ii_trap(),
            IoffePritchardTrap::at_current(1.0, 400.0).unwrap(),
            IoffePritchardTrap::new(2.0, 150.0, 80.0).unwrap(),
        ] {
            let (radial_hz, axial_hz) = trap.trap_frequencies(&state).unwrap();
            let mu = state.mu_bohr * c.mu_b;
            let two_pi = 2.0 * std::f64::consts::PI;
            let h_mm = 1e-3;
            let h_m = h_mm * 1e-3;
            for (axis, expected_hz) in [(0usize, radial_hz), (2usize, axial_hz)] {
                let point = |t: f64| {
                    let mut p = [0.0; 3];
                    p[axis] = t;
                    p
                };
                let u = |t: f64| mu * trap.field_magnitude_g(point(t)) * 1e-4;
                let curvature = (u(h_mm) - 2.0 * u(0.0) + u(-h_mm)) / (h_m * h_m);
                let f_num = (curvature / state.mass_kg).sqrt() / two_pi;
                assert_relative_eq!(f_num, expected_hz, max_relative = 5e-3);
            }
        }
    }

    #[test]
    fn spectroscopy_trap_sits_at_311_hz() {
        let trap = IoffePritchardTrap::at_current(1.0, 400.0).unwrap();
        let (radial, _) = trap.trap_frequencies(&TrappedState::rb87_f2_mf2()).unwrap();
        assert_relative_eq!(radial, 311.0, max_relative = 1e-2);
        assert!((radial / 310.0 - 1.0).abs() < 0.10);
    }

    #[test]
    fn axial_frequency_vanishes_without_curvature() {
        let trap = IoffePritchardTrap::new(1.5, 244.0, 0.0).unwrap();
        let (_, axial) = trap.trap_frequencies(&TrappedState::rb87_f2_mf2()).unwrap();
        assert_eq!(axial, 0.0);
    }

    #[test]
    fn quadrupling_the_offset_halves_the_radial_frequency() {
        let state = TrappedState::rb87_f2_mf2();
        let low = IoffePritchardTrap::new(1.0, 244.0, 0.0).unwrap();
        let high = IoffePritchardTrap::new(4.0, 244.0, 0.0).unwrap();
        let (f_low, _) = low.trap_frequencies(&state).unwrap();
        let (f_high, _) = high.trap_frequencies(&state).unwrap();
        assert_relative_eq!(f_low / f_high, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn unstable_configurations_are_rejected_by_name() {
        let trap = IoffePritchardTrap::new(100.0, 1.0, 1.0).unwrap();
        let err = trap
            .trap_frequencies(&TrappedState::rb87_f2_mf2())
            .unwrap_err();
        assert!(err.to_string().contains("Bp^2/B0"), "{err}");
    }

    #[test]
    fn field_angle_tilts_away_from_the_axis() {
        let trap = IoffePritchardTrap::at_current(1.0, 400.0).unwrap();
        assert_eq!(trap.field_angle_to_z([0.0; 3]).unwrap(), 0.0);

        // One radial cloud width out (8.6 um), the tilt is small but
        // clearly nonzero: atan(B' rho / Bz) with a tiny Bz correction.
        let rho_mm = 8.6e-3;
        let angle = trap.field_angle_to_z([rho_mm, 0.0, 0.0]).unwrap();
        let bx = 244.0 * rho_mm * 0.1;
        let bz = 1.0 - 0.5 * 224.0 * 0.5 * (rho_mm * 0.1f64).powi(2);
        assert_relative_eq!(angle, (bx / bz).atan(), max_relative = 1e-9);
        assert!((0.1..0.3).contains(&angle), "angle = {angle}");

        // Deep in the quadrupole region the direction turns transverse.
        let flat = IoffePritchardTrap::new(1.5, 244.0, 0.0).unwrap();
        let far = flat.field_angle_to_z([10.0, 0.0, 0.0]).unwrap();
        assert!(far > 1.55 && far < std::f64::consts::FRAC_PI_2);
    }

    #[test]
    fn thermal_sigma_matches_the_measured_cloud() {
        // Working point of the spectroscopy dataset: offset 0.89 G,
        // gradients at 400 A, cloud at 3.4 uK.
        let trap = IoffePritchardTrap::at_current(0.89, 400.0).unwrap();
        let state = TrappedState::rb87_f2_mf2();
        let (sigma_rho, sigma_z) = trap.thermal_cloud_sigma(&state, 3.4e-6).unwrap();
        // Hand evaluation: speed 0.01804 m/s, omega_rho 2071.6 rad/s.
        assert_relative_eq!(sigma_rho, 8.706e-6, max_relative = 2e-3);
        assert!((sigma_rho / 8.6e-6 - 1.0).abs() < 0.02);
        assert!(sigma_z > sigma_rho);

        // sqrt(T) scaling is exact; zero temperature collapses the cloud.
        let (s1, _) = trap.thermal_cloud_sigma(&state, 1e-6).unwrap();
        let (s4, _) = trap.thermal_cloud_sigma(&state, 4e-6).unwrap();
        assert_relative_eq!(s4 / s1, 2.0, max_relative = 1e-12);
        assert_eq!(trap.thermal_cloud_sigma(&state, 0.0).unwrap(), (0.0, 0.0));
        assert!(trap.thermal_cloud_sigma(&state, -1e-6).is_err());
    }

    #[test]
    fn trap_config_accepts_both_document_forms() {
        let by_current: TrapConfig =
            serde_json::from_str(r#"{"b0_g": 1.5, "current_a": 400.0}"#).unwrap();
        let trap = by_current.build().unwrap();
        assert_relative_eq!(trap.bp_g_per_cm, 244.0, max_relative = 1e-12);
        assert_relative_eq!(trap.bpp_g_per_cm2, 224.0, max_relative = 1e-12);

        let direct: TrapConfig = serde_json::from_str(
            r#"{"b0_g": 1.0, "bp_g_per_cm": 244.0, "bpp_g_per_cm2": 224.0}"#,
        )
        .unwrap();
        assert_eq!(direct.build().unwrap().b0_g, 1.0);

        let conflicting: TrapConfig = serde_json::from_str(
            r#"{"b0_g": 1.0, "current_a": 400.0, "bp_g_per_cm": 244.0, "bpp_g_per_cm2": 224.0}"#,
        )
        .unwrap();
        assert!(conflicting.build().is_err());
        let missing: TrapConfig = serde_json::from_str(r#"{"b0_g": 1.0}"#).unwrap();
        assert!(missing.build().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// The expansion is divergence and curl free everywhere in its
        /// validity region (central differences are exact for quadratics,
        /// so the residual is pure rounding noise).
        #[test]
        fn field_is_divergence_and_curl_free(
            b0 in 0.5f64..5.0,
            bp in 0.0f64..300.0,
            bpp in 0.0f64..300.0,
            px in -10.0f64..10.0,
            py in -10.0f64..10.0,
            pz in -10.0f64..10.0,
        ) {
            let trap = IoffePritchardTrap::new(b0, bp, bpp).unwrap();
            let h = 1e-3;
            let point = [px, py, pz];
            let shift = |axis: usize, t: f64| {
                let mut p = point;
                p[axis] += t;
                p
            };
            // Derivatives in G/cm from mm steps.
            let d = |component: usize, axis: usize| {
                (trap.field_vector_g(shift(axis, h))[component]
                    - trap.field_vector_g(shift(axis, -h))[component])
                    / (2.0 * h * 0.1)
            };
            let scale = bp + bpp + 1.0;
            let div = d(0, 0) + d(1, 1) + d(2, 2);
            prop_assert!(div.abs() < 1e-9 * scale, "div = {div:e}");
            let curl = [
                d(2, 1) - d(1, 2),
                d(0, 2) - d(2, 0),
                d(1, 0) - d(0, 1),
            ];
            for c in curl {
                prop_assert!(c.abs() < 1e-9 * scale, "curl component = {c:e}");
            }
        }
    }
}
