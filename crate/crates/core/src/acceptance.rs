//! End-to-end checks of the toolkit's headline numbers.
//!
//! Each check evaluates one published working-point figure, or one
//! structural invariant, in-process and reports a verdict with the
//! measured value and the target band. The `reproduce` command and the
//! acceptance test target both consume this list.
//!
//! A few checks carry `expected: false`: those are known shortfalls of
//! the first-principles chain, reported red on purpose instead of being
//! tuned into the band. Their computed values are pinned by regression
//! tests in the owning modules, so movement in either direction is
//! caught there; the verdict here states what the model honestly
//! produces next to what the apparatus reported.

use serde::Serialize;

use crate::cloudfit;
use crate::constants::Constants;
use crate::efield;
use crate::magtrap::{IoffePritchardTrap, TrappedState};
use crate::rydberg::{Model, RydbergLevel};
use crate::spectra;
use crate::stark;
use crate::transport;

/// One acceptance check: a verdict plus the numbers behind it.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    /// Criterion id, e.g. "3a"; checks sharing a number belong together.
    pub id: &'static str,
    pub label: &'static str,
    pub passed: bool,
    /// Whether this check is supposed to pass. Known shortfalls carry
    /// `false`; the gate requires the outcome to match this flag either
    /// way.
    pub expected: bool,
    pub detail: String,
}

impl Check {
    fn new(id: &'static str, label: &'static str, passed: bool, detail: String) -> Self {
        Check { id, label, passed, expected: true, detail }
    }

    fn known_shortfall(
        id: &'static str,
        label: &'static str,
        passed: bool,
        detail: String,
    ) -> Self {
        Check { id, label, passed, expected: false, detail }
    }

    fn errored(id: &'static str, label: &'static str, err: &crate::Error) -> Self {
        Check::new(id, label, false, format!("errored: {err}"))
    }

    /// One table row: verdict, id, label, detail.
    pub fn render(&self) -> String {
        let verdict = match (self.passed, self.expected) {
            (true, _) => "PASS",
            (false, false) => "FAIL (known shortfall)",
            (false, true) => "FAIL",
        };
        format!("{verdict:<22} {:<4} {}: {}", self.id, self.label, self.detail)
    }
}

fn in_band(value: f64, lo: f64, hi: f64) -> bool {
    value.is_finite() && value >= lo && value <= hi
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    value.is_finite() && (value - target).abs() <= rel * target.abs()
}

/// Runs every check, invoking `progress` as each one finishes.
pub fn run_all_with(mut progress: impl FnMut(&Check)) -> Vec<Check> {
    let mut checks = Vec::new();
    let stages: [fn() -> Vec<Check>; 13] = [
        criterion_1_trap_frequencies,
        criterion_2_condensate_properties,
        criterion_3_stark_coefficient,
        criterion_4_lifetime,
        criterion_5_ionization_threshold,
        criterion_6_rabi_coverage,
        criterion_7_effective_drive,
        criterion_8_field_calibration,
        criterion_9_plate_scan,
        criterion_10_ion_transport,
        criterion_11_spectrum_synthesis,
        criterion_12_cloud_pipeline,
        criterion_13_invariants,
    ];
    for stage in stages {
        for check in stage() {
            progress(&check);
            checks.push(check);
        }
    }
    checks
}

/// Runs every check silently; see [`run_all_with`].
pub fn run_all() -> Vec<Check> {
    run_all_with(|_| {})
}

/// Formats the checks as the pass/fail table.
pub fn format_table(checks: &[Check]) -> String {
    let mut out = String::new();
    for check in checks {
        out.push_str(&check.render());
        out.push('\n');
    }
    let passed = checks.iter().filter(|c| c.passed).count();
    let known = checks
        .iter()
        .filter(|c| !c.passed && !c.expected)
        .count();
    let unexpected = checks.len() - passed - known;
    out.push_str(&format!(
        "{passed} passed, {known} known shortfalls, {unexpected} unexpected failures, {} total\n",
        checks.len()
    ));
    out
}

/// True when every check matches its expectation (green where expected,
/// red only where a known shortfall is declared).
pub fn all_as_expected(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed == c.expected)
}

fn criterion_1_trap_frequencies() -> Vec<Check> {
    let label = "trap frequencies at the coil working point";
    let run = || -> crate::Result<Check> {
        let trap = IoffePritchardTrap::at_current(1.5, 400.0)?;
        let state = TrappedState::rb87_f2_mf2();
        let (radial_hz, axial_hz) = trap.trap_frequencies(&state)?;
        let ok = within(radial_hz, 250.0, 0.10) && within(axial_hz, 18.0, 0.10);
        Ok(Check::new(
            "1",
            label,
            ok,
            format!(
                "radial {radial_hz:.1} Hz vs 250 +-10%, axial {axial_hz:.2} Hz vs 18 +-10%"
            ),
        ))
    };
    vec![run().unwrap_or_else(|e| Check::errored("1", label, &e))]
}

fn criterion_2_condensate_properties() -> Vec<Check> {
    let label = "condensate properties at 3e5 atoms";
    let run = || -> crate::Result<Check> {
        let trap = cloudfit::TrapFrequencies::new(250.0, 18.0)?;
        let props = cloudfit::bec_properties(3e5, &trap)?;
        let ok = within(props.tf_radius_radial_um, 3.3, 0.15)
            && within(props.tf_radius_axial_um, 46.0, 0.15)
            && within(props.peak_density_cm3, 3.5e14, 0.15)
            && within(props.chemical_potential_khz, 3.0, 0.15);
        Ok(Check::new(
            "2",
            label,
            ok,
            format!(
                "R_radial {:.2} um vs 3.3, R_axial {:.1} um vs 46, n0 {:.2e} cm^-3 vs 3.5e14, mu {:.2} kHz vs 3 (all +-15%)",
                props.tf_radius_radial_um,
                props.tf_radius_axial_um,
                props.peak_density_cm3,
                props.chemical_potential_khz
            ),
        ))
    };
    vec![run().unwrap_or_else(|e| Check::errored("2", label, &e))]
}

fn criterion_3_stark_coefficient() -> Vec<Check> {
    let label_a = "first-principles quadratic Stark coefficient";
    let label_b = "quadratic shift at the residual offset field";
    let mut checks = Vec::new();

    let run_a = || -> crate::Result<Check> {
        let model = Model::rb87();
        let basis = stark::build_basis(&model, 43, 4, 1)?;
        let op = stark::StarkOperator::new(&model, basis)?;
        let pol = stark::polarizability(&op, &RydbergLevel::s(43), 0.0, 0.5, 7)?;
        let value = pol.alpha_half_mhz_cm2_v2;
        let ok = within(value, 8.06, 0.05);
        Ok(Check::known_shortfall(
            "3a",
            label_a,
            ok,
            format!(
                "alpha/2 {value:.3} MHz/(V/cm)^2 vs 8.06 +-5%; the full-basis value converges about 9% above the published coefficient, so the calibration chain adopts the published one as a named constant"
            ),
        ))
    };
    checks.push(run_a().unwrap_or_else(|e| Check::errored("3a", label_a, &e)));

    let shift = stark::stark_shift_mhz(stark::ALPHA_HALF_43S_MHZ_CM2_V2, 0.27).abs();
    checks.push(Check::new(
        "3b",
        label_b,
        within(shift, 0.58, 0.05),
        format!("|shift(0.27 V/cm)| = {shift:.4} MHz vs 0.58 +-5%"),
    ));
    checks
}

fn criterion_4_lifetime() -> Vec<Check> {
    let label_a = "zero-temperature radiative lifetime of the target level";
    let label_b = "room-temperature lifetime reduction factor";
    let run = || -> crate::Result<(Check, Check)> {
        let model = Model::rb87();
        let s43 = RydbergLevel::s(43);
        let cold = model.lifetime(&s43, 0.0)?;
        let warm = model.lifetime(&s43, 300.0)?;
        let tau_cold_us = cold.lifetime_s * 1e6;
        let ratio = cold.lifetime_s / warm.lifetime_s;
        let a = Check::known_shortfall(
            "4a",
            label_a,
            within(tau_cold_us, 99.0, 0.10),
            format!(
                "tau(0 K) = {tau_cold_us:.1} us vs 99 +-10%; the dipole-sum value sits ~13% below the measured lifetime, consistent with independent tabulations of the same sum"
            ),
        );
        let b = Check::new(
            "4b",
            label_b,
            in_band(ratio, 1.6, 2.4),
            format!("tau(0 K)/tau(300 K) = {ratio:.3} vs 2.0 +-0.4"),
        );
        Ok((a, b))
    };
    match run() {
        Ok((a, b)) => vec![a, b],
        Err(e) => vec![
            Check::errored("4a", label_a, &e),
            Check::errored("4b", label_b, &e),
        ],
    }
}

fn criterion_5_ionization_threshold() -> Vec<Check> {
    let label = "classical ionization threshold and pulse margin";
    let run = || -> crate::Result<Check> {
        let model = Model::rb87();
        let field = model.classical_ionization_field_v_cm(&RydbergLevel::s(43))?;
        let ok = in_band(field, 110.0, 170.0) && field < 200.0;
        Ok(Check::new(
            "5",
            label,
            ok,
            format!("threshold {field:.1} V/cm in [110, 170] and below the 200 V/cm pulse"),
        ))
    };
    vec![run().unwrap_or_else(|e| Check::errored("5", label, &e))]
}

fn criterion_6_rabi_coverage() -> Vec<Check> {
    let label = "two-photon coverage of the trapped cloud";
    let run = || -> crate::Result<Check> {
        let coverage = spectra::rabi_coverage(8.6, 550.0, 35.0, 0.8)?;
        Ok(Check::new(
            "6",
            label,
            in_band(coverage, 0.83, 0.87),
            format!("coverage {coverage:.4} vs 0.85 +-0.02"),
        ))
    };
    vec![run().unwrap_or_else(|e| Check::errored("6", label, &e))]
}

fn criterion_7_effective_drive() -> Vec<Check> {
    let label = "effective two-photon drive and scattering";
    let run = || -> crate::Result<Check> {
        let model = Model::rb87();
        let scheme = spectra::ExcitationScheme::two_photon_43s();
        let eff = scheme.effective_rabi_khz(&model)?;
        let scatter = scheme.scattering_rate_khz()?;
        let ok = in_band(eff, 125.0, 375.0) && scatter < 1.0;
        Ok(Check::new(
            "7",
            label,
            ok,
            format!(
                "effective Rabi {eff:.1} kHz vs 250 +-50%, scattering {scatter:.3} kHz < 1"
            ),
        ))
    };
    vec![run().unwrap_or_else(|e| Check::errored("7", label, &e))]
}

fn criterion_8_field_calibration() -> Vec<Check> {
    let label = "plate-voltage calibration chain and solver round trip";
    let run = || -> crate::Result<Check> {
        let geometry = efield::PlateGeometry::standard();
        let theory = efield::voltage_calibration(&geometry, efield::CalibrationAnchor::Theory)?;
        let measured =
            efield::voltage_calibration(&geometry, efield::CalibrationAnchor::Measured)?;
        let e_theory = efield::field_at(&geometry, &theory.bh_charges(7.2), [0.0; 3])?;
        let e_measured = efield::field_at(&geometry, &measured.bh_charges(5.0), [0.0; 3])?;
        let mag = |e: [f64; 3]| (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
        let (m_theory, m_measured) = (mag(e_theory), mag(e_measured));

        let target = efield::FieldTarget::uniform_field([0.6, 0.0, 0.25]);
        let solved = efield::solve_charges(&geometry, &target)?;
        let worst = solved
            .components
            .iter()
            .map(|c| c.residual.abs())
            .fold(0.0f64, f64::max);

        let ok = within(m_theory, 1.0, 0.02) && within(m_measured, 1.0, 0.02) && worst < 1e-8;
        Ok(Check::new(
            "8",
            label,
            ok,
            format!(
                "theory anchor 7.2 V -> {m_theory:.4} V/cm, measured anchor 5.0 V -> {m_measured:.4} V/cm (both vs 1 +-2%), solver round-trip residual {worst:.1e} < 1e-8"
            ),
        ))
    };
    vec![run().unwrap_or_else(|e| Check::errored("8", label, &e))]
}

fn criterion_9_plate_scan() -> Vec<Check> {
    let label = "plate-scan vertex and calibration recovery";
    let run = || -> crate::Result<Check> {
        let mut model = spectra::SpectrumModel::trapped_cloud_43s();
        // Uniform-field scans do not need the magnetic structure
        // resolved; a cold cloud keeps the lines sharp and the run short.
        model.temperature_k = 2e-6;
        let cfg = spectra::StarkScanConfig {
            voltages_v: (0..9).map(|k| -15.0 + 3.75 * k as f64).collect(),
            offset_field_v_cm: 0.27,
            field_per_volt_v_cm: -0.2,
            atom_count: 4000,
            seed: 21,
            window_half_mhz: 8.0,
            steps_per_spectrum: 161,
        };
        let scan = spectra::synthesize_stark_scan(&model, &cfg)?;
        let analysis = spectra::stark_scan_analysis(&scan, model.alpha_half_mhz_cm2_v2)?;

        let true_vertex = -cfg.offset_field_v_cm / cfg.field_per_volt_v_cm;
        let round_trip_ok = within(analysis.vertex_voltage_v, true_vertex, 5e-3)
            && within(analysis.field_per_volt_v_cm, cfg.field_per_volt_v_cm.abs(), 5e-3)
            && within(analysis.offset_field_v_cm, cfg.offset_field_v_cm, 5e-3);
        let anchors_ok = within(analysis.vertex_voltage_v, 1.34, 0.10)
            && within(analysis.offset_field_v_cm, 0.27, 0.10);
        Ok(Check::new(
            "9",
            label,
            round_trip_ok && anchors_ok,
            format!(
                "vertex {:.3} V (generator {true_vertex:.3}, anchor 1.34 +-10%), offset {:.3} V/cm (anchor 0.27 +-10%), calibration {:.4} (V/cm)/V recovered to 0.5%",
                analysis.vertex_voltage_v,
                analysis.offset_field_v_cm,
                analysis.field_per_volt_v_cm
            ),
        ))
    };
    vec![run().unwrap_or_else(|e| Check::errored("9", label, &e))]
}

fn criterion_10_ion_transport() -> Vec<Check> {
    let label_a = "extraction flight reaches the detector plane in time";
    let label_b = "transverse drift inside the detector aperture";
    let label_c = "transverse drift magnitude of order a millimetre";
    let label_d = "field-free parabola and cyclotron-circle oracles";
    let mut checks = Vec::new();

    let run_flight = || -> crate::Result<(Check, Check, Check)> {
        let trap = IoffePritchardTrap::at_current(1.0, 400.0)?;
        let (fields, settings) = transport::extraction_working_point(Some(trap))?;
        let ion = transport::ChargedParticle::rb87_ion_at_rest([0.0; 3]);
        let trajectory = transport::integrate(&ion, &fields, &settings)?;
        let flight = trajectory.flight_time_us();
        let aperture = transport::McpAperture::mcp_j();
        let (offset_mm, hit) = match transport::transverse_drift(&trajectory, &aperture)? {
            transport::PlaneOutcome::Reached { offset_mm, hit } => (offset_mm, hit),
            transport::PlaneOutcome::Missed { reason } => {
                return Err(crate::Error::domain(format!(
                    "extraction trajectory missed the detector plane: {reason}"
                )))
            }
        };
        let a = Check::new(
            "10a",
            label_a,
            in_band(flight, 0.5, 10.0),
            format!("flight time {flight:.3} us in [0.5, 10]"),
        );
        let b = Check::new(
            "10b",
            label_b,
            hit && offset_mm < 4.25,
            format!("drift {offset_mm:.3} mm inside the 4.25 mm aperture radius"),
        );
        let c = Check::known_shortfall(
            "10c",
            label_c,
            in_band(offset_mm, 0.2, 3.0),
            format!(
                "drift {offset_mm:.3} mm vs [0.2, 3.0]; the static-field model drifts only through the magnetic deflection of the extracted ion, a fraction of a millimetre, while the reported order-1-mm figure belongs to the apparatus' unmodelled stray fields and geometry details"
            ),
        );
        Ok((a, b, c))
    };
    match run_flight() {
        Ok((a, b, c)) => checks.extend([a, b, c]),
        Err(e) => checks.extend([
            Check::errored("10a", label_a, &e),
            Check::errored("10b", label_b, &e),
            Check::errored("10c", label_c, &e),
        ]),
    }

    let run_oracles = || -> crate::Result<Check> {
        // Uniform push along x: RK4 reproduces the analytic parabola to
        // machine precision.
        let ion = transport::ChargedParticle::rb87_ion_at_rest([0.0; 3]);
        let fields = transport::TransportFields::new().with_uniform_e([1.0, 0.0, 0.0]);
        let settings = transport::IntegrationSettings {
            dt_us: 1e-3,
            t_max_us: 1.0,
            plane_x_mm: None,
            ..Default::default()
        };
        let trajectory = transport::integrate(&ion, &fields, &settings)?;
        let c = Constants::standard();
        let accel = c.e * 100.0 / trajectory.mass_kg;
        let t_s = trajectory.flight_time_us() * 1e-6;
        let analytic_mm = 0.5 * accel * t_s * t_s * 1e3;
        let parabola_err =
            (trajectory.final_position_mm()[0] - analytic_mm).abs() / analytic_mm;

        // Circular orbit in a uniform field, compared against the closed
        // form at whatever time the stepper actually ended on.
        let mass = trajectory.mass_kg;
        let omega = c.e * 1.0 / mass;
        let period_us = 2.0 * std::f64::consts::PI / omega * 1e6;
        let speed = 100.0;
        let radius_mm = mass * speed / (c.e * 1.0) * 1e3;
        let mut ion = transport::ChargedParticle::rb87_ion_at_rest([0.0; 3]);
        ion.velocity_m_s = [0.0, speed, 0.0];
        let fields = transport::TransportFields::new().with_uniform_b([0.0, 0.0, 1e4]);
        let settings = transport::IntegrationSettings {
            dt_us: period_us / 4000.0,
            t_max_us: period_us,
            plane_x_mm: None,
            ..Default::default()
        };
        let trajectory = transport::integrate(&ion, &fields, &settings)?;
        let end = trajectory.final_position_mm();
        let phase = omega * trajectory.flight_time_us() * 1e-6;
        let expect = [radius_mm * (1.0 - phase.cos()), radius_mm * phase.sin(), 0.0];
        let circle_err = ((end[0] - expect[0]).powi(2)
            + (end[1] - expect[1]).powi(2)
            + (end[2] - expect[2]).powi(2))
        .sqrt()
            / radius_mm;

        let ok = parabola_err < 1e-6 && circle_err < 1e-6;
        Ok(Check::new(
            "10d",
            label_d,
            ok,
            format!(
                "parabola error {parabola_err:.1e}, cyclotron-circle error {circle_err:.1e} (both < 1e-6)"
            ),
        ))
    };
    checks.push(run_oracles().unwrap_or_else(|e| Check::errored("10d", label_d, &e)));
    checks
}

fn criterion_11_spectrum_synthesis() -> Vec<Check> {
    let label_a = "doublet present in the trapped-cloud spectrum";
    let label_b = "field-insensitive line width";
    let label_c = "doublet displacement at the field minimum";
    let label_d = "magnetically broadened line width";
    let run = || -> crate::Result<Vec<Check>> {
        let model = spectra::SpectrumModel::trapped_cloud_43s();
        let grid = spectra::DetuningGrid { min_mhz: -10.0, max_mhz: 5.0, steps: 601 };
        let spectrum = spectra::synthesize_spectrum(&model, &grid, 100_000, 7)?;
        let peaks = spectra::peak_detunings(&spectrum, 0.005);
        let two_peaks = peaks.len() == 2;

        let right = spectra::fit_gaussian_peak(&spectrum, (-1.5, 4.0))?;
        let left = spectra::fit_gaussian_peak(&spectrum, (-7.0, -2.0))?;
        let displacement = (right.center_mhz - left.center_mhz).abs();
        let c = Constants::standard();
        // Two Bohr magnetons at the 1 G field minimum, in MHz.
        let split = 2.0 * c.mu_b * 1.0e-4 / c.h / 1e6;

        Ok(vec![
            Check::new(
                "11a",
                label_a,
                two_peaks,
                format!(
                    "{} peaks at the 0.5% threshold at [{}] MHz",
                    peaks.len(),
                    peaks
                        .iter()
                        .map(|p| format!("{p:.2}"))
                        .collect::<Vec<_>>()
                        .join(", ")
                ),
            ),
            Check::new(
                "11b",
                label_b,
                in_band(right.fwhm_mhz, 1.2, 1.8),
                format!("insensitive-line width {:.2} MHz vs 1.5 +-0.3", right.fwhm_mhz),
            ),
            Check::known_shortfall(
                "11c",
                label_c,
                within(displacement, split, 0.15),
                format!(
                    "displacement {displacement:.2} MHz vs {split:.2} +-15%; atoms couple off axis where the field exceeds its minimum, so the synthesized second line sits ~20% beyond the bare splitting"
                ),
            ),
            Check::known_shortfall(
                "11d",
                label_d,
                in_band(left.fwhm_mhz, 2.1, 3.9),
                format!(
                    "broadened-line width {:.2} MHz vs 3.0 +-30%; the reported 3 MHz belongs to a hotter cloud than the doublet scenario's 15 uK, which caps the field spread the synthesized line samples",
                    left.fwhm_mhz
                ),
            ),
        ])
    };
    run().unwrap_or_else(|e| {
        vec![
            Check::errored("11a", label_a, &e),
            Check::errored("11b", label_b, &e),
            Check::errored("11c", label_c, &e),
            Check::errored("11d", label_d, &e),
        ]
    })
}

fn criterion_12_cloud_pipeline() -> Vec<Check> {
    let label_a = "condensate-fraction round trip across the sweep";
    let label_b = "pure thermal cloud at the transition stays condensate-free";
    let mut checks = Vec::new();
    let trap = match cloudfit::TrapFrequencies::new(250.0, 18.0) {
        Ok(t) => t,
        Err(e) => {
            return vec![
                Check::errored("12a", label_a, &e),
                Check::errored("12b", label_b, &e),
            ]
        }
    };
    let settings = cloudfit::AnalysisSettings {
        trap: Some(trap),
        ..cloudfit::AnalysisSettings::default()
    };

    let run_sweep = || -> crate::Result<Check> {
        let mut detail = String::new();
        let mut ok = true;
        for (k, &fraction) in [0.0, 0.3, 0.65, 0.9].iter().enumerate() {
            let total = 3e5;
            let cloud = cloudfit::SyntheticCloud {
                temperature_nk: (314.0 * (1.0 - fraction as f64).cbrt()).max(1.0),
                thermal_atoms: total * (1.0 - fraction),
                condensate_atoms: total * fraction,
                trap,
                tof_ms: 21.0,
                noise_od: 0.01,
                seed: 201 + k as u64,
            };
            let image = cloudfit::synthesize_image(&cloud, &cloudfit::ImageGeometry::default())?;
            let result = cloudfit::analyze_bimodal(&image, &settings)?;
            let hit = (result.condensate_fraction - fraction).abs() <= 0.05;
            ok &= hit;
            if !detail.is_empty() {
                detail.push_str(", ");
            }
            detail.push_str(&format!("{fraction:.2}->{:.3}", result.condensate_fraction));
        }
        Ok(Check::new(
            "12a",
            label_a,
            ok,
            format!("recovered fractions (true->fitted, +-0.05): {detail}"),
        ))
    };
    checks.push(run_sweep().unwrap_or_else(|e| Check::errored("12a", label_a, &e)));

    let run_transition = || -> crate::Result<Check> {
        let cloud = cloudfit::SyntheticCloud {
            temperature_nk: 400.0,
            thermal_atoms: 4e5,
            condensate_atoms: 0.0,
            trap,
            tof_ms: 21.0,
            noise_od: 0.01,
            seed: 205,
        };
        let image = cloudfit::synthesize_image(&cloud, &cloudfit::ImageGeometry::default())?;
        let result = cloudfit::analyze_bimodal(&image, &settings)?;
        Ok(Check::new(
            "12b",
            label_b,
            result.condensate_fraction.abs() <= 0.03,
            format!(
                "fraction {:.4} (<= 0.03) at {:.0} nK with {:.2e} thermal atoms fitted",
                result.condensate_fraction, result.temperature_nk, result.thermal_atoms
            ),
        ))
    };
    checks.push(run_transition().unwrap_or_else(|e| Check::errored("12b", label_b, &e)));
    checks
}

fn criterion_13_invariants() -> Vec<Check> {
    let mut checks = Vec::new();

    let label_a = "trap field is divergence-free";
    let run_a = || -> crate::Result<Check> {
        let trap = IoffePritchardTrap::at_current(1.0, 400.0)?;
        let h = 1e-3;
        let mut worst = 0.0f64;
        for point in [[0.5, -0.3, 1.2], [0.0, 0.0, 0.0], [-1.1, 0.7, -2.0]] {
            let mut div = 0.0;
            for axis in 0..3 {
                let mut plus = point;
                let mut minus = point;
                plus[axis] += h;
                minus[axis] -= h;
                div += (trap.field_vector_g(plus)[axis] - trap.field_vector_g(minus)[axis])
                    / (2.0 * h);
            }
            worst = worst.max(div.abs());
        }
        Ok(Check::new(
            "13a",
            label_a,
            worst < 1e-9,
            format!("max |div B| {worst:.1e} G/mm over sample points"),
        ))
    };
    checks.push(run_a().unwrap_or_else(|e| Check::errored("13a", label_a, &e)));

    let label_b = "Stark Hamiltonian symmetry";
    let run_b = || -> crate::Result<Check> {
        let model = Model::rb87();
        let basis = stark::build_basis(&model, 12, 3, 1)?;
        let h = stark::stark_hamiltonian(&model, &basis, 0.7)?;
        let mut worst = 0.0f64;
        for i in 0..h.nrows() {
            for j in 0..h.ncols() {
                worst = worst.max((h[(i, j)] - h[(j, i)]).abs());
            }
        }
        Ok(Check::new(
            "13b",
            label_b,
            worst == 0.0,
            format!("max |H - H^T| = {worst:.1e} MHz"),
        ))
    };
    checks.push(run_b().unwrap_or_else(|e| Check::errored("13b", label_b, &e)));

    let label_c = "electrode superposition linearity";
    let run_c = || -> crate::Result<Check> {
        let geometry = efield::PlateGeometry::standard();
        let mut first = efield::ChargeSet::default();
        first.set('A', 3.0)?;
        first.set('F', -1.5)?;
        let mut second = efield::ChargeSet::default();
        second.set('E', -2.0)?;
        second.set('B', 0.7)?;
        let combined = first.plus(&second);
        let mut worst = 0.0f64;
        for point in [[1.0, 2.0, -3.0], [-4.0, 0.5, 6.0]] {
            let fa = efield::field_at(&geometry, &first, point)?;
            let fb = efield::field_at(&geometry, &second, point)?;
            let fc = efield::field_at(&geometry, &combined, point)?;
            for axis in 0..3 {
                let expected = fa[axis] + fb[axis];
                let scale = expected.abs().max(1e-12);
                worst = worst.max((fc[axis] - expected).abs() / scale);
            }
        }
        Ok(Check::new(
            "13c",
            label_c,
            worst < 1e-12,
            format!("max relative deviation {worst:.1e} from summed fields"),
        ))
    };
    checks.push(run_c().unwrap_or_else(|e| Check::errored("13c", label_c, &e)));

    let label_d = "dilogarithm identities";
    let run_d = || -> crate::Result<Check> {
        let at_one = cloudfit::polylog_g2(1.0)?;
        let at_half = cloudfit::polylog_g2(0.5)?;
        let pi = std::f64::consts::PI;
        let exact_half = pi * pi / 12.0 - 0.5 * 2.0f64.ln().powi(2);
        let ok = (at_one - pi * pi / 6.0).abs() < 1e-14
            && (at_half - exact_half).abs() < 1e-14;
        Ok(Check::new(
            "13d",
            label_d,
            ok,
            format!("g2(1) = {at_one:.15}, g2(1/2) = {at_half:.15} match the closed forms"),
        ))
    };
    checks.push(run_d().unwrap_or_else(|e| Check::errored("13d", label_d, &e)));

    let label_e = "seeded reruns are bit-identical";
    let run_e = || -> crate::Result<Check> {
        let model = spectra::SpectrumModel::trapped_cloud_43s();
        let grid = spectra::DetuningGrid { min_mhz: -5.0, max_mhz: 2.0, steps: 101 };
        let one = spectra::synthesize_spectrum(&model, &grid, 2000, 3)?;
        let two = spectra::synthesize_spectrum(&model, &grid, 2000, 3)?;
        let spectra_match = one.signal == two.signal;

        let trap = cloudfit::TrapFrequencies::new(250.0, 18.0)?;
        let cloud = cloudfit::SyntheticCloud {
            temperature_nk: 300.0,
            thermal_atoms: 1e5,
            condensate_atoms: 5e4,
            trap,
            tof_ms: 21.0,
            noise_od: 0.02,
            seed: 17,
        };
        let geometry = cloudfit::ImageGeometry { nx: 41, ny: 41, pixel_um: 20.0 };
        let img_a = cloudfit::synthesize_image(&cloud, &geometry)?;
        let img_b = cloudfit::synthesize_image(&cloud, &geometry)?;
        let images_match = img_a.od == img_b.od;

        Ok(Check::new(
            "13e",
            label_e,
            spectra_match && images_match,
            format!(
                "spectrum rerun identical: {spectra_match}, image rerun identical: {images_match}"
            ),
        ))
    };
    checks.push(run_e().unwrap_or_else(|e| Check::errored("13e", label_e, &e)));
    checks
}
