//! One function per subcommand. Every command resolves its parameters
//! as flag > config > built-in default, writes machine-readable files
//! into the output directory, and prints a short human summary. Nothing
//! here depends on wall-clock time or iteration order, so a rerun with
//! the same config and seed reproduces every output byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use rydbec::cloudfit::{self, AnalysisSettings, ImageFormat, ImageGeometry, SyntheticCloud, TrapFrequencies};
use rydbec::constants::Constants;
use rydbec::efield::{self, CalibrationAnchor, ChargeSet, FieldComponent, FieldTarget, PlateGeometry};
use rydbec::magtrap::IoffePritchardTrap;
use rydbec::rydberg::{Model, RydbergLevel};
use rydbec::spectra::{self, DetuningGrid, ExcitationScheme, SpectrumModel, StarkScanConfig};
use rydbec::stark;
use rydbec::transport::{self, McpAperture, PlaneOutcome, Termination, TransportFields};
use rydbec::{acceptance, Error, Result};

use crate::config::ExperimentConfig;
use crate::plot::{self, Series};

/// Shared command context resolved from the global flags.
pub struct Context {
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub plot: bool,
}

impl Context {
    fn write(&self, name: &str, content: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join(name);
        fs::write(&path, content)?;
        println!("wrote {}", path.display());
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| Error::Parse(format!("serializing {name}: {e}")))?;
        self.write(name, &(text + "\n"))
    }

    fn require_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| {
            Error::domain("this command draws random samples; pass --seed or set `seed` in the config")
        })
    }

    fn maybe_plot(
        &self,
        name: &str,
        title: &str,
        x_label: &str,
        y_label: &str,
        series: &[Series],
    ) -> Result<()> {
        if self.plot {
            self.write(name, &plot::line_chart(title, x_label, y_label, series))?;
        }
        Ok(())
    }
}

fn parse_anchor(name: &str) -> Result<CalibrationAnchor> {
    match name {
        "theory" => Ok(CalibrationAnchor::Theory),
        "measured" => Ok(CalibrationAnchor::Measured),
        other => Err(Error::domain(format!(
            "unknown calibration anchor {other:?}; expected \"theory\" or \"measured\""
        ))),
    }
}

fn scheme_by_name(name: &str) -> Result<ExcitationScheme> {
    match name {
        "two_photon_43s" => Ok(ExcitationScheme::two_photon_43s()),
        other => Err(Error::domain(format!(
            "unknown excitation scheme {other:?}; expected \"two_photon_43s\""
        ))),
    }
}

fn spectrum_model(cfg: &ExperimentConfig, temperature_uk: f64) -> Result<SpectrumModel> {
    let mut model = SpectrumModel::trapped_cloud_43s();
    model.scheme = scheme_by_name(&cfg.spectrum.scheme)?;
    model.trap = IoffePritchardTrap::at_current(cfg.trap.b0_g, cfg.trap.current_a)?;
    model.temperature_k = temperature_uk * 1e-6;
    model.e_field_v_cm = cfg.spectrum.e_field_v_cm;
    Ok(model)
}

fn charges_from_config(cfg: &ExperimentConfig, geometry: &PlateGeometry) -> Result<ChargeSet> {
    let anchor = parse_anchor(&cfg.charges.anchor)?;
    let cal = efield::voltage_calibration(geometry, anchor)?;
    let base = efield::preset_configuration(&cfg.charges.preset)?;
    Ok(base.scaled(cal.charge_for_voltage(cfg.charges.volts)))
}

fn triple(values: &[f64], what: &str) -> Result<[f64; 3]> {
    if values.len() != 3 {
        return Err(Error::domain(format!("{what} needs exactly 3 numbers")));
    }
    Ok([values[0], values[1], values[2]])
}

/// Overrides for `stark-map`; unset fields fall back to the config.
#[derive(Default)]
pub struct StarkMapArgs {
    pub n: Option<u32>,
    pub spread: Option<u32>,
    pub mj2: Option<i32>,
    pub field_max: Option<f64>,
    pub samples: Option<usize>,
}

pub fn stark_map(cfg: &ExperimentConfig, ctx: &Context, args: StarkMapArgs) -> Result<()> {
    let n = args.n.unwrap_or(cfg.level.n);
    let spread = args.spread.unwrap_or(cfg.level.spread);
    let mj2 = args.mj2.unwrap_or(cfg.level.mj2);
    let field_max = args.field_max.unwrap_or(cfg.level.field_max_v_cm);
    let samples = args.samples.unwrap_or(cfg.level.samples);

    let model = Model::rb87();
    let basis = stark::build_basis(&model, n, spread, mj2)?;
    println!(
        "basis: {} states, n in [{}, {}], mj = {}/2",
        basis.len(),
        n - spread,
        n + spread,
        mj2
    );

    if samples <= 1 || field_max <= 0.0 {
        let mut csv = String::from("index,level,energy_mhz\n");
        for (k, (level, energy)) in basis.levels.iter().zip(&basis.energies_mhz).enumerate() {
            csv.push_str(&format!("{k},{level},{energy}\n"));
        }
        ctx.write("levels.csv", &csv)?;
        println!("zero-field energies only (single sample requested)");
        return Ok(());
    }

    let op = stark::StarkOperator::new(&model, basis)?;
    let map = stark::compute_stark_map(&op, 0.0, field_max, samples)?;
    let names: Vec<String> = op.basis.levels.iter().map(ToString::to_string).collect();
    let csv = format!(
        "# field in V/cm; state columns in MHz relative to the ionization limit\n{}",
        map.to_csv(&names, 0.0)
    );
    ctx.write("stark_map.csv", &csv)?;

    let target = RydbergLevel::s(n);
    if mj2 == 1 {
        let pol = stark::polarizability(&op, &target, 0.0, field_max, samples)?;
        println!(
            "{target}: alpha/2 = {:.4} MHz/(V/cm)^2 over [0, {field_max}] V/cm (fit rms {:.2e} MHz)",
            pol.alpha_half_mhz_cm2_v2, pol.residual_rms_mhz
        );
        ctx.write_json("polarizability.json", &pol)?;
    } else {
        println!("skipping the S-state polarizability report (needs mj = 1/2)");
    }

    if ctx.plot {
        let target_index = op.basis.index_of(&target);
        let mut series: Vec<Series> = Vec::new();
        for (idx, curve) in map.curves_mhz.iter().enumerate() {
            let points: Vec<(f64, f64)> =
                map.field_v_cm.iter().copied().zip(curve.iter().copied()).collect();
            if Some(idx) == target_index {
                series.push(Series { label: &names[idx], color: "#c23b22", points });
            } else {
                series.push(Series { label: "", color: "#c8c8c8", points });
            }
        }
        // Draw the highlighted curve last so it stays visible.
        series.sort_by_key(|s| !s.label.is_empty());
        ctx.maybe_plot(
            "stark_map.svg",
            "Stark map",
            "field (V/cm)",
            "energy (MHz)",
            &series,
        )?;
    }
    Ok(())
}

pub fn field_preset(
    cfg: &ExperimentConfig,
    ctx: &Context,
    name: Option<String>,
    volts: Option<f64>,
    anchor: Option<String>,
) -> Result<()> {
    let name = name.unwrap_or_else(|| cfg.charges.preset.clone());
    let volts = volts.unwrap_or(cfg.charges.volts);
    let anchor = parse_anchor(&anchor.unwrap_or_else(|| cfg.charges.anchor.clone()))?;

    let geometry = PlateGeometry::standard();
    let cal = efield::voltage_calibration(&geometry, anchor)?;
    let charges = efield::preset_configuration(&name)?.scaled(cal.charge_for_voltage(volts));
    let e = efield::field_at(&geometry, &charges, [0.0; 3])?;
    let mag = (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
    println!(
        "{name} at {volts} V ({:?} anchor): |E(0)| = {mag:.4} V/cm, E = [{:.4}, {:.4}, {:.4}] V/cm",
        anchor, e[0], e[1], e[2]
    );
    ctx.write_json("charges.json", &charges)?;
    Ok(())
}

pub struct FieldEvalArgs {
    pub charges: Option<PathBuf>,
    pub from: Option<Vec<f64>>,
    pub to: Option<Vec<f64>>,
    pub steps: usize,
    pub at: Option<Vec<f64>>,
}

pub fn field_eval(cfg: &ExperimentConfig, ctx: &Context, args: FieldEvalArgs) -> Result<()> {
    let geometry = PlateGeometry::standard();
    let charges = match &args.charges {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            serde_json::from_str::<ChargeSet>(&text)
                .map_err(|e| Error::Parse(format!("charges {}: {e}", path.display())))?
        }
        None => charges_from_config(cfg, &geometry)?,
    };

    let points: Vec<[f64; 3]> = if let Some(at) = &args.at {
        vec![triple(at, "--at")?]
    } else {
        // Default: the x axis from the trap center away from the biased
        // plates, where the magnitude falls off monotonically.
        let from = triple(args.from.as_deref().unwrap_or(&[0.0, 0.0, 0.0]), "--from")?;
        let to = triple(args.to.as_deref().unwrap_or(&[10.0, 0.0, 0.0]), "--to")?;
        if args.steps < 2 {
            return Err(Error::domain("--steps must be at least 2"));
        }
        (0..args.steps)
            .map(|k| {
                let t = k as f64 / (args.steps - 1) as f64;
                [
                    from[0] + t * (to[0] - from[0]),
                    from[1] + t * (to[1] - from[1]),
                    from[2] + t * (to[2] - from[2]),
                ]
            })
            .collect()
    };

    let mut csv = String::from("x_mm,y_mm,z_mm,ex_v_cm,ey_v_cm,ez_v_cm,e_mag_v_cm\n");
    let mut profile: Vec<(f64, f64)> = Vec::new();
    let start = points[0];
    for p in &points {
        let e = efield::field_at(&geometry, &charges, *p)?;
        let mag = (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p[0], p[1], p[2], e[0], e[1], e[2], mag
        ));
        let dist = ((p[0] - start[0]).powi(2) + (p[1] - start[1]).powi(2)
            + (p[2] - start[2]).powi(2))
        .sqrt();
        profile.push((dist, mag));
    }
    ctx.write("field_profile.csv", &csv)?;
    if let (Some(first), Some(last)) = (profile.first(), profile.last()) {
        println!(
            "{} points: |E| from {:.4} to {:.4} V/cm",
            profile.len(),
            first.1,
            last.1
        );
    }
    ctx.maybe_plot(
        "field_profile.svg",
        "Field magnitude along the sampled segment",
        "distance from segment start (mm)",
        "|E| (V/cm)",
        &[Series { label: "", color: plot::PALETTE[0], points: profile }],
    )?;
    Ok(())
}

pub struct FieldSolveArgs {
    pub ex: Option<f64>,
    pub ey: Option<f64>,
    pub ez: Option<f64>,
    pub gxx: Option<f64>,
    pub gyy: Option<f64>,
    pub gzz: Option<f64>,
}

pub fn field_solve(ctx: &Context, args: FieldSolveArgs) -> Result<()> {
    let mut target = FieldTarget::new();
    for (component, value) in [
        (FieldComponent::Field(0), args.ex),
        (FieldComponent::Field(1), args.ey),
        (FieldComponent::Field(2), args.ez),
        (FieldComponent::Gradient(0, 0), args.gxx),
        (FieldComponent::Gradient(1, 1), args.gyy),
        (FieldComponent::Gradient(2, 2), args.gzz),
    ] {
        if let Some(v) = value {
            target = target.with(component, v);
        }
    }
    if target.components.is_empty() {
        return Err(Error::domain(
            "no target components given; pass at least one of --ex --ey --ez --gxx --gyy --gzz",
        ));
    }
    let geometry = PlateGeometry::standard();
    let report = efield::solve_charges(&geometry, &target)?;
    for c in &report.components {
        println!(
            "{}: requested {:.6} {u}, achieved {:.6} {u}, residual {:.2e}",
            c.name,
            c.requested,
            c.achieved,
            c.residual,
            u = c.unit
        );
    }
    println!("rank {} solve, plate charges in model units", report.rank);
    ctx.write_json("solve_report.json", &report)?;
    Ok(())
}

pub struct TrajectoryArgs {
    pub zero_fields: bool,
    pub no_trap: bool,
    pub dt_us: Option<f64>,
    pub t_max_us: Option<f64>,
    pub pulse_volts: Option<f64>,
    pub cage_volts: Option<f64>,
    pub start: Option<Vec<f64>>,
    pub velocity: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct TrajectoryOutcome {
    termination: Termination,
    flight_time_us: f64,
    final_position_mm: [f64; 3],
    /// Worst per-step kinetic-energy vs field-work mismatch, relative.
    energy_audit_rel: f64,
    detector: Option<PlaneOutcome>,
}

pub fn trajectory(cfg: &ExperimentConfig, ctx: &Context, args: TrajectoryArgs) -> Result<()> {
    let section = &cfg.trajectory;
    let dt_us = args.dt_us.unwrap_or(section.dt_us);
    let t_max_us = args.t_max_us.unwrap_or(section.t_max_us);
    let start = match &args.start {
        Some(v) => triple(v, "--start")?,
        None => section.start_mm,
    };
    let velocity = match &args.velocity {
        Some(v) => triple(v, "--velocity")?,
        None => section.velocity_m_s,
    };

    let (fields, aperture) = if args.zero_fields {
        (TransportFields::new(), None)
    } else {
        let geometry = PlateGeometry::standard();
        let cal = efield::voltage_calibration(&geometry, CalibrationAnchor::Theory)?;
        let charges = cal.bh_charges(args.pulse_volts.unwrap_or(section.pulse_volts));
        let cage_volts = args.cage_volts.unwrap_or(section.cage_volts);
        let cage = if cage_volts != 0.0 {
            Some(efield::cage_j_model(&geometry, cage_volts)?)
        } else {
            None
        };
        let trap = if section.trap_on && !args.no_trap {
            Some(IoffePritchardTrap::at_current(cfg.trap.b0_g, cfg.trap.current_a)?)
        } else {
            None
        };
        let fields = TransportFields::from_assembly(&geometry, &charges, cage.as_ref(), trap)?;
        (fields, Some(McpAperture::mcp_j()))
    };

    let mut ion = transport::ChargedParticle::rb87_ion_at_rest(start);
    ion.velocity_m_s = velocity;
    let settings = transport::IntegrationSettings {
        dt_us,
        t_max_us,
        plane_x_mm: aperture.as_ref().map(|a| a.plane_x_mm),
        ..Default::default()
    };
    let trajectory = transport::integrate(&ion, &fields, &settings)?;

    let detector = match &aperture {
        Some(a) => Some(transport::transverse_drift(&trajectory, a)?),
        None => None,
    };
    match &detector {
        Some(PlaneOutcome::Reached { offset_mm, hit }) => println!(
            "reached the detector plane at t = {:.3} us, transverse offset {:.3} mm, on active area: {hit}",
            trajectory.flight_time_us(),
            offset_mm
        ),
        Some(PlaneOutcome::Missed { reason }) => println!("detector not reached: {reason}"),
        None => println!(
            "integrated to t = {:.3} us, final position [{:.4}, {:.4}, {:.4}] mm",
            trajectory.flight_time_us(),
            trajectory.final_position_mm()[0],
            trajectory.final_position_mm()[1],
            trajectory.final_position_mm()[2]
        ),
    }

    let outcome = TrajectoryOutcome {
        termination: trajectory.termination,
        flight_time_us: trajectory.flight_time_us(),
        final_position_mm: trajectory.final_position_mm(),
        energy_audit_rel: trajectory.energy_audit_rel(),
        detector,
    };
    ctx.write("trajectory.csv", &trajectory.to_csv())?;
    ctx.write_json("outcome.json", &outcome)?;

    let along: Vec<(f64, f64)> = trajectory
        .times_us
        .iter()
        .zip(&trajectory.positions_mm)
        .map(|(t, p)| (*t, p[0]))
        .collect();
    let side_y: Vec<(f64, f64)> = trajectory
        .times_us
        .iter()
        .zip(&trajectory.positions_mm)
        .map(|(t, p)| (*t, p[1]))
        .collect();
    let side_z: Vec<(f64, f64)> = trajectory
        .times_us
        .iter()
        .zip(&trajectory.positions_mm)
        .map(|(t, p)| (*t, p[2]))
        .collect();
    ctx.maybe_plot(
        "trajectory.svg",
        "Ion trajectory",
        "t (us)",
        "position (mm)",
        &[
            Series { label: "x", color: plot::PALETTE[0], points: along },
            Series { label: "y", color: plot::PALETTE[1], points: side_y },
            Series { label: "z", color: plot::PALETTE[2], points: side_z },
        ],
    )?;
    Ok(())
}

pub fn spectrum_synth(cfg: &ExperimentConfig, ctx: &Context) -> Result<()> {
    let seed = ctx.require_seed()?;
    let model = spectrum_model(cfg, cfg.spectrum.temperature_uk)?;
    let grid = DetuningGrid {
        min_mhz: cfg.spectrum.min_mhz,
        max_mhz: cfg.spectrum.max_mhz,
        steps: cfg.spectrum.steps,
    };
    let spectrum = spectra::synthesize_spectrum(&model, &grid, cfg.spectrum.atoms, seed)?;
    let peaks = spectra::peak_detunings(&spectrum, 0.005);
    println!(
        "{} atoms over [{}, {}] MHz: {} peaks above the 0.5% floor at [{}] MHz",
        cfg.spectrum.atoms,
        grid.min_mhz,
        grid.max_mhz,
        peaks.len(),
        peaks
            .iter()
            .map(|p| format!("{p:.2}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    ctx.write("spectrum.csv", &spectrum.to_csv())?;
    let points: Vec<(f64, f64)> = spectrum
        .detunings_mhz
        .iter()
        .copied()
        .zip(spectrum.signal.iter().copied())
        .collect();
    ctx.maybe_plot(
        "spectrum.svg",
        "Excitation spectrum",
        "detuning (MHz)",
        "signal (arb.)",
        &[Series { label: "", color: plot::PALETTE[0], points }],
    )?;
    Ok(())
}

pub fn spectrum_fit(
    cfg: &ExperimentConfig,
    ctx: &Context,
    input: &Path,
    window: Option<Vec<f64>>,
) -> Result<()> {
    let text = fs::read_to_string(input)?;
    let spectrum = spectra::Spectrum::from_csv(&text)?;
    let window = match &window {
        Some(w) if w.len() == 2 => (w[0], w[1]),
        Some(_) => return Err(Error::domain("--window needs exactly 2 numbers: lo,hi")),
        None => cfg.spectrum.fit_window_mhz,
    };
    let fit = spectra::fit_gaussian_peak(&spectrum, window)?;
    println!(
        "peak at {:.4} +- {:.4} MHz, fwhm {:.4} +- {:.4} MHz (window [{}, {}] MHz)",
        fit.center_mhz,
        fit.center_uncertainty_mhz,
        fit.fwhm_mhz,
        fit.fwhm_uncertainty_mhz,
        window.0,
        window.1
    );
    ctx.write("peak_fit.json", &(fit.to_json() + "\n"))?;
    Ok(())
}

pub fn spectrum_starkscan(cfg: &ExperimentConfig, ctx: &Context) -> Result<()> {
    let seed = ctx.require_seed()?;
    let model = spectrum_model(cfg, cfg.scan.temperature_uk)?;
    let scan_cfg = StarkScanConfig {
        voltages_v: cfg.scan.voltages_v.clone(),
        offset_field_v_cm: cfg.scan.offset_field_v_cm,
        field_per_volt_v_cm: cfg.scan.field_per_volt_v_cm,
        atom_count: cfg.scan.atoms,
        seed,
        window_half_mhz: cfg.scan.window_half_mhz,
        steps_per_spectrum: cfg.scan.steps_per_spectrum,
    };
    let scan = spectra::synthesize_stark_scan(&model, &scan_cfg)?;
    let analysis = spectra::stark_scan_analysis(&scan, model.alpha_half_mhz_cm2_v2)?;
    println!(
        "vertex at {:.3} V, residual offset {:.4} V/cm, calibration {:.5} (V/cm)/V",
        analysis.vertex_voltage_v, analysis.offset_field_v_cm, analysis.field_per_volt_v_cm
    );

    let mut csv = String::from("voltage_v,center_mhz\n");
    let mut points = Vec::new();
    for p in &scan.points {
        csv.push_str(&format!("{},{}\n", p.voltage_v, p.center_mhz));
        points.push((p.voltage_v, p.center_mhz));
    }
    ctx.write("stark_scan.csv", &csv)?;
    ctx.write_json("scan_analysis.json", &analysis)?;
    ctx.maybe_plot(
        "stark_scan.svg",
        "Line center vs plate voltage",
        "plate voltage (V)",
        "line center (MHz)",
        &[Series { label: "", color: plot::PALETTE[0], points }],
    )?;
    Ok(())
}

fn cloud_trap(cfg: &ExperimentConfig) -> Result<TrapFrequencies> {
    TrapFrequencies::new(cfg.cloud.radial_hz, cfg.cloud.axial_hz)
}

/// Ideal-gas condensation temperature for `n` atoms in the trap, nK.
fn transition_temperature_nk(n: f64, trap: &TrapFrequencies) -> f64 {
    let c = Constants::standard();
    c.hbar * trap.omega_bar() * (n / cloudfit::ZETA_3).cbrt() / c.k_b * 1e9
}

pub fn cloud_synth(
    cfg: &ExperimentConfig,
    ctx: &Context,
    fraction: Option<f64>,
    stem: &str,
    format: Option<String>,
) -> Result<()> {
    let seed = ctx.require_seed()?;
    let fraction = fraction.unwrap_or(cfg.cloud.condensate_fraction);
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::domain(format!(
            "condensate fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let trap = cloud_trap(cfg)?;
    let total = cfg.cloud.total_atoms;
    let temperature_nk = cfg.cloud.temperature_nk.unwrap_or_else(|| {
        (transition_temperature_nk(total, &trap) * (1.0 - fraction).cbrt()).max(1.0)
    });
    let cloud = SyntheticCloud {
        temperature_nk,
        thermal_atoms: total * (1.0 - fraction),
        condensate_atoms: total * fraction,
        trap,
        tof_ms: cfg.cloud.tof_ms,
        noise_od: cfg.cloud.noise_od,
        seed,
    };
    let geometry = ImageGeometry {
        nx: cfg.cloud.nx,
        ny: cfg.cloud.ny,
        pixel_um: cfg.cloud.pixel_um,
    };
    let image = cloudfit::synthesize_image(&cloud, &geometry)?;

    let format = match format.as_deref() {
        None | Some("csv") => ImageFormat::Csv,
        Some("bin") => ImageFormat::F64le,
        Some(other) => {
            return Err(Error::domain(format!(
                "unknown image format {other:?}; expected \"csv\" or \"bin\""
            )))
        }
    };
    fs::create_dir_all(&ctx.out_dir)?;
    let stem_path = ctx.out_dir.join(stem);
    cloudfit::write_image(&image, &stem_path, format)?;
    let ext = match format {
        ImageFormat::Csv => "csv",
        ImageFormat::F64le => "bin",
    };
    println!("wrote {}.{ext} and {}.json", stem_path.display(), stem_path.display());

    let sigma = Constants::standard().d2_absorption_cross_section_m2()
        * cfg.cloud.cross_section_factor;
    println!(
        "{:.3e} atoms synthesized ({:.0}% condensed) at {temperature_nk:.0} nK; image integrates to {:.3e} atoms",
        total,
        100.0 * fraction,
        image.atom_count(sigma)
    );

    let mid = image.ny / 2;
    let points: Vec<(f64, f64)> = (0..image.nx)
        .map(|ix| (image.x_um(ix), image.at(ix, mid)))
        .collect();
    ctx.maybe_plot(
        "cloud_profile.svg",
        "Central row of the synthesized image",
        "x (um)",
        "optical density",
        &[Series { label: "", color: plot::PALETTE[0], points }],
    )?;
    Ok(())
}

pub fn cloud_analyze(cfg: &ExperimentConfig, ctx: &Context, stem: &Path) -> Result<()> {
    let image = cloudfit::read_image(stem)?;
    let settings = AnalysisSettings {
        exclusion_widths: cfg.cloud.exclusion_widths,
        trap: Some(cloud_trap(cfg)?),
        cross_section_factor: cfg.cloud.cross_section_factor,
    };
    let result = cloudfit::analyze_bimodal(&image, &settings)?;
    println!(
        "condensate fraction {:.3}: {:.3e} condensed + {:.3e} thermal atoms at {:.0} nK",
        result.condensate_fraction,
        result.condensate_atoms,
        result.thermal_atoms,
        result.temperature_nk
    );
    if let Some(radii) = result.tf_radii_trap_um {
        println!(
            "in-trap condensate radii [{:.2}, {:.2}] um (back-scaled from the image)",
            radii[0], radii[1]
        );
    }
    ctx.write_json("cloud_analysis.json", &result)?;
    Ok(())
}

pub fn reproduce(ctx: &Context) -> Result<()> {
    println!("running the built-in checks; a FAIL marked as known shortfall is the declared state\n");
    let checks = acceptance::run_all_with(|check| println!("{}", check.render()));
    let passed = checks.iter().filter(|c| c.passed).count();
    let known = checks.iter().filter(|c| !c.passed && !c.expected).count();
    let unexpected = checks.len() - passed - known;
    println!(
        "\n{passed} passed, {known} known shortfalls, {unexpected} unexpected failures, {} total",
        checks.len()
    );
    ctx.write_json("acceptance.json", &checks)?;
    if acceptance::all_as_expected(&checks) {
        Ok(())
    } else {
        Err(Error::numerical(
            "reproduce",
            "some checks landed out of line with their declared expectations",
        ))
    }
}
