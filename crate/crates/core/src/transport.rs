//! Ion transport: fixed-step trajectories of charged particles in the
//! electrode field and the static magnetic trap, with detector-plane
//! acceptance arithmetic and the anode-signal calibration.
//!
//! Positions are in mm and velocities in m/s; electric fields arrive in
//! V/cm and magnetic fields in G, converted to SI inside the force law.
//! The integrator is classical RK4 with a validated step size: flights
//! are microseconds long through smooth fields, so adaptivity would buy
//! nothing. A work accumulator rides along with the state, which makes
//! the energy audit (kinetic-energy change versus electric-field work)
//! an internal consistency check of every trajectory.

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::Constants;
use crate::efield::{self, CageModel, ChargeSet, PlateGeometry, PointSource};
use crate::error::{Error, Result};
use crate::magtrap::IoffePritchardTrap;

/// Anode-signal calibration: this many detected ions produce 1 V·s.
pub const IONS_PER_VOLT_SECOND: f64 = 3.65e10;
/// Counts at or below this are flagged as at the sensitivity floor.
pub const SENSITIVITY_FLOOR_IONS: f64 = 100.0;
/// Default domain radius; beyond it the particle has left the model.
pub const DEFAULT_DOMAIN_RADIUS_MM: f64 = 60.0;
/// The step must resolve the cyclotron period at least this finely.
pub const STEPS_PER_CYCLOTRON_PERIOD: f64 = 20.0;

/// A point particle with charge in elementary-charge units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChargedParticle {
    pub position_mm: [f64; 3],
    pub velocity_m_s: [f64; 3],
    pub charge_e: f64,
    pub mass_kg: f64,
}

impl ChargedParticle {
    /// A singly charged ion of the trapped species, at rest.
    pub fn rb87_ion_at_rest(position_mm: [f64; 3]) -> Self {
        ChargedParticle {
            position_mm,
            velocity_m_s: [0.0; 3],
            charge_e: 1.0,
            mass_kg: Constants::standard().rb87_ion_mass_kg,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self
            .position_mm
            .iter()
            .chain(self.velocity_m_s.iter())
            .all(|v| v.is_finite())
            && self.charge_e.is_finite();
        if !finite {
            return Err(Error::domain("particle state must be finite"));
        }
        if !(self.mass_kg.is_finite() && self.mass_kg > 0.0) {
            return Err(Error::domain("particle mass must be finite and > 0"));
        }
        Ok(())
    }

    pub fn kinetic_energy_j(&self) -> f64 {
        let v = self.velocity_m_s;
        0.5 * self.mass_kg * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    }
}

/// Field sources seen by the particle: point charges plus uniform terms
/// for the electric side, the trap plus a uniform term for the magnetic
/// side. Uniform terms exist chiefly for analytic oracles.
#[derive(Debug, Clone, Default)]
pub struct TransportFields {
    pub sources: Vec<PointSource>,
    pub uniform_e_v_cm: [f64; 3],
    pub trap: Option<IoffePritchardTrap>,
    pub uniform_b_g: [f64; 3],
}

impl TransportFields {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fields of a plate assembly, optionally with the cage surrogate and
    /// the static magnetic trap.
    pub fn from_assembly(
        geometry: &PlateGeometry,
        charges: &ChargeSet,
        cage: Option<&CageModel>,
        trap: Option<IoffePritchardTrap>,
    ) -> Result<Self> {
        Ok(TransportFields {
            sources: efield::assembly_sources(geometry, charges, cage)?,
            uniform_e_v_cm: [0.0; 3],
            trap,
            uniform_b_g: [0.0; 3],
        })
    }

    pub fn with_uniform_e(mut self, e_v_cm: [f64; 3]) -> Self {
        self.uniform_e_v_cm = e_v_cm;
        self
    }

    pub fn with_uniform_b(mut self, b_g: [f64; 3]) -> Self {
        self.uniform_b_g = b_g;
        self
    }

    pub fn with_trap(mut self, trap: IoffePritchardTrap) -> Self {
        self.trap = Some(trap);
        self
    }

    pub fn electric_field_v_cm(&self, point_mm: [f64; 3]) -> Result<[f64; 3]> {
        let mut e = if self.sources.is_empty() {
            [0.0; 3]
        } else {
            efield::field_at_sources(&self.sources, point_mm)?
        };
        for k in 0..3 {
            e[k] += self.uniform_e_v_cm[k];
        }
        Ok(e)
    }

    pub fn magnetic_field_g(&self, point_mm: [f64; 3]) -> [f64; 3] {
        let mut b = self.uniform_b_g;
        if let Some(trap) = &self.trap {
            let t = trap.field_vector_g(point_mm);
            for k in 0..3 {
                b[k] += t[k];
            }
        }
        b
    }
}

/// a = (q/m)(E + v × B) in m/s^2, from lab units (V/cm, G).
pub fn lorentz_acceleration(
    particle: &ChargedParticle,
    e_v_cm: [f64; 3],
    b_g: [f64; 3],
) -> [f64; 3] {
    let q = particle.charge_e * Constants::standard().e;
    let qm = q / particle.mass_kg;
    let v = particle.velocity_m_s;
    let b = [b_g[0] * 1e-4, b_g[1] * 1e-4, b_g[2] * 1e-4];
    [
        qm * (e_v_cm[0] * 100.0 + v[1] * b[2] - v[2] * b[1]),
        qm * (e_v_cm[1] * 100.0 + v[2] * b[0] - v[0] * b[2]),
        qm * (e_v_cm[2] * 100.0 + v[0] * b[1] - v[1] * b[0]),
    ]
}

/// Why a trajectory ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    HitPlane,
    LeftDomain,
    TimeLimit,
}

/// Sampled trajectory with a cumulative electric-field work column.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub times_us: Vec<f64>,
    pub positions_mm: Vec<[f64; 3]>,
    pub velocities_m_s: Vec<[f64; 3]>,
    /// Work done by the electric field up to each sample, J.
    pub work_j: Vec<f64>,
    pub termination: Termination,
    pub mass_kg: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times_us.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times_us.is_empty()
    }

    pub fn final_position_mm(&self) -> [f64; 3] {
        *self.positions_mm.last().expect("trajectory has samples")
    }

    pub fn final_velocity_m_s(&self) -> [f64; 3] {
        *self.velocities_m_s.last().expect("trajectory has samples")
    }

    pub fn flight_time_us(&self) -> f64 {
        *self.times_us.last().expect("trajectory has samples")
    }

    fn kinetic_energy_j(&self, index: usize) -> f64 {
        let v = self.velocities_m_s[index];
        0.5 * self.mass_kg * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    }

    /// Worst per-step mismatch between the kinetic-energy change and the
    /// integrated electric-field work, relative to the larger of the two
    /// (with the total energy scale as a floor). The magnetic field does
    /// no work, so this measures integrator consistency.
    pub fn energy_audit_rel(&self) -> f64 {
        let ke_scale = (0..self.len())
            .map(|i| self.kinetic_energy_j(i))
            .fold(0.0, f64::max)
            .max(1e-300);
        let mut worst = 0.0f64;
        for i in 1..self.len() {
            let dke = self.kinetic_energy_j(i) - self.kinetic_energy_j(i - 1);
            let dw = self.work_j[i] - self.work_j[i - 1];
            let denom = dke.abs().max(dw.abs()).max(1e-9 * ke_scale);
            worst = worst.max((dke - dw).abs() / denom);
        }
        worst
    }

    /// CSV export: `t_us,x_mm,y_mm,z_mm,vx_m_s,vy_m_s,vz_m_s`.
    pub fn to_csv(&self) -> String {
        let mut csv = String::from("t_us,x_mm,y_mm,z_mm,vx_m_s,vy_m_s,vz_m_s\n");
        for i in 0..self.len() {
            let p = self.positions_mm[i];
            let v = self.velocities_m_s[i];
            csv.push_str(&format!(
                "{:.6},{:.6},{:.6},{:.6},{:.4},{:.4},{:.4}\n",
                self.times_us[i], p[0], p[1], p[2], v[0], v[1], v[2]
            ));
        }
        csv
    }
}

/// Integration controls. The plane terminator fires on any crossing of
/// x = plane_x_mm, with the final sample linearly interpolated onto the
/// plane.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IntegrationSettings {
    pub dt_us: f64,
    pub t_max_us: f64,
    #[serde(default)]
    pub plane_x_mm: Option<f64>,
    #[serde(default = "default_domain_radius")]
    pub domain_radius_mm: f64,
}

fn default_domain_radius() -> f64 {
    DEFAULT_DOMAIN_RADIUS_MM
}

impl Default for IntegrationSettings {
    fn default() -> Self {
        IntegrationSettings {
            dt_us: 1e-3,
            t_max_us: 20.0,
            plane_x_mm: None,
            domain_radius_mm: DEFAULT_DOMAIN_RADIUS_MM,
        }
    }
}

impl IntegrationSettings {
    fn validate(&self, particle: &ChargedParticle, fields: &TransportFields) -> Result<()> {
        if !(self.dt_us.is_finite() && self.dt_us > 0.0)
            || !(self.t_max_us.is_finite() && self.t_max_us > self.dt_us)
        {
            return Err(Error::domain(
                "integration needs 0 < dt_us < t_max_us, both finite",
            ));
        }
        if !(self.domain_radius_mm.is_finite() && self.domain_radius_mm > 0.0) {
            return Err(Error::domain("domain radius must be finite and > 0"));
        }
        // The step must resolve the local cyclotron period (checked at
        // the start point; trap fields vary slowly on the step scale).
        let b = fields.magnetic_field_g(particle.position_mm);
        let b_t = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt() * 1e-4;
        let q = particle.charge_e.abs() * Constants::standard().e;
        if b_t > 0.0 && q > 0.0 {
            let period_us = 2.0 * std::f64::consts::PI * particle.mass_kg / (q * b_t) * 1e6;
            let max_dt = period_us / STEPS_PER_CYCLOTRON_PERIOD;
            if self.dt_us > max_dt {
                return Err(Error::domain(format!(
                    "dt = {} us does not resolve the cyclotron period ({:.3} us); need dt <= {:.3} us",
                    self.dt_us, period_us, max_dt
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct State {
    r_mm: [f64; 3],
    v: [f64; 3],
    w_j: f64,
}

/// RK4 trajectory integration with a work accumulator.
pub fn integrate(
    particle: &ChargedParticle,
    fields: &TransportFields,
    settings: &IntegrationSettings,
) -> Result<Trajectory> {
    particle.validate()?;
    settings.validate(particle, fields)?;
    let q_c = particle.charge_e * Constants::standard().e;

    // Derivatives of (r [mm], v [m/s], W [J]) against time in seconds.
    let derive = |s: &State| -> Result<State> {
        let e = fields.electric_field_v_cm(s.r_mm)?;
        let b = fields.magnetic_field_g(s.r_mm);
        let probe = ChargedParticle {
            position_mm: s.r_mm,
            velocity_m_s: s.v,
            charge_e: particle.charge_e,
            mass_kg: particle.mass_kg,
        };
        let a = lorentz_acceleration(&probe, e, b);
        let power =
            q_c * 100.0 * (e[0] * s.v[0] + e[1] * s.v[1] + e[2] * s.v[2]);
        Ok(State {
            r_mm: [s.v[0] * 1e3, s.v[1] * 1e3, s.v[2] * 1e3],
            v: a,
            w_j: power,
        })
    };
    let advance = |s: &State, d: &State, h: f64| State {
        r_mm: [
            s.r_mm[0] + d.r_mm[0] * h,
            s.r_mm[1] + d.r_mm[1] * h,
            s.r_mm[2] + d.r_mm[2] * h,
        ],
        v: [s.v[0] + d.v[0] * h, s.v[1] + d.v[1] * h, s.v[2] + d.v[2] * h],
        w_j: s.w_j + d.w_j * h,
    };
    let rk4_step = |s: &State, h: f64| -> Result<State> {
        let k1 = derive(s)?;
        let k2 = derive(&advance(s, &k1, h / 2.0))?;
        let k3 = derive(&advance(s, &k2, h / 2.0))?;
        let k4 = derive(&advance(s, &k3, h))?;
        let mut out = *s;
        for i in 0..3 {
            out.r_mm[i] =
                s.r_mm[i] + h / 6.0 * (k1.r_mm[i] + 2.0 * k2.r_mm[i] + 2.0 * k3.r_mm[i] + k4.r_mm[i]);
            out.v[i] = s.v[i] + h / 6.0 * (k1.v[i] + 2.0 * k2.v[i] + 2.0 * k3.v[i] + k4.v[i]);
        }
        out.w_j = s.w_j + h / 6.0 * (k1.w_j + 2.0 * k2.w_j + 2.0 * k3.w_j + k4.w_j);
        Ok(out)
    };

    let dt_s = settings.dt_us * 1e-6;
    let steps = (settings.t_max_us / settings.dt_us).ceil() as usize;
    let mut state = State {
        r_mm: particle.position_mm,
        v: particle.velocity_m_s,
        w_j: 0.0,
    };
    let mut times_us = Vec::with_capacity(steps + 1);
    let mut positions = Vec::with_capacity(steps + 1);
    let mut velocities = Vec::with_capacity(steps + 1);
    let mut work = Vec::with_capacity(steps + 1);
    let mut push = |t_us: f64, s: &State, times_us: &mut Vec<f64>| {
        times_us.push(t_us);
        positions.push(s.r_mm);
        velocities.push(s.v);
        work.push(s.w_j);
    };
    push(0.0, &state, &mut times_us);

    let radius2 = settings.domain_radius_mm * settings.domain_radius_mm;
    let mut termination = Termination::TimeLimit;
    for step in 1..=steps {
        let next = rk4_step(&state, dt_s)?;
        let t_us = step as f64 * settings.dt_us;

        if let Some(plane) = settings.plane_x_mm {
            let before = state.r_mm[0] - plane;
            let after = next.r_mm[0] - plane;
            if before != 0.0 && before.signum() != after.signum() {
                // Land the final sample on the plane with a partial RK4
                // step, Newton-refining the substep fraction so the
                // work-energy bookkeeping stays integrator-exact.
                let mut f = before.abs() / (before.abs() + after.abs());
                let mut crossing = next;
                for _ in 0..8 {
                    crossing = rk4_step(&state, f * dt_s)?;
                    let err_mm = crossing.r_mm[0] - plane;
                    if err_mm.abs() < 1e-10 {
                        break;
                    }
                    let slope = crossing.v[0] * 1e3 * dt_s;
                    if slope == 0.0 {
                        break;
                    }
                    f = (f - err_mm / slope).clamp(0.0, 1.0);
                }
                crossing.r_mm[0] = plane;
                let t_cross = (step as f64 - 1.0 + f) * settings.dt_us;
                push(t_cross, &crossing, &mut times_us);
                termination = Termination::HitPlane;
                break;
            }
        }

        push(t_us, &next, &mut times_us);
        state = next;
        let r2 = state.r_mm[0] * state.r_mm[0]
            + state.r_mm[1] * state.r_mm[1]
            + state.r_mm[2] * state.r_mm[2];
        if r2 > radius2 {
            termination = Termination::LeftDomain;
            break;
        }
    }

    Ok(Trajectory {
        times_us,
        positions_mm: positions,
        velocities_m_s: velocities,
        work_j: work,
        termination,
        mass_kg: particle.mass_kg,
    })
}

/// Detector front-end geometry on a plane normal to x.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct McpAperture {
    pub plane_x_mm: f64,
    pub grid_diameter_mm: f64,
    pub active_diameter_mm: f64,
    pub grid_transmittance: f64,
}

impl McpAperture {
    /// Ion-side detector behind its cage at x = +25.5 mm.
    pub fn mcp_j() -> Self {
        McpAperture {
            plane_x_mm: efield::CAGE_J_X_MM,
            grid_diameter_mm: 12.0,
            active_diameter_mm: 8.5,
            grid_transmittance: 0.85,
        }
    }

    /// Electron-side detector at x = -32.5 mm.
    pub fn mcp_i() -> Self {
        McpAperture {
            plane_x_mm: efield::CAGE_I_X_MM,
            ..Self::mcp_j()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.active_diameter_mm > 0.0 && self.active_diameter_mm <= self.grid_diameter_mm) {
            return Err(Error::domain(
                "active area must sit inside the grid aperture",
            ));
        }
        if !(self.grid_transmittance > 0.0 && self.grid_transmittance <= 1.0) {
            return Err(Error::domain("grid transmittance must be in (0, 1]"));
        }
        Ok(())
    }
}

/// Where a trajectory ended up relative to the detector.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case", tag = "outcome")]
pub enum PlaneOutcome {
    Reached {
        /// Radial offset from the aperture center in the detector plane.
        offset_mm: f64,
        hit: bool,
    },
    Missed {
        reason: String,
    },
}

/// Radial offset of the trajectory end point in the detector plane and
/// whether it lands on the active area.
pub fn transverse_drift(trajectory: &Trajectory, aperture: &McpAperture) -> Result<PlaneOutcome> {
    aperture.validate()?;
    if trajectory.is_empty() {
        return Err(Error::domain("trajectory has no samples"));
    }
    if trajectory.termination != Termination::HitPlane {
        return Ok(PlaneOutcome::Missed {
            reason: format!(
                "trajectory ended with {:?} instead of reaching the detector plane",
                trajectory.termination
            ),
        });
    }
    let end = trajectory.final_position_mm();
    if (end[0] - aperture.plane_x_mm).abs() > 1e-6 {
        return Ok(PlaneOutcome::Missed {
            reason: format!(
                "trajectory terminated on x = {:.3} mm, not the detector plane at {:.3} mm",
                end[0], aperture.plane_x_mm
            ),
        });
    }
    let offset = (end[1] * end[1] + end[2] * end[2]).sqrt();
    Ok(PlaneOutcome::Reached {
        offset_mm: offset,
        hit: offset < 0.5 * aperture.active_diameter_mm,
    })
}

/// Detected-ion count mapped to the anode signal.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DetectorSignal {
    pub signal_v_s: f64,
    pub below_sensitivity_floor: bool,
}

/// Linear anode calibration with the sensitivity-floor flag.
pub fn detector_signal(ion_count: f64) -> Result<DetectorSignal> {
    if !(ion_count.is_finite() && ion_count >= 0.0) {
        return Err(Error::domain("ion count must be finite and >= 0"));
    }
    Ok(DetectorSignal {
        signal_v_s: ion_count / IONS_PER_VOLT_SECOND,
        below_sensitivity_floor: ion_count <= SENSITIVITY_FLOOR_IONS,
    })
}

/// Maxwell-Boltzmann velocity samples for an ensemble at the given
/// temperature; deterministic for a given seed.
pub fn maxwell_boltzmann_velocities(
    temperature_k: f64,
    mass_kg: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<[f64; 3]>> {
    if !(temperature_k.is_finite() && temperature_k >= 0.0) {
        return Err(Error::domain("temperature must be finite and >= 0"));
    }
    if !(mass_kg.is_finite() && mass_kg > 0.0) {
        return Err(Error::domain("mass must be finite and > 0"));
    }
    if temperature_k == 0.0 {
        return Ok(vec![[0.0; 3]; count]);
    }
    let sigma = (Constants::standard().k_b * temperature_k / mass_kg).sqrt();
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::numerical("maxwell_boltzmann_velocities", e.to_string()))?;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            [
                normal.sample(&mut rng),
                normal.sample(&mut rng),
                normal.sample(&mut rng),
            ]
        })
        .collect())
}

/// Integrates an ensemble in parallel; trajectories come back in input
/// order, so results are deterministic regardless of scheduling.
pub fn integrate_ensemble(
    particles: &[ChargedParticle],
    fields: &TransportFields,
    settings: &IntegrationSettings,
) -> Result<Vec<Trajectory>> {
    particles
        .par_iter()
        .map(|p| integrate(p, fields, settings))
        .collect()
}

/// Reference extraction working point: the B/H plate pair pulsed to
/// 1000 V on the theory calibration, the detector-side cage model at
/// -15 V, and optionally the magnetic trap left on. The integration
/// settings run 1 ns steps toward the detector J plane with a generous
/// time budget.
pub fn extraction_working_point(
    trap: Option<IoffePritchardTrap>,
) -> Result<(TransportFields, IntegrationSettings)> {
    let geometry = PlateGeometry::standard();
    let cal = efield::voltage_calibration(&geometry, efield::CalibrationAnchor::Theory)?;
    let charges = cal.bh_charges(1000.0);
    let cage = efield::cage_j_model(&geometry, -15.0)?;
    let fields = TransportFields::from_assembly(&geometry, &charges, Some(&cage), trap)?;
    let settings = IntegrationSettings {
        dt_us: 1e-3,
        t_max_us: 20.0,
        plane_x_mm: Some(McpAperture::mcp_j().plane_x_mm),
        ..Default::default()
    };
    Ok((fields, settings))
}
