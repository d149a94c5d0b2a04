//! Electrode fields: forward and inverse point-charge model of the
//! eight-plate assembly.
//!
//! Eight field plates sit near the corners of a cuboid with extent ratio
//! x:y:z = 15:15:14 and a 25 mm inner separation between the two plate
//! faces, which are stacked along z (the trap coil axis); the particle
//! detectors and their shield cages lie on the x axis. Each plate is
//! reduced to a point charge at its corner, so the field is a plain
//! Coulomb sum, every Taylor coefficient at the origin is linear in the
//! charges, and the inverse problem (charges for requested field,
//! gradient, and curvature components) is a small weighted least-squares
//! system. The reduction trades near-plate accuracy for an invertible
//! model; it is meant to describe the centimetre around the origin.
//!
//! Units: lengths in mm, fields in V/cm, gradients in V/cm^2, curvatures
//! in V/cm^3. Plate charges are dimensionless model units; a single
//! calibration scalar ties them to applied plate voltages.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting;

/// Half extent of the plate cuboid along x and y, mm. The 15:15:14 aspect
/// is normalized so the two plate faces are 25 mm apart along z.
pub const HALF_XY_MM: f64 = 12.5 * 15.0 / 14.0;
/// Half extent along z, mm (half the 25 mm inner plate separation).
pub const HALF_Z_MM: f64 = 12.5;
/// Shield cage position of detector I on the x axis, mm.
pub const CAGE_I_X_MM: f64 = -32.5;
/// Shield cage position of detector J (ion side), mm.
pub const CAGE_J_X_MM: f64 = 25.5;
/// Field evaluation refuses points closer than this to any point charge;
/// inside that radius the reduced model has no physical meaning.
pub const MIN_SOURCE_DISTANCE_MM: f64 = 0.5;
/// Relative singular-value cutoff of the inverse solver.
pub const SOLVER_REL_CUTOFF: f64 = 1e-12;
/// A requested component counts as reached when the forward residual of
/// the solved charges stays below this, scaled by the component magnitude.
pub const UNREACHABLE_TOL: f64 = 1e-8;

/// Plate labels in storage order.
pub const PLATE_LABELS: [char; 8] = ['A', 'B', 'C', 'D', 'E', 'F', 'G', 'H'];

/// Valid names for [`preset_configuration`].
pub const PRESET_NAMES: [&str; 4] = [
    "constant_full",
    "constant_BH",
    "gradient_all",
    "saddle_alternate",
];

/// One point charge of the reduced model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointSource {
    pub position_mm: [f64; 3],
    pub charge: f64,
}

/// Plate corner positions plus the optional detector cage locations.
///
/// Labels A..D form the ring on the lower (z = -c) face and E..H the ring
/// on the upper face, running in the opposite sense, so the vertical
/// partner pairs are A-H, B-G, C-F, D-E. B and H then share x = -a, and
/// biasing the two together yields a field along +x, the detector axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PlateGeometryDoc", into = "PlateGeometryDoc")]
pub struct PlateGeometry {
    /// Corner positions indexed A..H, mm.
    pub corners_mm: [[f64; 3]; 8],
    pub cage_i_mm: Option<[f64; 3]>,
    pub cage_j_mm: Option<[f64; 3]>,
}

impl PlateGeometry {
    /// The as-built assembly: 15:15:14 cuboid, 25 mm face separation,
    /// cages on the x axis at -32.5 mm and +25.5 mm.
    pub fn standard() -> Self {
        let a = HALF_XY_MM;
        let c = HALF_Z_MM;
        PlateGeometry {
            corners_mm: [
                [-a, a, -c],  // A
                [-a, -a, -c], // B
                [a, -a, -c],  // C
                [a, a, -c],   // D
                [a, a, c],    // E
                [a, -a, c],   // F
                [-a, -a, c],  // G
                [-a, a, c],   // H
            ],
            cage_i_mm: Some([CAGE_I_X_MM, 0.0, 0.0]),
            cage_j_mm: Some([CAGE_J_X_MM, 0.0, 0.0]),
        }
    }

    pub fn label(index: usize) -> char {
        PLATE_LABELS[index]
    }

    pub fn index_of(label: char) -> Result<usize> {
        PLATE_LABELS
            .iter()
            .position(|&l| l == label.to_ascii_uppercase())
            .ok_or_else(|| Error::domain(format!("unknown plate label {label:?}, expected A..H")))
    }

    /// Largest |x| over the corners; the plate region ends here along x.
    pub fn plate_half_extent_x_mm(&self) -> f64 {
        self.corners_mm
            .iter()
            .map(|c| c[0].abs())
            .fold(0.0, f64::max)
    }

    /// Checks the structural invariants: finite corners, inversion
    /// symmetry about the origin, and the A..D / E..H rings each on one
    /// z face with the faces mirrored.
    pub fn validate(&self) -> Result<()> {
        let mut scale = 0.0f64;
        for corner in &self.corners_mm {
            for v in corner {
                if !v.is_finite() {
                    return Err(Error::domain("plate corner coordinates must be finite"));
                }
                scale = scale.max(v.abs());
            }
        }
        if scale == 0.0 {
            return Err(Error::domain("plate corners are all at the origin"));
        }
        let tol = 1e-9 * scale;
        for (i, corner) in self.corners_mm.iter().enumerate() {
            let has_partner = self.corners_mm.iter().any(|other| {
                (0..3).all(|k| (other[k] + corner[k]).abs() <= tol)
            });
            if !has_partner {
                return Err(Error::domain(format!(
                    "corner {} has no inversion partner; the eight corners must be symmetric about the origin",
                    Self::label(i)
                )));
            }
            for (j, other) in self.corners_mm.iter().enumerate() {
                if j > i {
                    let dist2: f64 = (0..3).map(|k| (other[k] - corner[k]).powi(2)).sum();
                    if dist2 <= tol * tol {
                        return Err(Error::domain(format!(
                            "corners {} and {} coincide",
                            Self::label(i),
                            Self::label(j)
                        )));
                    }
                }
            }
        }
        let z_low = self.corners_mm[0][2];
        let z_high = self.corners_mm[4][2];
        if self.corners_mm[..4].iter().any(|c| (c[2] - z_low).abs() > tol)
            || self.corners_mm[4..].iter().any(|c| (c[2] - z_high).abs() > tol)
        {
            return Err(Error::domain(
                "plates A..D must share one z face and E..H the other",
            ));
        }
        if (z_low + z_high).abs() > tol || z_low.abs() <= tol {
            return Err(Error::domain(
                "the two plate faces must be mirrored about z = 0",
            ));
        }
        Ok(())
    }

    /// Point sources for the eight plates only.
    pub fn plate_sources(&self, charges: &ChargeSet) -> Vec<PointSource> {
        self.corners_mm
            .iter()
            .zip(charges.plates.iter())
            .map(|(&position_mm, &charge)| PointSource {
                position_mm,
                charge,
            })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct PlateGeometryDoc {
    corners_mm: BTreeMap<String, [f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cage_i_mm: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cage_j_mm: Option<[f64; 3]>,
}

impl From<PlateGeometry> for PlateGeometryDoc {
    fn from(g: PlateGeometry) -> Self {
        let corners_mm = PLATE_LABELS
            .iter()
            .zip(g.corners_mm.iter())
            .map(|(&l, &c)| (l.to_string(), c))
            .collect();
        PlateGeometryDoc {
            corners_mm,
            cage_i_mm: g.cage_i_mm,
            cage_j_mm: g.cage_j_mm,
        }
    }
}

impl TryFrom<PlateGeometryDoc> for PlateGeometry {
    type Error = Error;

    fn try_from(doc: PlateGeometryDoc) -> Result<Self> {
        let mut corners_mm = [[0.0; 3]; 8];
        for (i, &label) in PLATE_LABELS.iter().enumerate() {
            corners_mm[i] = *doc
                .corners_mm
                .get(&label.to_string())
                .ok_or_else(|| Error::domain(format!("geometry document misses corner {label}")))?;
        }
        if doc.corners_mm.len() != 8 {
            return Err(Error::domain(
                "geometry document must contain exactly the corners A..H",
            ));
        }
        let geometry = PlateGeometry {
            corners_mm,
            cage_i_mm: doc.cage_i_mm,
            cage_j_mm: doc.cage_j_mm,
        };
        geometry.validate()?;
        Ok(geometry)
    }
}

/// Signed charges in model units, indexed like [`PLATE_LABELS`], plus
/// optional literal point charges at the two cage positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChargeSetDoc", into = "ChargeSetDoc")]
pub struct ChargeSet {
    pub plates: [f64; 8],
    pub cage_i: f64,
    pub cage_j: f64,
}

impl Default for ChargeSet {
    fn default() -> Self {
        ChargeSet {
            plates: [0.0; 8],
            cage_i: 0.0,
            cage_j: 0.0,
        }
    }
}

impl ChargeSet {
    pub fn from_plates(plates: [f64; 8]) -> Self {
        ChargeSet {
            plates,
            ..Default::default()
        }
    }

    pub fn get(&self, label: char) -> Result<f64> {
        Ok(self.plates[PlateGeometry::index_of(label)?])
    }

    pub fn set(&mut self, label: char, charge: f64) -> Result<()> {
        self.plates[PlateGeometry::index_of(label)?] = charge;
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        ChargeSet {
            plates: self.plates.map(|q| q * factor),
            cage_i: self.cage_i * factor,
            cage_j: self.cage_j * factor,
        }
    }

    pub fn plus(&self, other: &ChargeSet) -> Self {
        let mut plates = [0.0; 8];
        for i in 0..8 {
            plates[i] = self.plates[i] + other.plates[i];
        }
        ChargeSet {
            plates,
            cage_i: self.cage_i + other.cage_i,
            cage_j: self.cage_j + other.cage_j,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.plates.iter().all(|q| q.is_finite())
            && self.cage_i.is_finite()
            && self.cage_j.is_finite()
        {
            Ok(())
        } else {
            Err(Error::domain("charges must be finite"))
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ChargeSetDoc {
    #[serde(rename = "A")]
    a: f64,
    #[serde(rename = "B")]
    b: f64,
    #[serde(rename = "C")]
    c: f64,
    #[serde(rename = "D")]
    d: f64,
    #[serde(rename = "E")]
    e: f64,
    #[serde(rename = "F")]
    f: f64,
    #[serde(rename = "G")]
    g: f64,
    #[serde(rename = "H")]
    h: f64,
    #[serde(default)]
    cage_i: f64,
    #[serde(default)]
    cage_j: f64,
}

impl From<ChargeSet> for ChargeSetDoc {
    fn from(s: ChargeSet) -> Self {
        let [a, b, c, d, e, f, g, h] = s.plates;
        ChargeSetDoc {
            a,
            b,
            c,
            d,
            e,
            f,
            g,
            h,
            cage_i: s.cage_i,
            cage_j: s.cage_j,
        }
    }
}

impl TryFrom<ChargeSetDoc> for ChargeSet {
    type Error = Error;

    fn try_from(doc: ChargeSetDoc) -> Result<Self> {
        let set = ChargeSet {
            plates: [
                doc.a, doc.b, doc.c, doc.d, doc.e, doc.f, doc.g, doc.h,
            ],
            cage_i: doc.cage_i,
            cage_j: doc.cage_j,
        };
        set.validate()?;
        Ok(set)
    }
}

/// Named charge patterns, all with magnitude 1 model unit.
///
/// `constant_full`: -1 on the lower ring, +1 on the upper; a uniform
/// field along the face axis (z). `constant_BH`: +1 on B and H only; a
/// field along +x. `gradient_all`: +1 everywhere; zero field at the
/// origin with a diagonal gradient. `saddle_alternate`: charges
/// alternate around the label order (equal to sign(x*y*z) of the
/// standard corners); field and gradient both vanish at the origin,
/// leaving pure cross curvature.
pub fn preset_configuration(name: &str) -> Result<ChargeSet> {
    let plates = match name {
        "constant_full" => [-1.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 1.0],
        "constant_BH" => [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        "gradient_all" => [1.0; 8],
        "saddle_alternate" => [1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0],
        _ => {
            return Err(Error::domain(format!(
                "unknown preset {name:?}, expected one of {PRESET_NAMES:?}"
            )))
        }
    };
    Ok(ChargeSet::from_plates(plates))
}

fn check_source(s: &PointSource, point_mm: [f64; 3]) -> Result<f64> {
    if !s.charge.is_finite() {
        return Err(Error::domain("source charge must be finite"));
    }
    let mut r2 = 0.0;
    for k in 0..3 {
        let d = point_mm[k] - s.position_mm[k];
        r2 += d * d;
    }
    if r2 < MIN_SOURCE_DISTANCE_MM * MIN_SOURCE_DISTANCE_MM {
        return Err(Error::domain(format!(
            "field point ({:.3}, {:.3}, {:.3}) mm lies within {} mm of the charge at ({:.3}, {:.3}, {:.3}) mm",
            point_mm[0],
            point_mm[1],
            point_mm[2],
            MIN_SOURCE_DISTANCE_MM,
            s.position_mm[0],
            s.position_mm[1],
            s.position_mm[2],
        )));
    }
    Ok(r2)
}

/// Coulomb sum over arbitrary point sources, V/cm at a point in mm.
pub fn field_at_sources(sources: &[PointSource], point_mm: [f64; 3]) -> Result<[f64; 3]> {
    let mut field = [0.0; 3];
    for s in sources {
        let r2 = check_source(s, point_mm)?;
        let inv_r3 = 1.0 / (r2 * r2.sqrt());
        for k in 0..3 {
            field[k] += s.charge * (point_mm[k] - s.position_mm[k]) * inv_r3;
        }
    }
    Ok(field)
}

/// Field of the eight plates (plus any literal cage charges in the set).
pub fn field_at(
    geometry: &PlateGeometry,
    charges: &ChargeSet,
    point_mm: [f64; 3],
) -> Result<[f64; 3]> {
    let sources = assembly_sources(geometry, charges, None)?;
    field_at_sources(&sources, point_mm)
}

/// All point sources of an assembly: the eight plates, literal cage
/// charges from the [`ChargeSet`] (at the geometry cage positions), and
/// optionally the fitted cage surrogate of a [`CageModel`].
pub fn assembly_sources(
    geometry: &PlateGeometry,
    charges: &ChargeSet,
    cage_model: Option<&CageModel>,
) -> Result<Vec<PointSource>> {
    geometry.validate()?;
    charges.validate()?;
    let mut sources = geometry.plate_sources(charges);
    for (charge, position, name) in [
        (charges.cage_i, geometry.cage_i_mm, "cage I"),
        (charges.cage_j, geometry.cage_j_mm, "cage J"),
    ] {
        if charge != 0.0 {
            let position_mm = position.ok_or_else(|| {
                Error::domain(format!("{name} carries charge but has no position"))
            })?;
            sources.push(PointSource {
                position_mm,
                charge,
            });
        }
    }
    if let Some(model) = cage_model {
        sources.extend_from_slice(&model.sources);
    }
    Ok(sources)
}

/// Taylor expansion of the field at the origin.
#[derive(Debug, Clone, Serialize)]
pub struct TaylorCoefficients {
    /// E_i(0), V/cm.
    pub field_v_cm: [f64; 3],
    /// dE_i/dx_j at the origin, V/cm^2; symmetric because E is curl-free.
    pub gradient_v_cm2: [[f64; 3]; 3],
    /// d2E_i/dx_j dx_k at the origin, V/cm^3; symmetric in (j, k).
    pub curvature_v_cm3: [[[f64; 3]; 3]; 3],
}

impl TaylorCoefficients {
    pub fn component(&self, component: FieldComponent) -> Result<f64> {
        component.check()?;
        Ok(match component {
            FieldComponent::Field(i) => self.field_v_cm[i],
            FieldComponent::Gradient(i, j) => self.gradient_v_cm2[i][j],
            FieldComponent::Curvature(i, j, k) => self.curvature_v_cm3[i][j][k],
        })
    }
}

/// Analytic derivatives of the Coulomb sum at the origin, exact in the
/// model; each coefficient is linear in the charges.
pub fn taylor_at_origin(sources: &[PointSource]) -> Result<TaylorCoefficients> {
    let mut field = [0.0; 3];
    let mut gradient = [[0.0; 3]; 3];
    let mut curvature = [[[0.0; 3]; 3]; 3];
    for s in sources {
        let r2 = check_source(s, [0.0; 3])?;
        let r = r2.sqrt();
        let r3 = r2 * r;
        let r5 = r3 * r2;
        let r7 = r5 * r2;
        let p = s.position_mm;
        let q = s.charge;
        for i in 0..3 {
            field[i] -= q * p[i] / r3;
            for j in 0..3 {
                let dij = if i == j { 1.0 } else { 0.0 };
                gradient[i][j] += q * (dij / r3 - 3.0 * p[i] * p[j] / r5);
                for k in 0..3 {
                    let dik = if i == k { 1.0 } else { 0.0 };
                    let djk = if j == k { 1.0 } else { 0.0 };
                    curvature[i][j][k] += q
                        * (3.0 * (dij * p[k] + dik * p[j] + djk * p[i]) / r5
                            - 15.0 * p[i] * p[j] * p[k] / r7);
                }
            }
        }
    }
    // Internally per mm; report V/cm^2 and V/cm^3 (1 mm = 0.1 cm).
    for row in &mut gradient {
        for v in row {
            *v *= 10.0;
        }
    }
    for block in &mut curvature {
        for row in block.iter_mut() {
            for v in row {
                *v *= 100.0;
            }
        }
    }
    Ok(TaylorCoefficients {
        field_v_cm: field,
        gradient_v_cm2: gradient,
        curvature_v_cm3: curvature,
    })
}

/// Taylor expansion of the plate assembly field at the origin.
pub fn taylor_coefficients(
    geometry: &PlateGeometry,
    charges: &ChargeSet,
) -> Result<TaylorCoefficients> {
    let sources = assembly_sources(geometry, charges, None)?;
    taylor_at_origin(&sources)
}

/// One addressable Taylor component; indices are axes 0=x, 1=y, 2=z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldComponent {
    Field(usize),
    Gradient(usize, usize),
    Curvature(usize, usize, usize),
}

impl FieldComponent {
    fn check(&self) -> Result<()> {
        let ok = match *self {
            FieldComponent::Field(i) => i < 3,
            FieldComponent::Gradient(i, j) => i < 3 && j < 3,
            FieldComponent::Curvature(i, j, k) => i < 3 && j < 3 && k < 3,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "field component {self:?} has an axis index outside 0..3"
            )))
        }
    }

    pub fn name(&self) -> String {
        const AXES: [char; 3] = ['x', 'y', 'z'];
        match *self {
            FieldComponent::Field(i) => format!("E{}", AXES[i]),
            FieldComponent::Gradient(i, j) => format!("dE{}/d{}", AXES[i], AXES[j]),
            FieldComponent::Curvature(i, j, k) => {
                format!("d2E{}/d{}d{}", AXES[i], AXES[j], AXES[k])
            }
        }
    }

    /// V/cm, V/cm^2, or V/cm^3 depending on the component class.
    pub fn unit(&self) -> &'static str {
        match self {
            FieldComponent::Field(_) => "V/cm",
            FieldComponent::Gradient(..) => "V/cm^2",
            FieldComponent::Curvature(..) => "V/cm^3",
        }
    }
}

fn default_weight() -> f64 {
    1.0
}

/// One requested Taylor component with its target value and weight.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetComponent {
    pub component: FieldComponent,
    /// Target value in the component's unit.
    pub value: f64,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

/// Requested field expansion at the origin for the inverse solver.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FieldTarget {
    pub components: Vec<TargetComponent>,
}

impl FieldTarget {
    pub fn new() -> Self {
        Self::default()
    }

    /// Requests all three field components at once.
    pub fn uniform_field(field_v_cm: [f64; 3]) -> Self {
        let mut target = Self::new();
        for (i, &value) in field_v_cm.iter().enumerate() {
            target = target.with(FieldComponent::Field(i), value);
        }
        target
    }

    pub fn with(self, component: FieldComponent, value: f64) -> Self {
        self.with_weighted(component, value, 1.0)
    }

    pub fn with_weighted(mut self, component: FieldComponent, value: f64, weight: f64) -> Self {
        self.components.push(TargetComponent {
            component,
            value,
            weight,
        });
        self
    }

    fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::domain("field target requests no components"));
        }
        for c in &self.components {
            c.component.check()?;
            if !c.value.is_finite() || !c.weight.is_finite() || c.weight <= 0.0 {
                return Err(Error::domain(format!(
                    "target component {} needs a finite value and a positive weight",
                    c.component.name()
                )));
            }
        }
        Ok(())
    }
}

/// Outcome of one requested component after the inverse solve.
#[derive(Debug, Clone, Serialize)]
pub struct SolvedComponent {
    pub name: String,
    pub unit: &'static str,
    pub requested: f64,
    pub achieved: f64,
    pub residual: f64,
    pub weight: f64,
}

/// Inverse-solve result: charges plus a per-component residual report.
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub charges: ChargeSet,
    pub components: Vec<SolvedComponent>,
    /// Rank kept by the least-squares solve.
    pub rank: usize,
}

/// Weighted least-squares solve for the eight plate charges that realize
/// the requested Taylor components; minimum-norm when underdetermined.
///
/// Components whose forward residual exceeds [`UNREACHABLE_TOL`] (scaled
/// by the component magnitude) are physically unreachable for this
/// geometry, e.g. an asymmetric gradient pair or a nonzero gradient
/// trace, and are returned as an error listing them.
pub fn solve_charges(geometry: &PlateGeometry, target: &FieldTarget) -> Result<SolveReport> {
    geometry.validate()?;
    target.validate()?;
    let n = target.components.len();

    // Column p holds the response of every requested component to a unit
    // charge on plate p; linearity makes this matrix exact.
    let mut unit_responses = Vec::with_capacity(8);
    for p in 0..8 {
        let mut charges = ChargeSet::default();
        charges.plates[p] = 1.0;
        unit_responses.push(taylor_coefficients(geometry, &charges)?);
    }

    let mut matrix = DMatrix::<f64>::zeros(n, 8);
    let mut rhs = DVector::<f64>::zeros(n);
    for (row, tc) in target.components.iter().enumerate() {
        for p in 0..8 {
            matrix[(row, p)] = tc.weight * unit_responses[p].component(tc.component)?;
        }
        rhs[row] = tc.weight * tc.value;
    }

    let solution = fitting::lstsq(&matrix, &rhs, SOLVER_REL_CUTOFF)?;
    let mut plates = [0.0; 8];
    for p in 0..8 {
        plates[p] = solution.coefficients[p];
    }
    let charges = ChargeSet::from_plates(plates);

    let forward = taylor_coefficients(geometry, &charges)?;
    let mut components = Vec::with_capacity(n);
    let mut unreachable = Vec::new();
    for tc in &target.components {
        let achieved = forward.component(tc.component)?;
        let residual = achieved - tc.value;
        if residual.abs() > UNREACHABLE_TOL * tc.value.abs().max(1.0) {
            unreachable.push(tc.component.name());
        }
        components.push(SolvedComponent {
            name: tc.component.name(),
            unit: tc.component.unit(),
            requested: tc.value,
            achieved,
            residual,
            weight: tc.weight,
        });
    }
    if !unreachable.is_empty() {
        return Err(Error::UnreachableComponents(unreachable));
    }
    Ok(SolveReport {
        charges,
        components,
        rank: solution.rank,
    })
}

/// Field at the origin per volt on the B/H pair from electrostatic
/// modeling of the full electrode assembly.
pub const THEORY_FIELD_PER_VOLT_V_CM: f64 = 0.14;
/// Same anchor measured in situ via the quadratic level shift of the
/// atoms; kept selectable next to the modeled value because the two
/// differ by geometry effects outside the reduced model.
pub const MEASURED_FIELD_PER_VOLT_V_CM: f64 = 0.2;

/// Which calibration anchor ties plate volts to model charge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationAnchor {
    Theory,
    Measured,
}

impl CalibrationAnchor {
    pub fn field_per_volt_v_cm(&self) -> f64 {
        match self {
            CalibrationAnchor::Theory => THEORY_FIELD_PER_VOLT_V_CM,
            CalibrationAnchor::Measured => MEASURED_FIELD_PER_VOLT_V_CM,
        }
    }
}

/// Global scalar mapping plate volts to model charge, applied uniformly
/// to all plates (one capacitance-like constant for the assembly).
#[derive(Debug, Clone, Serialize)]
pub struct VoltageCalibration {
    pub anchor: CalibrationAnchor,
    /// Anchor value: origin field per volt on the B/H pair, (V/cm)/V.
    pub field_per_volt_v_cm: f64,
    /// Model charge per applied volt on one plate.
    pub charge_per_volt: f64,
}

impl VoltageCalibration {
    pub fn charge_for_voltage(&self, volts: f64) -> f64 {
        self.charge_per_volt * volts
    }

    pub fn charges_for_voltages(&self, volts: &[f64; 8]) -> ChargeSet {
        ChargeSet::from_plates(volts.map(|v| v * self.charge_per_volt))
    }

    /// Volts on the B/H pair that produce the given origin field.
    pub fn bh_voltage_for_field(&self, field_v_cm: f64) -> f64 {
        field_v_cm / self.field_per_volt_v_cm
    }

    /// Charge set for the B/H pair at the given plate voltage.
    pub fn bh_charges(&self, volts: f64) -> ChargeSet {
        let mut plates = [0.0; 8];
        let q = self.charge_for_voltage(volts);
        plates[1] = q; // B
        plates[7] = q; // H
        ChargeSet::from_plates(plates)
    }
}

/// Calibrates the volts-to-charge scalar so that the B/H pair at 1 V
/// reproduces the anchor field at the origin.
pub fn voltage_calibration(
    geometry: &PlateGeometry,
    anchor: CalibrationAnchor,
) -> Result<VoltageCalibration> {
    let bh = preset_configuration("constant_BH")?;
    let field = field_at(geometry, &bh, [0.0; 3])?;
    let magnitude = (field[0] * field[0] + field[1] * field[1] + field[2] * field[2]).sqrt();
    if magnitude <= 0.0 {
        return Err(Error::numerical(
            "voltage_calibration",
            "B/H pair produces no field at the origin for this geometry",
        ));
    }
    let field_per_volt = anchor.field_per_volt_v_cm();
    Ok(VoltageCalibration {
        anchor,
        field_per_volt_v_cm: field_per_volt,
        charge_per_volt: field_per_volt / magnitude,
    })
}

/// Cage J surrogate targets at the reference voltage: remaining field and
/// gradient seen at the origin when the cage sits at -15 V.
pub const CAGE_J_REFERENCE_VOLTAGE_V: f64 = -15.0;
pub const CAGE_J_FIELD_V_CM: f64 = 0.2;
pub const CAGE_J_GRADIENT_V_CM2: f64 = 2.0;
/// The near charge of the image pair sits this far behind the cage front
/// plane, off the ion termination plane.
pub const CAGE_CHARGE_SETBACK_MM: f64 = 4.5;
/// Spacing between the near charge and its image partner.
pub const CAGE_IMAGE_SPACING_MM: f64 = 20.0;

/// Effective point-charge surrogate for the detector J cage.
///
/// The surrogate reproduces the origin field and gradient exactly; both
/// scale linearly with the cage voltage. It is a near-center expansion
/// only: the field-to-gradient ratio forces a strongly cancelling charge
/// pair, so values evaluated close to the cage overshoot the real field
/// and must not be trusted there.
#[derive(Debug, Clone, Serialize)]
pub struct CageModel {
    pub voltage_v: f64,
    pub sources: Vec<PointSource>,
    /// True when a single charge could not satisfy both targets and the
    /// charge + image pair was used instead.
    pub used_image_pair: bool,
    /// Position a lone charge would need (from x = 2 E / E'); kept in the
    /// report to document why the single-charge fit was rejected.
    pub single_charge_x_mm: Option<f64>,
    pub field_v_cm: f64,
    pub gradient_v_cm2: f64,
}

/// Fits the cage J surrogate for a given cage voltage.
///
/// A single charge providing field E and gradient E' must sit at
/// x = 2 E / E'; with the calibrated targets that is about 2 mm, far
/// inside the plate region, so the fit falls back to a charge + image
/// pair behind the cage front plane (recorded in the model metadata).
pub fn cage_j_model(geometry: &PlateGeometry, voltage_v: f64) -> Result<CageModel> {
    geometry.validate()?;
    if !voltage_v.is_finite() {
        return Err(Error::domain("cage voltage must be finite"));
    }
    let cage = geometry
        .cage_j_mm
        .ok_or_else(|| Error::domain("geometry does not place cage J"))?;
    let scale = voltage_v / CAGE_J_REFERENCE_VOLTAGE_V;
    let field = CAGE_J_FIELD_V_CM * scale;
    let gradient = CAGE_J_GRADIENT_V_CM2 * scale;

    if scale == 0.0 {
        return Ok(CageModel {
            voltage_v,
            sources: Vec::new(),
            used_image_pair: true,
            single_charge_x_mm: None,
            field_v_cm: 0.0,
            gradient_v_cm2: 0.0,
        });
    }

    // Lone charge at distance x: E = q/x^2, E' = 2q/x^3, so x = 2E/E'.
    // The ratio is voltage independent; in cm it is 2*0.2/2 = 0.2 cm.
    let single_x_mm = 10.0 * 2.0 * CAGE_J_FIELD_V_CM / CAGE_J_GRADIENT_V_CM2;
    if single_x_mm >= geometry.plate_half_extent_x_mm() {
        let q = -field * single_x_mm * single_x_mm;
        return Ok(CageModel {
            voltage_v,
            sources: vec![PointSource {
                position_mm: [single_x_mm, 0.0, 0.0],
                charge: q,
            }],
            used_image_pair: false,
            single_charge_x_mm: Some(single_x_mm),
            field_v_cm: field,
            gradient_v_cm2: gradient,
        });
    }

    let x1 = cage[0] + CAGE_CHARGE_SETBACK_MM;
    let x2 = x1 + CAGE_IMAGE_SPACING_MM;
    // Exact 2x2 solve of -q1/x1^2 - q2/x2^2 = E (V/cm) and
    // -2 q1/x1^3 - 2 q2/x2^3 = E' (V/cm per mm).
    let g_mm = gradient / 10.0;
    let a00 = -1.0 / (x1 * x1);
    let a01 = -1.0 / (x2 * x2);
    let a10 = -2.0 / (x1 * x1 * x1);
    let a11 = -2.0 / (x2 * x2 * x2);
    let det = a00 * a11 - a01 * a10;
    let q1 = (field * a11 - g_mm * a01) / det;
    let q2 = (a00 * g_mm - a10 * field) / det;

    Ok(CageModel {
        voltage_v,
        sources: vec![
            PointSource {
                position_mm: [x1, 0.0, 0.0],
                charge: q1,
            },
            PointSource {
                position_mm: [x2, 0.0, 0.0],
                charge: q2,
            },
        ],
        used_image_pair: true,
        single_charge_x_mm: Some(single_x_mm),
        field_v_cm: field,
        gradient_v_cm2: gradient,
    })
}

/// Evenly spaced points along one coordinate axis through the origin.
pub fn axis_points(axis: usize, half_range_mm: f64, samples: usize) -> Result<Vec<[f64; 3]>> {
    if axis >= 3 {
        return Err(Error::domain("axis index must be 0, 1, or 2"));
    }
    if samples < 2 || !half_range_mm.is_finite() || half_range_mm <= 0.0 {
        return Err(Error::domain(
            "axis profile needs a positive range and at least two samples",
        ));
    }
    let step = 2.0 * half_range_mm / (samples - 1) as f64;
    Ok((0..samples)
        .map(|i| {
            let mut p = [0.0; 3];
            p[axis] = -half_range_mm + step * i as f64;
            p
        })
        .collect())
}

/// Field map over the given points as CSV with header
/// `x_mm,y_mm,z_mm,ex_v_cm,ey_v_cm,ez_v_cm,e_mag_v_cm`.
///
/// Rows are computed in parallel but emitted in input order.
pub fn field_map_csv(sources: &[PointSource], points_mm: &[[f64; 3]]) -> Result<String> {
    let rows: Vec<String> = points_mm
        .par_iter()
        .map(|&p| {
            let e = field_at_sources(sources, p)?;
            let mag = (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
            Ok(format!(
                "{:.4},{:.4},{:.4},{:.9e},{:.9e},{:.9e},{:.9e}",
                p[0], p[1], p[2], e[0], e[1], e[2], mag
            ))
        })
        .collect::<Result<_>>()?;
    let mut csv = String::from("x_mm,y_mm,z_mm,ex_v_cm,ey_v_cm,ez_v_cm,e_mag_v_cm\n");
    for row in rows {
        csv.push_str(&row);
        csv.push('\n');
    }
    Ok(csv)
}
