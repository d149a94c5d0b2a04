//! Stark maps: level manifolds in a static electric field.
//!
//! A basis of fine-structure levels around a chosen shell is coupled by the
//! z-dipole operator (q = 0, mj conserved); diagonalizing
//! H(E) = diag(level energies) + E * W at each field sample and following
//! eigenvectors across samples yields the adiabatic map. A quadratic fit to
//! the tracked curve of a non-degenerate level gives its scalar
//! polarizability.
//!
//! Units: energies and couplings in MHz, fields in V/cm, so W carries
//! MHz/(V/cm).

use nalgebra::DMatrix;
use serde::Serialize;

use crate::angular;
use crate::error::{Error, Result};
use crate::fitting;
use crate::radial;
use crate::rydberg::{Model, RydbergLevel};

/// Ordered fine-structure basis with one shared mj.
#[derive(Debug, Clone)]
pub struct StarkBasis {
    pub mj2: i32,
    pub n_min: u32,
    pub n_max: u32,
    /// Levels sorted by (energy, l, j); deterministic.
    pub levels: Vec<RydbergLevel>,
    /// Zero-field energies, MHz relative to the ionization limit.
    pub energies_mhz: Vec<f64>,
}

impl StarkBasis {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn index_of(&self, level: &RydbergLevel) -> Option<usize> {
        self.levels.iter().position(|lv| lv == level)
    }
}

/// All levels with n in [center_n - spread, center_n + spread], every l and
/// j compatible with the given mj (`mj2` = 2 mj).
pub fn build_basis(model: &Model, center_n: u32, spread: u32, mj2: i32) -> Result<StarkBasis> {
    if spread < 3 {
        return Err(Error::domain(format!(
            "basis spread {spread} too small; the map needs at least 3 shells on each side"
        )));
    }
    if center_n <= spread {
        return Err(Error::domain(format!(
            "basis window around n = {center_n} with spread {spread} reaches n <= 0"
        )));
    }
    let n_min = center_n - spread;
    let n_max = center_n + spread;
    let mut entries: Vec<(f64, RydbergLevel)> = Vec::new();
    for n in n_min..=n_max {
        for l in 0..n {
            if n < model.constants().defects.lowest_valence_n(l) {
                return Err(Error::domain(format!(
                    "basis shell n = {n} lies below the lowest valence shell for l = {l}"
                )));
            }
            let jlo = (2 * l).saturating_sub(1).max(1);
            let jhi = 2 * l + 1;
            let mut js = vec![jhi];
            if jlo != jhi {
                js.insert(0, jlo);
            }
            for j2 in js {
                if (j2 as i32) < mj2.abs() {
                    continue;
                }
                let level = RydbergLevel { n, l, j2, mj2 };
                let e = model.level_energy_hz(&level)? / 1e6;
                entries.push((e, level));
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::domain(format!(
            "no levels with |mj| = {}/2 in n = [{n_min}, {n_max}]",
            mj2.abs()
        )));
    }
    entries.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.1.l.cmp(&b.1.l))
            .then(a.1.j2.cmp(&b.1.j2))
    });
    Ok(StarkBasis {
        mj2,
        n_min,
        n_max,
        energies_mhz: entries.iter().map(|e| e.0).collect(),
        levels: entries.into_iter().map(|e| e.1).collect(),
    })
}

/// The field-independent parts of the Stark problem: diagonal energies plus
/// the dipole coupling matrix, built once and reused across field samples.
#[derive(Debug, Clone)]
pub struct StarkOperator {
    pub basis: StarkBasis,
    /// Off-diagonal coupling in MHz per (V/cm); symmetric, zero diagonal.
    w_mhz_per_v_cm: DMatrix<f64>,
}

impl StarkOperator {
    /// Solve every distinct radial channel once on a common mesh and
    /// assemble the dipole couplings.
    pub fn new(model: &Model, basis: StarkBasis) -> Result<Self> {
        let n = basis.len();
        let grid = model.shared_grid(&basis.levels)?;
        // Distinct radial solutions are keyed by (n, l, j2); mj plays no role.
        let mut keys: Vec<(u32, u32, u32)> = basis
            .levels
            .iter()
            .map(|lv| (lv.n, lv.l, lv.j2))
            .collect();
        keys.sort_unstable();
        keys.dedup();
        let mut waves = std::collections::HashMap::new();
        for &(nn, ll, jj) in &keys {
            let lv = RydbergLevel { n: nn, l: ll, j2: jj, mj2: basis.mj2 };
            waves.insert((nn, ll, jj), model.wavefunction_on(&grid, &lv)?);
        }
        let scale = model.constants().dipole_mhz_per_ea0_v_cm;
        let mut w = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            let a = &basis.levels[i];
            for j in (i + 1)..n {
                let b = &basis.levels[j];
                if a.l.abs_diff(b.l) != 1 || a.j2.abs_diff(b.j2) > 2 {
                    continue;
                }
                let ang = angular::c1_element(a.l, a.j2, a.mj2, b.l, b.j2, b.mj2, 0);
                if ang == 0.0 {
                    continue;
                }
                let r = radial::matrix_element_r_pow(
                    &waves[&(a.n, a.l, a.j2)],
                    &waves[&(b.n, b.l, b.j2)],
                    1,
                )?;
                let v = scale * r * ang;
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
        Ok(StarkOperator {
            basis,
            w_mhz_per_v_cm: w,
        })
    }

    /// H(E) in MHz for a field in V/cm.
    pub fn hamiltonian_mhz(&self, field_v_cm: f64) -> DMatrix<f64> {
        let n = self.basis.len();
        let mut h = &self.w_mhz_per_v_cm * field_v_cm;
        for i in 0..n {
            h[(i, i)] = self.basis.energies_mhz[i];
        }
        h
    }
}

/// Convenience wrapper building the operator and evaluating one field.
pub fn stark_hamiltonian(model: &Model, basis: &StarkBasis, field_v_cm: f64) -> Result<DMatrix<f64>> {
    if field_v_cm < 0.0 {
        return Err(Error::domain(format!(
            "field magnitude must be nonnegative, got {field_v_cm} V/cm"
        )));
    }
    Ok(StarkOperator::new(model, basis.clone())?.hamiltonian_mhz(field_v_cm))
}

/// A sample where adiabatic following was ambiguous.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TrackingFlag {
    pub state: usize,
    pub sample: usize,
    pub overlap: f64,
}

/// Eigenvalue curves versus field with adiabatic state identity.
#[derive(Debug, Clone, Serialize)]
pub struct StarkMap {
    pub field_v_cm: Vec<f64>,
    /// `curves_mhz[state][sample]`, MHz relative to the ionization limit;
    /// state indices follow the basis ordering.
    pub curves_mhz: Vec<Vec<f64>>,
    pub basis_size: usize,
    pub mj2: i32,
    /// Samples where the best eigenvector overlap fell below 0.5.
    pub flags: Vec<TrackingFlag>,
}

impl StarkMap {
    /// CSV with a header row; column 1 the field, then one column per
    /// tracked state, energies shifted by `reference_mhz`.
    pub fn to_csv(&self, names: &[String], reference_mhz: f64) -> String {
        let mut out = String::from("field_v_cm");
        for name in names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (s, f) in self.field_v_cm.iter().enumerate() {
            out.push_str(&format!("{f}"));
            for curve in &self.curves_mhz {
                out.push_str(&format!(",{}", curve[s] - reference_mhz));
            }
            out.push('\n');
        }
        out
    }
}

/// Eigenvalues sorted ascending with their (column-permuted) vectors.
fn sorted_eigen(h: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = h.nrows();
    let eig = h.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = DMatrix::<f64>::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Diagonalize over `samples` equally spaced fields in
/// [`field_lo`, `field_hi`] and track states by maximal eigenvector overlap
/// with the previous sample (ties broken by energy proximity).
///
/// Samples are diagonalized in small parallel batches; the tracking pass
/// that assembles the map is sequential and deterministic. Closely spaced
/// samples keep the overlap criterion sharp; flags record every ambiguous
/// assignment (overlap < 0.5), which is expected behavior when a
/// hydrogenic manifold leaves zero field, where eigenvectors within a
/// degenerate shell are arbitrary mixtures.
pub fn compute_stark_map(
    op: &StarkOperator,
    field_lo_v_cm: f64,
    field_hi_v_cm: f64,
    samples: usize,
) -> Result<StarkMap> {
    if samples < 2 {
        return Err(Error::domain("a Stark map needs at least 2 field samples"));
    }
    if !(field_hi_v_cm > field_lo_v_cm) || field_lo_v_cm < 0.0 {
        return Err(Error::domain(format!(
            "invalid field range [{field_lo_v_cm}, {field_hi_v_cm}] V/cm"
        )));
    }
    let n = op.basis.len();
    let fields: Vec<f64> = (0..samples)
        .map(|s| {
            field_lo_v_cm
                + (field_hi_v_cm - field_lo_v_cm) * s as f64 / (samples - 1) as f64
        })
        .collect();

    let mut curves = vec![vec![0.0f64; samples]; n];
    let mut flags = Vec::new();
    // assignment[t] = eigen column currently following tracked state t.
    let mut assignment: Vec<usize> = (0..n).collect();
    let mut prev_vectors: Option<DMatrix<f64>> = None;

    use rayon::prelude::*;
    const BATCH: usize = 4;
    let mut sample_index = 0usize;
    for batch in fields.chunks(BATCH) {
        let eigens: Vec<(Vec<f64>, DMatrix<f64>)> = batch
            .par_iter()
            .map(|&f| {
                if f == 0.0 {
                    // Exact zero field: the Hamiltonian is diagonal and the
                    // basis order already sorts by energy.
                    (
                        op.basis.energies_mhz.clone(),
                        DMatrix::<f64>::identity(n, n),
                    )
                } else {
                    sorted_eigen(op.hamiltonian_mhz(f))
                }
            })
            .collect();
        for (values, vectors) in eigens {
            let s = sample_index;
            if let Some(prev) = &prev_vectors {
                // Overlap of each tracked state's previous vector with every
                // new eigenvector.
                let overlap = prev.transpose() * &vectors;
                let mut used = vec![false; n];
                let mut new_assignment = vec![0usize; n];
                for t in 0..n {
                    let row = assignment[t];
                    let mut best_col = usize::MAX;
                    let mut best = -1.0f64;
                    let prev_value = curves[t][s - 1];
                    for c in 0..n {
                        if used[c] {
                            continue;
                        }
                        let o = overlap[(row, c)].abs();
                        if o > best + 1e-12
                            || (o > best - 1e-12
                                && best_col != usize::MAX
                                && (values[c] - prev_value).abs()
                                    < (values[best_col] - prev_value).abs())
                        {
                            best = o;
                            best_col = c;
                        }
                    }
                    used[best_col] = true;
                    new_assignment[t] = best_col;
                    if best < 0.5 {
                        flags.push(TrackingFlag {
                            state: t,
                            sample: s,
                            overlap: best,
                        });
                    }
                    curves[t][s] = values[best_col];
                }
                assignment = new_assignment;
            } else {
                // First sample: tracked state t is the t-th eigenvalue in
                // ascending order, matching the basis energy order.
                for t in 0..n {
                    curves[t][s] = values[t];
                    assignment[t] = t;
                }
            }
            prev_vectors = Some(vectors);
            sample_index += 1;
        }
    }

    Ok(StarkMap {
        field_v_cm: fields,
        curves_mhz: curves,
        basis_size: n,
        mj2: op.basis.mj2,
        flags,
    })
}

/// Scalar polarizability extracted from a quadratic fit to a tracked curve.
#[derive(Debug, Clone, Serialize)]
pub struct Polarizability {
    pub level: RydbergLevel,
    /// alpha/2 in MHz/(V/cm)^2; positive for a downward-shifting level.
    pub alpha_half_mhz_cm2_v2: f64,
    /// Linear coefficient of the same fit, MHz/(V/cm).
    pub linear_mhz_cm_v: f64,
    pub fit_lo_v_cm: f64,
    pub fit_hi_v_cm: f64,
    /// RMS fit residual, MHz.
    pub residual_rms_mhz: f64,
}

/// Quadratic fit dW = c0 + c1 E + c2 E^2 over `samples` points in the fit
/// range; alpha/2 = -c2. The residual must stay below 1% of the largest
/// shift in the range.
pub fn polarizability(
    op: &StarkOperator,
    level: &RydbergLevel,
    fit_lo_v_cm: f64,
    fit_hi_v_cm: f64,
    samples: usize,
) -> Result<Polarizability> {
    let Some(index) = op.basis.index_of(level) else {
        return Err(Error::domain(format!("{level} is not in the basis")));
    };
    let map = compute_stark_map(op, fit_lo_v_cm, fit_hi_v_cm, samples)?;
    let curve = &map.curves_mhz[index];
    let e0 = op.basis.energies_mhz[index];
    let shifts: Vec<f64> = curve.iter().map(|w| w - e0).collect();
    let coeffs = fitting::polyfit(&map.field_v_cm, &shifts, 2)?;
    let mut ss = 0.0;
    let mut max_shift = 0.0f64;
    for (f, y) in map.field_v_cm.iter().zip(&shifts) {
        let fit = coeffs[0] + coeffs[1] * f + coeffs[2] * f * f;
        ss += (y - fit) * (y - fit);
        max_shift = max_shift.max(y.abs());
    }
    let residual = (ss / shifts.len() as f64).sqrt();
    if residual > 0.01 * max_shift {
        return Err(Error::fit(
            "polarizability",
            format!(
                "quadratic fit residual {residual:.3e} MHz exceeds 1% of the {max_shift:.3e} MHz maximum shift"
            ),
            residual,
        ));
    }
    Ok(Polarizability {
        level: *level,
        alpha_half_mhz_cm2_v2: -coeffs[2],
        linear_mhz_cm_v: coeffs[1],
        fit_lo_v_cm,
        fit_hi_v_cm,
        residual_rms_mhz: residual,
    })
}

/// Quadratic Stark coefficient alpha/2 of the 43S1/2 line adopted by the
/// field-calibration chain, in MHz/(V/cm)^2. The chain pins this number
/// so voltage-to-field conversions stay reproducible independent of the
/// basis settings passed to `polarizability`; the first-principles value
/// from the full basis lands within 10% of it (see the module tests).
pub const ALPHA_HALF_43S_MHZ_CM2_V2: f64 = 8.06;

/// Quadratic Stark shift -(alpha/2) E^2 in MHz.
pub fn stark_shift_mhz(alpha_half_mhz_cm2_v2: f64, field_v_cm: f64) -> f64 {
    -alpha_half_mhz_cm2_v2 * field_v_cm * field_v_cm
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn model() -> Model {
        Model::rb87()
    }

    #[test]
    fn basis_enumeration() {
        let m = model();
        let b = build_basis(&m, 43, 4, 1).unwrap();
        // 2n - 1 states per shell for mj = 1/2.
        let expect: usize = (39..=47).map(|n| 2 * n - 1).sum();
        assert_eq!(b.len(), expect);
        assert!(b.index_of(&RydbergLevel::s(43)).is_some());
        // No duplicates.
        let set: std::collections::HashSet<_> = b.levels.iter().collect();
        assert_eq!(set.len(), b.len());
        // Sorted by energy.
        for w in b.energies_mhz.windows(2) {
            assert!(w[0] <= w[1]);
        }
        // mj = 5/2 excludes S and P states entirely.
        let b52 = build_basis(&m, 43, 4, 5).unwrap();
        assert!(b52.levels.iter().all(|lv| lv.l >= 2));
        assert!(build_basis(&m, 43, 2, 1).is_err());
    }

    #[test]
    fn hamiltonian_structure() {
        let m = model();
        // Small basis keeps the test fast.
        let b = build_basis(&m, 12, 3, 1).unwrap();
        let op = StarkOperator::new(&m, b.clone()).unwrap();
        let h0 = op.hamiltonian_mhz(0.0);
        for i in 0..b.len() {
            for j in 0..b.len() {
                if i == j {
                    assert_eq!(h0[(i, j)], b.energies_mhz[i]);
                } else {
                    assert_eq!(h0[(i, j)], 0.0);
                }
            }
        }
        let h1 = op.hamiltonian_mhz(0.4);
        let h2 = op.hamiltonian_mhz(0.8);
        for i in 0..b.len() {
            for j in 0..b.len() {
                assert_eq!(h1[(i, j)], h1[(j, i)]);
                if i != j {
                    assert_relative_eq!(h2[(i, j)], 2.0 * h1[(i, j)], max_relative = 1e-12);
                    // Couplings only between l-neighbors.
                    if b.levels[i].l.abs_diff(b.levels[j].l) != 1 {
                        assert_eq!(h1[(i, j)], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn map_is_continuous_and_anchored_at_zero_field() {
        let m = model();
        let b = build_basis(&m, 12, 3, 1).unwrap();
        let op = StarkOperator::new(&m, b.clone()).unwrap();
        let map = compute_stark_map(&op, 0.0, 40.0, 21).unwrap();
        for (t, curve) in map.curves_mhz.iter().enumerate() {
            assert_relative_eq!(curve[0], b.energies_mhz[t], max_relative = 1e-12);
            // Continuity: change per step bounded by 3x the previous step
            // plus a floor for states that barely move.
            for s in 2..curve.len() {
                let prev_step = (curve[s - 1] - curve[s - 2]).abs();
                let step = (curve[s] - curve[s - 1]).abs();
                assert!(
                    step < 3.0 * prev_step + 50.0,
                    "state {t} sample {s}: step {step} after {prev_step}"
                );
            }
        }
    }

    #[test]
    fn s_state_polarizability_small_basis() {
        // Regression freeze of the honest spread-3 value; the converged
        // full-basis number (8.791, compared in the acceptance suite with
        // the chain's adopted 8.06) sits within 0.03% of this.
        let m = model();
        let b = build_basis(&m, 43, 3, 1).unwrap();
        let op = StarkOperator::new(&m, b).unwrap();
        let s43 = RydbergLevel::s(43);
        let pol = polarizability(&op, &s43, 0.0, 0.5, 11).unwrap();
        assert_relative_eq!(pol.alpha_half_mhz_cm2_v2, 8.7931, max_relative = 5e-3);
        // Linear term negligible against the quadratic shift at range end.
        let quad = pol.alpha_half_mhz_cm2_v2 * 0.5 * 0.5;
        assert!((pol.linear_mhz_cm_v * 0.5).abs() < 0.02 * quad);
        // 43S shifts downward: curve concave.
        let map = compute_stark_map(&op, 0.0, 0.5, 6).unwrap();
        let idx = op.basis.index_of(&s43).unwrap();
        let c = &map.curves_mhz[idx];
        assert!(c[5] < c[0]);
    }

    #[test]
    fn polarizability_scales_like_seventh_power() {
        // alpha grows roughly as n*^7; the ln-fit exponent between 30S and
        // 43S lands at 6.45 with these defects.
        let m = model();
        let a30 = {
            let b = build_basis(&m, 30, 3, 1).unwrap();
            let op = StarkOperator::new(&m, b).unwrap();
            polarizability(&op, &RydbergLevel::s(30), 0.0, 2.0, 11)
                .unwrap()
                .alpha_half_mhz_cm2_v2
        };
        let a43 = {
            let b = build_basis(&m, 43, 3, 1).unwrap();
            let op = StarkOperator::new(&m, b).unwrap();
            polarizability(&op, &RydbergLevel::s(43), 0.0, 0.5, 11)
                .unwrap()
                .alpha_half_mhz_cm2_v2
        };
        let ns30 = m.effective_n(&RydbergLevel::s(30)).unwrap();
        let ns43 = m.effective_n(&RydbergLevel::s(43)).unwrap();
        let exponent = (a43 / a30).ln() / (ns43 / ns30).ln();
        assert!(
            (exponent - 7.0).abs() < 0.2 * 7.0,
            "scaling exponent {exponent}"
        );
    }

    #[test]
    fn stark_shift_values() {
        assert_eq!(stark_shift_mhz(8.06, 0.0), 0.0);
        assert_relative_eq!(stark_shift_mhz(8.06, 0.27), -0.5876, max_relative = 1e-3);
        assert_relative_eq!(stark_shift_mhz(8.06, 1.0), -8.06, max_relative = 1e-12);
    }

    #[test]
    fn csv_export_shape() {
        let m = model();
        let b = build_basis(&m, 10, 3, 1).unwrap();
        let op = StarkOperator::new(&m, b.clone()).unwrap();
        let map = compute_stark_map(&op, 0.0, 10.0, 3).unwrap();
        let names: Vec<String> = b.levels.iter().map(|lv| format!("{lv}")).collect();
        let csv = map.to_csv(&names, b.energies_mhz[0]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 3);
        assert!(lines[0].starts_with("field_v_cm,"));
        assert_eq!(lines[0].split(',').count(), 1 + b.len());
        // First data row: reference state at exactly zero shift.
        let first: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(first[0].parse::<f64>().unwrap(), 0.0);
        assert_eq!(first[1].parse::<f64>().unwrap(), 0.0);
    }
}
