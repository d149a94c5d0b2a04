//! Least-squares utilities shared across the physics modules: an SVD-backed
//! linear solver with rank control, polynomial fitting, and (for the
//! nonlinear fits in the spectroscopy and imaging modules) a
//! Levenberg-Marquardt minimizer with a numeric Jacobian.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solution of a linear least-squares problem.
#[derive(Debug, Clone)]
pub struct LstsqSolution {
    /// Minimum-norm coefficient vector.
    pub coefficients: DVector<f64>,
    /// Euclidean norm of the residual A x - b.
    pub residual_l2: f64,
    /// Number of singular values kept.
    pub rank: usize,
}

/// Minimum-norm least squares via SVD with relative singular-value cutoff.
///
/// Columns are scaled to unit norm before decomposition so the cutoff acts
/// on geometry rather than on the units of individual columns.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>, rel_cutoff: f64) -> Result<LstsqSolution> {
    if a.nrows() != b.len() {
        return Err(Error::domain(format!(
            "lstsq shape mismatch: {} rows vs {} targets",
            a.nrows(),
            b.len()
        )));
    }
    if a.ncols() == 0 || a.nrows() == 0 {
        return Err(Error::domain("lstsq needs a nonempty matrix"));
    }
    let mut scale = DVector::<f64>::zeros(a.ncols());
    for j in 0..a.ncols() {
        let s = a.column(j).norm();
        scale[j] = if s > 0.0 { s } else { 1.0 };
    }
    let mut scaled = a.clone();
    for j in 0..a.ncols() {
        let s = scale[j];
        for i in 0..a.nrows() {
            scaled[(i, j)] /= s;
        }
    }
    let svd = scaled.svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) {
        return Err(Error::numerical("lstsq", "matrix is identically zero"));
    }
    let cutoff = smax * rel_cutoff;
    let u = svd.u.as_ref().expect("svd with u");
    let vt = svd.v_t.as_ref().expect("svd with v_t");
    let mut y = DVector::<f64>::zeros(vt.nrows());
    let mut rank = 0;
    for k in 0..svd.singular_values.len() {
        let s = svd.singular_values[k];
        if s > cutoff {
            let proj = u.column(k).dot(b);
            y[k] = proj / s;
            rank += 1;
        }
    }
    let mut x = vt.transpose() * y;
    for j in 0..x.len() {
        x[j] /= scale[j];
    }
    let residual = (a * &x - b).norm();
    Ok(LstsqSolution {
        coefficients: x,
        residual_l2: residual,
        rank,
    })
}

/// Least-squares polynomial fit; returns coefficients in ascending powers.
pub fn polyfit(xs: &[f64], ys: &[f64], degree: usize) -> Result<Vec<f64>> {
    if xs.len() != ys.len() || xs.len() <= degree {
        return Err(Error::domain(format!(
            "polyfit of degree {degree} needs more than {degree} points, got {}",
            xs.len()
        )));
    }
    // Scale x to ~[-1, 1] for conditioning, then unscale the coefficients.
    let xmax = xs.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-300);
    let a = DMatrix::from_fn(xs.len(), degree + 1, |i, j| (xs[i] / xmax).powi(j as i32));
    let b = DVector::from_column_slice(ys);
    let sol = lstsq(&a, &b, 1e-13)?;
    Ok((0..=degree)
        .map(|j| sol.coefficients[j] / xmax.powi(j as i32))
        .collect())
}

/// Outcome of a Levenberg-Marquardt minimization.
#[derive(Debug, Clone)]
pub struct LmFit {
    pub parameters: Vec<f64>,
    /// Sum of squared residuals at the solution.
    pub chi2: f64,
    pub iterations: usize,
}

/// Levenberg-Marquardt least squares with a central-difference Jacobian.
///
/// `residuals(p, out)` fills `out` with the residual vector at parameters
/// `p`. Iteration stops when the relative chi-square improvement falls
/// below `tol` on a successful step; failure to improve within `max_iter`
/// iterations is a fit error.
pub fn levenberg_marquardt(
    residuals: &dyn Fn(&[f64], &mut [f64]),
    initial: &[f64],
    n_residuals: usize,
    tol: f64,
    max_iter: usize,
) -> Result<LmFit> {
    let n_par = initial.len();
    if n_par == 0 || n_residuals < n_par {
        return Err(Error::domain(format!(
            "{n_residuals} residuals cannot constrain {n_par} parameters"
        )));
    }
    let mut p = initial.to_vec();
    let mut r = vec![0.0; n_residuals];
    residuals(&p, &mut r);
    let mut chi2: f64 = r.iter().map(|v| v * v).sum();
    if !chi2.is_finite() {
        return Err(Error::fit("levenberg_marquardt", "initial residuals not finite", chi2));
    }
    let mut lambda = 1e-3;
    let mut jac = DMatrix::<f64>::zeros(n_residuals, n_par);
    let mut r_plus = vec![0.0; n_residuals];
    let mut r_minus = vec![0.0; n_residuals];

    for iter in 0..max_iter {
        // Central-difference Jacobian, step scaled to parameter magnitude.
        for j in 0..n_par {
            let step = 1e-6 * p[j].abs().max(1e-9);
            let mut pj = p.clone();
            pj[j] = p[j] + step;
            residuals(&pj, &mut r_plus);
            pj[j] = p[j] - step;
            residuals(&pj, &mut r_minus);
            for i in 0..n_residuals {
                jac[(i, j)] = (r_plus[i] - r_minus[i]) / (2.0 * step);
            }
        }
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let rhs = &jt * DVector::from_column_slice(&r);

        let mut stepped = false;
        for _ in 0..25 {
            let mut damped = jtj.clone();
            for d in 0..n_par {
                damped[(d, d)] += lambda * jtj[(d, d)].max(1e-30);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = chol.solve(&rhs);
            let candidate: Vec<f64> = (0..n_par).map(|j| p[j] - delta[j]).collect();
            residuals(&candidate, &mut r_plus);
            let chi2_new: f64 = r_plus.iter().map(|v| v * v).sum();
            if chi2_new.is_finite() && chi2_new < chi2 {
                let improvement = (chi2 - chi2_new) / chi2.max(1e-300);
                p = candidate;
                r.copy_from_slice(&r_plus);
                chi2 = chi2_new;
                lambda = (lambda * 0.3).max(1e-12);
                stepped = true;
                if improvement < tol {
                    return Ok(LmFit {
                        parameters: p,
                        chi2,
                        iterations: iter + 1,
                    });
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
        if !stepped {
            // No direction improved chi-square: converged if the surface is
            // already flat, otherwise report failure.
            if chi2.is_finite() {
                return Ok(LmFit {
                    parameters: p,
                    chi2,
                    iterations: iter + 1,
                });
            }
            return Err(Error::fit(
                "levenberg_marquardt",
                "no improving step found",
                chi2,
            ));
        }
    }
    Err(Error::fit(
        "levenberg_marquardt",
        format!("no convergence in {max_iter} iterations"),
        chi2,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polyfit_recovers_exact_cubic() {
        let xs: Vec<f64> = (0..20).map(|i| -1.0 + 0.1 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| 2.0 - 3.0 * x + 0.5 * x * x - 4.0 * x * x * x).collect();
        let c = polyfit(&xs, &ys, 3).unwrap();
        for (got, want) in c.iter().zip([2.0, -3.0, 0.5, -4.0]) {
            assert_relative_eq!(*got, want, max_relative = 1e-9, epsilon = 1e-9);
        }
    }

    #[test]
    fn polyfit_rejects_underdetermined() {
        assert!(polyfit(&[1.0, 2.0], &[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn lstsq_minimum_norm_on_rank_deficient() {
        // Two identical columns: solution splits the weight evenly.
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let b = DVector::from_column_slice(&[2.0, 4.0, 6.0]);
        let sol = lstsq(&a, &b, 1e-12).unwrap();
        assert_eq!(sol.rank, 1);
        assert_relative_eq!(sol.coefficients[0], 1.0, max_relative = 1e-10);
        assert_relative_eq!(sol.coefficients[1], 1.0, max_relative = 1e-10);
        assert!(sol.residual_l2 < 1e-12);
    }

    #[test]
    fn lstsq_handles_mixed_column_scales() {
        // Columns differing by 12 orders of magnitude still solve cleanly.
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 1e-12, 1.0, 2e-12, 1.0, 3e-12]);
        let b = DVector::from_column_slice(&[1.0 + 1e-12, 1.0 + 2e-12, 1.0 + 3e-12]);
        let sol = lstsq(&a, &b, 1e-13).unwrap();
        assert_eq!(sol.rank, 2);
        assert_relative_eq!(sol.coefficients[0], 1.0, max_relative = 1e-6);
        assert_relative_eq!(sol.coefficients[1], 1.0, max_relative = 1e-3);
    }

    #[test]
    fn lm_fits_gaussian() {
        let xs: Vec<f64> = (0..60).map(|i| i as f64 * 0.1 - 3.0).collect();
        let truth = [2.5f64, 0.4, 0.8];
        let data: Vec<f64> = xs
            .iter()
            .map(|&x| truth[0] * (-(x - truth[1]) * (x - truth[1]) / (2.0 * truth[2] * truth[2])).exp())
            .collect();
        let model = |p: &[f64], out: &mut [f64]| {
            for (i, &x) in xs.iter().enumerate() {
                let g = p[0] * (-(x - p[1]) * (x - p[1]) / (2.0 * p[2] * p[2])).exp();
                out[i] = g - data[i];
            }
        };
        let fit = levenberg_marquardt(&model, &[1.0, 0.0, 1.5], xs.len(), 1e-12, 200).unwrap();
        assert_relative_eq!(fit.parameters[0], truth[0], max_relative = 1e-6);
        assert_relative_eq!(fit.parameters[1], truth[1], epsilon = 1e-6);
        assert_relative_eq!(fit.parameters[2].abs(), truth[2], max_relative = 1e-6);
        assert!(fit.chi2 < 1e-12);
    }

    #[test]
    fn lm_reports_nonconvergence() {
        // A residual that cannot improve and is driven by iteration count.
        let f = |_p: &[f64], out: &mut [f64]| {
            out.fill(f64::NAN);
        };
        assert!(levenberg_marquardt(&f, &[1.0], 3, 1e-12, 10).is_err());
    }
}
