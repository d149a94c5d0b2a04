//! Radial Coulomb wavefunctions on a square-root mesh.
//!
//! Bound-state radial functions u(r) = r R(r) for a potential -1/r (atomic
//! units) are integrated with the Numerov method. The integration runs in
//! the variable x = sqrt(r) with phi(x) = u(x^2) / sqrt(x), which transforms
//! the radial equation into phi'' = G(x) phi with
//!
//!   G(x) = (2l + 1/2)(2l + 3/2) / x^2 + 8 x^2 (V(x^2) - E).
//!
//! For V = -1/r the local wavenumber k^2 = -G = 8 + 8 E x^2 - nu / x^2 is
//! nearly uniform across the classically allowed region, so a uniform mesh
//! in x resolves every lobe of a high-n state equally well with a few
//! thousand points where a uniform r-mesh would need millions.
//!
//! Integration proceeds inward from the outer boundary, which follows the
//! solution that decays toward large r. In the inner forbidden region the
//! physical solution decays while the contaminating one grows, so the march
//! stops once the amplitude has dropped far below the global maximum and
//! starts to rise again; the remaining inner points are left at zero.

use crate::error::{Error, Result};

/// Default mesh resolution: points per local de Broglie wavelength.
pub const DEFAULT_POINTS_PER_WAVELENGTH: f64 = 64.0;

/// Uniform mesh in x = sqrt(r).
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    /// Innermost mesh point, x0 = sqrt(r_cutoff).
    pub x0: f64,
    /// Mesh step in x.
    pub h: f64,
    /// Number of mesh points; always odd so Simpson weights apply exactly.
    pub len: usize,
}

/// Centrifugal strength of the transformed equation.
fn nu(l: u32) -> f64 {
    let l = l as f64;
    (2.0 * l + 0.5) * (2.0 * l + 1.5)
}

/// G(x) for V = -1/r: G = nu/x^2 - 8 - 8 E x^2.
fn g_coulomb(x: f64, energy_au: f64, nu: f64) -> f64 {
    nu / (x * x) - 8.0 - 8.0 * energy_au * x * x
}

/// Largest k^2 = -G over [x0, xmax]; the interior stationary point
/// x* = (nu / 8|E|)^(1/4) is the only candidate besides the endpoints.
fn k2_max(energy_au: f64, nu: f64, x0: f64, xmax: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    let mut consider = |x: f64| {
        if x >= x0 && x <= xmax {
            best = best.max(-g_coulomb(x, energy_au, nu));
        }
    };
    consider(x0);
    consider(xmax);
    if nu > 0.0 && energy_au < 0.0 {
        consider((nu / (8.0 * -energy_au)).powf(0.25));
    }
    best
}

/// Outer mesh radius for a bound level: generous margin past the outer
/// classical turning point near 2 n*^2 so the decaying tail is resolved.
pub fn outer_radius_au(n_star: f64) -> f64 {
    2.5 * n_star * n_star + 10.0 * n_star + 10.0
}

impl GridSpec {
    /// Mesh point k.
    pub fn x(&self, k: usize) -> f64 {
        self.x0 + self.h * k as f64
    }

    /// Outermost mesh point.
    pub fn x_max(&self) -> f64 {
        self.x(self.len - 1)
    }

    /// Radius of mesh point k.
    pub fn r(&self, k: usize) -> f64 {
        let x = self.x(k);
        x * x
    }

    /// Mesh for a single bound level (energy in atomic units, negative).
    pub fn for_level(energy_au: f64, l: u32, r_cutoff: f64, ppw: f64) -> Result<Self> {
        Self::shared(&[(energy_au, l)], r_cutoff, ppw)
    }

    /// Common mesh for a set of bound levels: extends to the largest outer
    /// radius and steps finely enough for the fastest-oscillating member, so
    /// overlap integrals of any pair are taken on identical points.
    pub fn shared(levels: &[(f64, u32)], r_cutoff: f64, ppw: f64) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::domain("mesh construction needs at least one level"));
        }
        if !(r_cutoff > 0.0) || !(ppw >= 4.0) {
            return Err(Error::domain(format!(
                "invalid mesh parameters: r_cutoff {r_cutoff}, points per wavelength {ppw}"
            )));
        }
        let x0 = r_cutoff.sqrt();
        let mut xmax = 0.0f64;
        for &(e, _) in levels {
            if !(e < 0.0) || !e.is_finite() {
                return Err(Error::domain(format!(
                    "bound-state mesh requires negative energy, got {e} au"
                )));
            }
            let n_star = (-0.5 / e).sqrt();
            xmax = xmax.max(outer_radius_au(n_star).sqrt());
        }
        if xmax <= x0 {
            return Err(Error::domain(
                "outer mesh radius does not exceed the inner cutoff",
            ));
        }
        let mut k2 = 0.0f64;
        for &(e, l) in levels {
            k2 = k2.max(k2_max(e, nu(l), x0, xmax));
        }
        if !(k2 > 0.0) {
            return Err(Error::numerical(
                "mesh construction",
                "no classically allowed region on the mesh",
            ));
        }
        let h_target = 2.0 * std::f64::consts::PI / (k2.sqrt() * ppw);
        let mut len = ((xmax - x0) / h_target).ceil() as usize + 1;
        if len < 5 {
            len = 5;
        }
        if len % 2 == 0 {
            len += 1;
        }
        let h = (xmax - x0) / (len - 1) as f64;
        Ok(GridSpec { x0, h, len })
    }
}

/// A normalized bound radial function sampled on its mesh.
///
/// `phi` holds the transformed amplitude; the physical radial function is
/// u(r_k) = phi_k * sqrt(x_k) with int u^2 dr = 1.
#[derive(Debug, Clone)]
pub struct RadialWavefunction {
    pub grid: GridSpec,
    pub l: u32,
    pub energy_au: f64,
    pub phi: Vec<f64>,
    /// Interior sign changes of the radial function.
    pub nodes: usize,
}

/// Integrate phi'' = G phi inward on `grid` for the Coulomb potential and
/// normalize to int u^2 dr = 1.
pub fn solve(grid: &GridSpec, energy_au: f64, l: u32) -> Result<RadialWavefunction> {
    let n = grid.len;
    let h = grid.h;
    let h2 = h * h;
    let nu = nu(l);
    let g: Vec<f64> = (0..n).map(|k| g_coulomb(grid.x(k), energy_au, nu)).collect();

    // Numerov in compact form: with t_k = (1 - h^2 g_k / 12) phi_k the
    // recurrence is t_{k-1} = 2 t_k - t_{k+1} + h^2 g_k phi_k.
    let mut phi = vec![0.0f64; n];
    phi[n - 1] = 0.0;
    phi[n - 2] = 1e-30;
    let f = |k: usize| 1.0 - h2 * g[k] / 12.0;
    let mut t_next = f(n - 1) * phi[n - 1];
    let mut t_here = f(n - 2) * phi[n - 2];
    let mut maxabs = phi[n - 2].abs();
    let mut entered_allowed = false;
    for k in (1..n - 1).rev() {
        if g[k] < 0.0 {
            entered_allowed = true;
        }
        let mut t_prev = 2.0 * t_here - t_next + h2 * g[k] * phi[k];
        let denom = f(k - 1);
        if denom == 0.0 {
            return Err(Error::numerical(
                "radial integration",
                format!("Numerov factor vanished at mesh index {}", k - 1),
            ));
        }
        phi[k - 1] = t_prev / denom;
        // Below the inner turning point the physical solution decays
        // monotonically toward small r; once the march has passed through
        // the allowed band, renewed inward growth there means the
        // contaminating solution has taken over. Cut it off; the remaining
        // inner points stay zero.
        if entered_allowed
            && g[k - 1] > 0.0
            && phi[k - 1].abs() > phi[k].abs()
            && phi[k].abs() < 1e-3 * maxabs
        {
            phi[k - 1] = 0.0;
            break;
        }
        maxabs = maxabs.max(phi[k - 1].abs());
        // The outer forbidden region spans thousands of e-foldings for a
        // low-lying state on a mesh sized for a high one; rescale while the
        // amplitudes can still be squared without overflow.
        if phi[k - 1].abs() > 1e100 {
            let s = 1e-100;
            for v in phi[k - 1..].iter_mut() {
                *v *= s;
            }
            t_here *= s;
            t_prev *= s;
            maxabs *= s;
        }
        t_next = t_here;
        t_here = t_prev;
    }

    // Normalize: int u^2 dr = 2 int phi^2 x^2 dx.
    let norm2 = 2.0 * simpson(grid, |k| {
        let x = grid.x(k);
        phi[k] * phi[k] * x * x
    });
    if !(norm2 > 0.0) || !norm2.is_finite() {
        return Err(Error::numerical(
            "radial normalization",
            format!("norm integral {norm2}"),
        ));
    }
    let s = 1.0 / norm2.sqrt();
    for v in phi.iter_mut() {
        *v *= s;
    }

    // All genuine nodes lie in the classically allowed band; restricting the
    // count to it keeps forbidden-region residue from registering as nodes.
    let peak = phi.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let floor = 1e-10 * peak;
    let k_lo = g.iter().position(|&v| v < 0.0);
    let k_hi = g.iter().rposition(|&v| v < 0.0);
    let mut nodes = 0;
    if let (Some(k_lo), Some(k_hi)) = (k_lo, k_hi) {
        let mut last: Option<f64> = None;
        for &v in &phi[k_lo..=k_hi] {
            if v.abs() > floor {
                if let Some(p) = last {
                    if p * v < 0.0 {
                        nodes += 1;
                    }
                }
                last = Some(v);
            }
        }
    }

    Ok(RadialWavefunction {
        grid: grid.clone(),
        l,
        energy_au,
        phi,
        nodes,
    })
}

impl RadialWavefunction {
    /// Physical radial amplitude u(r_k) = r R(r_k).
    pub fn u(&self, k: usize) -> f64 {
        self.phi[k] * self.grid.x(k).sqrt()
    }

    /// Expectation value of r^p in this state.
    pub fn r_expectation(&self, p: i32) -> f64 {
        matrix_element_unchecked(self, self, p)
    }

    /// Radius of the largest lobe of |u|; for a Rydberg state this is the
    /// outermost antinode, just inside the outer classical turning point.
    pub fn outermost_antinode_r(&self) -> f64 {
        let mut best = 0;
        let mut best_u = 0.0;
        for k in 0..self.grid.len {
            let u = self.u(k).abs();
            if u > best_u {
                best_u = u;
                best = k;
            }
        }
        self.grid.r(best)
    }

    /// Deviation of int u^2 dr from 1, evaluated by an independent route:
    /// trapezoid rule in the radial variable itself.
    pub fn norm_residual(&self) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.grid.len - 1 {
            let ua = self.u(k);
            let ub = self.u(k + 1);
            let dr = self.grid.r(k + 1) - self.grid.r(k);
            acc += 0.5 * (ua * ua + ub * ub) * dr;
        }
        acc - 1.0
    }
}

/// Simpson quadrature of f over the mesh in x (len is odd by construction).
fn simpson(grid: &GridSpec, f: impl Fn(usize) -> f64) -> f64 {
    let n = grid.len;
    let mut acc = f(0) + f(n - 1);
    for k in 1..n - 1 {
        acc += f(k) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * grid.h / 3.0
}

fn matrix_element_unchecked(a: &RadialWavefunction, b: &RadialWavefunction, p: i32) -> f64 {
    2.0 * simpson(&a.grid, |k| {
        let x = a.grid.x(k);
        a.phi[k] * b.phi[k] * x.powi(2 * p + 2)
    })
}

/// Radial integral int u_a r^p u_b dr for two states on one mesh.
///
/// Both functions must have been produced on the same `GridSpec` (use
/// [`GridSpec::shared`]); mismatched meshes are rejected rather than
/// silently interpolated.
pub fn matrix_element_r_pow(
    a: &RadialWavefunction,
    b: &RadialWavefunction,
    p: i32,
) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::numerical(
            "radial matrix element",
            "states were solved on different meshes; rebuild on a shared mesh",
        ));
    }
    Ok(matrix_element_unchecked(a, b, p))
}
