//! Angular-momentum algebra.
//!
//! Wigner 3-j and 6-j symbols are evaluated with the Racah factorial sums in
//! log space, which stays accurate for the j values reached here (j up to a
//! few tens). Angular momenta and projections are passed as doubled integers
//! (`j2 = 2j`, `m2 = 2m`) so half-integer arguments are exact.

use std::sync::OnceLock;

const LN_FACT_LEN: usize = 1024;

fn ln_fact(n: i64) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = vec![0.0; LN_FACT_LEN];
        for k in 2..LN_FACT_LEN {
            t[k] = t[k - 1] + (k as f64).ln();
        }
        t
    });
    debug_assert!((0..LN_FACT_LEN as i64).contains(&n), "ln_fact({n}) out of range");
    table[n as usize]
}

fn triangle_ok(a2: i64, b2: i64, c2: i64) -> bool {
    c2 >= (a2 - b2).abs() && c2 <= a2 + b2 && (a2 + b2 + c2) % 2 == 0
}

/// ln of the triangle coefficient Delta(abc), doubled-integer arguments.
fn ln_triangle(a2: i64, b2: i64, c2: i64) -> f64 {
    let f = |x2: i64| ln_fact(x2 / 2);
    f(a2 + b2 - c2) + f(a2 - b2 + c2) + f(-a2 + b2 + c2) - f(a2 + b2 + c2 + 2)
}

/// Wigner 3-j symbol with doubled-integer arguments.
///
/// Returns an exact 0.0 whenever a selection rule (triangle, projection sum,
/// |m| <= j, integer consistency) is violated.
pub fn wigner_3j(j1_2: i64, j2_2: i64, j3_2: i64, m1_2: i64, m2_2: i64, m3_2: i64) -> f64 {
    if m1_2 + m2_2 + m3_2 != 0
        || !triangle_ok(j1_2, j2_2, j3_2)
        || m1_2.abs() > j1_2
        || m2_2.abs() > j2_2
        || m3_2.abs() > j3_2
        || (j1_2 + m1_2) % 2 != 0
        || (j2_2 + m2_2) % 2 != 0
        || (j3_2 + m3_2) % 2 != 0
    {
        return 0.0;
    }
    // All of these are integers (in doubled units they are even).
    let t_min = 0_i64
        .max((j2_2 - j3_2 - m1_2) / 2)
        .max((j1_2 - j3_2 + m2_2) / 2);
    let t_max = ((j1_2 + j2_2 - j3_2) / 2)
        .min((j1_2 - m1_2) / 2)
        .min((j2_2 + m2_2) / 2);
    if t_min > t_max {
        return 0.0;
    }

    let ln_pre = 0.5
        * (ln_triangle(j1_2, j2_2, j3_2)
            + ln_fact((j1_2 + m1_2) / 2)
            + ln_fact((j1_2 - m1_2) / 2)
            + ln_fact((j2_2 + m2_2) / 2)
            + ln_fact((j2_2 - m2_2) / 2)
            + ln_fact((j3_2 + m3_2) / 2)
            + ln_fact((j3_2 - m3_2) / 2));

    let ln_term = |t: i64| -> f64 {
        -(ln_fact(t)
            + ln_fact((j1_2 + j2_2 - j3_2) / 2 - t)
            + ln_fact((j1_2 - m1_2) / 2 - t)
            + ln_fact((j2_2 + m2_2) / 2 - t)
            + ln_fact((j3_2 - j2_2 + m1_2) / 2 + t)
            + ln_fact((j3_2 - j1_2 - m2_2) / 2 + t))
    };
    let ln_max = (t_min..=t_max).map(ln_term).fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for t in t_min..=t_max {
        let sign = if t % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * (ln_term(t) - ln_max).exp();
    }
    let phase = if ((j1_2 - j2_2 - m3_2) / 2) % 2 == 0 {
        1.0
    } else {
        -1.0
    };
    phase * (ln_pre + ln_max).exp() * sum
}

/// Wigner 6-j symbol {a b c; d e f} with doubled-integer arguments.
pub fn wigner_6j(a2: i64, b2: i64, c2: i64, d2: i64, e2: i64, f2: i64) -> f64 {
    if !triangle_ok(a2, b2, c2)
        || !triangle_ok(a2, e2, f2)
        || !triangle_ok(d2, b2, f2)
        || !triangle_ok(d2, e2, c2)
    {
        return 0.0;
    }
    let s1 = (a2 + b2 + c2) / 2;
    let s2 = (a2 + e2 + f2) / 2;
    let s3 = (d2 + b2 + f2) / 2;
    let s4 = (d2 + e2 + c2) / 2;
    let q1 = (a2 + b2 + d2 + e2) / 2;
    let q2 = (a2 + c2 + d2 + f2) / 2;
    let q3 = (b2 + c2 + e2 + f2) / 2;
    let t_min = s1.max(s2).max(s3).max(s4);
    let t_max = q1.min(q2).min(q3);
    if t_min > t_max {
        return 0.0;
    }
    let ln_pre = 0.5
        * (ln_triangle(a2, b2, c2)
            + ln_triangle(a2, e2, f2)
            + ln_triangle(d2, b2, f2)
            + ln_triangle(d2, e2, c2));
    let ln_term = |t: i64| -> f64 {
        ln_fact(t + 1)
            - ln_fact(t - s1)
            - ln_fact(t - s2)
            - ln_fact(t - s3)
            - ln_fact(t - s4)
            - ln_fact(q1 - t)
            - ln_fact(q2 - t)
            - ln_fact(q3 - t)
    };
    let ln_max = (t_min..=t_max).map(ln_term).fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for t in t_min..=t_max {
        let sign = if t % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * (ln_term(t) - ln_max).exp();
    }
    (ln_pre + ln_max).exp() * sum
}

/// Reduced matrix element <l_a || C^1 || l_b> of the rank-1 spherical tensor
/// C^1_q = sqrt(4 pi / 3) Y_1q between orbital states.
pub fn reduced_c1_orbital(la: u32, lb: u32) -> f64 {
    let la2 = 2 * la as i64;
    let lb2 = 2 * lb as i64;
    let phase = if la % 2 == 0 { 1.0 } else { -1.0 };
    phase
        * (((la2 + 1) * (lb2 + 1)) as f64).sqrt()
        * wigner_3j(la2, 2, lb2, 0, 0, 0)
}

/// Reduced matrix element <(l_a, s=1/2) j_a || C^1 || (l_b, s=1/2) j_b>
/// for a one-electron atom.
pub fn reduced_c1_fine(la: u32, ja2: u32, lb: u32, jb2: u32) -> f64 {
    let la2 = 2 * la as i64;
    let lb2 = 2 * lb as i64;
    let ja2 = ja2 as i64;
    let jb2 = jb2 as i64;
    // Phase (-1)^(l_a + s + j_b + 1), where the exponent is an integer.
    let exp2 = la2 + 1 + jb2 + 2;
    debug_assert!(exp2 % 2 == 0);
    let phase = if (exp2 / 2) % 2 == 0 { 1.0 } else { -1.0 };
    phase
        * (((ja2 + 1) * (jb2 + 1)) as f64).sqrt()
        * wigner_6j(la2, ja2, 1, jb2, lb2, 2)
        * reduced_c1_orbital(la, lb)
}

/// Full matrix element <l_a j_a m_a | C^1_q | l_b j_b m_b>.
///
/// Selection-rule violations (|dl| != 1, |dj| > 1, m_a != m_b + q) return an
/// exact 0.0 before any arithmetic.
pub fn c1_element(la: u32, ja2: u32, ma2: i32, lb: u32, jb2: u32, mb2: i32, q: i32) -> f64 {
    if la as i64 - lb as i64 != 1 && lb as i64 - la as i64 != 1 {
        return 0.0;
    }
    if (ja2 as i64 - jb2 as i64).abs() > 2 {
        return 0.0;
    }
    if ma2 != mb2 + 2 * q {
        return 0.0;
    }
    let ja2i = ja2 as i64;
    let jb2i = jb2 as i64;
    let ma2i = ma2 as i64;
    // Phase (-1)^(j_a - m_a).
    let exp2 = ja2i - ma2i;
    debug_assert!(exp2 % 2 == 0);
    let phase = if (exp2 / 2) % 2 == 0 { 1.0 } else { -1.0 };
    phase
        * wigner_3j(ja2i, 2, jb2i, -ma2i, 2 * q as i64, ma2i - 2 * q as i64)
        * reduced_c1_fine(la, ja2, lb, jb2)
}

/// Wigner small-d matrix d^1_{m', m}(theta) for spin 1.
///
/// Index order is [m'][m] over (+1, 0, -1). Used to re-express a photon
/// polarization defined about the lab z axis in a frame whose z axis is
/// tilted by `theta` (rotation about the y axis).
pub fn small_d1(theta: f64) -> [[f64; 3]; 3] {
    let (s, c) = theta.sin_cos();
    let sq2 = std::f64::consts::SQRT_2;
    let p = (1.0 + c) / 2.0;
    let m = (1.0 - c) / 2.0;
    [
        [p, -s / sq2, m],
        [s / sq2, c, -s / sq2],
        [m, s / sq2, p],
    ]
}
