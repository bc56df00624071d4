//! Fixed-step classic Runge-Kutta integration.

use crate::error::{Error, Result};

/// One classic RK4 step of `ds/dt = f(s)`.
pub fn rk4_step<const D: usize>(f: impl Fn(&[f64; D]) -> [f64; D], s: &[f64; D], dt: f64) -> Result<[f64; D]> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    let out = rk4_unchecked(&f, s, dt);
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::non_finite(format!("rk4 state component {i}")));
    }
    Ok(out)
}

#[inline]
pub(crate) fn rk4_unchecked<const D: usize>(f: &impl Fn(&[f64; D]) -> [f64; D], s: &[f64; D], dt: f64) -> [f64; D] {
    let k1 = f(s);
    let k2 = f(&axpy(s, 0.5 * dt, &k1));
    let k3 = f(&axpy(s, 0.5 * dt, &k2));
    let k4 = f(&axpy(s, dt, &k3));
    let mut out = *s;
    for i in 0..D {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

#[inline]
fn axpy<const D: usize>(s: &[f64; D], a: f64, k: &[f64; D]) -> [f64; D] {
    let mut o = *s;
    for i in 0..D {
        o[i] += a * k[i];
    }
    o
}

/// Vector-Jacobian product of one RK4 step of `f(s, u)` with `u` held fixed.
///
/// `jvp_t(s, u, lam)` must return `(lam^T df/ds, lam^T df/du)`. Given
/// `lam = dL/ds_next`, returns `(dL/ds, dL/du)`.
pub fn rk4_step_vjp<const D: usize, const U: usize>(
    f: impl Fn(&[f64; D], &[f64; U]) -> [f64; D],
    vjp: impl Fn(&[f64; D], &[f64; U], &[f64; D]) -> ([f64; D], [f64; U]),
    s: &[f64; D],
    u: &[f64; U],
    dt: f64,
    lam: &[f64; D],
) -> ([f64; D], [f64; U]) {
    let s1 = *s;
    let k1 = f(&s1, u);
    let s2 = axpy(s, 0.5 * dt, &k1);
    let k2 = f(&s2, u);
    let s3 = axpy(s, 0.5 * dt, &k2);
    let k3 = f(&s3, u);
    let s4 = axpy(s, dt, &k3);

    // Adjoints of k1..k4 from s_next = s + dt/6 (k1 + 2 k2 + 2 k3 + k4).
    let mut gs = *lam;
    let mut gu = [0.0; U];
    let scale = |c: f64| {
        let mut g = [0.0; D];
        for i in 0..D {
            g[i] = lam[i] * dt / 6.0 * c;
        }
        g
    };
    let gk4 = scale(1.0);
    let mut gk3 = scale(2.0);
    let mut gk2 = scale(2.0);
    let mut gk1 = scale(1.0);

    // k4 = f(s4, u), s4 = s + dt k3
    let (a, b) = vjp(&s4, u, &gk4);
    add(&mut gs, &a, 1.0);
    add(&mut gu, &b, 1.0);
    add(&mut gk3, &a, dt);
    // k3 = f(s3, u), s3 = s + dt/2 k2
    let (a, b) = vjp(&s3, u, &gk3);
    add(&mut gs, &a, 1.0);
    add(&mut gu, &b, 1.0);
    add(&mut gk2, &a, 0.5 * dt);
    // k2 = f(s2, u), s2 = s + dt/2 k1
    let (a, b) = vjp(&s2, u, &gk2);
    add(&mut gs, &a, 1.0);
    add(&mut gu, &b, 1.0);
    add(&mut gk1, &a, 0.5 * dt);
    let (a, b) = vjp(&s1, u, &gk1);
    add(&mut gs, &a, 1.0);
    add(&mut gu, &b, 1.0);
    (gs, gu)
}

#[inline]
fn add<const N: usize>(dst: &mut [f64; N], src: &[f64; N], c: f64) {
    for i in 0..N {
        dst[i] += c * src[i];
    }
}
