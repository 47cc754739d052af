//! Fixed-step explicit integrators for small ODE systems.
//!
//! The simulators in this crate integrate 2–4 state variables over long
//! horizons, so the steppers work on fixed-size arrays and avoid allocation.

/// One classical fourth-order Runge–Kutta step of `y' = f(t, y)`.
pub fn rk4_step<const N: usize>(
    t: f64,
    y: &[f64; N],
    dt: f64,
    f: impl Fn(f64, &[f64; N]) -> [f64; N],
) -> [f64; N] {
    let k1 = f(t, y);
    let mut tmp = [0.0; N];

    for i in 0..N {
        tmp[i] = y[i] + 0.5 * dt * k1[i];
    }
    let k2 = f(t + 0.5 * dt, &tmp);

    for i in 0..N {
        tmp[i] = y[i] + 0.5 * dt * k2[i];
    }
    let k3 = f(t + 0.5 * dt, &tmp);

    for i in 0..N {
        tmp[i] = y[i] + dt * k3[i];
    }
    let k4 = f(t + dt, &tmp);

    let mut out = [0.0; N];
    for i in 0..N {
        out[i] = y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// One explicit Euler step of `y' = f(t, y)`.
pub fn euler_step<const N: usize>(
    t: f64,
    y: &[f64; N],
    dt: f64,
    f: impl Fn(f64, &[f64; N]) -> [f64; N],
) -> [f64; N] {
    let dy = f(t, y);
    let mut out = [0.0; N];
    for i in 0..N {
        out[i] = y[i] + dt * dy[i];
    }
    out
}
