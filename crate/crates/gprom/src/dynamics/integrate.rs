//! Time integrators: adaptive Dormand-Prince 5(4) with dense output, and a
//! fixed-step trapezoidal scheme with damped-Newton inner solves for stiff
//! systems.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerances and budget for the adaptive integrator.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-6,
            atol: 1e-9,
            max_steps: 100_000,
        }
    }
}

impl IntegratorOptions {
    pub fn tight() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-11,
            max_steps: 1_000_000,
        }
    }
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// Fifth-order weights coincide with the last tableau row (FSAL).
const B: [f64; 7] = A[6];
// Difference between the fifth- and embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
// Quartic dense-output coefficients.
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

pub(crate) struct Rk45Output {
    pub states: DMatrix<f64>,
    pub n_accepted: usize,
    pub n_rejected: usize,
}

fn error_norm(err: &DVector<f64>, y0: &DVector<f64>, y1: &DVector<f64>, opts: &IntegratorOptions) -> f64 {
    let n = err.len();
    let mut acc = 0.0;
    for i in 0..n {
        let sc = opts.atol + opts.rtol * y0[i].abs().max(y1[i].abs());
        let e = err[i] / sc;
        acc += e * e;
    }
    (acc / n as f64).sqrt()
}

/// Conservative automatic initial step: a fraction of the distance to the
/// first output point, shrunk when the initial slope is steep.
fn initial_step(f0: &DVector<f64>, y0: &DVector<f64>, span: f64, opts: &IntegratorOptions) -> f64 {
    let d0 = y0.amax().max(opts.atol);
    let d1 = f0.amax();
    let h = if d1 > 0.0 {
        (0.01 * d0 / d1).min(span / 10.0)
    } else {
        span / 100.0
    };
    h.max(span * 1e-10)
}

/// Core adaptive loop. Evaluates the dense quartic interpolant at every
/// requested output time inside each accepted step.
pub(crate) fn rk45_core<F>(
    rhs: F,
    q0: &DVector<f64>,
    t_span: (f64, f64),
    output_times: &[f64],
    opts: &IntegratorOptions,
) -> Result<Rk45Output>
where
    F: Fn(f64, &DVector<f64>, &mut DVector<f64>),
{
    let (t0, tf) = t_span;
    if !(tf > t0) {
        return Err(Error::InvalidConfig("t_span must be increasing".into()));
    }
    if output_times.is_empty() {
        return Err(Error::EmptyTimeVector);
    }
    if output_times.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidConfig("output times must be ascending".into()));
    }
    if output_times[0] < t0 - 1e-12 || output_times[output_times.len() - 1] > tf + 1e-12 {
        return Err(Error::InvalidConfig(
            "output times must lie within t_span".into(),
        ));
    }

    let n = q0.len();
    let span = tf - t0;
    let mut states = DMatrix::zeros(n, output_times.len());
    let mut out_idx = 0;

    let mut t = t0;
    let mut y = q0.clone();
    let mut k: Vec<DVector<f64>> = (0..7).map(|_| DVector::zeros(n)).collect();
    let mut f0 = DVector::zeros(n);
    rhs(t, &y, &mut f0);
    k[0] = f0.clone();
    let mut h = initial_step(&f0, &y, span, opts);

    // Emit any output points that coincide with t0.
    while out_idx < output_times.len() && output_times[out_idx] <= t0 + 1e-14 * span.abs() {
        states.column_mut(out_idx).copy_from(&y);
        out_idx += 1;
    }

    let mut n_accepted = 0;
    let mut n_rejected = 0;
    let mut just_rejected = false;
    let h_min = span * 1e-14;

    while out_idx < output_times.len() {
        if n_accepted + n_rejected >= opts.max_steps {
            return Err(Error::MaxStepsExceeded { t });
        }
        if h < h_min {
            return Err(Error::StepSizeUnderflow { t });
        }
        if t + h > tf {
            h = tf - t;
        }

        // Stages 2..7; stage 7 is the FSAL evaluation at the new point.
        let mut ynew = DVector::zeros(n);
        for s in 1..7 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate().take(s) {
                if A[s][j] != 0.0 {
                    ys.axpy(h * A[s][j], kj, 1.0);
                }
            }
            if s == 6 {
                ynew = ys.clone();
            }
            let (ks, rest) = k.split_at_mut(s);
            let _ = ks;
            rhs(t + C[s] * h, &ys, &mut rest[0]);
        }

        let mut err = DVector::zeros(n);
        for (j, kj) in k.iter().enumerate() {
            if E[j] != 0.0 {
                err.axpy(h * E[j], kj, 1.0);
            }
        }
        let enorm = error_norm(&err, &y, &ynew, opts);

        if !enorm.is_finite() {
            n_rejected += 1;
            just_rejected = true;
            h *= 0.25;
            continue;
        }

        if enorm <= 1.0 {
            // Dense output over [t, t+h].
            let t_new = t + h;
            while out_idx < output_times.len() && output_times[out_idx] <= t_new + 1e-14 * span {
                let theta = ((output_times[out_idx] - t) / h).clamp(0.0, 1.0);
                let ydiff = &ynew - &y;
                let bspl = h * &k[0] - &ydiff;
                let mut r5 = DVector::zeros(n);
                for (j, kj) in k.iter().enumerate() {
                    if D[j] != 0.0 {
                        r5.axpy(h * D[j], kj, 1.0);
                    }
                }
                let r4 = &ydiff - h * &k[6] - &bspl;
                let interp = &y
                    + theta * (&ydiff + (1.0 - theta) * (&bspl + theta * (&r4 + (1.0 - theta) * &r5)));
                states.column_mut(out_idx).copy_from(&interp);
                out_idx += 1;
            }

            let fsal = k[6].clone();
            k[0] = fsal;
            y = ynew;
            t = t_new;
            n_accepted += 1;

            let facmax = if just_rejected { 1.0 } else { 10.0 };
            just_rejected = false;
            let fac = if enorm == 0.0 {
                facmax
            } else {
                (0.9 * enorm.powf(-0.2)).clamp(0.2, facmax)
            };
            h *= fac;

            if t >= tf - 1e-14 * span {
                break;
            }
        } else {
            n_rejected += 1;
            just_rejected = true;
            h *= (0.9 * enorm.powf(-0.2)).clamp(0.2, 1.0);
        }
    }

    if out_idx < output_times.len() {
        return Err(Error::StepSizeUnderflow { t });
    }

    Ok(Rk45Output {
        states,
        n_accepted,
        n_rejected,
    })
}

/// Dormand-Prince 5(4) adaptive integration with dense output at
/// `output_times`. Returns the state matrix (n x n_out).
pub fn rk45_states<F>(
    rhs: F,
    q0: &DVector<f64>,
    t_span: (f64, f64),
    output_times: &[f64],
    opts: &IntegratorOptions,
) -> Result<DMatrix<f64>>
where
    F: Fn(f64, &DVector<f64>, &mut DVector<f64>),
{
    rk45_core(rhs, q0, t_span, output_times, opts).map(|o| o.states)
}

/// Fixed-step Runge-Kutta pass with the same tableau; used by the order
/// tests and available for step-count studies.
#[allow(dead_code)]
pub(crate) fn rk45_fixed_step<F>(rhs: F, q0: &DVector<f64>, t0: f64, tf: f64, h: f64) -> DVector<f64>
where
    F: Fn(f64, &DVector<f64>, &mut DVector<f64>),
{
    let n = q0.len();
    let n_steps = ((tf - t0) / h).round() as usize;
    let h = (tf - t0) / n_steps as f64;
    let mut y = q0.clone();
    let mut k: Vec<DVector<f64>> = (0..7).map(|_| DVector::zeros(n)).collect();
    let mut t = t0;
    for _ in 0..n_steps {
        rhs(t, &y, &mut k[0]);
        for s in 1..7 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate().take(s) {
                if A[s][j] != 0.0 {
                    ys.axpy(h * A[s][j], kj, 1.0);
                }
            }
            let (_, rest) = k.split_at_mut(s);
            rhs(t + C[s] * h, &ys, &mut rest[0]);
        }
        let mut ynew = y.clone();
        for (j, kj) in k.iter().enumerate() {
            if B[j] != 0.0 {
                ynew.axpy(h * B[j], kj, 1.0);
            }
        }
        y = ynew;
        t += h;
    }
    y
}

/// Finite-difference Jacobian of the right-hand side at (t, y).
fn fd_jacobian<F>(rhs: &F, t: f64, y: &DVector<f64>, f_at_y: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(f64, &DVector<f64>, &mut DVector<f64>),
{
    let n = y.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut yp = y.clone();
    let mut fp = DVector::zeros(n);
    let sqrt_eps = f64::EPSILON.sqrt();
    for j in 0..n {
        let dy = sqrt_eps * y[j].abs().max(1.0);
        yp[j] = y[j] + dy;
        rhs(t, &yp, &mut fp);
        for i in 0..n {
            jac[(i, j)] = (fp[i] - f_at_y[i]) / dy;
        }
        yp[j] = y[j];
    }
    jac
}

/// Trapezoidal (Crank-Nicolson-type) fixed-step integration with
/// damped-Newton inner solves and finite-difference Jacobians.
///
/// Steps are chosen to land exactly on every output time, subdividing each
/// interval so no internal step exceeds `fixed_step`. The Jacobian is
/// refreshed per step only when the Newton iteration struggles.
pub fn trapezoid_states<F>(
    rhs: F,
    q0: &DVector<f64>,
    output_times: &[f64],
    fixed_step: f64,
) -> Result<DMatrix<f64>>
where
    F: Fn(f64, &DVector<f64>, &mut DVector<f64>),
{
    if output_times.is_empty() {
        return Err(Error::EmptyTimeVector);
    }
    if !(fixed_step > 0.0) {
        return Err(Error::InvalidConfig("fixed_step must be positive".into()));
    }
    let n = q0.len();
    let mut states = DMatrix::zeros(n, output_times.len());
    let mut y = q0.clone();
    let mut t = output_times[0];
    states.column_mut(0).copy_from(&y);

    let mut f_now = DVector::zeros(n);
    rhs(t, &y, &mut f_now);

    // Factored I - h/2 J, reused across steps until Newton struggles.
    let mut chord: Option<(f64, nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>)> = None;
    let mut steps_since_refresh = 0usize;

    for (col, &t_out) in output_times.iter().enumerate().skip(1) {
        if t_out <= t {
            return Err(Error::InvalidConfig("output times must be ascending".into()));
        }
        let n_sub = ((t_out - t) / fixed_step).ceil().max(1.0) as usize;
        let h = (t_out - t) / n_sub as f64;
        for _ in 0..n_sub {
            let t_next = t + h;
            let mut refreshed = false;
            // Refresh the chord Jacobian on a step-size change, on a long
            // reuse streak, or on demand below.
            if chord.as_ref().map_or(true, |(hc, _)| (hc - h).abs() > 1e-14 * h)
                || steps_since_refresh > 25
            {
                let jac = fd_jacobian(&rhs, t, &y, &f_now);
                let m = DMatrix::identity(n, n) - (h / 2.0) * jac;
                chord = Some((h, m.lu()));
                steps_since_refresh = 0;
                refreshed = true;
            }

            let mut converged = false;
            'newton_attempts: for _attempt in 0..2 {
                let lu = &chord.as_ref().unwrap().1;
                // Predictor: explicit Euler.
                let mut ynew = &y + h * &f_now;
                let mut f_new = DVector::zeros(n);
                let residual = |yn: &DVector<f64>, fn_buf: &mut DVector<f64>| -> DVector<f64> {
                    rhs(t_next, yn, fn_buf);
                    yn - &y - (h / 2.0) * (&f_now + &*fn_buf)
                };
                let mut g = residual(&ynew, &mut f_new);
                let mut gnorm = g.norm();
                for _iter in 0..25 {
                    if !gnorm.is_finite() {
                        break;
                    }
                    let delta = match lu.solve(&g) {
                        Some(d) => d,
                        None => break,
                    };
                    // Damped update: halve until the residual decreases.
                    let mut lambda = 1.0;
                    let mut accepted = false;
                    while lambda >= 1.0 / 64.0 {
                        let trial = &ynew - lambda * &delta;
                        let gt = residual(&trial, &mut f_new);
                        let gt_norm = gt.norm();
                        if gt_norm.is_finite() && gt_norm < (1.0 - 0.25 * lambda) * gnorm + 1e-300 {
                            ynew = trial;
                            g = gt;
                            gnorm = gt_norm;
                            accepted = true;
                            break;
                        }
                        lambda *= 0.5;
                    }
                    if !accepted {
                        break;
                    }
                    if (lambda * delta.norm()) <= 1e-10 * (1.0 + ynew.norm()) {
                        converged = true;
                        break;
                    }
                }
                if converged {
                    y = ynew;
                    rhs(t_next, &y, &mut f_new);
                    f_now = f_new;
                    break 'newton_attempts;
                }
                if refreshed {
                    break 'newton_attempts;
                }
                // Retry once with a fresh Jacobian at the current point.
                let jac = fd_jacobian(&rhs, t, &y, &f_now);
                let m = DMatrix::identity(n, n) - (h / 2.0) * jac;
                chord = Some((h, m.lu()));
                steps_since_refresh = 0;
                refreshed = true;
            }
            if !converged {
                return Err(Error::NewtonDivergence { t: t_next });
            }
            steps_since_refresh += 1;
            t = t_next;
        }
        states.column_mut(col).copy_from(&y);
        t = t_out;
    }
    Ok(states)
}
