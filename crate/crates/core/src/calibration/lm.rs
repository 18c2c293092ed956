//! Damped least squares (Levenberg-Marquardt) with a numeric Jacobian and
//! box projection. Small fixed-size problems only (<= ~6 parameters), so
//! the normal equations are solved by plain Gaussian elimination.

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iters: usize,
    /// Stop when the SSE improvement falls below ftol * sse.
    pub ftol: f64,
    /// Stop when the step is below xtol relative to the parameter scale.
    pub xtol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iters: 200, ftol: 1e-14, xtol: 1e-12 }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub x: Vec<f64>,
    pub sse: f64,
    pub converged: bool,
}

fn sse(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn clamp_to_box(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((xi, &lo), &hi) in x.iter_mut().zip(lower).zip(upper) {
        *xi = xi.clamp(lo, hi);
    }
}

/// Solve A * x = b in place; A is n x n row-major. Returns None if singular.
fn solve(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let pivot = (col..n).max_by(|&r1, &r2| {
            a[r1 * n + col].abs().partial_cmp(&a[r2 * n + col].abs()).unwrap()
        })?;
        if a[pivot * n + col].abs() < 1e-300 {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        for row in (col + 1)..n {
            let factor = a[row * n + col] / a[col * n + col];
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in (row + 1)..n {
            acc -= a[row * n + k] * x[k];
        }
        x[row] = acc / a[row * n + row];
    }
    Some(x)
}

/// Central-difference Jacobian, respecting the box by one-sided steps at
/// the boundary.
fn jacobian<F>(
    f: &F,
    x: &[f64],
    r0: &[f64],
    lower: &[f64],
    upper: &[f64],
) -> Option<Vec<Vec<f64>>>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let n = x.len();
    let m = r0.len();
    let mut cols = Vec::with_capacity(n);
    for i in 0..n {
        let h = 1e-6 * x[i].abs().max(1e-4);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] = (x[i] + h).min(upper[i]);
        xm[i] = (x[i] - h).max(lower[i]);
        let denom = xp[i] - xm[i];
        if denom <= 0.0 {
            cols.push(vec![0.0; m]);
            continue;
        }
        let rp = f(&xp)?;
        let rm = f(&xm)?;
        cols.push(rp.iter().zip(&rm).map(|(p, q)| (p - q) / denom).collect());
    }
    Some(cols)
}

/// Minimize sum of squared residuals over a box. The residual function may
/// return None outside its domain; such trial points are rejected.
pub fn levenberg_marquardt<F>(
    f: &F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: LmOptions,
) -> Option<LmOutcome>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    clamp_to_box(&mut x, lower, upper);
    let mut r = f(&x)?;
    let mut current = sse(&r);
    let mut mu = 1e-3;
    let mut converged = false;

    for _ in 0..opts.max_iters {
        let jac = match jacobian(f, &x, &r, lower, upper) {
            Some(j) => j,
            None => break,
        };
        // Normal equations: (J^T J + mu * diag(J^T J)) delta = -J^T r.
        let mut jtj = vec![0.0; n * n];
        let mut jtr = vec![0.0; n];
        for i in 0..n {
            for j in i..n {
                let dot: f64 = jac[i].iter().zip(&jac[j]).map(|(a, b)| a * b).sum();
                jtj[i * n + j] = dot;
                jtj[j * n + i] = dot;
            }
            jtr[i] = -jac[i].iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
        }

        let mut stepped = false;
        for _ in 0..30 {
            let mut damped = jtj.clone();
            for i in 0..n {
                let d = jtj[i * n + i];
                damped[i * n + i] = d + mu * d.max(1e-12);
            }
            if let Some(delta) = solve(damped, jtr.clone(), n) {
                let mut trial = x.clone();
                for i in 0..n {
                    trial[i] += delta[i];
                }
                clamp_to_box(&mut trial, lower, upper);
                if let Some(r_trial) = f(&trial) {
                    let trial_sse = sse(&r_trial);
                    if trial_sse < current {
                        let step_norm: f64 = trial
                            .iter()
                            .zip(&x)
                            .map(|(a, b)| (a - b).abs() / b.abs().max(1e-8))
                            .fold(0.0, f64::max);
                        let improvement = current - trial_sse;
                        x = trial;
                        r = r_trial;
                        current = trial_sse;
                        mu = (mu / 10.0).max(1e-14);
                        stepped = true;
                        if improvement <= opts.ftol * current.max(1e-300)
                            || step_norm <= opts.xtol
                            || current < 1e-30
                        {
                            converged = true;
                        }
                        break;
                    }
                }
            }
            mu *= 10.0;
            if mu > 1e14 {
                break;
            }
        }
        if converged {
            break;
        }
        if !stepped {
            // No downhill step at any damping: local minimum (to tolerance).
            converged = current.is_finite();
            break;
        }
    }

    Some(LmOutcome { x, sse: current, converged })
}
