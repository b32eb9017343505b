//! Damped least-squares (Levenberg–Marquardt) minimizer with numerically
//! differenced Jacobians and box bounds, sized for the handful of free
//! parameters of the retrieval model.

pub(crate) struct LmOptions {
    pub max_iterations: usize,
    /// Converged when the relative step falls below this...
    pub rel_step_tol: f64,
    /// ...and the relative cost decrease does too.
    pub rel_cost_tol: f64,
    /// Relative central-difference step per parameter.
    pub fd_relative_step: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 500,
            rel_step_tol: 1e-10,
            rel_cost_tol: 1e-10,
            fd_relative_step: 1e-6,
        }
    }
}

pub(crate) struct LmOutcome {
    pub x: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Row-major k×k covariance from the Jacobian at the optimum; `None`
    /// when the normal matrix is degenerate.
    pub covariance: Option<Vec<f64>>,
}

/// Minimize `Σ r_i(x)²` subject to `lower ≤ x ≤ upper`.
pub(crate) fn levenberg_marquardt<F>(
    residual_fn: &F,
    n_residuals: usize,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &LmOptions,
) -> LmOutcome
where
    F: Fn(&[f64], &mut [f64]),
{
    let k = x0.len();
    assert!(lower.len() == k && upper.len() == k);
    let clamp = |x: &mut [f64]| {
        for j in 0..k {
            x[j] = x[j].clamp(lower[j], upper[j]);
        }
    };

    let mut x = x0.to_vec();
    clamp(&mut x);
    let mut r = vec![0.0; n_residuals];
    residual_fn(&x, &mut r);
    let mut cost: f64 = r.iter().map(|v| v * v).sum();

    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let mut jac = vec![0.0; n_residuals * k];
    let mut r_plus = vec![0.0; n_residuals];
    let mut r_minus = vec![0.0; n_residuals];

    for iter in 0..opts.max_iterations {
        iterations = iter + 1;
        if cost == 0.0 {
            converged = true;
            break;
        }

        // Central-difference Jacobian of the residual vector.
        for j in 0..k {
            let h = opts.fd_relative_step * x[j].abs().max(1e-3);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            residual_fn(&xp, &mut r_plus);
            residual_fn(&xm, &mut r_minus);
            let denom = 2.0 * h;
            for i in 0..n_residuals {
                jac[i * k + j] = (r_plus[i] - r_minus[i]) / denom;
            }
        }

        // Normal equations: (JᵀJ + λ·diag(JᵀJ))·δ = −Jᵀr.
        let mut jtj = vec![0.0; k * k];
        let mut jtr = vec![0.0; k];
        for i in 0..n_residuals {
            let row = &jac[i * k..(i + 1) * k];
            for a in 0..k {
                jtr[a] += row[a] * r[i];
                for b in a..k {
                    jtj[a * k + b] += row[a] * row[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                jtj[a * k + b] = jtj[b * k + a];
            }
        }
        let max_diag = (0..k).map(|a| jtj[a * k + a]).fold(0.0f64, f64::max);
        if max_diag == 0.0 {
            // Zero gradient everywhere: nothing left to do.
            converged = true;
            break;
        }

        let mut accepted = false;
        while lambda <= 1e12 {
            let mut damped = jtj.clone();
            for a in 0..k {
                let d = jtj[a * k + a].max(1e-14 * max_diag);
                damped[a * k + a] += lambda * d;
            }
            let Some(step) = solve_spd(&damped, &jtr, k) else {
                lambda *= 10.0;
                continue;
            };
            let mut x_new = x.clone();
            for j in 0..k {
                x_new[j] -= step[j];
            }
            clamp(&mut x_new);
            residual_fn(&x_new, &mut r_plus);
            let cost_new: f64 = r_plus.iter().map(|v| v * v).sum();
            if cost_new.is_finite() && cost_new < cost {
                let rel_step = (0..k)
                    .map(|j| (x_new[j] - x[j]).abs() / x[j].abs().max(1.0))
                    .fold(0.0f64, f64::max);
                let rel_decrease = (cost - cost_new) / cost.max(f64::MIN_POSITIVE);
                x = x_new;
                std::mem::swap(&mut r, &mut r_plus);
                cost = cost_new;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if rel_step < opts.rel_step_tol && rel_decrease < opts.rel_cost_tol {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // Damping exhausted without improvement: local stationarity.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }

    // Covariance from the undamped normal matrix at the optimum.
    let covariance = {
        for j in 0..k {
            let h = opts.fd_relative_step * x[j].abs().max(1e-3);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            residual_fn(&xp, &mut r_plus);
            residual_fn(&xm, &mut r_minus);
            let denom = 2.0 * h;
            for i in 0..n_residuals {
                jac[i * k + j] = (r_plus[i] - r_minus[i]) / denom;
            }
        }
        let mut jtj = vec![0.0; k * k];
        for i in 0..n_residuals {
            let row = &jac[i * k..(i + 1) * k];
            for a in 0..k {
                for b in a..k {
                    jtj[a * k + b] += row[a] * row[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                jtj[a * k + b] = jtj[b * k + a];
            }
        }
        invert_spd(&jtj, k)
    };

    LmOutcome { x, cost, iterations, converged, covariance }
}

/// Cholesky factorization of a symmetric positive-definite matrix; `None`
/// if a pivot collapses.
fn cholesky(a: &[f64], k: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let mut sum = a[i * k + j];
            for p in 0..j {
                sum -= l[i * k + p] * l[j * k + p];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[i * k + i] = sum.sqrt();
            } else {
                l[i * k + j] = sum / l[j * k + j];
            }
        }
    }
    Some(l)
}

fn solve_with_cholesky(l: &[f64], b: &[f64], k: usize) -> Vec<f64> {
    let mut y = vec![0.0; k];
    for i in 0..k {
        let mut sum = b[i];
        for p in 0..i {
            sum -= l[i * k + p] * y[p];
        }
        y[i] = sum / l[i * k + i];
    }
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        let mut sum = y[i];
        for p in i + 1..k {
            sum -= l[p * k + i] * x[p];
        }
        x[i] = sum / l[i * k + i];
    }
    x
}

fn solve_spd(a: &[f64], b: &[f64], k: usize) -> Option<Vec<f64>> {
    cholesky(a, k).map(|l| solve_with_cholesky(&l, b, k))
}

fn invert_spd(a: &[f64], k: usize) -> Option<Vec<f64>> {
    let l = cholesky(a, k)?;
    let mut inv = vec![0.0; k * k];
    let mut e = vec![0.0; k];
    for j in 0..k {
        e.fill(0.0);
        e[j] = 1.0;
        let col = solve_with_cholesky(&l, &e, k);
        for i in 0..k {
            inv[i * k + j] = col[i];
        }
    }
    Some(inv)
}
