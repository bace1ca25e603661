//! Small bounded optimizers used by the refinement stages: a projected
//! quasi-Newton (BFGS) minimizer with finite-difference gradients for the
//! 1-D/2-D refinements, and a bracketed golden-section scalar minimizer for
//! the position solve.

/// Result of a bounded refinement.
#[derive(Debug, Clone)]
pub(crate) struct RefineOutcome {
    pub x: Vec<f64>,
    /// Objective at `x` (of the function handed in, i.e. the minimized one).
    pub objective: f64,
    pub initial_objective: f64,
    pub evals: usize,
    /// False when no step improved on the initial point; `x` then equals the
    /// initial point.
    pub improved: bool,
}

/// Minimizes `f` over the box `[lower, upper]` starting at `x0`, using BFGS
/// with central-difference gradients. Coordinates are internally rescaled by
/// `scale` so the identity initial Hessian is reasonable for badly scaled
/// variables (delays in seconds next to angles in radians).
///
/// Stops when the relative objective improvement over one iteration drops
/// below `rel_tol` or when `max_evals` objective evaluations are spent. The
/// returned point never has a larger objective than `x0`.
pub(crate) fn minimize_bounded(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    scale: &[f64],
    rel_tol: f64,
    max_evals: usize,
) -> RefineOutcome {
    let dim = x0.len();
    debug_assert!(lower.len() == dim && upper.len() == dim && scale.len() == dim);

    let to_raw = |y: &[f64]| -> Vec<f64> {
        (0..dim).map(|i| x0[i] + y[i] * scale[i]).collect()
    };
    let mut evals = 0usize;
    let mut eval = |y: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        f(&to_raw(y))
    };

    // Bounds in scaled coordinates, relative to x0.
    let lo: Vec<f64> = (0..dim).map(|i| (lower[i] - x0[i]) / scale[i]).collect();
    let hi: Vec<f64> = (0..dim).map(|i| (upper[i] - x0[i]) / scale[i]).collect();
    let clamp = |y: &mut [f64]| {
        for i in 0..dim {
            y[i] = y[i].clamp(lo[i], hi[i]);
        }
    };

    let mut y = vec![0.0; dim];
    clamp(&mut y);
    let f0 = eval(&y, &mut evals);
    let mut fy = f0;

    // Inverse Hessian approximation, row-major dim x dim.
    let mut h = vec![0.0; dim * dim];
    for i in 0..dim {
        h[i * dim + i] = 1.0;
    }

    let fd_step = 1e-6;
    let mut grad_prev: Option<Vec<f64>> = None;
    let mut y_prev = y.clone();
    let mut first_step = true;

    while evals + 2 * dim + 1 < max_evals {
        // Central-difference gradient, one-sided at the box edge.
        let mut g = vec![0.0; dim];
        for i in 0..dim {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[i] = (y[i] + fd_step).min(hi[i]);
            ym[i] = (y[i] - fd_step).max(lo[i]);
            let span = yp[i] - ym[i];
            if span == 0.0 {
                g[i] = 0.0;
                continue;
            }
            g[i] = (eval(&yp, &mut evals) - eval(&ym, &mut evals)) / span;
        }
        // Stop when one unit step along the gradient could not change the
        // objective beyond rounding; relative to |f| so the test works at
        // any objective magnitude.
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm <= 1e-14 * fy.abs() {
            break;
        }

        // BFGS update from the previous step; on the first step initialize
        // H with the Shanno scaling (s.y / y.y) I so the inverse-Hessian
        // carries the objective's scale regardless of its magnitude.
        if let Some(gp) = &grad_prev {
            let s: Vec<f64> = (0..dim).map(|i| y[i] - y_prev[i]).collect();
            let yk: Vec<f64> = (0..dim).map(|i| g[i] - gp[i]).collect();
            let sy: f64 = s.iter().zip(yk.iter()).map(|(a, b)| a * b).sum();
            let yy: f64 = yk.iter().map(|v| v * v).sum();
            if sy > 0.0 && yy > 0.0 {
                if first_step {
                    let h0 = sy / yy;
                    for i in 0..dim {
                        for j in 0..dim {
                            h[i * dim + j] = if i == j { h0 } else { 0.0 };
                        }
                    }
                    first_step = false;
                }
                // H <- (I - s y^T / sy) H (I - y s^T / sy) + s s^T / sy
                let mut hy = vec![0.0; dim];
                for i in 0..dim {
                    for j in 0..dim {
                        hy[i] += h[i * dim + j] * yk[j];
                    }
                }
                let yhy: f64 = yk.iter().zip(hy.iter()).map(|(a, b)| a * b).sum();
                let mut hn = vec![0.0; dim * dim];
                for i in 0..dim {
                    for j in 0..dim {
                        hn[i * dim + j] = h[i * dim + j]
                            - (hy[i] * s[j] + s[i] * hy[j]) / sy
                            + (1.0 + yhy / sy) * s[i] * s[j] / sy;
                    }
                }
                h = hn;
            }
        }

        // Search direction; fall back to steepest descent if not a descent
        // direction.
        let mut d = vec![0.0; dim];
        for i in 0..dim {
            for j in 0..dim {
                d[i] -= h[i * dim + j] * g[j];
            }
        }
        let dg: f64 = d.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        if dg >= 0.0 {
            for i in 0..dim {
                d[i] = -g[i];
            }
        }
        // Before the curvature scale is known, normalize the trial step to
        // a fixed fraction of the (unit-scaled) trust region.
        let dnorm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if dnorm == 0.0 {
            break;
        }
        let mut t = if grad_prev.is_none() { 0.5 / dnorm } else { 1.0 };

        // Backtracking line search with projection onto the box.
        let mut accepted = None;
        while t * dnorm > 1e-12 && evals < max_evals {
            let mut cand: Vec<f64> = (0..dim).map(|i| y[i] + t * d[i]).collect();
            clamp(&mut cand);
            if cand == y {
                break;
            }
            let fc = eval(&cand, &mut evals);
            if fc < fy {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, fc)) = accepted else { break };

        grad_prev = Some(g);
        y_prev = y.clone();
        y = cand;
        let improvement = (fy - fc) / fy.abs().max(f64::MIN_POSITIVE);
        fy = fc;
        if improvement < rel_tol {
            break;
        }
    }

    let improved = fy < f0;
    let x = if improved { to_raw(&y) } else { x0.to_vec() };
    RefineOutcome {
        x,
        objective: if improved { fy } else { f0 },
        initial_objective: f0,
        evals,
        improved,
    }
}

/// Derivative-free scalar minimization over `(0, hi]`: a linear scan locates
/// the best sample, then golden-section contraction refines the bracket to
/// width `tol`.
pub(crate) fn minimize_scalar_scan(
    f: &mut dyn FnMut(f64) -> f64,
    hi: f64,
    n_scan: usize,
    tol: f64,
) -> crate::error::Result<(f64, f64)> {
    use crate::error::Error;
    debug_assert!(hi > 0.0 && n_scan >= 8);
    let step = hi / n_scan as f64;
    let mut best_i = 0usize;
    let mut best_f = f64::INFINITY;
    let mut values = Vec::with_capacity(n_scan);
    for i in 0..n_scan {
        let x = step * (i + 1) as f64;
        let v = f(x);
        values.push(v);
        if v < best_f {
            best_f = v;
            best_i = i;
        }
    }
    if best_i + 1 == n_scan && values[n_scan - 1] < values[n_scan - 2] {
        return Err(Error::NoMinimum("objective still decreasing at the scan boundary"));
    }
    let mut a = if best_i == 0 { step * 0.5 } else { step * best_i as f64 };
    let mut b = step * (best_i + 2).min(n_scan) as f64;

    let inv_phi = 0.618_033_988_749_894_9_f64;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a) > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    Ok((x, f(x)))
}
