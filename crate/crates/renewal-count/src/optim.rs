//! Derivative-free and quasi-Newton minimization for the fitting layer.
//!
//! The likelihood surface is smooth but every evaluation carries a little
//! discretization error, so the strategy is a Nelder-Mead pass to get close
//! followed by BFGS with central-difference gradients to polish. Objectives
//! may return +infinity to reject a region (underflow, invalid shape); both
//! methods treat such points as strictly worse than any finite value.

/// Stopping knobs shared by both minimizers.
#[derive(Debug, Clone, Copy)]
pub struct OptimOptions {
    pub max_iters: usize,
    /// Relative spread of objective values below which the simplex stops.
    pub f_tol: f64,
    /// Infinity-norm of the gradient below which BFGS stops.
    pub g_tol: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            max_iters: 600,
            f_tol: 1e-10,
            g_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Nelder-Mead simplex minimization with the standard 1 / 2 / 0.5 / 0.5
/// reflection, expansion, contraction, and shrink coefficients.
///
/// The initial simplex steps 10% of each coordinate's magnitude (at least
/// 0.25), which suits log-reparametrized likelihood surfaces.
pub fn nelder_mead(f: impl Fn(&[f64]) -> f64, x0: &[f64], opts: OptimOptions) -> OptimOutcome {
    let dim = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    simplex.push(x0.to_vec());
    for i in 0..dim {
        let mut v = x0.to_vec();
        v[i] += 0.1 * v[i].abs().max(2.5);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iters {
        iterations += 1;
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let best = order[0];
        let worst = order[dim];
        let second_worst = order[dim - 1];

        let spread = values[worst] - values[best];
        if spread.is_finite() && spread <= opts.f_tol * (1.0 + values[best].abs()) {
            converged = true;
            break;
        }

        // Centroid of everything but the worst vertex.
        let mut centroid = vec![0.0; dim];
        for (i, v) in simplex.iter().enumerate() {
            if i == worst {
                continue;
            }
            for (c, x) in centroid.iter_mut().zip(v.iter()) {
                *c += x;
            }
        }
        for c in centroid.iter_mut() {
            *c /= dim as f64;
        }

        let blend = |a: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(simplex[worst].iter())
                .map(|(&c, &w)| c + a * (c - w))
                .collect()
        };

        let reflected = blend(1.0);
        let f_reflected = f(&reflected);
        if f_reflected < values[best] {
            let expanded = blend(2.0);
            let f_expanded = f(&expanded);
            if f_expanded < f_reflected {
                simplex[worst] = expanded;
                values[worst] = f_expanded;
            } else {
                simplex[worst] = reflected;
                values[worst] = f_reflected;
            }
            continue;
        }
        if f_reflected < values[second_worst] {
            simplex[worst] = reflected;
            values[worst] = f_reflected;
            continue;
        }
        let contracted = if f_reflected < values[worst] {
            blend(0.5)
        } else {
            blend(-0.5)
        };
        let f_contracted = f(&contracted);
        if f_contracted < values[worst].min(f_reflected) {
            simplex[worst] = contracted;
            values[worst] = f_contracted;
            continue;
        }
        // Shrink toward the best vertex.
        let best_point = simplex[best].clone();
        for (i, v) in simplex.iter_mut().enumerate() {
            if i == best {
                continue;
            }
            for (x, &b) in v.iter_mut().zip(best_point.iter()) {
                *x = b + 0.5 * (*x - b);
            }
            values[i] = f(v);
        }
    }

    let best = (0..values.len())
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .expect("simplex is non-empty");
    OptimOutcome {
        x: simplex.swap_remove(best),
        value: values[best],
        iterations,
        converged,
    }
}

/// Central-difference gradient with per-coordinate steps scaled to the
/// coordinate's magnitude.
pub fn central_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = 3e-6 * (1.0 + x[i].abs());
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Central-difference Hessian (symmetric by construction).
pub fn central_hessian(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<Vec<f64>> {
    let n = x.len();
    let f0 = f(x);
    let step = |i: usize| 1.2e-4 * (1.0 + x[i].abs());
    let mut h = vec![vec![0.0; n]; n];
    let mut probe = x.to_vec();
    for i in 0..n {
        let hi = step(i);
        probe[i] = x[i] + hi;
        let fp = f(&probe);
        probe[i] = x[i] - hi;
        let fm = f(&probe);
        probe[i] = x[i];
        h[i][i] = (fp - 2.0 * f0 + fm) / (hi * hi);
        for j in (i + 1)..n {
            let hj = step(j);
            let mut eval = |si: f64, sj: f64| {
                probe[i] = x[i] + si * hi;
                probe[j] = x[j] + sj * hj;
                let v = f(&probe);
                probe[i] = x[i];
                probe[j] = x[j];
                v
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                / (4.0 * hi * hj);
            h[i][j] = v;
            h[j][i] = v;
        }
    }
    h
}

/// Inverse of a symmetric positive-definite matrix via Cholesky; `None`
/// when the matrix is not positive definite (within rounding).
pub fn cholesky_inverse(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[i][i] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    // Solve L Z = I, then L^T X = Z, column by column.
    let mut inv = vec![vec![0.0; n]; n];
    for col in 0..n {
        let mut z = vec![0.0; n];
        for i in 0..n {
            let mut sum = if i == col { 1.0 } else { 0.0 };
            for k in 0..i {
                sum -= l[i][k] * z[k];
            }
            z[i] = sum / l[i][i];
        }
        for i in (0..n).rev() {
            let mut sum = z[i];
            for k in (i + 1)..n {
                sum -= l[k][i] * inv[k][col];
            }
            inv[i][col] = sum / l[i][i];
        }
    }
    Some(inv)
}

/// BFGS with backtracking Armijo line search and numerical gradients.
///
/// Stops when the gradient's infinity norm drops below `g_tol`, when a step
/// no longer changes the objective, or at the iteration cap.
pub fn bfgs(f: impl Fn(&[f64]) -> f64, x0: &[f64], opts: OptimOptions) -> OptimOutcome {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    if !fx.is_finite() {
        return OptimOutcome {
            x,
            value: fx,
            iterations: 0,
            converged: false,
        };
    }
    let mut g = central_gradient(&f, &x);
    let mut h_inv: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iters {
        iterations += 1;
        let g_norm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if g_norm < opts.g_tol {
            converged = true;
            break;
        }
        // Search direction d = -H_inv g.
        let mut d = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                d[i] -= h_inv[i][j] * g[j];
            }
        }
        let slope: f64 = d.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            // Bad curvature information; restart from steepest descent.
            for i in 0..n {
                for j in 0..n {
                    h_inv[i][j] = if i == j { 1.0 } else { 0.0 };
                }
                d[i] = -g[i];
            }
        }
        let slope: f64 = d.iter().zip(g.iter()).map(|(a, b)| a * b).sum();

        let mut step = 1.0;
        let mut x_new = x.clone();
        let mut f_new = f64::INFINITY;
        let mut accepted = false;
        for _ in 0..40 {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            f_new = f(&x_new);
            if f_new.is_finite() && f_new <= fx + 1e-4 * step * slope {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            converged = g_norm < 1e2 * opts.g_tol;
            break;
        }
        if (fx - f_new).abs() <= opts.f_tol * (1.0 + fx.abs()) {
            x = x_new;
            fx = f_new;
            converged = true;
            break;
        }

        let g_new = central_gradient(&f, &x_new);
        let s: Vec<f64> = x_new.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(g.iter()).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let s_norm: f64 = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let y_norm: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if sy > 1e-10 * s_norm * y_norm {
            // Standard BFGS inverse update.
            let rho = 1.0 / sy;
            let mut hy = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    hy[i] += h_inv[i][j] * y[j];
                }
            }
            let yhy: f64 = y.iter().zip(hy.iter()).map(|(a, b)| a * b).sum();
            for i in 0..n {
                for j in 0..n {
                    h_inv[i][j] += (1.0 + rho * yhy) * rho * s[i] * s[j]
                        - rho * (s[i] * hy[j] + hy[i] * s[j]);
                }
            }
        }
        x = x_new;
        fx = f_new;
        g = g_new;
    }

    OptimOutcome {
        x,
        value: fx,
        iterations,
        converged,
    }
}

/// Simplex pass followed by quasi-Newton polish from the simplex's answer.
pub fn minimize(f: impl Fn(&[f64]) -> f64, x0: &[f64], opts: OptimOptions) -> OptimOutcome {
    let rough = nelder_mead(&f, x0, opts);
    let polished = bfgs(&f, &rough.x, opts);
    if polished.value <= rough.value {
        OptimOutcome {
            iterations: rough.iterations + polished.iterations,
            converged: polished.converged || rough.converged,
            ..polished
        }
    } else {
        rough
    }
}
