//! Unconstrained minimizers: a Nelder–Mead simplex search and a BFGS
//! quasi-Newton polish.

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Best objective value after each accepted iteration.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadSettings {
    pub max_iter: usize,
    pub ftol_rel: f64,
}

impl Default for NelderMeadSettings {
    fn default() -> Self {
        Self { max_iter: 500, ftol_rel: 1e-10 }
    }
}

fn finite_or_inf(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

pub fn nelder_mead<F>(mut f: F, x0: &[f64], steps: &[f64], settings: NelderMeadSettings) -> OptimResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += steps[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| finite_or_inf(f(v))).collect();
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < settings.max_iter {
        iterations += 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        history.push(values[0]);

        let spread = values[n] - values[0];
        if spread.is_finite() && spread <= settings.ftol_rel * (values[0].abs() + 1e-300) {
            converged = true;
            break;
        }

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (c - w)).collect() };

        let xr = along(1.0);
        let fr = finite_or_inf(f(&xr));
        if fr < values[0] {
            let xe = along(2.0);
            let fe = finite_or_inf(f(&xe));
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let xc = along(0.5);
            let fc = finite_or_inf(f(&xc));
            (xc, fc)
        } else {
            let xc = along(-0.5);
            let fc = finite_or_inf(f(&xc));
            (xc, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        // Shrink toward the best vertex.
        for i in 1..=n {
            let shrunk: Vec<f64> = simplex[0].iter().zip(&simplex[i]).map(|(b, x)| b + 0.5 * (x - b)).collect();
            values[i] = finite_or_inf(f(&shrunk));
            simplex[i] = shrunk;
        }
    }

    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    OptimResult { x: simplex[best].clone(), f: values[best], iterations, converged, history }
}

#[derive(Debug, Clone, Copy)]
pub struct BfgsSettings {
    pub max_iter: usize,
    /// Stop when the largest absolute gradient component falls below this.
    pub gtol: f64,
    /// Stop when an iteration improves the objective by less than this
    /// fraction of its magnitude.
    pub ftol_rel: f64,
}

impl Default for BfgsSettings {
    fn default() -> Self {
        Self { max_iter: 200, gtol: 1e-6, ftol_rel: 1e-14 }
    }
}

/// BFGS with an Armijo backtracking line search. `fg` returns the objective
/// and its gradient.
pub fn bfgs<F>(fg: F, x0: &[f64], settings: BfgsSettings) -> OptimResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    bfgs_with_inverse_hessian(fg, x0, None, settings).0
}

/// [`bfgs`] started from an initial inverse-Hessian approximation; also
/// returns the final approximation so a later run can continue from it.
pub fn bfgs_with_inverse_hessian<F>(
    mut fg: F,
    x0: &[f64],
    h0: Option<Vec<Vec<f64>>>,
    settings: BfgsSettings,
) -> (OptimResult, Vec<Vec<f64>>)
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = fg(&x);
    let rescale_first = h0.is_none();
    let mut h = h0.unwrap_or_else(|| {
        let mut h = vec![vec![0.0; n]; n];
        for (i, row) in h.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        h
    });
    let mut history = vec![fx];
    let mut iterations = 0;
    let mut converged = false;
    let mut stalls = 0;

    if !fx.is_finite() {
        return (OptimResult { x, f: fx, iterations, converged, history }, h);
    }

    while iterations < settings.max_iter {
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax <= settings.gtol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut dir: Vec<f64> = (0..n).map(|i| -(0..n).map(|j| h[i][j] * g[j]).sum::<f64>()).collect();
        let mut slope: f64 = dir.iter().zip(&g).map(|(d, g)| d * g).sum();
        if slope >= 0.0 {
            // Not a descent direction: reset to steepest descent.
            for row in h.iter_mut() {
                row.iter_mut().for_each(|v| *v = 0.0);
            }
            for (i, row) in h.iter_mut().enumerate() {
                row[i] = 1.0;
            }
            dir = g.iter().map(|v| -v).collect();
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let (fnew, gnew) = fg(&xn);
            if fnew.is_finite() && fnew <= fx + 1e-4 * step * slope {
                accepted = Some((xn, fnew, gnew));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            // Line search failed; at a (numerical) minimum along every direction tried.
            converged = gmax <= settings.gtol.max(1e-4);
            break;
        };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 * s.iter().map(|v| v * v).sum::<f64>().sqrt() * y.iter().map(|v| v * v).sum::<f64>().sqrt() {
            if iterations == 1 && rescale_first {
                let yy: f64 = y.iter().map(|v| v * v).sum();
                let scale = sy / yy;
                for (i, row) in h.iter_mut().enumerate() {
                    row.iter_mut().for_each(|v| *v = 0.0);
                    row[i] = scale;
                }
            }
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i][j] * y[j]).sum()).collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..n {
                for j in 0..n {
                    h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }

        let improvement = fx - fnew;
        x = xn;
        fx = fnew;
        g = gnew;
        history.push(fx);

        if improvement <= settings.ftol_rel * (fx.abs() + 1e-300) {
            stalls += 1;
            if stalls >= 3 {
                converged = g.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= settings.gtol.max(1e-4);
                break;
            }
        } else {
            stalls = 0;
        }
    }

    (OptimResult { x, f: fx, iterations, converged, history }, h)
}

/// Central finite-difference gradient with relative step `rel_step`.
pub fn central_gradient<F>(f: &mut F, x: &[f64], rel_step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = rel_step * x[i].abs().max(1.0);
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}
