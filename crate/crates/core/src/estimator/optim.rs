//! Derivative-free Nelder-Mead simplex minimization.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    /// Converged once every vertex lies within this distance (max-norm) of the best one.
    pub x_tol: f64,
    /// Also require the objective spread across the simplex to be at most this (ignored when <= 0).
    pub f_tol: f64,
    pub max_evals: usize,
    /// Number of fresh restarts from the best point after convergence.
    pub restarts: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            x_tol: 1e-6,
            f_tol: 0.0,
            max_evals: 2000,
            restarts: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimizes `f` from `x0` with initial simplex edges `steps` (one per coordinate).
///
/// Non-finite objective values are treated as `+inf`, so infeasible regions just repel the simplex.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], steps: &[f64], opts: &SimplexOptions) -> SimplexOutcome
where
    F: FnMut(&[f64]) -> f64,
{
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut best = x0.to_vec();
    let mut best_val = eval(&best);
    let mut evals = 1usize;
    let mut converged = false;
    for round in 0..=opts.restarts {
        let budget = opts.max_evals.saturating_sub(evals);
        if budget == 0 {
            break;
        }
        let scale = if round == 0 { 1.0 } else { 0.5f64.powi(round as i32) };
        let (x, v, used, conv) = run_simplex(&mut eval, &best, best_val, steps, scale, opts, budget);
        evals += used;
        let improved = v < best_val;
        if v <= best_val {
            best = x;
            best_val = v;
        }
        converged = conv;
        if !conv || (round > 0 && !improved) {
            break;
        }
    }
    SimplexOutcome {
        x: best,
        value: best_val,
        evaluations: evals,
        converged,
    }
}

fn run_simplex<F>(
    eval: &mut F,
    x0: &[f64],
    f0: f64,
    steps: &[f64],
    scale: f64,
    opts: &SimplexOptions,
    budget: usize,
) -> (Vec<f64>, f64, usize, bool)
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    let mut vals = vec![f0];
    let mut used = 0usize;
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += steps[i] * scale;
        vals.push(eval(&p));
        pts.push(p);
        used += 1;
    }
    let mut converged = false;
    while used < budget {
        // stable sort keeps the older vertex first on ties
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let spread = pts[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        let fspread = vals[n] - vals[0];
        if spread <= opts.x_tol && (opts.f_tol <= 0.0 || fspread <= opts.f_tol) {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| pts[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&pts[n]).map(|(c, w)| c + t * (c - w)).collect() };

        let xr = along(1.0);
        let fr = eval(&xr);
        used += 1;
        if fr < vals[0] {
            let xe = along(2.0);
            let fe = eval(&xe);
            used += 1;
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
            continue;
        }
        let xc = if fr < vals[n] { along(0.5) } else { along(-0.5) };
        let fc = eval(&xc);
        used += 1;
        if fc < vals[n].min(fr) {
            pts[n] = xc;
            vals[n] = fc;
            continue;
        }
        // shrink toward the best vertex
        for i in 1..=n {
            let p: Vec<f64> = pts[0].iter().zip(&pts[i]).map(|(b, x)| b + 0.5 * (x - b)).collect();
            vals[i] = eval(&p);
            pts[i] = p;
            used += 1;
        }
    }
    let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
    (pts[best].clone(), vals[best], used, converged)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = SimplexOptions {
            x_tol: 1e-9,
            max_evals: 10_000,
            ..Default::default()
        };
        let out = nelder_mead(f, &[-1.2, 1.0], &[0.5, 0.5], &opts);
        assert!(out.converged);
        assert!(
            (out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6,
            "{:?}",
            out.x
        );
    }

    #[test]
    fn quadratic_in_four_dimensions() {
        let c = [3.0, -2.0, 0.5, 10.0];
        let f = |x: &[f64]| {
            x.iter()
                .zip(&c)
                .enumerate()
                .map(|(i, (a, b))| (i + 1) as f64 * (a - b).powi(2))
                .sum::<f64>()
        };
        let opts = SimplexOptions {
            x_tol: 1e-8,
            ..Default::default()
        };
        let out = nelder_mead(f, &[0.0; 4], &[1.0; 4], &opts);
        for (a, b) in out.x.iter().zip(&c) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn infinite_values_repel() {
        let f = |x: &[f64]| if x[0] < 0.5 { f64::NAN } else { (x[0] - 1.0).powi(2) };
        let out = nelder_mead(f, &[2.0], &[0.5], &SimplexOptions::default());
        assert!((out.x[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn respects_budget() {
        let f = |x: &[f64]| x[0].powi(2) + x[1].powi(2);
        let opts = SimplexOptions {
            x_tol: 0.0,
            max_evals: 30,
            restarts: 0,
            ..Default::default()
        };
        let out = nelder_mead(f, &[5.0, 5.0], &[1.0, 1.0], &opts);
        assert!(out.evaluations <= 31);
        assert!(!out.converged);
    }
}
