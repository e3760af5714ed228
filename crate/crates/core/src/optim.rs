//! Derivative-free minimization with the Nelder–Mead simplex method.
//!
//! Shared by Hawkes maximum likelihood and ARIMA conditional sum of squares.

/// Tuning knobs for [`nelder_mead`].
#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    /// Stop once `max f - min f` over the simplex falls below this.
    pub f_tol: f64,
    pub max_iter: usize,
    /// Per-coordinate offset used to build the initial simplex.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            f_tol: 1e-9,
            max_iter: 2000,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `f` starting from `x0`.
///
/// Non-finite objective values are treated as `+inf`, so callers can
/// reject infeasible points by returning `NaN` or `inf`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    if n == 0 {
        let v = eval(x0);
        return Minimum { x: Vec::new(), f: v, iterations: 0, converged: true };
    }

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        let step = if v[i] != 0.0 { opts.initial_step * v[i].abs().max(1.0) } else { opts.initial_step };
        v[i] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| eval(x)).collect();

    let mut iterations = 0;
    let mut converged = false;
    let mut order: Vec<usize> = (0..=n).collect();
    while iterations < opts.max_iter {
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];
        if values[worst] - values[best] < opts.f_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for &idx in &order[..n] {
            for (c, x) in centroid.iter_mut().zip(&simplex[idx]) {
                *c += x / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[worst]).map(|(c, w)| c + t * (c - w)).collect()
        };

        let reflected = along(opts.reflection);
        let f_reflected = eval(&reflected);
        if f_reflected < values[best] {
            let expanded = along(opts.reflection * opts.expansion);
            let f_expanded = eval(&expanded);
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
        // contraction: outside if the reflection improved on the worst point
        let (candidate, f_candidate) = if f_reflected < values[worst] {
            let c = along(opts.reflection * opts.contraction);
            let fc = eval(&c);
            (c, fc)
        } else {
            let c = along(-opts.contraction);
            let fc = eval(&c);
            (c, fc)
        };
        if f_candidate < values[worst].min(f_reflected) {
            simplex[worst] = candidate;
            values[worst] = f_candidate;
            continue;
        }
        let anchor = simplex[best].clone();
        for &idx in &order[1..] {
            for (x, a) in simplex[idx].iter_mut().zip(&anchor) {
                *x = a + opts.shrink * (*x - a);
            }
            values[idx] = eval(&simplex[idx]);
        }
    }

    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    Minimum { x: simplex[best].clone(), f: values[best], iterations, converged }
}

/// Runs [`nelder_mead`] and restarts it from the returned point until the
/// optimum stops moving. Restarts rebuild the simplex, which recovers from
/// premature collapse along a valley.
pub fn nelder_mead_restarted<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions, restarts: usize) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let mut best = nelder_mead(&mut f, x0, opts);
    let mut total = best.iterations;
    for _ in 0..restarts {
        let next = nelder_mead(&mut f, &best.x, opts);
        total += next.iterations;
        let improved = next.f < best.f - opts.f_tol;
        if next.f <= best.f {
            best = Minimum { iterations: total, ..next };
        }
        if !improved {
            break;
        }
    }
    best.iterations = total;
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn rosenbrock_reaches_tiny_value() {
        let m = nelder_mead_restarted(rosenbrock, &[-1.2, 1.0], &NelderMeadOptions::default(), 5);
        assert!(m.f < 1e-8, "f = {}", m.f);
        assert!((m.x[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn quadratic_bowl() {
        let m = nelder_mead(
            |x| (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 1.0).powi(2) + (x[2] - 0.5).powi(2),
            &[0.0, 0.0, 0.0],
            &NelderMeadOptions { f_tol: 1e-14, ..Default::default() },
        );
        assert!(m.converged);
        assert!((m.x[0] - 3.0).abs() < 1e-5 && (m.x[1] + 1.0).abs() < 1e-5);
    }

    #[test]
    fn infeasible_points_are_avoided() {
        let m = nelder_mead(
            |x| if x[0] <= 0.0 { f64::NAN } else { x[0] - x[0].ln() },
            &[3.0],
            &NelderMeadOptions { f_tol: 1e-14, ..Default::default() },
        );
        assert!((m.x[0] - 1.0).abs() < 1e-4);
    }
}
