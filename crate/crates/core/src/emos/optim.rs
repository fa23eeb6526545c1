//! Derivative-free simplex minimisation.

/// Settings for [`nelder_mead`].
#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    /// Total iteration budget across restarts.
    pub max_iterations: usize,
    /// Converged once `f(worst) − f(best)` over the simplex drops below this.
    pub f_tol: f64,
    /// Fresh simplices built around the incumbent after convergence. A
    /// restart that improves by less than `f_tol` ends the search.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            f_tol: 1e-8,
            restarts: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Minimise `f` from `x0` with an axis-aligned initial simplex of the given
/// per-coordinate `steps`.
///
/// Non-finite objective values are treated as `+∞`. Vertices with equal
/// objective keep their index order, so the search is fully deterministic.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    steps: &[f64],
    opts: &NelderMeadOptions,
) -> Minimum {
    assert_eq!(x0.len(), steps.len());
    let n = x0.len();
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut best_x = x0.to_vec();
    let mut best_f = eval(x0);
    if n == 0 {
        return Minimum {
            x: best_x,
            f: best_f,
            iterations: 0,
            evaluations: 1,
            converged: true,
        };
    }

    let mut iterations = 0usize;
    let mut converged = false;
    for round in 0..=opts.restarts {
        let start_f = best_f;
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        simplex.push((best_x.clone(), best_f));
        for i in 0..n {
            let mut x = best_x.clone();
            x[i] += steps[i];
            let fx = eval(&x);
            simplex.push((x, fx));
        }

        converged = false;
        while iterations < opts.max_iterations {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            if simplex[n].1 - simplex[0].1 < opts.f_tol {
                converged = true;
                break;
            }
            iterations += 1;

            let mut centroid = vec![0.0; n];
            for (x, _) in &simplex[..n] {
                for (c, xi) in centroid.iter_mut().zip(x) {
                    *c += xi;
                }
            }
            for c in &mut centroid {
                *c /= n as f64;
            }
            let along = |t: f64, worst: &[f64]| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(worst)
                    .map(|(c, w)| c + t * (c - w))
                    .collect()
            };

            let worst = simplex[n].0.clone();
            let f_best = simplex[0].1;
            let f_second = simplex[n - 1].1;
            let f_worst = simplex[n].1;

            let xr = along(REFLECT, &worst);
            let fr = eval(&xr);
            if fr < f_best {
                let xe = along(EXPAND, &worst);
                let fe = eval(&xe);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
                continue;
            }
            if fr < f_second {
                simplex[n] = (xr, fr);
                continue;
            }
            let (xc, fc) = if fr < f_worst {
                let xc = along(CONTRACT * REFLECT, &worst);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = along(-CONTRACT, &worst);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < fr.min(f_worst) {
                simplex[n] = (xc, fc);
                continue;
            }
            let x_best = simplex[0].0.clone();
            for (x, fx) in simplex.iter_mut().skip(1) {
                for (xi, bi) in x.iter_mut().zip(&x_best) {
                    *xi = bi + SHRINK * (*xi - bi);
                }
                *fx = eval(x);
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if simplex[0].1 < best_f {
            best_x = simplex[0].0.clone();
            best_f = simplex[0].1;
        }
        if !converged || iterations >= opts.max_iterations {
            break;
        }
        if round > 0 && start_f - best_f < opts.f_tol {
            break;
        }
    }

    Minimum {
        x: best_x,
        f: best_f,
        iterations,
        evaluations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimises_quadratic() {
        let m = nelder_mead(
            |x| (x[0] - 3.0).powi(2) + 10.0 * (x[1] + 1.0).powi(2),
            &[0.0, 0.0],
            &[1.0, 1.0],
            &NelderMeadOptions::default(),
        );
        assert!(m.converged);
        assert!((m.x[0] - 3.0).abs() < 1e-3);
        assert!((m.x[1] + 1.0).abs() < 1e-3);
    }

    #[test]
    fn rosenbrock_with_larger_budget() {
        let opts = NelderMeadOptions {
            max_iterations: 5000,
            f_tol: 1e-14,
            restarts: 3,
        };
        let m = nelder_mead(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            &[0.5, 0.5],
            &opts,
        );
        assert!((m.x[0] - 1.0).abs() < 1e-4, "{:?}", m.x);
        assert!((m.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn never_worse_than_start_and_handles_nan() {
        let m = nelder_mead(
            |x| if x[0] < 0.0 { f64::NAN } else { (x[0] - 0.5).abs() },
            &[2.0],
            &[1.0],
            &NelderMeadOptions::default(),
        );
        assert!(m.f <= 1.5);
        assert!((m.x[0] - 0.5).abs() < 1e-3);
    }

    #[test]
    fn iteration_budget_respected() {
        let opts = NelderMeadOptions {
            max_iterations: 5,
            ..Default::default()
        };
        let m = nelder_mead(|x| x.iter().map(|v| v * v).sum(), &[5.0; 4], &[0.1; 4], &opts);
        assert!(!m.converged);
        assert_eq!(m.iterations, 5);
    }
}
