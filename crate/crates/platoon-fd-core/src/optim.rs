//! Bounded derivative-free simplex minimizer (Nelder–Mead).
//!
//! Standard coefficients (reflect 1, expand 2, contract 0.5, shrink 0.5)
//! with every proposal clamped to the search box, so iterates never leave
//! the feasible region. Shrink steps stay in the box for free (convex
//! combinations of in-box points). Deterministic given the start point.

use alloc::vec::Vec;

use crate::math::abs;

const ALPHA: f64 = 1.0; // reflection
const GAMMA: f64 = 2.0; // expansion
const RHO: f64 = 0.5; // contraction
const SIGMA: f64 = 0.5; // shrink

/// Budget and stopping tolerances.
#[derive(Debug, Clone, Copy)]
pub(crate) struct NmOptions {
    /// Hard cap on objective evaluations.
    pub max_evals: usize,
    /// Simplex collapse threshold: max coordinate spread over box span.
    pub x_tol: f64,
    /// Objective spread threshold across the simplex.
    pub f_tol: f64,
}

/// Result of one simplex run.
#[derive(Debug, Clone)]
pub(crate) struct NmOutcome {
    /// Best point found (inside the box).
    pub x: Vec<f64>,
    /// Objective at `x`.
    pub f: f64,
    /// Evaluations spent.
    pub evals: usize,
    /// True when both tolerances were met before the budget ran out.
    pub converged: bool,
}

fn clamp_into(x: &mut [f64], lb: &[f64], ub: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lb[i], ub[i]);
    }
}

/// Minimize `f` over the box `[lb, ub]` starting from `x0` (must lie in the
/// box). NaN objective values are treated as +∞ so ordering stays total.
pub(crate) fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    lb: &[f64],
    ub: &[f64],
    opts: &NmOptions,
) -> NmOutcome {
    let n = x0.len();
    debug_assert!(n >= 1 && lb.len() == n && ub.len() == n);
    debug_assert!((0..n).all(|i| lb[i] < ub[i] && x0[i] >= lb[i] && x0[i] <= ub[i]));

    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        let y = f(x);
        if y.is_nan() {
            f64::INFINITY
        } else {
            y
        }
    };

    // n+1 vertices: x0 plus one 5%-of-span step per coordinate, flipped
    // inward when the step would leave the box.
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut v = x0.to_vec();
        let step = 0.05 * (ub[i] - lb[i]);
        v[i] = if v[i] + step <= ub[i] { v[i] + step } else { v[i] - step };
        let fv = eval(&v, &mut evals);
        simplex.push((v, fv));
    }

    let mut converged = false;
    while evals < opts.max_evals {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(core::cmp::Ordering::Equal));

        let f_best = simplex[0].1;
        let f_worst = simplex[n].1;
        let f_spread_ok = f_worst - f_best <= opts.f_tol;
        let x_spread_ok = (0..n).all(|i| {
            let span = ub[i] - lb[i];
            let best = simplex[0].0[i];
            simplex.iter().all(|(v, _)| abs(v[i] - best) / span <= opts.x_tol)
        });
        if f_spread_ok && x_spread_ok {
            converged = true;
            break;
        }

        // Centroid of all vertices but the worst.
        let mut centroid = alloc::vec![0.0; n];
        for (v, _) in simplex.iter().take(n) {
            for i in 0..n {
                centroid[i] += v[i];
            }
        }
        for c in centroid.iter_mut() {
            *c /= n as f64;
        }

        let worst = simplex[n].0.clone();
        let f_second_worst = simplex[n - 1].1;

        let mut reflected: Vec<f64> =
            (0..n).map(|i| centroid[i] + ALPHA * (centroid[i] - worst[i])).collect();
        clamp_into(&mut reflected, lb, ub);
        let f_reflected = eval(&reflected, &mut evals);

        if f_reflected < f_best {
            let mut expanded: Vec<f64> =
                (0..n).map(|i| centroid[i] + GAMMA * (reflected[i] - centroid[i])).collect();
            clamp_into(&mut expanded, lb, ub);
            let f_expanded = eval(&expanded, &mut evals);
            simplex[n] = if f_expanded < f_reflected {
                (expanded, f_expanded)
            } else {
                (reflected, f_reflected)
            };
            continue;
        }

        if f_reflected < f_second_worst {
            simplex[n] = (reflected, f_reflected);
            continue;
        }

        // Contract toward the better of worst/reflected.
        let (anchor, f_anchor) = if f_reflected < simplex[n].1 {
            (&reflected, f_reflected)
        } else {
            (&worst, simplex[n].1)
        };
        let mut contracted: Vec<f64> =
            (0..n).map(|i| centroid[i] + RHO * (anchor[i] - centroid[i])).collect();
        clamp_into(&mut contracted, lb, ub);
        let f_contracted = eval(&contracted, &mut evals);
        if f_contracted < f_anchor {
            simplex[n] = (contracted, f_contracted);
            continue;
        }

        // Shrink everything toward the best vertex.
        let best = simplex[0].0.clone();
        for (v, fv) in simplex.iter_mut().skip(1) {
            for i in 0..n {
                v[i] = best[i] + SIGMA * (v[i] - best[i]);
            }
            *fv = eval(v, &mut evals);
            if evals >= opts.max_evals {
                break;
            }
        }
    }

    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(core::cmp::Ordering::Equal));
    let (x, f_val) = simplex.swap_remove(0);
    NmOutcome { x, f: f_val, evals, converged }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn opts(max_evals: usize) -> NmOptions {
        NmOptions { max_evals, x_tol: 1e-10, f_tol: 1e-12 }
    }

    fn sq(x: f64) -> f64 {
        x * x
    }

    #[test]
    fn quadratic_bowl_minimum_is_found() {
        let out = nelder_mead(
            |x| sq(x[0] - 1.5) + 3.0 * sq(x[1] + 0.5),
            &[0.0, 0.0],
            &[-10.0, -10.0],
            &[10.0, 10.0],
            &opts(5000),
        );
        assert!(out.converged);
        assert_relative_eq!(out.x[0], 1.5, epsilon = 1e-6);
        assert_relative_eq!(out.x[1], -0.5, epsilon = 1e-6);
        assert!(out.f < 1e-12);
    }

    #[test]
    fn rosenbrock_valley_is_traversed() {
        let out = nelder_mead(
            |x| sq(1.0 - x[0]) + 100.0 * sq(x[1] - x[0] * x[0]),
            &[-1.2, 1.0],
            &[-5.0, -5.0],
            &[5.0, 5.0],
            &opts(20_000),
        );
        assert!(out.converged);
        assert_relative_eq!(out.x[0], 1.0, epsilon = 1e-5);
        assert_relative_eq!(out.x[1], 1.0, epsilon = 1e-5);
    }

    #[test]
    fn bounds_pin_exterior_minima_to_the_face() {
        // Unconstrained minimum at (12, 0) sits outside ub[0] = 10.
        let out = nelder_mead(
            |x| sq(x[0] - 12.0) + x[1] * x[1],
            &[5.0, 1.0],
            &[0.0, -2.0],
            &[10.0, 2.0],
            &opts(5000),
        );
        assert!(out.x[0] <= 10.0 + 1e-15);
        assert_relative_eq!(out.x[0], 10.0, epsilon = 1e-6);
        assert_relative_eq!(out.x[1], 0.0, epsilon = 1e-6);
    }

    #[test]
    fn evaluation_budget_is_a_hard_cap() {
        let out = nelder_mead(
            |x| x.iter().map(|c| c * c).sum::<f64>(),
            &[3.0, 3.0, 3.0],
            &[-5.0, -5.0, -5.0],
            &[5.0, 5.0, 5.0],
            &opts(25),
        );
        assert!(out.evals <= 25 + 3); // shrink loop may finish its sweep
        assert!(!out.converged);
    }

    #[test]
    fn nan_objective_regions_are_avoided() {
        let out = nelder_mead(
            |x| if x[0] < 0.0 { f64::NAN } else { sq(x[0] - 2.0) },
            &[4.0],
            &[-10.0],
            &[10.0],
            &opts(2000),
        );
        assert_relative_eq!(out.x[0], 2.0, epsilon = 1e-6);
    }
}
