//! Box-constrained quasi-Newton ascent.
//!
//! Projected BFGS with an Armijo backtracking line search along the
//! projected path. The inverse-curvature approximation is reset whenever the
//! active set changes or the curvature condition fails, which keeps the
//! method well behaved on the bounds. Objective evaluations may fail
//! (returning `None`); failed probes are treated as barriers.

use nalgebra::{DMatrix, DVector};

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 50;

fn clamp(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((xi, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *xi = xi.clamp(*lo, *hi);
    }
}

fn active_mask(x: &[f64], lower: &[f64], upper: &[f64]) -> Vec<i8> {
    x.iter()
        .zip(lower)
        .zip(upper)
        .map(|((xi, lo), hi)| {
            let span = (hi - lo).max(1.0);
            if *xi <= lo + 1e-12 * span {
                -1
            } else if *xi >= hi - 1e-12 * span {
                1
            } else {
                0
            }
        })
        .collect()
}

/// Gradient with components pointing out of the box zeroed at active bounds.
fn project_gradient(g: &DVector<f64>, mask: &[i8]) -> DVector<f64> {
    DVector::from_iterator(
        g.len(),
        g.iter().zip(mask).map(|(gi, m)| match m {
            -1 if *gi < 0.0 => 0.0,
            1 if *gi > 0.0 => 0.0,
            _ => *gi,
        }),
    )
}

/// Maximizes `f` over the box, starting from `start`. Returns the final
/// iterate and value, or `None` when the objective cannot be evaluated at
/// the (clamped) starting point.
pub(crate) fn maximize_box(
    f: &dyn Fn(&[f64]) -> Option<f64>,
    grad: &dyn Fn(&[f64]) -> Option<Vec<f64>>,
    lower: &[f64],
    upper: &[f64],
    start: &[f64],
    tol: f64,
    max_iter: usize,
) -> Option<(Vec<f64>, f64)> {
    let n = start.len();
    let mut x = start.to_vec();
    clamp(&mut x, lower, upper);
    let mut fx = f(&x)?;
    let mut g = DVector::from_vec(grad(&x)?);
    let mut inv_curv = DMatrix::identity(n, n);
    let mut mask = active_mask(&x, lower, upper);

    for _ in 0..max_iter {
        let pg = project_gradient(&g, &mask);
        if pg.amax() <= tol {
            break;
        }
        let mut direction = &inv_curv * &g;
        for (di, m) in direction.iter_mut().zip(&mask) {
            if (*m == -1 && *di < 0.0) || (*m == 1 && *di > 0.0) {
                *di = 0.0;
            }
        }
        if direction.dot(&pg) <= 1e-14 * direction.norm() * pg.norm() {
            direction = pg.clone();
            inv_curv = DMatrix::identity(n, n);
        }

        let mut accepted = None;
        let mut step = 1.0;
        for _ in 0..MAX_BACKTRACKS {
            let mut x_new: Vec<f64> = x
                .iter()
                .zip(direction.iter())
                .map(|(xi, di)| xi + step * di)
                .collect();
            clamp(&mut x_new, lower, upper);
            let moved: f64 = x_new
                .iter()
                .zip(&x)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if moved == 0.0 {
                break;
            }
            if let Some(f_new) = f(&x_new) {
                let predicted: f64 = g
                    .iter()
                    .zip(x_new.iter().zip(&x))
                    .map(|(gi, (a, b))| gi * (a - b))
                    .sum();
                if f_new >= fx + ARMIJO * predicted && f_new.is_finite() {
                    accepted = Some((x_new, f_new));
                    break;
                }
            }
            step *= 0.5;
        }

        let Some((x_new, f_new)) = accepted else {
            let was_identity = inv_curv == DMatrix::identity(n, n);
            if was_identity {
                break;
            }
            inv_curv = DMatrix::identity(n, n);
            continue;
        };

        let Some(g_new_vec) = grad(&x_new) else {
            x = x_new;
            fx = f_new;
            break;
        };
        let g_new = DVector::from_vec(g_new_vec);
        let new_mask = active_mask(&x_new, lower, upper);
        if new_mask != mask {
            inv_curv = DMatrix::identity(n, n);
        } else {
            // BFGS update on the negated objective: y = g_old − g_new.
            let s = DVector::from_iterator(n, x_new.iter().zip(&x).map(|(a, b)| a - b));
            let y = &g - &g_new;
            let sy = s.dot(&y);
            if sy > 1e-12 * s.norm() * y.norm() {
                let rho = 1.0 / sy;
                let identity = DMatrix::identity(n, n);
                let left = &identity - rho * &s * y.transpose();
                let right = &identity - rho * &y * s.transpose();
                inv_curv = &left * inv_curv * right + rho * &s * s.transpose();
            } else {
                inv_curv = DMatrix::identity(n, n);
            }
        }
        x = x_new;
        fx = f_new;
        g = g_new;
        mask = new_mask;
    }
    Some((x, fx))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_interior_quadratic_maximum() {
        let f = |x: &[f64]| Some(-(x[0] - 0.3).powi(2) - 2.0 * (x[1] + 0.4).powi(2));
        let g = |x: &[f64]| Some(vec![-2.0 * (x[0] - 0.3), -4.0 * (x[1] + 0.4)]);
        let (x, _) = maximize_box(&f, &g, &[-1.0, -1.0], &[1.0, 1.0], &[0.9, 0.9], 1e-10, 200)
            .unwrap();
        assert!((x[0] - 0.3).abs() < 1e-8);
        assert!((x[1] + 0.4).abs() < 1e-8);
    }

    #[test]
    fn respects_bounds() {
        let f = |x: &[f64]| Some(x[0] + 0.5 * x[1]);
        let g = |_: &[f64]| Some(vec![1.0, 0.5]);
        let (x, v) = maximize_box(&f, &g, &[0.0, 0.0], &[2.0, 3.0], &[0.1, 0.1], 1e-10, 200)
            .unwrap();
        assert_eq!(x, vec![2.0, 3.0]);
        assert_eq!(v, 3.5);
    }

    #[test]
    fn failed_probes_act_as_barriers() {
        let f = |x: &[f64]| {
            if x[0] > 0.8 {
                None
            } else {
                Some(x[0])
            }
        };
        let g = |_: &[f64]| Some(vec![1.0]);
        let (x, _) = maximize_box(&f, &g, &[0.0], &[1.0], &[0.2], 1e-10, 200).unwrap();
        assert!(x[0] <= 0.8);
    }
}
