//! Independent oracles for the integration and acceptance suites.
//!
//! Everything here recomputes the objective from first principles (direct
//! matrix assembly and inversion), so agreement with the library is a real
//! cross-check rather than a tautology.

// Each test binary uses its own subset of the oracles.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

use aopt_core::glm::GlmModel;

/// h(w) by direct inversion of F = Σ wᵢνᵢq(xᵢ)q(xᵢ)ᵀ; zero when F is not
/// numerically invertible.
pub fn oracle_h(model: &GlmModel, points: &[Vec<f64>], weights: &[f64]) -> f64 {
    let p = model.p();
    let fisher = oracle_fisher(model, points, weights);
    match fisher.clone().try_inverse() {
        Some(inverse) => {
            let residual = (&fisher * &inverse - DMatrix::identity(p, p)).amax();
            let trace = inverse.trace();
            if residual > 1e-6 || !trace.is_finite() || trace <= 0.0 {
                0.0
            } else {
                1.0 / trace
            }
        }
        None => 0.0,
    }
}

pub fn oracle_fisher(model: &GlmModel, points: &[Vec<f64>], weights: &[f64]) -> DMatrix<f64> {
    let p = model.p();
    let mut fisher = DMatrix::zeros(p, p);
    for (x, w) in points.iter().zip(weights) {
        if *w == 0.0 {
            continue;
        }
        let q = DVector::from_vec(model.predictor().eval(x).unwrap());
        let nu = model.nu(model.linear_predictor(x).unwrap()).unwrap();
        fisher.ger(w * nu, &q, &q, 1.0);
    }
    fisher
}

/// Sensitivity φ(x, ξ) = ν qᵀ(F⁻¹)²q by direct inversion.
pub fn oracle_phi(model: &GlmModel, points: &[Vec<f64>], weights: &[f64], x: &[f64]) -> f64 {
    let fisher = oracle_fisher(model, points, weights);
    let inverse = fisher.try_inverse().expect("oracle_phi needs invertible F");
    let q = DVector::from_vec(model.predictor().eval(x).unwrap());
    let nu = model.nu(model.linear_predictor(x).unwrap()).unwrap();
    let fq = &inverse * &q;
    nu * fq.dot(&fq)
}

pub fn oracle_trace_inverse(model: &GlmModel, points: &[Vec<f64>], weights: &[f64]) -> f64 {
    oracle_fisher(model, points, weights)
        .try_inverse()
        .expect("oracle needs invertible F")
        .trace()
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut threshold = 0.0;
    let mut rho = 0;
    for (i, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            rho = i + 1;
            threshold = t;
        }
    }
    if rho == 0 {
        let mut out = vec![0.0; v.len()];
        out[0] = 1.0;
        return out;
    }
    v.iter().map(|&u| (u - threshold).max(0.0)).collect()
}

/// Projected-gradient ascent of h over the weight simplex. The gradient
/// ∂h/∂wᵢ = h²·φᵢ is assembled from the direct inverse.
pub fn pgd_simplex_maximize(
    model: &GlmModel,
    points: &[Vec<f64>],
    iterations: usize,
) -> (Vec<f64>, f64) {
    let m = points.len();
    let mut weights = vec![1.0 / m as f64; m];
    let mut h = oracle_h(model, points, &weights);
    let mut step = 1.0;
    for _ in 0..iterations {
        let fisher = oracle_fisher(model, points, &weights);
        let Some(inverse) = fisher.try_inverse() else { break };
        let grad: Vec<f64> = points
            .iter()
            .map(|x| {
                let q = DVector::from_vec(model.predictor().eval(x).unwrap());
                let nu = model.nu(model.linear_predictor(x).unwrap()).unwrap();
                let fq = &inverse * &q;
                h * h * nu * fq.dot(&fq)
            })
            .collect();
        let mut improved = false;
        let mut t = step;
        for _ in 0..60 {
            let proposal: Vec<f64> = weights
                .iter()
                .zip(&grad)
                .map(|(w, g)| w + t * g)
                .collect();
            let projected = project_simplex(&proposal);
            let h_new = oracle_h(model, points, &projected);
            if h_new > h {
                weights = projected;
                h = h_new;
                step = t * 1.5;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (weights, h)
}

/// Multiplicative algorithm for A-optimal weights: wᵢ ← wᵢ φᵢ / tr(F⁻¹).
/// Runs until the equivalence condition holds within `tol` or the cap.
pub fn multiplicative_maximize(
    model: &GlmModel,
    points: &[Vec<f64>],
    max_iterations: usize,
    tol: f64,
) -> (Vec<f64>, f64) {
    let m = points.len();
    let mut weights = vec![1.0 / m as f64; m];
    for _ in 0..max_iterations {
        let fisher = oracle_fisher(model, points, &weights);
        let Some(inverse) = fisher.try_inverse() else { break };
        let phis: Vec<f64> = points
            .iter()
            .map(|x| {
                let q = DVector::from_vec(model.predictor().eval(x).unwrap());
                let nu = model.nu(model.linear_predictor(x).unwrap()).unwrap();
                let fq = &inverse * &q;
                nu * fq.dot(&fq)
            })
            .collect();
        let trace = inverse.trace();
        let max_phi = phis.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max_phi <= trace * (1.0 + tol) {
            break;
        }
        for (w, phi) in weights.iter_mut().zip(&phis) {
            *w *= phi / trace;
        }
        let total: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= total;
        }
    }
    let h = oracle_h(model, points, &weights);
    (weights, h)
}

/// Exhaustive simplex grid search with two local refinement passes.
pub fn simplex_grid_search(model: &GlmModel, points: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let m = points.len();
    let mut best_w = vec![1.0 / m as f64; m];
    let mut best_h = oracle_h(model, points, &best_w);

    let coarse = if m >= 5 { 0.02 } else { 0.01 };
    grid_pass(
        model,
        points,
        &vec![(0.0, 1.0); m],
        coarse,
        &mut best_w,
        &mut best_h,
    );
    for step in [coarse / 5.0, 0.001] {
        let windows: Vec<(f64, f64)> = best_w
            .iter()
            .map(|w| ((w - 5.0 * step).max(0.0), (w + 5.0 * step).min(1.0)))
            .collect();
        grid_pass(model, points, &windows, step, &mut best_w, &mut best_h);
    }
    (best_w, best_h)
}

fn grid_pass(
    model: &GlmModel,
    points: &[Vec<f64>],
    windows: &[(f64, f64)],
    step: f64,
    best_w: &mut Vec<f64>,
    best_h: &mut f64,
) {
    let m = points.len();
    let mut current = vec![0.0; m];
    enumerate_weights(model, points, windows, step, 0, 0.0, &mut current, best_w, best_h);
}

#[allow(clippy::too_many_arguments)]
fn enumerate_weights(
    model: &GlmModel,
    points: &[Vec<f64>],
    windows: &[(f64, f64)],
    step: f64,
    index: usize,
    used: f64,
    current: &mut Vec<f64>,
    best_w: &mut Vec<f64>,
    best_h: &mut f64,
) {
    let m = points.len();
    if index == m - 1 {
        let last = 1.0 - used;
        let (lo, hi) = windows[m - 1];
        if last >= lo - 1e-9 && last <= hi + 1e-9 && last >= -1e-9 {
            current[m - 1] = last.max(0.0);
            let h = oracle_h(model, points, current);
            if h > *best_h {
                *best_h = h;
                *best_w = current.clone();
            }
        }
        return;
    }
    let (lo, hi) = windows[index];
    let start = (lo / step).ceil() as i64;
    let stop = (hi / step).floor() as i64;
    for k in start..=stop {
        let w = k as f64 * step;
        if used + w > 1.0 + 1e-9 {
            break;
        }
        current[index] = w;
        enumerate_weights(
            model, points, windows, step, index + 1, used + w, current, best_w, best_h,
        );
    }
}

/// Efficient rounding (multiplier method): start from ⌈(n − m̃/2)wᵢ⌉ on the
/// support and adjust by the quotient criterion until the total is n.
pub fn efficient_rounding(weights: &[f64], n: u64) -> Vec<u64> {
    let support: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    let m_tilde = support.len() as f64;
    let mut counts = vec![0u64; weights.len()];
    for &i in &support {
        counts[i] = ((n as f64 - m_tilde / 2.0) * weights[i]).ceil().max(0.0) as u64;
    }
    loop {
        let total: u64 = counts.iter().sum();
        if total == n {
            break;
        }
        if total < n {
            let &grow = support
                .iter()
                .min_by(|&&a, &&b| {
                    (counts[a] as f64 / weights[a]).total_cmp(&(counts[b] as f64 / weights[b]))
                })
                .unwrap();
            counts[grow] += 1;
        } else {
            let &shrink = support
                .iter()
                .filter(|&&i| counts[i] > 0)
                .max_by(|&&a, &&b| {
                    ((counts[a] as f64 - 1.0) / weights[a])
                        .total_cmp(&((counts[b] as f64 - 1.0) / weights[b]))
                })
                .unwrap();
            counts[shrink] -= 1;
        }
    }
    counts
}
