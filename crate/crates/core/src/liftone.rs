//! A-optimal weight optimization on a fixed finite candidate set.
//!
//! Each coordinate update lifts one weight wᵢ to x while rescaling the rest
//! by (1−x)/(1−wᵢ). Along that line the D-objective and its minors are the
//! polynomials
//!
//!   fᵢ(x)       = a·x(1−x)^{p−1} + b·(1−x)^p,
//!   fᵢ⁽⁻ʲ⁾(x)   = aⱼ·x(1−x)^{p−2} + bⱼ·(1−x)^{p−1},
//!
//! so the A-objective restricted to the line is the rational function
//! hᵢ(x) = [(b−a)x² + (a−2b)x + b] / [(A−B)x + B] with A = Σaⱼ, B = Σbⱼ,
//! whose maximum over [0,1] has a closed form with four cases. Iterating the
//! updates in random order ascends h monotonically, and a converged
//! allocation is A-optimal exactly when every wᵢ already maximizes its hᵢ —
//! that check is the optimality certificate reported by the solver.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::design::{det_and_minors, is_singular, ApproximateDesign, Atoms};
use crate::error::{Error, Result};
use crate::glm::GlmModel;

/// Sweep cap for the coordinate-ascent loop.
pub const SWEEP_CAP: usize = 10_000;
/// Default relative improvement per sweep below which the loop stops.
pub const DEFAULT_EPSILON: f64 = 1e-10;
/// Output weights below this are snapped to zero and the rest renormalized.
const PRUNE_TOL: f64 = 1e-12;
/// Relative slack for the coordinatewise optimality certificate.
const CERT_TOL: f64 = 1e-8;
/// Scale-aware slack for the case predicates of the 1-D maximizer.
const CASE_TOL: f64 = 1e-10;

/// Initial allocation for the coordinate ascent.
#[derive(Debug, Clone)]
pub enum LiftOneInit {
    /// wᵢ = 1/m.
    Uniform,
    /// wᵢ = Uᵢ/ΣUⱼ with Uⱼ iid exponential(1), drawn from the given seed.
    RandomExponential(u64),
    /// Warm start from an existing allocation (used by the ForLion loop).
    Weights(Vec<f64>),
}

/// How the returned allocation was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    LiftOne,
    Saturated,
    /// p = 1: all weight on the most informative point.
    ArgmaxPoint,
}

/// Coefficients of fᵢ, the fᵢ⁽⁻ʲ⁾, and their sums for one lift direction.
#[derive(Debug, Clone)]
pub struct LiftOneCoefficients {
    pub a: f64,
    pub b: f64,
    pub a_j: Vec<f64>,
    pub b_j: Vec<f64>,
    /// A = Σⱼ aⱼ.
    pub a_total: f64,
    /// B = Σⱼ bⱼ.
    pub b_total: f64,
    /// Lifted coordinate.
    pub index: usize,
    /// Current weight wᵢ ∈ [0, 1).
    pub weight: f64,
}

impl LiftOneCoefficients {
    /// Builds coefficients from the fᵢ and fᵢ⁽⁻ʲ⁾ values directly.
    pub fn from_parts(
        a: f64,
        b: f64,
        a_j: Vec<f64>,
        b_j: Vec<f64>,
        index: usize,
        weight: f64,
    ) -> Self {
        let a_total = a_j.iter().sum();
        let b_total = b_j.iter().sum();
        Self {
            a,
            b,
            a_j,
            b_j,
            a_total,
            b_total,
            index,
            weight,
        }
    }

    /// hᵢ(x) = [(b−a)x² + (a−2b)x + b] / [(A−B)x + B].
    pub fn h_i(&self, x: f64) -> f64 {
        let numer = (self.b - self.a) * x * x + (self.a - 2.0 * self.b) * x + self.b;
        let denom = (self.a_total - self.b_total) * x + self.b_total;
        if denom <= 0.0 {
            0.0
        } else {
            numer / denom
        }
    }
}

/// Result of the weight optimization, with the ascent trace for auditing.
#[derive(Debug, Clone)]
pub struct LiftOneResult {
    pub design: ApproximateDesign,
    /// A-objective of the returned design.
    pub h: f64,
    /// Full sweeps performed.
    pub sweeps: usize,
    /// Optimality certificate: every weight maximizes its own hᵢ.
    pub certified: bool,
    pub method: SolveMethod,
    /// Seed that drove the sweep order (and the random initializer).
    pub seed: u64,
    /// h after every accepted update, for monotonicity audits.
    pub h_trace: Vec<f64>,
}

/// Analytic A-optimal weights for a saturated design (m = p ≥ 2):
/// wᵢ ∝ √(cᵢ/νᵢ) with cᵢ the i-th diagonal entry of (XXᵀ)⁻¹.
pub fn saturated_aopt(model: &GlmModel, points: &[Vec<f64>]) -> Result<ApproximateDesign> {
    let p = model.p();
    if points.len() != p || p < 2 {
        return Err(Error::Invalid(format!(
            "saturated solver needs exactly p = {p} ≥ 2 points, got {}",
            points.len()
        )));
    }
    let atoms = Atoms::new(model, points)?;
    for (i, nu) in atoms.nus.iter().enumerate() {
        if *nu <= 0.0 {
            return Err(Error::Domain(format!(
                "saturated solver requires positive information at every point; nu = {nu} at point {i}"
            )));
        }
    }
    let mut gram = DMatrix::zeros(p, p);
    for (i, ri) in atoms.rows.iter().enumerate() {
        for (j, rj) in atoms.rows.iter().enumerate() {
            gram[(i, j)] = ri.dot(rj);
        }
    }
    if is_singular(&gram) {
        return Err(Error::Rank(
            "model matrix of the saturated design is singular".into(),
        ));
    }
    let inverse = gram
        .cholesky()
        .ok_or_else(|| Error::Rank("model matrix of the saturated design is singular".into()))?
        .inverse();
    let mut weights: Vec<f64> = (0..p)
        .map(|i| (inverse[(i, i)] / atoms.nus[i]).sqrt())
        .collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    ApproximateDesign::new(points.to_vec(), weights)
}

/// Extracts the lift-one coefficients for direction `index` of a design.
pub fn liftone_coefficients(
    model: &GlmModel,
    design: &ApproximateDesign,
    index: usize,
) -> Result<LiftOneCoefficients> {
    if index >= design.m() {
        return Err(Error::Invalid(format!("index {index} out of range")));
    }
    let atoms = Atoms::new(model, design.points())?;
    let fisher = atoms.fisher(design.weights());
    let (f, minors) = det_and_minors(&fisher);
    if is_singular(&fisher) || f <= 0.0 {
        return Err(Error::Singular("lift-one requires f(w) > 0".into()));
    }
    coefficients_from_state(&atoms, design.weights(), &fisher, f, &minors, index)
}

/// Coefficient extraction against a precomputed Fisher state. `f` and
/// `minors` must belong to `fisher`, which must be F(w) for `weights`.
fn coefficients_from_state(
    atoms: &Atoms,
    weights: &[f64],
    fisher: &DMatrix<f64>,
    f: f64,
    minors: &[f64],
    index: usize,
) -> Result<LiftOneCoefficients> {
    let p = atoms.p;
    let w_i = weights[index];
    if w_i >= 1.0 {
        return Err(Error::Weight(format!(
            "lift-one direction {index} has weight {w_i} ≥ 1"
        )));
    }
    let row = &atoms.rows[index];
    let nu = atoms.nus[index];

    let (a, b, a_j, b_j);
    if w_i > 0.0 {
        // b = fᵢ(0) from the rank-one downdate F₀ = (F − wᵢνᵢqqᵀ)/(1−wᵢ).
        let mut dropped = fisher.clone();
        dropped.ger(-w_i * nu, row, row, 1.0);
        dropped /= 1.0 - w_i;
        let (b0, b0_j) = det_and_minors(&dropped);
        b = clamp_nonneg(b0);
        b_j = b0_j.iter().map(|v| clamp_nonneg(*v)).collect::<Vec<_>>();
        let shrink = (1.0 - w_i).powi(p as i32);
        a = clamp_nonneg((f - b * shrink) / (w_i * (1.0 - w_i).powi(p as i32 - 1)));
        a_j = minors
            .iter()
            .zip(&b_j)
            .map(|(m_j, b_j)| {
                clamp_nonneg(
                    (m_j - b_j * (1.0 - w_i).powi(p as i32 - 1))
                        / (w_i * (1.0 - w_i).powi(p as i32 - 2)),
                )
            })
            .collect::<Vec<_>>();
    } else {
        // b = f(w); a from the half-lift F½ = (F + νᵢqqᵀ)/2.
        b = f;
        b_j = minors.to_vec();
        let mut half = fisher.clone();
        half.ger(nu, row, row, 1.0);
        half /= 2.0;
        let (f_half, minors_half) = det_and_minors(&half);
        a = clamp_nonneg(f_half * (2.0f64).powi(p as i32) - b);
        a_j = minors_half
            .iter()
            .zip(&b_j)
            .map(|(m_half, b_j)| clamp_nonneg(m_half * (2.0f64).powi(p as i32 - 1) - b_j))
            .collect::<Vec<_>>();
    }
    Ok(LiftOneCoefficients::from_parts(a, b, a_j, b_j, index, w_i))
}

/// Negative coefficient values are floating-point artifacts; the quantities
/// are nonnegative by construction.
fn clamp_nonneg(v: f64) -> f64 {
    v.max(0.0)
}

fn approx_eq(u: f64, v: f64) -> bool {
    (u - v).abs() <= CASE_TOL * u.max(v).max(1.0)
}

fn approx_gt(u: f64, v: f64) -> bool {
    u - v > CASE_TOL * u.abs().max(v.abs()).max(1.0)
}

fn approx_pos(u: f64) -> bool {
    u > CASE_TOL * u.max(1.0)
}

/// Maximizes hᵢ over [0, 1], returning the maximizer and the value.
///
/// The four cases and their predicates follow the closed-form solution; the
/// case boundaries coincide in value, so the scale-aware tie tolerance only
/// picks between equivalent maximizers.
pub fn maximize_hi(coeffs: &LiftOneCoefficients) -> Result<(f64, f64)> {
    let (a, b) = (coeffs.a, coeffs.b);
    let (big_a, big_b) = (coeffs.a_total, coeffs.b_total);
    if !approx_pos(big_a) && !approx_pos(big_b) {
        return Err(Error::Degenerate);
    }
    let eq_ab = approx_eq(big_a, big_b);

    if !eq_ab
        && approx_pos(big_a)
        && approx_pos(big_b)
        && approx_gt(a, b)
        && approx_gt(a * big_b, b * big_a)
        && approx_gt((a - b) * big_b, b * big_a)
    {
        // Interior optimum.
        let t_star = (big_a * (a * big_b - b * big_a) / (a - b)).max(0.0).sqrt();
        let x_star = ((t_star - big_b) / (big_a - big_b)).clamp(0.0, 1.0);
        let root = (big_a * (a - b)).sqrt() - (a * big_b - b * big_a).sqrt();
        let value = (root / (big_a - big_b)).powi(2);
        return Ok((x_star, value));
    }
    if eq_ab && approx_gt(a, 2.0 * b) {
        let x_star = (a - 2.0 * b) / (2.0 * (a - b));
        let value = a * a / (4.0 * (a - b) * big_b);
        return Ok((x_star, value));
    }
    if !eq_ab && !approx_pos(big_b) && !approx_pos(b) {
        // Boundary-degenerate direction: hᵢ(x) = (a/A)(1−x) in the limit.
        return Ok((0.0, a / big_a));
    }
    if big_b <= 0.0 {
        return Err(Error::Degenerate);
    }
    Ok((0.0, b / big_b))
}

/// Runs the lift-one coordinate ascent. Saturated inputs (m = p) delegate to
/// the analytic solver and p = 1 reduces to the single best point.
pub fn liftone_optimize(
    model: &GlmModel,
    points: &[Vec<f64>],
    init: LiftOneInit,
    epsilon: f64,
) -> Result<LiftOneResult> {
    let seed = match &init {
        LiftOneInit::RandomExponential(seed) => *seed,
        _ => 0,
    };
    liftone_optimize_with_seed(model, points, init, epsilon, seed)
}

/// As [`liftone_optimize`], with the sweep-order seed made explicit.
pub fn liftone_optimize_with_seed(
    model: &GlmModel,
    points: &[Vec<f64>],
    init: LiftOneInit,
    epsilon: f64,
    seed: u64,
) -> Result<LiftOneResult> {
    let m = points.len();
    let p = model.p();
    if m == 0 {
        return Err(Error::Invalid("no candidate points".into()));
    }
    for (i, xi) in points.iter().enumerate() {
        for xj in points.iter().skip(i + 1) {
            if xi == xj {
                return Err(Error::Invalid(format!("duplicate candidate point {xi:?}")));
            }
        }
    }

    if p == 1 {
        return solve_single_parameter(model, points, seed);
    }
    if m < p {
        return Err(Error::Infeasible(format!(
            "{m} candidate points cannot identify {p} parameters"
        )));
    }
    if m == p {
        let design = saturated_aopt(model, points)?;
        let atoms = Atoms::new(model, points)?;
        let h = atoms.h(design.weights());
        return Ok(LiftOneResult {
            h,
            design,
            sweeps: 0,
            certified: true,
            method: SolveMethod::Saturated,
            seed,
            h_trace: Vec::new(),
        });
    }

    let (atoms, scale) = Atoms::new(model, points)?.normalized();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = initial_weights(&init, m, &mut rng)?;

    let mut fisher = atoms.fisher(&weights);
    if is_singular(&fisher) {
        return Err(Error::Infeasible(
            "the information matrix is singular for every allocation on these points".into(),
        ));
    }
    let (mut f, mut minors) = det_and_minors(&fisher);
    let mut h_cur = ratio_h(f, &minors);
    if h_cur <= 0.0 {
        return Err(Error::Infeasible("initial allocation has h = 0".into()));
    }

    let mut h_trace = Vec::new();
    let mut order: Vec<usize> = (0..m).collect();
    let mut sweeps = 0;
    loop {
        if sweeps >= SWEEP_CAP {
            return Err(Error::NonConvergence(SWEEP_CAP));
        }
        sweeps += 1;
        let h_sweep_start = h_cur;
        order.shuffle(&mut rng);
        for &i in &order {
            if weights[i] >= 1.0 - 1e-12 {
                continue;
            }
            let coeffs = coefficients_from_state(&atoms, &weights, &fisher, f, &minors, i)?;
            let (x_star, h_pred) = match maximize_hi(&coeffs) {
                Ok(solution) => solution,
                Err(Error::Degenerate) => continue,
                Err(other) => return Err(other),
            };
            if x_star >= 1.0 - 1e-12 || (x_star - weights[i]).abs() <= 1e-15 {
                continue;
            }
            let proposal = lift(&weights, i, x_star);
            let fisher_new = atoms.fisher(&proposal);
            let (f_new, minors_new) = det_and_minors(&fisher_new);
            let h_new = ratio_h(f_new, &minors_new);
            debug_assert!(
                (h_new - h_pred).abs() <= 1e-8 * h_pred.max(h_new).max(f64::MIN_POSITIVE),
                "predicted h {h_pred} differs from lifted h {h_new}"
            );
            if h_new >= h_cur - 1e-15 * h_cur {
                weights = proposal;
                fisher = fisher_new;
                f = f_new;
                minors = minors_new;
                h_cur = h_new;
                h_trace.push(h_cur * scale);
            }
        }
        // Guard the simplex sum against drift across many sweeps.
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        if h_cur - h_sweep_start <= epsilon * h_sweep_start {
            break;
        }
    }

    // Snap negligible weights to zero and renormalize on output only, so
    // dropped points stay in the sweep and may re-enter.
    for w in &mut weights {
        if *w < PRUNE_TOL {
            *w = 0.0;
        }
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    fisher = atoms.fisher(&weights);
    let (f, minors) = det_and_minors(&fisher);
    let h_cur = ratio_h(f, &minors);

    let certified = certify(&atoms, &weights, &fisher, f, &minors, h_cur)?;
    Ok(LiftOneResult {
        design: ApproximateDesign::new(points.to_vec(), weights)?,
        h: h_cur * scale,
        sweeps,
        certified,
        method: SolveMethod::LiftOne,
        seed,
        h_trace,
    })
}

/// Exit check: no direction admits a better hᵢ value.
fn certify(
    atoms: &Atoms,
    weights: &[f64],
    fisher: &DMatrix<f64>,
    f: f64,
    minors: &[f64],
    h: f64,
) -> Result<bool> {
    for i in 0..weights.len() {
        if weights[i] >= 1.0 - 1e-12 {
            continue;
        }
        let coeffs = coefficients_from_state(atoms, weights, fisher, f, minors, i)?;
        match maximize_hi(&coeffs) {
            Ok((_, h_star)) => {
                if h_star > h * (1.0 + CERT_TOL) {
                    return Ok(false);
                }
            }
            Err(Error::Degenerate) => continue,
            Err(other) => return Err(other),
        }
    }
    Ok(true)
}

fn solve_single_parameter(
    model: &GlmModel,
    points: &[Vec<f64>],
    seed: u64,
) -> Result<LiftOneResult> {
    let atoms = Atoms::new(model, points)?;
    let scores: Vec<f64> = atoms
        .rows
        .iter()
        .zip(&atoms.nus)
        .map(|(row, nu)| nu * row[0] * row[0])
        .collect();
    let (best, best_score) = scores
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.total_cmp(b))
        .expect("nonempty candidate set");
    if *best_score <= 0.0 {
        return Err(Error::Infeasible(
            "no candidate point carries information".into(),
        ));
    }
    let mut weights = vec![0.0; points.len()];
    weights[best] = 1.0;
    Ok(LiftOneResult {
        design: ApproximateDesign::new(points.to_vec(), weights)?,
        h: *best_score,
        sweeps: 0,
        certified: true,
        method: SolveMethod::ArgmaxPoint,
        seed,
        h_trace: Vec::new(),
    })
}

fn initial_weights(init: &LiftOneInit, m: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    match init {
        LiftOneInit::Uniform => Ok(vec![1.0 / m as f64; m]),
        LiftOneInit::RandomExponential(_) => {
            // Exponential(1) draws, floored away from zero so every initial
            // weight is strictly interior.
            let draws: Vec<f64> = (0..m)
                .map(|_| (-f64::ln_1p(-rng.random_range(0.0..1.0))).max(1e-12))
                .collect();
            let total: f64 = draws.iter().sum();
            Ok(draws.iter().map(|u| u / total).collect())
        }
        LiftOneInit::Weights(w) => {
            if w.len() != m {
                return Err(Error::Invalid(format!(
                    "warm start has {} weights for {m} points",
                    w.len()
                )));
            }
            let total: f64 = w.iter().sum();
            if w.iter().any(|wi| *wi < 0.0) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::Weight("warm start is not on the simplex".into()));
            }
            Ok(w.iter().map(|wi| wi / total).collect())
        }
    }
}

/// Moves weight i to x and rescales the others by (1−x)/(1−wᵢ).
fn lift(weights: &[f64], index: usize, x: f64) -> Vec<f64> {
    let scale = (1.0 - x) / (1.0 - weights[index]);
    weights
        .iter()
        .enumerate()
        .map(|(k, w)| if k == index { x } else { w * scale })
        .collect()
}

fn ratio_h(f: f64, minors: &[f64]) -> f64 {
    let denom: f64 = minors.iter().sum();
    if f <= 0.0 || denom <= 0.0 {
        0.0
    } else {
        f / denom
    }
}
