//! A-optimal designs over mixed continuous/discrete design spaces.
//!
//! The outer loop alternates four moves on the current design: merge support
//! points closer than δ (weighted centroids, guarded against making the
//! information matrix singular), re-optimize the weights with the lift-one
//! solver, delete zero-weight points, and search the design space for the
//! maximizer x* of the sensitivity function
//!
//!   φ(x, ξ) = ν(βᵀq(x)) · q(x)ᵀ F(ξ)⁻² q(x).
//!
//! By the general equivalence theorem the design is A-optimal exactly when
//! max φ ≤ tr(F⁻¹); that inequality is the stopping rule and the reported
//! certificate. Otherwise x* joins the design with the analytically optimal
//! mixing weight α_t and the loop repeats. The continuous part of the search
//! runs a multistart box-constrained quasi-Newton ascent per admissible
//! discrete combination, using the closed-form gradient of φ.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::boxopt::maximize_box;
use crate::design::{det_and_minors, is_singular, ApproximateDesign, Atoms, DesignSpace};
use crate::error::{Error, Result};
use crate::glm::GlmModel;
use crate::liftone::{
    liftone_optimize_with_seed, maximize_hi, LiftOneCoefficients, LiftOneInit,
};

/// Relative slack on the equivalence inequality φ ≤ tr(F⁻¹).
pub const CERTIFICATE_SLACK: f64 = 1e-6;
const INITIAL_ATTEMPTS: usize = 1000;
const CORNER_CAP: usize = 64;

/// Tuning parameters of the ForLion loop.
#[derive(Debug, Clone)]
pub struct ForlionConfig {
    /// Merge threshold δ for nearby support points.
    pub delta: f64,
    /// Convergence threshold ε passed to the inner lift-one solver.
    pub epsilon: f64,
    /// Random starting points per discrete combination in the new-point search.
    pub multistart: usize,
    /// Projected-gradient tolerance of the quasi-Newton search.
    pub inner_tol: f64,
    /// Outer iteration cap.
    pub max_outer: usize,
    pub seed: u64,
}

impl Default for ForlionConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            epsilon: 1e-6,
            multistart: 5,
            inner_tol: 1e-8,
            max_outer: 500,
            seed: 0,
        }
    }
}

impl ForlionConfig {
    fn validate(&self) -> Result<()> {
        if self.delta <= 0.0 || self.epsilon <= 0.0 || self.inner_tol <= 0.0 {
            return Err(Error::Invalid(
                "delta, epsilon, and inner_tol must be positive".into(),
            ));
        }
        if self.max_outer == 0 {
            return Err(Error::Invalid("max_outer must be positive".into()));
        }
        Ok(())
    }
}

/// Mixing coefficients for one new-point step, with the chosen α_t.
#[derive(Debug, Clone)]
pub struct StepCoefficients {
    /// a_t = f_{m+1}(1/2)·2^p − b_t.
    pub a: f64,
    /// b_t = f(ξ_t).
    pub b: f64,
    /// A_t = Σⱼ aⱼ.
    pub a_total: f64,
    /// B_t = Σⱼ bⱼ.
    pub b_total: f64,
    /// Optimal mixing weight in [0, 1]; zero means no improving direction.
    pub alpha: f64,
}

/// One outer iteration of the ForLion loop.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub iter: usize,
    pub h: f64,
    /// Support size at the new-point step.
    pub m: usize,
    pub phi_star: f64,
    /// α_t taken after this row; absent on the terminal (certified) row.
    pub alpha: Option<f64>,
}

/// Converged design with its certificate and per-iteration trace.
#[derive(Debug, Clone)]
pub struct ForlionResult {
    pub design: ApproximateDesign,
    pub h: f64,
    pub trace: Vec<TraceRow>,
    /// Equivalence-theorem certificate max φ ≤ tr(F⁻¹)(1 + slack).
    pub certified: bool,
    pub trace_inverse: f64,
    pub phi_max: f64,
    pub outer_iterations: usize,
    /// Set when the final support exceeds the p(p+1)/2 bound that some
    /// optimal design must satisfy; informational only.
    pub support_warning: bool,
    /// Set when an exhaustive discrete grid has more than 10⁴ combinations.
    pub large_grid_warning: bool,
    pub seed: u64,
}

/// F⁻² and tr(F⁻¹) of a fixed design, for repeated sensitivity evaluation.
struct SensitivityKernel {
    inv_sq: DMatrix<f64>,
    trace_inverse: f64,
}

impl SensitivityKernel {
    fn new(model: &GlmModel, design: &ApproximateDesign) -> Result<Self> {
        let atoms = Atoms::new(model, design.points())?;
        let fisher = atoms.fisher(design.weights());
        if is_singular(&fisher) {
            return Err(Error::Singular(
                "sensitivity function needs a nonsingular design".into(),
            ));
        }
        let eig = fisher.symmetric_eigen();
        let mut trace_inverse = 0.0;
        let mut inv_sq_diag = DVector::zeros(eig.eigenvalues.len());
        for (k, lambda) in eig.eigenvalues.iter().enumerate() {
            trace_inverse += 1.0 / lambda;
            inv_sq_diag[k] = 1.0 / (lambda * lambda);
        }
        let inv_sq =
            &eig.eigenvectors * DMatrix::from_diagonal(&inv_sq_diag) * eig.eigenvectors.transpose();
        Ok(Self {
            inv_sq,
            trace_inverse,
        })
    }

    fn phi(&self, model: &GlmModel, x: &[f64]) -> Result<f64> {
        let q = DVector::from_vec(model.predictor().eval(x)?);
        let nu = model.nu(model.linear_predictor(x)?)?;
        Ok(nu * q.dot(&(&self.inv_sq * &q)))
    }

    /// Gradient of φ with respect to the continuous coordinates of `space`.
    fn phi_gradient(&self, model: &GlmModel, space: &DesignSpace, x: &[f64]) -> Result<Vec<f64>> {
        let q = DVector::from_vec(model.predictor().eval(x)?);
        let eta = model.linear_predictor(x)?;
        let nu = model.nu(eta)?;
        let nu_prime = model.nu_prime(eta)?;
        let aq = &self.inv_sq * &q;
        let quad = q.dot(&aq);
        space
            .continuous_indices()
            .iter()
            .map(|&factor| {
                let dq = DVector::from_vec(model.predictor().eval_deriv(x, factor)?);
                let dq_beta: f64 = dq
                    .iter()
                    .zip(model.beta())
                    .map(|(dqk, bk)| dqk * bk)
                    .sum();
                Ok(nu_prime * quad * dq_beta + 2.0 * nu * dq.dot(&aq))
            })
            .collect()
    }
}

/// Sensitivity function φ(x, ξ), evaluated through the eigendecomposition.
pub fn sensitivity(model: &GlmModel, design: &ApproximateDesign, x: &[f64]) -> Result<f64> {
    SensitivityKernel::new(model, design)?.phi(model, x)
}

/// Analytic gradient of φ with respect to the continuous coordinates.
pub fn sensitivity_gradient(
    model: &GlmModel,
    design: &ApproximateDesign,
    space: &DesignSpace,
    x: &[f64],
) -> Result<Vec<f64>> {
    check_differentiable(model, space)?;
    SensitivityKernel::new(model, design)?.phi_gradient(model, space, x)
}

fn check_differentiable(model: &GlmModel, space: &DesignSpace) -> Result<()> {
    for &factor in space.continuous_indices() {
        if !model.predictor().differentiable_in(factor) {
            return Err(Error::NonDifferentiable(factor));
        }
    }
    Ok(())
}

/// tr(F⁻¹) of a design, the right-hand side of the equivalence inequality.
pub fn trace_inverse(model: &GlmModel, design: &ApproximateDesign) -> Result<f64> {
    Ok(SensitivityKernel::new(model, design)?.trace_inverse)
}

/// Maximizes φ(·, ξ) over the design space: a multistart box-constrained
/// quasi-Newton ascent over the continuous block, exhaustively repeated for
/// every admissible discrete combination.
pub fn new_point_search(
    model: &GlmModel,
    design: &ApproximateDesign,
    space: &DesignSpace,
    config: &ForlionConfig,
) -> Result<(Vec<f64>, f64)> {
    check_differentiable(model, space)?;
    let kernel = SensitivityKernel::new(model, design)?;
    search_with_kernel(model, design, space, config, &kernel)
}

fn search_with_kernel(
    model: &GlmModel,
    design: &ApproximateDesign,
    space: &DesignSpace,
    config: &ForlionConfig,
    kernel: &SensitivityKernel,
) -> Result<(Vec<f64>, f64)> {
    let s = space.s();
    if s == 0 {
        return Err(Error::Invalid(
            "the new-point search needs at least one continuous factor".into(),
        ));
    }
    let cont_idx = space.continuous_indices().to_vec();
    let lower: Vec<f64> = cont_idx
        .iter()
        .map(|&j| match &space.factors()[j] {
            crate::design::Factor::Continuous { lower, .. } => *lower,
            _ => unreachable!(),
        })
        .collect();
    let upper: Vec<f64> = cont_idx
        .iter()
        .map(|&j| match &space.factors()[j] {
            crate::design::Factor::Continuous { upper, .. } => *upper,
            _ => unreachable!(),
        })
        .collect();
    let combos = space.discrete_combinations();

    let mut tasks: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for (combo_id, combo) in combos.iter().enumerate() {
        for corner in corner_starts(&lower, &upper) {
            tasks.push((corner, combo.clone()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(
            config
                .seed
                .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(combo_id as u64 + 1)),
        );
        for _ in 0..config.multistart {
            let draw: Vec<f64> = lower
                .iter()
                .zip(&upper)
                .map(|(lo, hi)| rng.random_range(*lo..=*hi))
                .collect();
            tasks.push((draw, combo.clone()));
        }
        // Current support points are natural refinement starts.
        for point in design.points() {
            let point_combo: Vec<f64> =
                space.discrete_indices().iter().map(|&j| point[j]).collect();
            if &point_combo == combo {
                tasks.push((cont_idx.iter().map(|&j| point[j]).collect(), combo.clone()));
            }
        }
    }

    let candidates: Vec<(Vec<f64>, f64)> = tasks
        .par_iter()
        .filter_map(|(start, combo)| {
            let objective = |xc: &[f64]| {
                let x = space.assemble_point(xc, combo);
                kernel.phi(model, &x).ok()
            };
            let gradient = |xc: &[f64]| {
                let x = space.assemble_point(xc, combo);
                kernel.phi_gradient(model, space, &x).ok()
            };
            maximize_box(
                &objective,
                &gradient,
                &lower,
                &upper,
                start,
                config.inner_tol,
                200,
            )
            .map(|(xc, phi)| (space.assemble_point(&xc, combo), phi))
        })
        .collect();

    // Deterministic reduction: best φ, ties broken by lexicographic point.
    let best = candidates.into_iter().reduce(|best, cand| {
        if cand.1 > best.1 || (cand.1 == best.1 && cand.0 < best.0) {
            cand
        } else {
            best
        }
    });
    best.ok_or_else(|| Error::Infeasible("sensitivity function nowhere evaluable".into()))
}

fn corner_starts(lower: &[f64], upper: &[f64]) -> Vec<Vec<f64>> {
    let s = lower.len();
    let count = (1usize << s.min(6)).min(CORNER_CAP);
    (0..count)
        .map(|mask| {
            (0..s)
                .map(|j| {
                    if j < 6 && mask >> j & 1 == 1 {
                        upper[j]
                    } else {
                        lower[j]
                    }
                })
                .collect()
        })
        .collect()
}

/// Optimal mixing weight for adding `x_star` to `design_t`, from the
/// closed-form three-case solution. α = 0 signals no improving direction.
pub fn alpha_step(
    model: &GlmModel,
    design_t: &ApproximateDesign,
    x_star: &[f64],
) -> Result<StepCoefficients> {
    let mut points = design_t.points().to_vec();
    points.push(x_star.to_vec());
    let (atoms, scale) = Atoms::new(model, &points)?.normalized();
    let p = atoms.p as i32;

    let mut base_weights = design_t.weights().to_vec();
    base_weights.push(0.0);
    let fisher_t = atoms.fisher(&base_weights);
    let (f_t, minors_t) = det_and_minors(&fisher_t);
    if is_singular(&fisher_t) || f_t <= 0.0 {
        return Err(Error::Singular("alpha step requires f(ξ_t) > 0".into()));
    }

    // Half-weight augmented design: (w/2, …, w/2, 1/2).
    let half_weights: Vec<f64> = base_weights
        .iter()
        .enumerate()
        .map(|(i, w)| if i + 1 == base_weights.len() { 0.5 } else { w / 2.0 })
        .collect();
    let (f_half, minors_half) = det_and_minors(&atoms.fisher(&half_weights));

    let b = f_t;
    let a = (f_half * (2.0f64).powi(p) - b).max(0.0);
    let b_j = minors_t;
    let a_j: Vec<f64> = minors_half
        .iter()
        .zip(&b_j)
        .map(|(mh, bj)| (mh * (2.0f64).powi(p - 1) - bj).max(0.0))
        .collect();

    let coeffs =
        LiftOneCoefficients::from_parts(a, b, a_j.clone(), b_j.clone(), points.len() - 1, 0.0);
    let alpha = match maximize_hi(&coeffs) {
        Ok((x, _)) => x.clamp(0.0, 1.0),
        Err(Error::Degenerate) => 0.0,
        Err(other) => return Err(other),
    };

    // Report coefficients on the original ν scale.
    let restore_p = scale.powi(p);
    let restore_p1 = scale.powi(p - 1);
    Ok(StepCoefficients {
        a: a * restore_p,
        b: b * restore_p,
        a_total: a_j.iter().sum::<f64>() * restore_p1,
        b_total: b_j.iter().sum::<f64>() * restore_p1,
        alpha,
    })
}

/// Merges support points closer than `delta` into weighted centroids,
/// closest pair first, stopping if a merge would make F singular.
pub fn merge_points(model: &GlmModel, design: &ApproximateDesign, delta: f64) -> ApproximateDesign {
    merge_with_discrete_guard(model, design, delta, &[])
}

/// As `merge_points`, but never merges points that differ in a discrete
/// coordinate, so centroids stay inside mixed design spaces.
fn merge_with_discrete_guard(
    model: &GlmModel,
    design: &ApproximateDesign,
    delta: f64,
    discrete_idx: &[usize],
) -> ApproximateDesign {
    let mut points = design.points().to_vec();
    let mut weights = design.weights().to_vec();

    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                if discrete_idx.iter().any(|&k| points[i][k] != points[j][k]) {
                    continue;
                }
                let dist = euclidean(&points[i], &points[j]);
                if dist < delta && best.is_none_or(|(_, _, d)| dist < d) {
                    best = Some((i, j, dist));
                }
            }
        }
        let Some((i, j, _)) = best else { break };

        let total = weights[i] + weights[j];
        let merged: Vec<f64> = points[i]
            .iter()
            .zip(&points[j])
            .map(|(a, b)| (weights[i] * a + weights[j] * b) / total)
            .collect();
        let mut next_points = points.clone();
        let mut next_weights = weights.clone();
        next_points[i] = merged;
        next_weights[i] = total;
        next_points.remove(j);
        next_weights.remove(j);

        // Rank guard: stop merging if the merge would newly degenerate F.
        let was_singular = fisher_singular(model, &points, &weights);
        match fisher_singular_checked(model, &next_points, &next_weights) {
            Some(now_singular) => {
                if now_singular && !was_singular {
                    break;
                }
            }
            // The centroid left the model domain; treat like a degenerate merge.
            None => break,
        }
        points = next_points;
        weights = next_weights;
    }
    ApproximateDesign::from_parts_unchecked(points, weights)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(ai, bi)| (ai - bi) * (ai - bi))
        .sum::<f64>()
        .sqrt()
}

fn fisher_singular(model: &GlmModel, points: &[Vec<f64>], weights: &[f64]) -> bool {
    fisher_singular_checked(model, points, weights).unwrap_or(true)
}

fn fisher_singular_checked(
    model: &GlmModel,
    points: &[Vec<f64>],
    weights: &[f64],
) -> Option<bool> {
    let atoms = Atoms::new(model, points).ok()?;
    Some(is_singular(&atoms.fisher(weights)))
}

/// Runs the ForLion loop on a design space with at least one continuous factor.
pub fn forlion_optimize(
    model: &GlmModel,
    space: &DesignSpace,
    config: &ForlionConfig,
) -> Result<ForlionResult> {
    config.validate()?;
    if space.s() == 0 {
        return Err(Error::Invalid(
            "ForLion needs at least one continuous factor; use the lift-one solver on a finite candidate set".into(),
        ));
    }
    check_differentiable(model, space)?;
    let p = model.p();
    let large_grid_warning = space.discrete_combinations().len() > 10_000;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut design = initial_design(model, space, config, &mut rng)?;

    let mut trace = Vec::new();
    for iter in 0..config.max_outer {
        design = merge_with_discrete_guard(model, &design, config.delta, space.discrete_indices());

        let liftone_seed = config
            .seed
            .wrapping_add(0xA076_1D64_78BD_642Fu64.wrapping_mul(iter as u64 + 1));
        let weights = design.weights().to_vec();
        let solved = liftone_optimize_with_seed(
            model,
            design.points(),
            LiftOneInit::Weights(weights),
            config.epsilon,
            liftone_seed,
        )?;
        let h = solved.h;

        // Deleting step: drop the points the lift-one pass zeroed out.
        let kept: Vec<(Vec<f64>, f64)> = solved
            .design
            .points()
            .iter()
            .zip(solved.design.weights())
            .filter(|(_, w)| **w > 0.0)
            .map(|(x, w)| (x.clone(), *w))
            .collect();
        let (points, weights): (Vec<_>, Vec<_>) = kept.into_iter().unzip();
        design = ApproximateDesign::from_parts_unchecked(points, weights);
        debug_assert!((design.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);

        // Position refinement: merging repositions support points only by
        // weighted averaging, which stalls once the mixing weights α_t get
        // small. Relocating each support point by a monotone ascent of h
        // keeps every invariant (h never decreases, the certificate below is
        // unchanged) and lets the loop actually reach the equivalence bound.
        let (refined, h_refined) = relocate_support(model, space, &design, config, h)?;
        design = refined;
        let h = h_refined;

        let kernel = SensitivityKernel::new(model, &design)?;
        let (x_star, phi_star) = search_with_kernel(model, &design, space, config, &kernel)?;
        trace.push(TraceRow {
            iter,
            h,
            m: design.m(),
            phi_star,
            alpha: None,
        });

        if phi_star <= kernel.trace_inverse * (1.0 + CERTIFICATE_SLACK) {
            let support_warning = design.m() > p * (p + 1) / 2;
            return Ok(ForlionResult {
                h,
                certified: true,
                trace_inverse: kernel.trace_inverse,
                phi_max: phi_star,
                outer_iterations: iter + 1,
                support_warning,
                large_grid_warning,
                seed: config.seed,
                design,
                trace,
            });
        }

        let step = alpha_step(model, &design, &x_star)?;
        if let Some(row) = trace.last_mut() {
            row.alpha = Some(step.alpha);
        }
        let mut points = design.points().to_vec();
        let mut weights: Vec<f64> = design
            .weights()
            .iter()
            .map(|w| w * (1.0 - step.alpha))
            .collect();
        points.push(x_star);
        weights.push(step.alpha);
        design = ApproximateDesign::from_parts_unchecked(points, weights);
        debug_assert!((design.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
    Err(Error::NonConvergence(config.max_outer))
}

/// Moves each support point (continuous coordinates only, weights fixed) to
/// a local maximizer of h by box-constrained quasi-Newton ascent. Moves are
/// committed only when they improve h, so the outer ascent is preserved.
fn relocate_support(
    model: &GlmModel,
    space: &DesignSpace,
    design: &ApproximateDesign,
    config: &ForlionConfig,
    h_current: f64,
) -> Result<(ApproximateDesign, f64)> {
    let cont_idx = space.continuous_indices().to_vec();
    let lower: Vec<f64> = cont_idx
        .iter()
        .map(|&j| match &space.factors()[j] {
            crate::design::Factor::Continuous { lower, .. } => *lower,
            _ => unreachable!(),
        })
        .collect();
    let upper: Vec<f64> = cont_idx
        .iter()
        .map(|&j| match &space.factors()[j] {
            crate::design::Factor::Continuous { upper, .. } => *upper,
            _ => unreachable!(),
        })
        .collect();

    let mut points = design.points().to_vec();
    let weights = design.weights().to_vec();
    let mut h_best = h_current;

    for i in 0..points.len() {
        let w_i = weights[i];
        if w_i <= 0.0 {
            continue;
        }
        // Information of the other points stays fixed while point i moves.
        let atoms = Atoms::new(model, &points)?;
        let mut rest = atoms.fisher(&weights);
        rest.ger(-w_i * atoms.nus[i], &atoms.rows[i], &atoms.rows[i], 1.0);

        let combo: Vec<f64> = space
            .discrete_indices()
            .iter()
            .map(|&j| points[i][j])
            .collect();
        let h_at = |xc: &[f64]| -> Option<f64> {
            let x = space.assemble_point(xc, &combo);
            let q = DVector::from_vec(model.predictor().eval(&x).ok()?);
            let nu = model.nu(model.linear_predictor(&x).ok()?).ok()?;
            let mut fisher = rest.clone();
            fisher.ger(w_i * nu, &q, &q, 1.0);
            let (f, minors) = det_and_minors(&fisher);
            let denom: f64 = minors.iter().sum();
            if f <= 0.0 || denom <= 0.0 {
                Some(0.0)
            } else {
                Some(f / denom)
            }
        };
        let h_grad = |xc: &[f64]| -> Option<Vec<f64>> {
            let x = space.assemble_point(xc, &combo);
            let q = DVector::from_vec(model.predictor().eval(&x).ok()?);
            let eta = model.linear_predictor(&x).ok()?;
            let nu = model.nu(eta).ok()?;
            let nu_prime = model.nu_prime(eta).ok()?;
            let mut fisher = rest.clone();
            fisher.ger(w_i * nu, &q, &q, 1.0);
            if is_singular(&fisher) {
                return None;
            }
            let eig = fisher.symmetric_eigen();
            let mut trace_inverse = 0.0;
            let mut inv_sq_diag = DVector::zeros(eig.eigenvalues.len());
            for (k, lambda) in eig.eigenvalues.iter().enumerate() {
                trace_inverse += 1.0 / lambda;
                inv_sq_diag[k] = 1.0 / (lambda * lambda);
            }
            let inv_sq = &eig.eigenvectors
                * DMatrix::from_diagonal(&inv_sq_diag)
                * eig.eigenvectors.transpose();
            let aq = &inv_sq * &q;
            let quad = q.dot(&aq);
            let h_sq = 1.0 / (trace_inverse * trace_inverse);
            cont_idx
                .iter()
                .map(|&factor| {
                    let dq =
                        DVector::from_vec(model.predictor().eval_deriv(&x, factor).ok()?);
                    let dq_beta: f64 = dq
                        .iter()
                        .zip(model.beta())
                        .map(|(dqk, bk)| dqk * bk)
                        .sum();
                    Some(h_sq * w_i * (nu_prime * quad * dq_beta + 2.0 * nu * dq.dot(&aq)))
                })
                .collect()
        };

        let start: Vec<f64> = cont_idx.iter().map(|&j| points[i][j]).collect();
        if let Some((xc, h_new)) = maximize_box(
            &h_at,
            &h_grad,
            &lower,
            &upper,
            &start,
            config.inner_tol,
            200,
        ) {
            if h_new > h_best {
                points[i] = space.assemble_point(&xc, &combo);
                h_best = h_new;
            }
        }
    }
    Ok((
        ApproximateDesign::from_parts_unchecked(points, weights),
        h_best,
    ))
}

/// Corner points (capped), randomly filled until the uniform-weight design is
/// nonsingular with pairwise separation at least δ.
fn initial_design(
    model: &GlmModel,
    space: &DesignSpace,
    config: &ForlionConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ApproximateDesign> {
    let cont_idx = space.continuous_indices();
    let lower: Vec<f64> = cont_idx
        .iter()
        .map(|&j| match &space.factors()[j] {
            crate::design::Factor::Continuous { lower, .. } => *lower,
            _ => unreachable!(),
        })
        .collect();
    let upper: Vec<f64> = cont_idx
        .iter()
        .map(|&j| match &space.factors()[j] {
            crate::design::Factor::Continuous { upper, .. } => *upper,
            _ => unreachable!(),
        })
        .collect();
    let combos = space.discrete_combinations();

    // Extreme discrete combinations first so corner candidates stay few.
    let mut corner_combos: Vec<Vec<f64>> = Vec::new();
    if let (Some(first), Some(last)) = (combos.first(), combos.last()) {
        corner_combos.push(first.clone());
        if last != first {
            corner_combos.push(last.clone());
        }
    }

    let mut points: Vec<Vec<f64>> = Vec::new();
    for combo in &corner_combos {
        for corner in corner_starts(&lower, &upper) {
            if points.len() >= CORNER_CAP {
                break;
            }
            let x = space.assemble_point(&corner, combo);
            if points
                .iter()
                .all(|existing| euclidean(existing, &x) >= config.delta)
            {
                points.push(x);
            }
        }
    }

    for _ in 0..INITIAL_ATTEMPTS {
        if !points.is_empty() {
            if let Some(true) = feasible(model, &points) {
                let m = points.len();
                return Ok(ApproximateDesign::from_parts_unchecked(
                    points,
                    vec![1.0 / m as f64; m],
                ));
            }
        }
        // Random fill: a fresh point at least δ from the current ones.
        let combo = &combos[rng.random_range(0..combos.len())];
        let draw: Vec<f64> = lower
            .iter()
            .zip(&upper)
            .map(|(lo, hi)| rng.random_range(*lo..=*hi))
            .collect();
        let x = space.assemble_point(&draw, combo);
        if points
            .iter()
            .all(|existing| euclidean(existing, &x) >= config.delta)
        {
            points.push(x);
        }
    }
    Err(Error::Infeasible(
        "no nonsingular initial design found; the basis may be unidentifiable on this space".into(),
    ))
}

fn feasible(model: &GlmModel, points: &[Vec<f64>]) -> Option<bool> {
    let weights = vec![1.0 / points.len() as f64; points.len()];
    fisher_singular_checked(model, points, &weights).map(|singular| !singular)
}

/// Report of a dense-grid certificate check with optional quasi-Newton polish.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub max_phi: f64,
    pub argmax: Vec<f64>,
    pub trace_inverse: f64,
    /// max φ / tr(F⁻¹) − 1; nonpositive values certify optimality.
    pub slack: f64,
    pub certified: bool,
}

/// Evaluates the equivalence inequality on a dense grid (`grid_per_dim`
/// points per continuous factor, every discrete combination), optionally
/// polishing the best grid point with the quasi-Newton ascent.
pub fn verify_design(
    model: &GlmModel,
    design: &ApproximateDesign,
    space: &DesignSpace,
    grid_per_dim: usize,
    polish: bool,
) -> Result<VerifyReport> {
    if grid_per_dim < 2 {
        return Err(Error::Invalid("grid needs at least two points per factor".into()));
    }
    let kernel = SensitivityKernel::new(model, design)?;
    let cont_idx = space.continuous_indices();
    let s = cont_idx.len();
    let bounds: Vec<(f64, f64)> = cont_idx
        .iter()
        .map(|&j| match &space.factors()[j] {
            crate::design::Factor::Continuous { lower, upper } => (*lower, *upper),
            _ => unreachable!(),
        })
        .collect();

    let mut best: Option<(Vec<f64>, f64)> = None;
    for combo in space.discrete_combinations() {
        // Odometer walk over the s-dimensional grid; a single evaluation per
        // combination when every factor is discrete.
        let mut index = vec![0usize; s];
        loop {
            let xc: Vec<f64> = index
                .iter()
                .zip(&bounds)
                .map(|(k, (lo, hi))| lo + (hi - lo) * *k as f64 / (grid_per_dim - 1) as f64)
                .collect();
            let x = space.assemble_point(&xc, &combo);
            if let Ok(phi) = kernel.phi(model, &x) {
                if best.as_ref().is_none_or(|(_, b)| phi > *b) {
                    best = Some((x, phi));
                }
            }
            let mut dim = 0;
            while dim < s {
                index[dim] += 1;
                if index[dim] < grid_per_dim {
                    break;
                }
                index[dim] = 0;
                dim += 1;
            }
            if dim == s {
                break;
            }
        }
    }
    let (mut argmax, mut max_phi) =
        best.ok_or_else(|| Error::Infeasible("sensitivity nowhere evaluable on the grid".into()))?;

    if polish && s > 0 {
        let combo: Vec<f64> = space.discrete_indices().iter().map(|&j| argmax[j]).collect();
        let lower: Vec<f64> = bounds.iter().map(|(lo, _)| *lo).collect();
        let upper: Vec<f64> = bounds.iter().map(|(_, hi)| *hi).collect();
        let start: Vec<f64> = cont_idx.iter().map(|&j| argmax[j]).collect();
        let objective = |xc: &[f64]| kernel.phi(model, &space.assemble_point(xc, &combo)).ok();
        let gradient = |xc: &[f64]| {
            kernel
                .phi_gradient(model, space, &space.assemble_point(xc, &combo))
                .ok()
        };
        if let Some((xc, phi)) = maximize_box(
            &objective,
            &gradient,
            &lower,
            &upper,
            &start,
            1e-10,
            200,
        ) {
            if phi > max_phi {
                max_phi = phi;
                argmax = space.assemble_point(&xc, &combo);
            }
        }
    }

    let slack = max_phi / kernel.trace_inverse - 1.0;
    Ok(VerifyReport {
        max_phi,
        argmax,
        trace_inverse: kernel.trace_inverse,
        slack,
        certified: slack <= CERTIFICATE_SLACK,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::Factor;
    use crate::glm::{BasisTerm, Family, Link, PredictorBasis};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn logistic_one_factor() -> GlmModel {
        GlmModel::new(
            Family::Bernoulli,
            Link::Logit,
            vec![-2.0, 0.5],
            PredictorBasis::main_effects(1),
        )
        .unwrap()
    }

    fn interval(lo: f64, hi: f64) -> DesignSpace {
        DesignSpace::new(vec![Factor::Continuous { lower: lo, upper: hi }], None).unwrap()
    }

    #[test]
    fn sensitivity_identity_case() {
        let basis = PredictorBasis::new(vec![BasisTerm::Linear(0), BasisTerm::Linear(1)]).unwrap();
        let model = GlmModel::new(
            Family::Normal { variance: 1.0 },
            Link::Identity,
            vec![0.0, 0.0],
            basis,
        )
        .unwrap();
        let design =
            ApproximateDesign::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.5, 0.5]).unwrap();
        // F = diag(1/2, 1/2) so F⁻² = diag(4, 4): φ(e₁) = 4.
        assert_relative_eq!(
            sensitivity(&model, &design, &[1.0, 0.0]).unwrap(),
            4.0,
            max_relative = 1e-10
        );
    }

    #[test]
    fn sensitivity_vanishes_with_nu() {
        let basis = PredictorBasis::main_effects(1);
        let model = GlmModel::with_hooks(
            Family::Custom,
            Link::Custom,
            vec![0.0, 1.0],
            basis,
            Arc::new(|eta: f64| eta.max(0.0)),
            Arc::new(|eta: f64| if eta > 0.0 { 1.0 } else { 0.0 }),
        )
        .unwrap();
        let design = ApproximateDesign::new(vec![vec![1.0], vec![2.0]], vec![0.5, 0.5]).unwrap();
        // ν(η) = max(η, 0) = 0 at x = −1.
        assert_eq!(sensitivity(&model, &design, &[-1.0]).unwrap(), 0.0);
    }

    #[test]
    fn sensitivity_rejects_singular_designs() {
        let model = logistic_one_factor();
        let design = ApproximateDesign::new(vec![vec![1.0]], vec![1.0]).unwrap();
        assert!(matches!(
            sensitivity(&model, &design, &[0.0]),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = logistic_one_factor();
        let space = interval(0.0, 10.0);
        let design = ApproximateDesign::new(
            vec![vec![0.2579], vec![7.7421]],
            vec![0.8832, 0.1168],
        )
        .unwrap();
        for x in [1.0, 4.0, 7.0] {
            let analytic = sensitivity_gradient(&model, &design, &space, &[x]).unwrap()[0];
            let step = 1e-5;
            let fd = (sensitivity(&model, &design, &[x + step]).unwrap()
                - sensitivity(&model, &design, &[x - step]).unwrap())
                / (2.0 * step);
            assert_relative_eq!(analytic, fd, max_relative = 1e-5);
        }
    }

    #[test]
    fn gradient_zero_for_intercept_only_basis() {
        // ∂q/∂x is the zero matrix, so the gradient vanishes identically.
        let model = GlmModel::new(
            Family::Bernoulli,
            Link::Logit,
            vec![0.5],
            PredictorBasis::new(vec![BasisTerm::Intercept]).unwrap(),
        )
        .unwrap();
        let space = interval(-1.0, 1.0);
        let design = ApproximateDesign::new(vec![vec![-1.0], vec![1.0]], vec![0.5, 0.5]).unwrap();
        for x in [-0.7, 0.0, 0.9] {
            let g = sensitivity_gradient(&model, &design, &space, &[x]).unwrap();
            assert_eq!(g[0], 0.0);
        }

        // Zero non-intercept effects at a symmetric design: the remaining
        // 2ν·dqᵀAq term also cancels at the midpoint.
        let model = GlmModel::new(
            Family::Bernoulli,
            Link::Logit,
            vec![0.5, 0.0],
            PredictorBasis::main_effects(1),
        )
        .unwrap();
        let g = sensitivity_gradient(&model, &design, &space, &[0.0]).unwrap();
        assert_relative_eq!(g[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn new_point_search_stationary_gradient() {
        let model = logistic_one_factor();
        let space = interval(0.0, 10.0);
        let design = ApproximateDesign::new(
            vec![vec![1.0], vec![6.0]],
            vec![0.7, 0.3],
        )
        .unwrap();
        let config = ForlionConfig::default();
        let (x_star, phi_star) = new_point_search(&model, &design, &space, &config).unwrap();
        assert!(phi_star > 0.0);
        let on_boundary = x_star[0] <= 1e-9 || x_star[0] >= 10.0 - 1e-9;
        if !on_boundary {
            let g = sensitivity_gradient(&model, &design, &space, &x_star).unwrap();
            assert!(g[0].abs() <= 1e-5, "gradient {} at {:?}", g[0], x_star);
        }
    }

    #[test]
    fn alpha_step_zero_at_optimum_and_ascent_otherwise() {
        let model = logistic_one_factor();
        let space = interval(0.0, 10.0);
        let config = ForlionConfig {
            delta: 0.3,
            ..ForlionConfig::default()
        };
        let result = forlion_optimize(&model, &space, &config).unwrap();
        // Re-adding the optimum's own best point moves essentially no weight
        // (the certified design carries up to the certificate slack).
        let (x_star, _) = new_point_search(&model, &result.design, &space, &config).unwrap();
        let step = alpha_step(&model, &result.design, &x_star).unwrap();
        assert!(step.alpha <= 1e-4, "alpha = {}", step.alpha);

        // From a rough design, the step improves h and beats an α grid.
        let rough = ApproximateDesign::new(vec![vec![0.0], vec![10.0]], vec![0.5, 0.5]).unwrap();
        let (x_new, _) = new_point_search(&model, &rough, &space, &config).unwrap();
        let step = alpha_step(&model, &rough, &x_new).unwrap();
        assert!(step.alpha > 0.0 && step.alpha < 1.0);
        assert!(step.b > 0.0);
        let atoms = {
            let mut pts = rough.points().to_vec();
            pts.push(x_new.clone());
            Atoms::new(&model, &pts).unwrap()
        };
        let mixed = |alpha: f64| {
            let mut w: Vec<f64> = rough.weights().iter().map(|wi| wi * (1.0 - alpha)).collect();
            w.push(alpha);
            atoms.h(&w)
        };
        let h_at_step = mixed(step.alpha);
        let h_before = mixed(0.0);
        assert!(h_at_step > h_before);
        for k in 0..=100 {
            let alpha = k as f64 / 100.0;
            assert!(h_at_step >= mixed(alpha) - 1e-10);
        }
    }

    #[test]
    fn merge_identical_and_separated_points() {
        let model = logistic_one_factor();
        let design = ApproximateDesign::from_parts_unchecked(
            vec![vec![2.0], vec![2.0]],
            vec![0.3, 0.7],
        );
        let merged = merge_points(&model, &design, 0.1);
        assert_eq!(merged.m(), 1);
        assert_eq!(merged.weights(), &[1.0]);
        assert_eq!(merged.points()[0], vec![2.0]);

        let apart =
            ApproximateDesign::new(vec![vec![0.0], vec![5.0]], vec![0.5, 0.5]).unwrap();
        let merged = merge_points(&model, &apart, 0.1);
        assert_eq!(merged.m(), 2);
    }

    #[test]
    fn merge_rank_guard_allows_exactly_one_merge() {
        // Three clustered collinear points plus one distant point under a
        // p = 3 main-effects model: a full cluster merge would drop the rank.
        let model = GlmModel::new(
            Family::Normal { variance: 1.0 },
            Link::Identity,
            vec![0.0, 0.0, 0.0],
            PredictorBasis::main_effects(2),
        )
        .unwrap();
        let design = ApproximateDesign::new(
            vec![
                vec![0.0, 0.0],
                vec![0.04, 0.0],
                vec![0.1, 0.0],
                vec![5.0, 5.0],
            ],
            vec![0.25; 4],
        )
        .unwrap();
        let merged = merge_points(&model, &design, 0.2);
        assert_eq!(merged.m(), 3);
        let total: f64 = merged.weights().iter().sum();
        assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn forlion_logistic_one_factor() {
        let model = logistic_one_factor();
        let space = interval(0.0, 10.0);
        let config = ForlionConfig {
            delta: 0.3,
            epsilon: 1e-6,
            ..ForlionConfig::default()
        };
        let result = forlion_optimize(&model, &space, &config).unwrap();
        assert!(result.certified);
        assert_eq!(result.design.m(), 2);
        // At the certified optimum every support point sits on (or under)
        // the equivalence bound.
        let trace_inv = trace_inverse(&model, &result.design).unwrap();
        for x in result.design.points() {
            let phi = sensitivity(&model, &result.design, x).unwrap();
            assert!(phi <= trace_inv * (1.0 + 1e-6), "phi {phi} vs tr {trace_inv}");
        }
        let mut support: Vec<(f64, f64)> = result
            .design
            .points()
            .iter()
            .zip(result.design.weights())
            .map(|(x, w)| (x[0], *w))
            .collect();
        support.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!((support[0].0 - 0.2542).abs() <= 0.05, "support {support:?}");
        assert!((support[0].1 - 0.8833).abs() <= 5e-3, "support {support:?}");
        assert!((support[1].0 - 7.7459).abs() <= 0.05, "support {support:?}");

        // Ascent of h across the recorded outer iterations.
        for pair in result.trace.windows(2) {
            assert!(pair[1].h >= pair[0].h - 1e-12 * pair[0].h.abs());
        }
    }

    #[test]
    fn forlion_mixed_factor_space() {
        // One continuous and one two-level discrete factor.
        let model = GlmModel::new(
            Family::Bernoulli,
            Link::Logit,
            vec![-1.0, 0.5, 1.0],
            PredictorBasis::main_effects(2),
        )
        .unwrap();
        let space = DesignSpace::new(
            vec![
                Factor::Continuous { lower: 0.0, upper: 6.0 },
                Factor::Discrete { levels: vec![-1.0, 1.0] },
            ],
            None,
        )
        .unwrap();
        let config = ForlionConfig {
            delta: 0.2,
            ..ForlionConfig::default()
        };
        let result = forlion_optimize(&model, &space, &config).unwrap();
        assert!(result.certified);
        for x in result.design.points() {
            assert!(space.contains(x), "point {x:?} escaped the space");
        }
        let report = verify_design(&model, &result.design, &space, 200, true).unwrap();
        assert!(report.certified, "slack {}", report.slack);
    }

    #[test]
    fn unidentifiable_basis_is_infeasible() {
        // Two identical basis columns make every information matrix singular.
        let model = GlmModel::new(
            Family::Bernoulli,
            Link::Logit,
            vec![0.1, 0.1],
            PredictorBasis::new(vec![BasisTerm::Linear(0), BasisTerm::Linear(0)]).unwrap(),
        )
        .unwrap();
        let space = interval(0.0, 1.0);
        let config = ForlionConfig::default();
        assert!(matches!(
            forlion_optimize(&model, &space, &config),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn verify_report_flags_suboptimal_designs() {
        let model = logistic_one_factor();
        let space = interval(0.0, 10.0);
        let bad = ApproximateDesign::new(vec![vec![4.0], vec![6.0]], vec![0.5, 0.5]).unwrap();
        let report = verify_design(&model, &bad, &space, 101, true).unwrap();
        assert!(!report.certified);
        assert!(report.slack > 0.0);
    }
}
