//! Design types, model-matrix construction, and the A-/D-objectives.
//!
//! The Fisher information of an approximate design is
//! F(w) = Σᵢ wᵢ νᵢ q(xᵢ)q(xᵢ)ᵀ, the D-objective is f(w) = |F(w)|, and the
//! A-objective is h(w) = [tr(F⁻¹)]⁻¹ when f(w) > 0 and 0 otherwise. The
//! trace identity tr(F⁻¹) = Σⱼ f₋ⱼ(w)/f(w), with f₋ⱼ the principal minor
//! deleting row and column j, gives a second evaluation route for h that the
//! weight optimizers use; the eigenvalue route lives in `InfoDecomposition`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::glm::GlmModel;

/// Relative eigenvalue threshold below which F is treated as singular.
pub const SINGULAR_EPS: f64 = 1e-12;

/// One experimental factor of the design space.
#[derive(Debug, Clone, PartialEq)]
pub enum Factor {
    Continuous { lower: f64, upper: f64 },
    Discrete { levels: Vec<f64> },
}

impl Factor {
    pub fn is_continuous(&self) -> bool {
        matches!(self, Factor::Continuous { .. })
    }
}

/// Mixed continuous/discrete design space: a box times a finite grid.
#[derive(Debug, Clone)]
pub struct DesignSpace {
    factors: Vec<Factor>,
    grid: Option<Vec<Vec<f64>>>,
    /// Factor indices with continuous factors first — the ingest permutation.
    permutation: Vec<usize>,
}

impl DesignSpace {
    pub fn new(factors: Vec<Factor>, grid: Option<Vec<Vec<f64>>>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Invalid("design space needs at least one factor".into()));
        }
        for (j, factor) in factors.iter().enumerate() {
            match factor {
                Factor::Continuous { lower, upper } => {
                    if !(lower.is_finite() && upper.is_finite() && lower < upper) {
                        return Err(Error::Invalid(format!(
                            "factor {j}: continuous range [{lower}, {upper}] is not a proper interval"
                        )));
                    }
                }
                Factor::Discrete { levels } => {
                    if levels.is_empty() || levels.iter().any(|l| !l.is_finite()) {
                        return Err(Error::Invalid(format!(
                            "factor {j}: discrete level set must be nonempty and finite"
                        )));
                    }
                }
            }
        }
        let mut permutation: Vec<usize> = (0..factors.len())
            .filter(|&j| factors[j].is_continuous())
            .collect();
        permutation.extend((0..factors.len()).filter(|&j| !factors[j].is_continuous()));

        if let Some(rows) = &grid {
            let discrete: Vec<usize> = (0..factors.len())
                .filter(|&j| !factors[j].is_continuous())
                .collect();
            for row in rows {
                if row.len() != discrete.len() {
                    return Err(Error::Invalid(format!(
                        "grid row has {} coordinates but there are {} discrete factors",
                        row.len(),
                        discrete.len()
                    )));
                }
                for (coord, &j) in row.iter().zip(&discrete) {
                    let Factor::Discrete { levels } = &factors[j] else {
                        unreachable!()
                    };
                    if !levels.contains(coord) {
                        return Err(Error::Invalid(format!(
                            "grid coordinate {coord} is not a declared level of factor {j}"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            factors,
            grid,
            permutation,
        })
    }

    pub fn d(&self) -> usize {
        self.factors.len()
    }

    /// Number of continuous factors.
    pub fn s(&self) -> usize {
        self.factors.iter().filter(|f| f.is_continuous()).count()
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    /// Ingest permutation: continuous factor indices first, then discrete.
    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn continuous_indices(&self) -> &[usize] {
        &self.permutation[..self.s()]
    }

    pub fn discrete_indices(&self) -> &[usize] {
        &self.permutation[self.s()..]
    }

    /// All admissible discrete-coordinate combinations, in discrete-factor
    /// order. A single empty row when every factor is continuous.
    pub fn discrete_combinations(&self) -> Vec<Vec<f64>> {
        if let Some(rows) = &self.grid {
            return rows.clone();
        }
        let mut combos = vec![Vec::new()];
        for &j in self.discrete_indices() {
            let Factor::Discrete { levels } = &self.factors[j] else {
                unreachable!()
            };
            combos = combos
                .iter()
                .flat_map(|combo| {
                    levels.iter().map(move |&level| {
                        let mut next = combo.clone();
                        next.push(level);
                        next
                    })
                })
                .collect();
        }
        combos
    }

    /// Assembles a full point from continuous coordinates (in continuous-factor
    /// order) and a discrete combination (in discrete-factor order).
    pub fn assemble_point(&self, continuous: &[f64], discrete: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.d()];
        for (value, &j) in continuous.iter().zip(self.continuous_indices()) {
            x[j] = *value;
        }
        for (value, &j) in discrete.iter().zip(self.discrete_indices()) {
            x[j] = *value;
        }
        x
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.d() {
            return false;
        }
        let box_ok = self.factors.iter().zip(x).all(|(factor, &xi)| match factor {
            Factor::Continuous { lower, upper } => {
                xi >= lower - 1e-12 && xi <= upper + 1e-12
            }
            Factor::Discrete { levels } => levels.contains(&xi),
        });
        if !box_ok {
            return false;
        }
        match &self.grid {
            None => true,
            Some(rows) => {
                let combo: Vec<f64> = self.discrete_indices().iter().map(|&j| x[j]).collect();
                rows.iter().any(|row| row == &combo)
            }
        }
    }
}

/// Support points with nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproximateDesign {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl ApproximateDesign {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(Error::Invalid(format!(
                "{} points with {} weights",
                points.len(),
                weights.len()
            )));
        }
        let d = points[0].len();
        if points.iter().any(|x| x.len() != d) {
            return Err(Error::Invalid("points have mixed dimensions".into()));
        }
        for (i, xi) in points.iter().enumerate() {
            for xj in points.iter().skip(i + 1) {
                if xi == xj {
                    return Err(Error::Invalid(format!("duplicate design point {xi:?}")));
                }
            }
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Weight("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Weight(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { points, weights })
    }

    /// Internal constructor for optimizer iterates, which may briefly hold
    /// duplicate points between an add step and the next merge.
    pub(crate) fn from_parts_unchecked(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Self {
        debug_assert_eq!(points.len(), weights.len());
        Self { points, weights }
    }

    pub fn m(&self) -> usize {
        self.points.len()
    }

    pub fn dimension(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Support points carrying positive weight.
    pub fn support_size(&self) -> usize {
        self.weights.iter().filter(|w| **w > 0.0).count()
    }
}

/// Support points with integer replicate counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactDesign {
    points: Vec<Vec<f64>>,
    counts: Vec<u64>,
    n: u64,
}

impl ExactDesign {
    pub fn new(points: Vec<Vec<f64>>, counts: Vec<u64>, n: u64) -> Result<Self> {
        if points.len() != counts.len() {
            return Err(Error::Invalid("points and counts differ in length".into()));
        }
        let total: u64 = counts.iter().sum();
        if total != n {
            return Err(Error::Invalid(format!("counts sum to {total}, not n = {n}")));
        }
        Ok(Self { points, counts, n })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n(&self) -> u64 {
        self.n
    }
}

/// Fisher information of a design together with both determinant routes.
#[derive(Debug, Clone)]
pub struct InfoDecomposition {
    pub model_matrix: DMatrix<f64>,
    /// wᵢ νᵢ, the diagonal of W.
    pub weight_diagonal: DVector<f64>,
    pub fisher: DMatrix<f64>,
    /// Product of eigenvalues; zero when the matrix is numerically singular.
    pub det_f: f64,
    /// Principal minors f₋ⱼ = |X₋ⱼᵀ W X₋ⱼ|.
    pub minors: Vec<f64>,
    /// Eigenvalues in ascending order.
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
    /// Σ λⱼ⁻¹, +∞ when singular.
    pub trace_inverse: f64,
    pub singular: bool,
}

impl InfoDecomposition {
    /// A-objective h = [tr(F⁻¹)]⁻¹, zero for singular information.
    pub fn h(&self) -> f64 {
        if self.singular {
            0.0
        } else {
            1.0 / self.trace_inverse
        }
    }

    /// The ratio route h = f / Σⱼ f₋ⱼ, for cross-checking against `h`.
    pub fn h_ratio(&self) -> f64 {
        let denom: f64 = self.minors.iter().sum();
        if self.singular || denom <= 0.0 {
            0.0
        } else {
            self.det_f / denom
        }
    }
}

/// Builds the m×p model matrix with rows q(xᵢ)ᵀ.
pub fn build_model_matrix(model: &GlmModel, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let p = model.p();
    let mut matrix = DMatrix::zeros(points.len(), p);
    for (i, x) in points.iter().enumerate() {
        let q = model.predictor().eval(x)?;
        for (j, value) in q.iter().enumerate() {
            matrix[(i, j)] = *value;
        }
    }
    Ok(matrix)
}

/// Assembles the Fisher information of a design and decomposes it.
pub fn fisher_info(model: &GlmModel, design: &ApproximateDesign) -> Result<InfoDecomposition> {
    let atoms = Atoms::new(model, design.points())?;
    let p = atoms.p;
    let mut model_matrix = DMatrix::zeros(design.m(), p);
    for (i, row) in atoms.rows.iter().enumerate() {
        model_matrix.set_row(i, &row.transpose());
    }
    let weight_diagonal = DVector::from_iterator(
        design.m(),
        design.weights().iter().zip(&atoms.nus).map(|(w, nu)| w * nu),
    );
    let fisher = atoms.fisher(design.weights());
    let eig = SymmetricEigen::new(fisher.clone());
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = DVector::from_iterator(p, order.iter().map(|&k| eig.eigenvalues[k]));
    let eigenvectors = DMatrix::from_columns(
        &order
            .iter()
            .map(|&k| eig.eigenvectors.column(k).clone_owned())
            .collect::<Vec<_>>(),
    );
    let lambda_min = eigenvalues[0];
    let lambda_max = eigenvalues[p - 1];
    let singular = lambda_min <= SINGULAR_EPS * lambda_max.max(1.0);
    let det_f = if singular {
        0.0
    } else {
        eigenvalues.iter().product()
    };
    let trace_inverse = if singular {
        f64::INFINITY
    } else {
        eigenvalues.iter().map(|l| 1.0 / l).sum()
    };
    let (_, minors) = det_and_minors(&fisher);
    Ok(InfoDecomposition {
        model_matrix,
        weight_diagonal,
        fisher,
        det_f,
        minors,
        eigenvalues,
        eigenvectors,
        trace_inverse,
        singular,
    })
}

/// A-objective h(w) through the eigenvalue route.
pub fn h_value(model: &GlmModel, design: &ApproximateDesign) -> Result<f64> {
    Ok(fisher_info(model, design)?.h())
}

/// f₋ⱼ(w): determinant of the information matrix with basis column `col`
/// (zero-based) removed.
pub fn f_minor(model: &GlmModel, design: &ApproximateDesign, col: usize) -> Result<f64> {
    let p = model.p();
    if col >= p {
        return Err(Error::Invalid(format!("column {col} out of range for p = {p}")));
    }
    let atoms = Atoms::new(model, design.points())?;
    let fisher = atoms.fisher(design.weights());
    let sub = fisher.remove_row(col).remove_column(col);
    Ok(det_psd(&sub))
}

/// Determinant of a symmetric PSD matrix: Cholesky when possible, LU with the
/// result clamped at zero otherwise.
pub(crate) fn det_psd(matrix: &DMatrix<f64>) -> f64 {
    if matrix.nrows() == 0 {
        return 1.0;
    }
    match matrix.clone().cholesky() {
        Some(chol) => {
            let mut det = 1.0;
            for i in 0..matrix.nrows() {
                let l = chol.l_dirty()[(i, i)];
                det *= l * l;
            }
            det
        }
        None => matrix.clone().lu().determinant().max(0.0),
    }
}

/// Determinant and all principal minors of a PSD matrix. Uses the adjugate
/// identity f₋ⱼ = det · (F⁻¹)ⱼⱼ when the Cholesky factorization succeeds and
/// falls back to direct submatrix determinants otherwise.
pub(crate) fn det_and_minors(fisher: &DMatrix<f64>) -> (f64, Vec<f64>) {
    let p = fisher.nrows();
    if p == 1 {
        return (fisher[(0, 0)].max(0.0), vec![1.0]);
    }
    if let Some(chol) = fisher.clone().cholesky() {
        let mut det = 1.0;
        for i in 0..p {
            let l = chol.l_dirty()[(i, i)];
            det *= l * l;
        }
        let inverse = chol.inverse();
        let minors = (0..p).map(|j| (det * inverse[(j, j)]).max(0.0)).collect();
        (det, minors)
    } else {
        let det = fisher.clone().lu().determinant().max(0.0);
        let minors = (0..p)
            .map(|j| det_psd(&fisher.clone().remove_row(j).remove_column(j)))
            .collect();
        (det, minors)
    }
}

/// Per-point information atoms: basis rows and ν values. The weight-vector
/// objectives below accept arbitrary nonnegative weights, not just simplex
/// points, so the homogeneity of f and f₋ⱼ holds through the same code path.
#[derive(Debug, Clone)]
pub(crate) struct Atoms {
    pub rows: Vec<DVector<f64>>,
    pub nus: Vec<f64>,
    pub p: usize,
}

impl Atoms {
    pub fn new(model: &GlmModel, points: &[Vec<f64>]) -> Result<Self> {
        let p = model.p();
        let mut rows = Vec::with_capacity(points.len());
        let mut nus = Vec::with_capacity(points.len());
        for x in points {
            let q = model.predictor().eval(x)?;
            rows.push(DVector::from_vec(q));
            nus.push(model.nu(model.linear_predictor(x)?)?);
        }
        Ok(Self { rows, nus, p })
    }

    /// Rescales ν to a unit maximum for numerically robust case selection in
    /// the optimizers; h and f scale back by known powers of the factor.
    pub fn normalized(mut self) -> (Self, f64) {
        let scale = self.nus.iter().cloned().fold(0.0, f64::max);
        if scale > 0.0 && scale.is_finite() {
            for nu in &mut self.nus {
                *nu /= scale;
            }
            (self, scale)
        } else {
            (self, 1.0)
        }
    }

    pub fn fisher(&self, weights: &[f64]) -> DMatrix<f64> {
        let mut fisher = DMatrix::zeros(self.p, self.p);
        for ((row, nu), w) in self.rows.iter().zip(&self.nus).zip(weights) {
            if *w != 0.0 {
                fisher.ger(w * nu, row, row, 1.0);
            }
        }
        fisher
    }

    /// (f, f₋₁, …, f₋ₚ) at a raw weight vector.
    pub fn f_and_minors(&self, weights: &[f64]) -> (f64, Vec<f64>) {
        det_and_minors(&self.fisher(weights))
    }

    /// h(w) through the minor-ratio route; zero for singular information.
    pub fn h(&self, weights: &[f64]) -> f64 {
        let (f, minors) = self.f_and_minors(weights);
        let denom: f64 = minors.iter().sum();
        if f <= 0.0 || denom <= 0.0 {
            0.0
        } else {
            f / denom
        }
    }
}

/// Scale-aware singularity test on an assembled information matrix.
pub(crate) fn is_singular(fisher: &DMatrix<f64>) -> bool {
    let eigenvalues = fisher.clone().symmetric_eigenvalues();
    let lambda_max = eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lambda_min = eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    lambda_min <= SINGULAR_EPS * lambda_max.max(1.0)
}
