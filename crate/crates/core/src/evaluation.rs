//! Design-quality metrics and the stratified-sampling study harness.
//!
//! Covers relative A-efficiency, maximum-likelihood refitting by iteratively
//! reweighted least squares, simple-random and stratified sampling without
//! replacement, and the RMSE / cross-entropy report used to compare samplers
//! built from different allocations.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::design::{h_value, ApproximateDesign, ExactDesign};
use crate::error::{Error, Result};
use crate::glm::{Family, GlmModel, Link, PredictorBasis};

/// Probability clamp for cross-entropy on separation-prone fits.
const PROB_CLAMP: f64 = 1e-12;
const IRLS_MAX_ITER: usize = 100;
const IRLS_TOL: f64 = 1e-8;
const SEPARATION_NORM: f64 = 1e3;

/// h(design_a) / h(design_b). Zero when the numerator is singular; an error
/// when the reference design is.
pub fn relative_efficiency(
    model: &GlmModel,
    design_a: &ApproximateDesign,
    design_b: &ApproximateDesign,
) -> Result<f64> {
    let h_b = h_value(model, design_b)?;
    if h_b <= 0.0 {
        return Err(Error::Singular("reference design has h = 0".into()));
    }
    Ok(h_value(model, design_a)? / h_b)
}

/// A finite population grouped into strata with simulated responses.
#[derive(Debug, Clone)]
pub struct Population {
    pub strata: Vec<Stratum>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Stratum {
    pub point: Vec<f64>,
    pub responses: Vec<f64>,
}

impl Population {
    pub fn total_size(&self) -> u64 {
        self.strata.iter().map(|s| s.responses.len() as u64).sum()
    }

    pub fn sizes(&self) -> Vec<u64> {
        self.strata.iter().map(|s| s.responses.len() as u64).collect()
    }
}

/// Draws responses for every unit from the generating model.
pub fn generate_population(
    model: &GlmModel,
    strata: &[(Vec<f64>, u64)],
    seed: u64,
) -> Result<Population> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(strata.len());
    for (point, size) in strata {
        let eta = model.linear_predictor(point)?;
        let mu = model.mean(eta)?;
        let responses: Vec<f64> = match model.family() {
            Family::Bernoulli | Family::Binomial { .. } => (0..*size)
                .map(|_| if rng.random::<f64>() < mu { 1.0 } else { 0.0 })
                .collect(),
            Family::Normal { variance } => {
                let sd = variance.sqrt();
                (0..*size)
                    .map(|_| {
                        // Box-Muller.
                        let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                        let u2: f64 = rng.random::<f64>();
                        mu + sd
                            * (-2.0 * u1.ln()).sqrt()
                            * (2.0 * std::f64::consts::PI * u2).cos()
                    })
                    .collect()
            }
            other => {
                return Err(Error::Invalid(format!(
                    "response simulation is implemented for binary and normal models, not {other:?}"
                )))
            }
        };
        out.push(Stratum {
            point: point.clone(),
            responses,
        });
    }
    Ok(Population { strata: out, seed })
}

/// Units selected from a population, with the per-stratum indices retained
/// so the holdout complement can be reconstructed.
#[derive(Debug, Clone)]
pub struct Sample {
    pub rows: Vec<(Vec<f64>, f64)>,
    pub picked: Vec<Vec<usize>>,
}

/// Simple random sample without replacement of nᵢ units in each stratum.
pub fn stratified_sample(
    population: &Population,
    allocation: &ExactDesign,
    seed: u64,
) -> Result<Sample> {
    if allocation.counts().len() != population.strata.len() {
        return Err(Error::Allocation(format!(
            "allocation has {} strata, population has {}",
            allocation.counts().len(),
            population.strata.len()
        )));
    }
    for (point, stratum) in allocation.points().iter().zip(&population.strata) {
        if point != &stratum.point {
            return Err(Error::Allocation(format!(
                "allocation point {point:?} does not match stratum point {:?}",
                stratum.point
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut picked = Vec::with_capacity(population.strata.len());
    for (stratum, count) in population.strata.iter().zip(allocation.counts()) {
        let size = stratum.responses.len();
        if *count as usize > size {
            return Err(Error::Allocation(format!(
                "cannot sample {count} of {size} units in stratum at {:?}",
                stratum.point
            )));
        }
        let chosen = sample_without_replacement(size, *count as usize, &mut rng);
        for &unit in &chosen {
            rows.push((stratum.point.clone(), stratum.responses[unit]));
        }
        picked.push(chosen);
    }
    Ok(Sample { rows, picked })
}

/// Simple random sample without replacement from the pooled population.
pub fn srswor_sample(population: &Population, n: u64, seed: u64) -> Result<Sample> {
    let total = population.total_size() as usize;
    if n as usize > total {
        return Err(Error::Allocation(format!(
            "cannot sample {n} of {total} units"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = sample_without_replacement(total, n as usize, &mut rng);
    let mut picked: Vec<Vec<usize>> = vec![Vec::new(); population.strata.len()];
    let bounds: Vec<usize> = population
        .strata
        .iter()
        .scan(0usize, |acc, s| {
            *acc += s.responses.len();
            Some(*acc)
        })
        .collect();
    let mut rows = Vec::with_capacity(n as usize);
    for unit in chosen {
        let stratum = bounds.partition_point(|b| *b <= unit);
        let offset = if stratum == 0 { 0 } else { bounds[stratum - 1] };
        let local = unit - offset;
        rows.push((
            population.strata[stratum].point.clone(),
            population.strata[stratum].responses[local],
        ));
        picked[stratum].push(local);
    }
    Ok(Sample { rows, picked })
}

/// Partial Fisher-Yates draw of `k` distinct indices from 0..size.
fn sample_without_replacement(size: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..size).collect();
    for slot in 0..k {
        let pick = rng.random_range(slot..size);
        pool.swap(slot, pick);
    }
    pool.truncate(k);
    pool
}

/// Maximum-likelihood fit by iteratively reweighted least squares.
pub fn glm_fit(
    family: &Family,
    link: Link,
    data: &[(Vec<f64>, f64)],
    predictor: &PredictorBasis,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Invalid("empty data set".into()));
    }
    if *family == Family::Custom || link == Link::Custom {
        return Err(Error::MissingHook);
    }
    let p = predictor.len();
    let rows: Vec<DVector<f64>> = data
        .iter()
        .map(|(x, _)| predictor.eval(x).map(DVector::from_vec))
        .collect::<Result<_>>()?;
    let y: Vec<f64> = data.iter().map(|(_, yi)| *yi).collect();

    let mut beta = DVector::zeros(p);
    let mut tol = f64::INFINITY;
    for _ in 0..IRLS_MAX_ITER {
        let mut gram = DMatrix::zeros(p, p);
        let mut rhs = DVector::zeros(p);
        let mut score = DVector::zeros(p);
        for (row, yi) in rows.iter().zip(&y) {
            let eta = row.dot(&beta);
            let mu = link.inverse(eta)?;
            let dmu = link.inverse_deriv(eta)?;
            let var = family.variance(mu)?;
            let weight = dmu * dmu / var;
            if !weight.is_finite() {
                return Err(Error::Domain(format!("non-finite IRLS weight at eta {eta}")));
            }
            let z = eta + (yi - mu) / dmu;
            gram.ger(weight, row, row, 1.0);
            rhs += weight * z * row;
            score += (yi - mu) * dmu / var * row;
        }
        if tol.is_infinite() {
            tol = IRLS_TOL * score.amax().max(1.0);
        }
        if score.amax() <= tol {
            return Ok(beta.iter().cloned().collect());
        }
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Rank("weighted model matrix is rank deficient".into()))?;
        beta = chol.solve(&rhs);
        let norm = beta.norm();
        if norm > SEPARATION_NORM {
            return Err(Error::Separation(norm));
        }
    }
    Err(Error::NonConvergence(IRLS_MAX_ITER))
}

/// Root mean squared error over the chosen coefficient indices.
pub fn rmse(beta_hat: &[f64], beta_true: &[f64], indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Invalid("rmse needs a nonempty index set".into()));
    }
    let mut total = 0.0;
    for &i in indices {
        if i >= beta_hat.len() || i >= beta_true.len() {
            return Err(Error::Invalid(format!("coefficient index {i} out of range")));
        }
        total += (beta_hat[i] - beta_true[i]).powi(2);
    }
    Ok((total / indices.len() as f64).sqrt())
}

/// Cross-entropy of fitted stratum probabilities against holdout counts of
/// ones and zeros, normalized by the holdout size.
pub fn cross_entropy(p_hat: &[f64], holdout: &[(u64, u64)]) -> f64 {
    let total: u64 = holdout.iter().map(|(ones, zeros)| ones + zeros).sum();
    if total == 0 {
        return 0.0;
    }
    let mut loss = 0.0;
    for (p, (ones, zeros)) in p_hat.iter().zip(holdout) {
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        loss -= *ones as f64 * p.ln() + *zeros as f64 * (1.0 - p).ln();
    }
    loss / total as f64
}

/// Proportional stratified allocation by the largest-remainder rule.
pub fn proportional_allocation(sizes: &[u64], n: u64) -> Vec<u64> {
    let total: u64 = sizes.iter().sum();
    let shares: Vec<f64> = sizes
        .iter()
        .map(|s| n as f64 * *s as f64 / total as f64)
        .collect();
    largest_remainder(&shares, n)
}

/// As even an allocation as possible, earlier strata first.
pub fn uniform_allocation(m: usize, n: u64) -> Vec<u64> {
    let base = n / m as u64;
    let extra = (n % m as u64) as usize;
    (0..m)
        .map(|i| base + u64::from(i < extra))
        .collect()
}

fn largest_remainder(shares: &[f64], n: u64) -> Vec<u64> {
    let mut counts: Vec<u64> = shares.iter().map(|s| s.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = shares[a] - shares[a].floor();
        let rb = shares[b] - shares[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take((n - assigned) as usize) {
        counts[i] += 1;
    }
    counts
}

/// How a study sampler draws its n units.
#[derive(Debug, Clone)]
pub enum SamplerKind {
    Srswor,
    Stratified(Vec<u64>),
}

#[derive(Debug, Clone)]
pub struct SamplerSpec {
    pub name: String,
    pub kind: SamplerKind,
}

/// Per-replication metrics of one sampler; metric fields are empty when the
/// fit failed (separation, rank deficiency, or non-convergence).
#[derive(Debug, Clone)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub sampler: String,
    pub rmse_b0: Option<f64>,
    pub rmse_rest: Option<f64>,
    pub ce: Option<f64>,
    pub fit_error: Option<String>,
}

/// Mean metrics of one sampler with the number of excluded replications.
#[derive(Debug, Clone)]
pub struct SamplerSummary {
    pub sampler: String,
    pub replications: usize,
    pub excluded: usize,
    pub mean_rmse_b0: f64,
    pub mean_rmse_rest: f64,
    pub mean_ce: f64,
}

/// Runs the seeded sampler-comparison study: for every replication draw a
/// fresh population, sample with each sampler, refit, and record RMSE and
/// cross-entropy on the holdout. Replications are independent; records come
/// back sorted by (replication, sampler order).
pub fn run_study(
    model: &GlmModel,
    strata: &[(Vec<f64>, u64)],
    samplers: &[SamplerSpec],
    n: u64,
    replications: usize,
    master_seed: u64,
) -> Result<Vec<ReplicationRecord>> {
    for sampler in samplers {
        if let SamplerKind::Stratified(counts) = &sampler.kind {
            if counts.len() != strata.len() {
                return Err(Error::Allocation(format!(
                    "sampler {} has {} counts for {} strata",
                    sampler.name,
                    counts.len(),
                    strata.len()
                )));
            }
            if counts.iter().sum::<u64>() != n {
                return Err(Error::Allocation(format!(
                    "sampler {} counts do not sum to n = {n}",
                    sampler.name
                )));
            }
        }
    }
    let p = model.p();
    let rest_indices: Vec<usize> = (1..p).collect();

    let mut records: Vec<ReplicationRecord> = (0..replications)
        .into_par_iter()
        .map(|rep| -> Result<Vec<ReplicationRecord>> {
            let pop_seed = master_seed.wrapping_add(rep as u64);
            let population = generate_population(model, strata, pop_seed)?;
            let mut rows = Vec::with_capacity(samplers.len());
            for (s_idx, sampler) in samplers.iter().enumerate() {
                let sample_seed = master_seed
                    .wrapping_add(0x51_7C_C1_B7_27_22_0A_95u64.wrapping_mul(rep as u64 + 1))
                    .wrapping_add(s_idx as u64);
                let sample = match &sampler.kind {
                    SamplerKind::Srswor => srswor_sample(&population, n, sample_seed)?,
                    SamplerKind::Stratified(counts) => {
                        let alloc = ExactDesign::new(
                            strata.iter().map(|(x, _)| x.clone()).collect(),
                            counts.clone(),
                            n,
                        )?;
                        stratified_sample(&population, &alloc, sample_seed)?
                    }
                };
                let record = match glm_fit(
                    model.family(),
                    model.link(),
                    &sample.rows,
                    model.predictor(),
                ) {
                    Ok(beta_hat) => {
                        let ce = holdout_cross_entropy(model, &population, &sample, &beta_hat)?;
                        ReplicationRecord {
                            replication: rep,
                            sampler: sampler.name.clone(),
                            rmse_b0: Some(rmse(&beta_hat, model.beta(), &[0])?),
                            rmse_rest: Some(rmse(&beta_hat, model.beta(), &rest_indices)?),
                            ce: Some(ce),
                            fit_error: None,
                        }
                    }
                    Err(err) => ReplicationRecord {
                        replication: rep,
                        sampler: sampler.name.clone(),
                        rmse_b0: None,
                        rmse_rest: None,
                        ce: None,
                        fit_error: Some(err.to_string()),
                    },
                };
                rows.push(record);
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    records.sort_by_key(|record| record.replication);
    Ok(records)
}

fn holdout_cross_entropy(
    model: &GlmModel,
    population: &Population,
    sample: &Sample,
    beta_hat: &[f64],
) -> Result<f64> {
    let mut p_hat = Vec::with_capacity(population.strata.len());
    let mut holdout = Vec::with_capacity(population.strata.len());
    for (stratum, picked) in population.strata.iter().zip(&sample.picked) {
        let q = model.predictor().eval(&stratum.point)?;
        let eta: f64 = q.iter().zip(beta_hat).map(|(qk, bk)| qk * bk).sum();
        p_hat.push(model.link().inverse(eta)?);
        let ones_total = stratum.responses.iter().filter(|y| **y == 1.0).count() as u64;
        let total = stratum.responses.len() as u64;
        let ones_sampled = picked
            .iter()
            .filter(|&&unit| stratum.responses[unit] == 1.0)
            .count() as u64;
        let sampled = picked.len() as u64;
        holdout.push((
            ones_total - ones_sampled,
            (total - ones_total) - (sampled - ones_sampled),
        ));
    }
    Ok(cross_entropy(&p_hat, &holdout))
}

/// Aggregates study records per sampler, excluding failed fits from the
/// RMSE and cross-entropy means and reporting how many were dropped.
pub fn summarize(records: &[ReplicationRecord]) -> Vec<SamplerSummary> {
    let mut order: Vec<String> = Vec::new();
    for record in records {
        if !order.contains(&record.sampler) {
            order.push(record.sampler.clone());
        }
    }
    order
        .into_iter()
        .map(|name| {
            let rows: Vec<&ReplicationRecord> =
                records.iter().filter(|r| r.sampler == name).collect();
            let ok: Vec<&&ReplicationRecord> =
                rows.iter().filter(|r| r.fit_error.is_none()).collect();
            let mean = |extract: &dyn Fn(&ReplicationRecord) -> Option<f64>| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().filter_map(|r| extract(r)).sum::<f64>() / ok.len() as f64
                }
            };
            SamplerSummary {
                sampler: name,
                replications: rows.len(),
                excluded: rows.len() - ok.len(),
                mean_rmse_b0: mean(&|r| r.rmse_b0),
                mean_rmse_rest: mean(&|r| r.rmse_rest),
                mean_ce: mean(&|r| r.ce),
            }
        })
        .collect()
}
