//! Greedy round-off from approximate weights to exact unit counts.
//!
//! Floors nᵢ = ⌊n wᵢ⌋ are assigned first; each leftover unit then goes to
//! the index whose increment yields the largest A-objective
//! dᵢ = h((n−k+1)⁻¹(n₁, …, nᵢ+1, …, n_m)). Zero-weight points never receive
//! units. The normalization constant is the same for every candidate within
//! a step, so it cannot change the argmax (h is homogeneous of degree one in
//! raw weights); it is kept anyway to match the gain values as defined.

use crate::design::{ApproximateDesign, Atoms, ExactDesign};
use crate::error::{Error, Result};
use crate::glm::GlmModel;

/// One greedy step: h-gains of every eligible index and the pick.
#[derive(Debug, Clone)]
pub struct RoundingStep {
    /// Units still unassigned when the step ran.
    pub remaining: u64,
    /// dᵢ per candidate index, aligned with `eligible`.
    pub gains: Vec<f64>,
    /// Candidate indices (support of the approximate design).
    pub eligible: Vec<usize>,
    /// Chosen index (smallest index among the maximizers).
    pub chosen: usize,
}

#[derive(Debug, Clone)]
pub struct RoundingResult {
    pub design: ExactDesign,
    pub steps: Vec<RoundingStep>,
}

/// Converts an approximate design into an exact allocation of `n` units.
pub fn round_allocation(
    model: &GlmModel,
    design: &ApproximateDesign,
    n: u64,
) -> Result<RoundingResult> {
    if n == 0 {
        return Err(Error::Invalid("run count n must be positive".into()));
    }
    let m = design.m();
    let mut counts: Vec<u64> = design
        .weights()
        .iter()
        .map(|w| (n as f64 * w).floor() as u64)
        .collect();
    // n·wᵢ within an ulp of an integer can push a floor one unit high; trim
    // so the leftovers are well defined.
    while counts.iter().sum::<u64>() > n {
        let largest = (0..m).max_by_key(|&i| counts[i]).expect("m >= 1");
        counts[largest] -= 1;
    }
    let assigned: u64 = counts.iter().sum();
    let mut k = n - assigned;
    let eligible: Vec<usize> = (0..m).filter(|&i| design.weights()[i] > 0.0).collect();

    // ν values are rescaled to a unit maximum: h is homogeneous in that
    // scale, so every comparison below is unaffected.
    let (atoms, _) = Atoms::new(model, design.points())?.normalized();

    if k == 0 {
        let floor_weights: Vec<f64> = counts.iter().map(|c| *c as f64 / n as f64).collect();
        if atoms.h(&floor_weights) <= 0.0 {
            return Err(Error::Infeasible(
                "floor allocation is singular and there are no leftover units".into(),
            ));
        }
    }

    let mut steps = Vec::with_capacity(k as usize);
    while k > 0 {
        let norm = 1.0 / (n - k + 1) as f64;
        let gains: Vec<f64> = eligible
            .iter()
            .map(|&i| {
                let weights: Vec<f64> = counts
                    .iter()
                    .enumerate()
                    .map(|(j, c)| norm * (*c as f64 + if j == i { 1.0 } else { 0.0 }))
                    .collect();
                atoms.h(&weights)
            })
            .collect();
        let mut best = 0;
        for (slot, gain) in gains.iter().enumerate() {
            if *gain > gains[best] {
                best = slot;
            }
        }
        let chosen = eligible[best];
        steps.push(RoundingStep {
            remaining: k,
            gains,
            eligible: eligible.clone(),
            chosen,
        });
        counts[chosen] += 1;
        k -= 1;
    }

    Ok(RoundingResult {
        design: ExactDesign::new(design.points().to_vec(), counts, n)?,
        steps,
    })
}
