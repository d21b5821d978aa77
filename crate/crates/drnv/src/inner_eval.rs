//! Closed-form evaluation of the per-sample inner supremum and of the full
//! dual objective `F(lambda, Q)`.
//!
//! For a dual point with curvature `a = lambda1 + lambda3 > 0`, each sample
//! contributes
//!
//! ```text
//! psi_i = -lambda1 * x_i^2 + sup_{x >= 0} g_i(x)
//! g_i(x) = c1 (x - Q)^+ + c2 (Q - x)^+ - a x^2 + 2 b_i x
//! ```
//!
//! with `b_i = lambda1 * x_i - lambda2 / 2`. The supremum of the piecewise
//! quadratic `g_i` is attained at one of three candidates: the boundary
//! `x = 0`, the overage-side vertex `x_lower = (2 b_i - c2) / (2a)`, or the
//! underage-side vertex `x_upper = (2 b_i + c1) / (2a)`. Which candidate wins
//! depends only on the line coordinate `t = lambda2 - 2 x_i lambda1` relative
//! to four intercepts:
//!
//! * `beta1 = c1` — where `x_upper` crosses zero,
//! * `beta2 = -c2` — where `x_lower` crosses zero,
//! * `beta3 = (c1 - c2)/2 - 2 a Q` — where the two vertex values tie,
//! * `beta4 = c1 - 2 sqrt(a (c1 + c2) Q)` — where the `x = 0` and `x_upper`
//!   values tie.
//!
//! The relative order of the intercepts splits the parameter space into four
//! configurations; algebraically `beta3 < beta2 <=> a Q > (c1 + c2)/4
//! <=> beta4 < beta2`, so only Case 1 (`a Q <= (c1+c2)/4`) and Case 3
//! (`a Q > (c1+c2)/4`) can occur for `a > 0`, `Q >= 0`. All four dispatch
//! branches are kept so the classifier can report reachability statistics.
//!
//! The full objective is
//!
//! ```text
//! F(lambda, Q) = lambda1 * delta + lambda2 * mu + lambda3 * (mu^2 + sigma^2)
//!              + sum_i w_i * psi_i(lambda, Q)
//! ```
//!
//! which is jointly convex in `(lambda, Q)` and finite exactly when `a > 0`.

use serde::Serialize;
use thiserror::Error;

use crate::model::{CaseId, CostParams, DualPoint, RegionId, RegionOutcome, ValidatedInstance};

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum InnerError {
    /// Curvature `a = lambda1 + lambda3 <= 0`: the inner supremum is `+inf`.
    /// Kept as a typed signal so callers can branch without sentinel floats.
    #[error("nonpositive curvature a = {a}; the inner supremum is infinite")]
    NonpositiveCurvature { a: f64 },
}

/// The four dual-plane intercepts for a given `(costs, a, Q)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Intercepts {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub beta4: f64,
}

/// Pointwise newsvendor loss `c1 (x - Q)^+ + c2 (Q - x)^+`.
pub fn newsvendor_loss(x: f64, q: f64, costs: &CostParams) -> f64 {
    costs.c1 * (x - q).max(0.0) + costs.c2 * (q - x).max(0.0)
}

/// The per-sample integrand `g_i` at demand value `x`.
fn g_integrand(x: f64, a: f64, b: f64, q: f64, costs: &CostParams) -> f64 {
    newsvendor_loss(x, q, costs) - a * x * x + 2.0 * b * x
}

/// Computes the intercepts and classifies the active configuration.
///
/// Boundary ties resolve to the branch with the inclusive comparison
/// (Cases 1 and 2 over 3 and 4).
pub fn classify_case(
    costs: &CostParams,
    a: f64,
    q: f64,
) -> Result<(CaseId, Intercepts), InnerError> {
    if !(a > 0.0) {
        return Err(InnerError::NonpositiveCurvature { a });
    }
    debug_assert!(q >= 0.0, "order quantity must be non-negative");
    let beta1 = costs.c1;
    let beta2 = -costs.c2;
    let beta3 = (costs.c1 - costs.c2) / 2.0 - 2.0 * a * q;
    let beta4 = costs.c1 - 2.0 * (a * costs.c_tilde() * q).sqrt();
    let intercepts = Intercepts { beta1, beta2, beta3, beta4 };

    let b3_above = beta3 >= beta2;
    let b4_inside = beta2 <= beta4 && beta4 <= beta1;
    let case = match (b3_above, b4_inside) {
        (true, true) => CaseId::Case1,
        (false, true) => CaseId::Case2,
        (false, false) => CaseId::Case3,
        (true, false) => CaseId::Case4,
    };
    Ok((case, intercepts))
}

/// Supremum of `g_i` over `x >= 0` in closed form.
///
/// Classifies the dual point by the line coordinate `t = lambda2 - 2 x_i
/// lambda1` against the active case's intercepts and returns the winning
/// candidate with its value. On a tie line both adjacent regions have equal
/// value by construction of the intercepts; the lower-indexed region
/// (`Zero` < `Lower` < `Upper`) is reported for reproducibility.
pub fn sup_g(
    x_i: f64,
    lambda: &DualPoint,
    q: f64,
    costs: &CostParams,
) -> Result<RegionOutcome, InnerError> {
    let a = lambda.curvature();
    let (case, betas) = classify_case(costs, a, q)?;
    let b = lambda.b(x_i);
    let t = lambda.lambda2 - 2.0 * x_i * lambda.lambda1;
    let x_lower = (2.0 * b - costs.c2) / (2.0 * a);
    let x_upper = (2.0 * b + costs.c1) / (2.0 * a);

    let region = match case {
        // a Q <= (c1+c2)/4: the vertex-tie line beta3 sits above beta2, so
        // the lower vertex never wins; only the beta4 line separates the
        // boundary candidate from the upper vertex.
        CaseId::Case1 => {
            if t >= betas.beta4 {
                RegionId::Zero
            } else {
                RegionId::Upper
            }
        }
        // Unreachable for a > 0, Q >= 0 (requires beta3 < beta2 <= beta4,
        // which the identity beta3 < beta2 <=> beta4 < beta2 rules out);
        // dispatched as specified for the reachability audit.
        CaseId::Case2 => {
            if t >= betas.beta4 {
                RegionId::Zero
            } else if betas.beta3 <= t && t <= betas.beta2 {
                RegionId::Lower
            } else {
                RegionId::Upper
            }
        }
        // a Q > (c1+c2)/4: beta3 <= beta4 < beta2. Everywhere above beta2
        // the boundary candidate dominates (the upper vertex satisfies
        // x_upper < sqrt((c1+c2) Q / a) throughout the band between beta2
        // and beta1, so its value never reaches the boundary value); between
        // beta3 and beta2 the lower vertex is feasible and wins; below beta3
        // the vertex tie favors the upper vertex.
        CaseId::Case3 => {
            if t >= betas.beta2 {
                RegionId::Zero
            } else if t >= betas.beta3 {
                RegionId::Lower
            } else {
                RegionId::Upper
            }
        }
        // Unreachable for the same reason as Case 2.
        CaseId::Case4 => {
            if t >= betas.beta1 {
                RegionId::Zero
            } else {
                RegionId::Upper
            }
        }
    };

    let x_star = match region {
        RegionId::Zero => 0.0,
        RegionId::Lower => x_lower,
        RegionId::Upper => x_upper,
    };
    debug_assert!(
        x_star >= -1e-12 * (1.0 + x_star.abs()),
        "selected candidate must be feasible"
    );
    let x_star = x_star.max(0.0);
    let g_value = g_integrand(x_star, a, b, q, costs);
    Ok(RegionOutcome { region_id: region, x_star, g_value, case_id: case })
}

/// Feasible candidate maximizers of the integrand with their values, at
/// most three and deduplicated. The supremum is always attained on this
/// set; ties between entries are how worst-case measures split mass.
pub(crate) fn sup_candidates(
    x_i: f64,
    lambda: &DualPoint,
    q: f64,
    costs: &CostParams,
) -> Result<Vec<(f64, f64)>, InnerError> {
    let a = lambda.curvature();
    if !(a > 0.0) {
        return Err(InnerError::NonpositiveCurvature { a });
    }
    let b = lambda.b(x_i);
    let x_lower = (2.0 * b - costs.c2) / (2.0 * a);
    let x_upper = (2.0 * b + costs.c1) / (2.0 * a);
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(3);
    let mut push = |x: f64| {
        if x >= 0.0 && !out.iter().any(|(y, _)| (y - x).abs() <= 1e-12 * (1.0 + x.abs())) {
            out.push((x, g_integrand(x, a, b, q, costs)));
        }
    };
    push(0.0);
    push(x_lower);
    push(x_upper);
    Ok(out)
}

/// Per-sample dual contribution `psi_i = -lambda1 x_i^2 + sup_g`.
pub fn psi(
    x_i: f64,
    lambda: &DualPoint,
    q: f64,
    costs: &CostParams,
) -> Result<f64, InnerError> {
    let outcome = sup_g(x_i, lambda, q, costs)?;
    Ok(-lambda.lambda1 * x_i * x_i + outcome.g_value)
}

/// Full dual objective at a dual point. Returns the typed
/// `NonpositiveCurvature` signal instead of a floating-point infinity when
/// `a <= 0`.
pub fn eval_f(lambda: &DualPoint, q: f64, inst: &ValidatedInstance) -> Result<f64, InnerError> {
    let a = lambda.curvature();
    if !(a > 0.0) {
        return Err(InnerError::NonpositiveCurvature { a });
    }
    let m = inst.moments();
    let mut total = lambda.lambda1 * inst.delta()
        + lambda.lambda2 * m.mu
        + lambda.lambda3 * m.second_raw_moment();
    let costs = inst.costs();
    // Fixed-order summation keeps the reduction deterministic.
    for (i, &x_i) in inst.samples().iter().enumerate() {
        total += inst.psi_weight(i) * psi(x_i, lambda, q, &costs)?;
    }
    Ok(total)
}

/// Inner-supremum outcomes for every sample at a dual point.
pub fn per_sample_regions(
    lambda: &DualPoint,
    q: f64,
    inst: &ValidatedInstance,
) -> Result<Vec<RegionOutcome>, InnerError> {
    let costs = inst.costs();
    inst.samples()
        .iter()
        .map(|&x_i| sup_g(x_i, lambda, q, &costs))
        .collect()
}
