//! Domain types shared by the solvers and oracles: cost/profit parameters,
//! moment targets, problem instances, dual points, and solve reports.
//!
//! All quantities follow the convention of demand in thousands of units and
//! costs in thousands of currency per unit, so expected costs come out in
//! millions when multiplied through. The ambiguity radius `delta` is in
//! squared demand units because the transport ground cost is `(x - y)^2`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Validation failures for problem inputs. Each variant names the violated
/// invariant.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("demand sample at index {index} is negative or non-finite: {value}")]
    NegativeSample { index: usize, value: f64 },
    #[error("instance has no demand samples")]
    EmptySamples,
    #[error("cost parameter {name} must be positive and finite, got {value}")]
    NonpositiveCost { name: &'static str, value: f64 },
    #[error("ambiguity radius must be non-negative and finite, got {value}")]
    NegativeDelta { value: f64 },
    #[error("target standard deviation must be non-negative and finite, got {value}")]
    NegativeSigma { value: f64 },
    #[error("sample weights must be positive and sum to 1, got sum {sum}")]
    BadWeights { sum: f64 },
    #[error("weight vector length {weights} does not match sample count {samples}")]
    WeightLengthMismatch { weights: usize, samples: usize },
    #[error("profit parameters must satisfy p > c > s > 0, got p={p}, c={c}, s={s}")]
    OrderingViolation { p: f64, c: f64, s: f64 },
}

/// Underage/overage cost pair for the cost-minimization objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Underage (lost-sales) cost per unit, `> 0`.
    pub c1: f64,
    /// Overage (waste) cost per unit, `> 0`.
    pub c2: f64,
}

impl CostParams {
    pub fn new(c1: f64, c2: f64) -> Result<Self, ModelError> {
        if !(c1 > 0.0) || !c1.is_finite() {
            return Err(ModelError::NonpositiveCost { name: "c1", value: c1 });
        }
        if !(c2 > 0.0) || !c2.is_finite() {
            return Err(ModelError::NonpositiveCost { name: "c2", value: c2 });
        }
        Ok(Self { c1, c2 })
    }

    /// Combined cost `c1 + c2`.
    pub fn c_tilde(&self) -> f64 {
        self.c1 + self.c2
    }
}

/// Sale price / unit cost / salvage value for the profit-maximization form.
///
/// Requires `p > c > s > 0`; converts to [`CostParams`] via
/// `c1 = p - c`, `c2 = c - s` (maximizing profit is equivalent to minimizing
/// the underage/overage cost with those parameters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfitParams {
    pub price: f64,
    pub unit_cost: f64,
    pub salvage: f64,
}

impl ProfitParams {
    pub fn new(price: f64, unit_cost: f64, salvage: f64) -> Result<Self, ModelError> {
        if !(price > unit_cost && unit_cost > salvage && salvage > 0.0)
            || !price.is_finite()
            || !unit_cost.is_finite()
            || !salvage.is_finite()
        {
            return Err(ModelError::OrderingViolation {
                p: price,
                c: unit_cost,
                s: salvage,
            });
        }
        Ok(Self { price, unit_cost, salvage })
    }
}

/// First/second moment targets for the worst-case distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSpec {
    /// Target mean demand.
    pub mu: f64,
    /// Target standard deviation, `>= 0`.
    pub sigma: f64,
}

impl MomentSpec {
    pub fn new(mu: f64, sigma: f64) -> Result<Self, ModelError> {
        if !(sigma >= 0.0) || !sigma.is_finite() || !mu.is_finite() {
            return Err(ModelError::NegativeSigma { value: sigma });
        }
        Ok(Self { mu, sigma })
    }

    /// Second raw moment `mu^2 + sigma^2`.
    pub fn second_raw_moment(&self) -> f64 {
        self.mu * self.mu + self.sigma * self.sigma
    }
}

/// How the per-sample terms enter the dual objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Weighting {
    /// Weighted sum with weights summing to 1 (empirical-measure convention).
    /// This is the form under which `max(c1, c2)` bounds the subgradient of
    /// the outer objective.
    #[default]
    Normalized,
    /// Literal unweighted sum over samples, for side-by-side comparison.
    Unnormalized,
}

/// A robust newsvendor instance: demand samples, ambiguity radius, costs,
/// and moment targets.
///
/// Construct with [`ProblemInstance::new`] and adjust via the `with_*`
/// builders, then call [`ProblemInstance::validate`] before solving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub samples: Vec<f64>,
    /// Wasserstein radius in squared demand units.
    pub delta: f64,
    pub costs: CostParams,
    /// Moment targets; `None` defaults to the empirical moments at validation.
    pub moments: Option<MomentSpec>,
    /// Per-sample weights; `None` defaults to uniform `1/n`.
    pub weights: Option<Vec<f64>>,
    pub weighting: Weighting,
}

impl ProblemInstance {
    pub fn new(samples: Vec<f64>, delta: f64, costs: CostParams) -> Self {
        Self {
            samples,
            delta,
            costs,
            moments: None,
            weights: None,
            weighting: Weighting::Normalized,
        }
    }

    pub fn with_moments(mut self, moments: MomentSpec) -> Self {
        self.moments = Some(moments);
        self
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.weights = Some(weights);
        self
    }

    pub fn with_weighting(mut self, weighting: Weighting) -> Self {
        self.weighting = weighting;
        self
    }

    /// Checks every invariant and freezes the instance for the solvers:
    /// samples are sorted in decreasing order (the plane-descent geometry
    /// requires this ordering), weights follow the same permutation, and
    /// omitted moments default to the empirical ones.
    pub fn validate(self) -> Result<ValidatedInstance, ModelError> {
        validate_instance(self)
    }
}

/// A checked, sorted instance. Immutable after construction and safe to share
/// across threads.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidatedInstance {
    samples: Vec<f64>,
    weights: Vec<f64>,
    delta: f64,
    costs: CostParams,
    moments: MomentSpec,
    weighting: Weighting,
}

impl ValidatedInstance {
    /// Demand samples in decreasing order.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Weights aligned with [`Self::samples`]; they sum to 1.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn costs(&self) -> CostParams {
        self.costs
    }

    pub fn moments(&self) -> MomentSpec {
        self.moments
    }

    pub fn weighting(&self) -> Weighting {
        self.weighting
    }

    /// The coefficient of sample `i` in the dual objective sum.
    pub fn psi_weight(&self, i: usize) -> f64 {
        match self.weighting {
            Weighting::Normalized => self.weights[i],
            Weighting::Unnormalized => 1.0,
        }
    }

    /// Largest demand sample (first, by the sort order).
    pub fn max_sample(&self) -> f64 {
        self.samples[0]
    }

    /// Rebuilds the unvalidated form, preserving the sorted order.
    pub fn into_instance(self) -> ProblemInstance {
        ProblemInstance {
            samples: self.samples,
            delta: self.delta,
            costs: self.costs,
            moments: Some(self.moments),
            weights: Some(self.weights),
            weighting: self.weighting,
        }
    }
}

/// Validates an instance and returns its frozen form. Idempotent: validating
/// the rebuilt form of a [`ValidatedInstance`] returns it unchanged.
pub fn validate_instance(inst: ProblemInstance) -> Result<ValidatedInstance, ModelError> {
    if inst.samples.is_empty() {
        return Err(ModelError::EmptySamples);
    }
    for (index, &value) in inst.samples.iter().enumerate() {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(ModelError::NegativeSample { index, value });
        }
    }
    if !(inst.delta >= 0.0) || !inst.delta.is_finite() {
        return Err(ModelError::NegativeDelta { value: inst.delta });
    }
    // Re-run the parameter checks so instances built literally also validate.
    let costs = CostParams::new(inst.costs.c1, inst.costs.c2)?;

    let n = inst.samples.len();
    let weights = match inst.weights {
        Some(w) => {
            if w.len() != n {
                return Err(ModelError::WeightLengthMismatch {
                    weights: w.len(),
                    samples: n,
                });
            }
            let sum: f64 = w.iter().sum();
            if w.iter().any(|&x| !(x > 0.0) || !x.is_finite()) || (sum - 1.0).abs() > 1e-9 {
                return Err(ModelError::BadWeights { sum });
            }
            w
        }
        None => vec![1.0 / n as f64; n],
    };

    // Sort samples decreasing, carrying weights along.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| inst.samples[j].total_cmp(&inst.samples[i]));
    let samples: Vec<f64> = order.iter().map(|&i| inst.samples[i]).collect();
    let weights: Vec<f64> = order.iter().map(|&i| weights[i]).collect();

    let moments = match inst.moments {
        Some(m) => MomentSpec::new(m.mu, m.sigma)?,
        None => {
            let (mu, sigma) = weighted_moments(&samples, &weights);
            MomentSpec { mu, sigma }
        }
    };

    Ok(ValidatedInstance {
        samples,
        weights,
        delta: inst.delta,
        costs,
        moments,
        weighting: inst.weighting,
    })
}

/// Weighted empirical mean and standard deviation of the samples, with the
/// variance clamped at zero against round-off.
pub fn empirical_moments(inst: &ProblemInstance) -> Result<(f64, f64), ModelError> {
    if inst.samples.is_empty() {
        return Err(ModelError::EmptySamples);
    }
    let n = inst.samples.len();
    let uniform = vec![1.0 / n as f64; n];
    let weights = inst.weights.as_deref().unwrap_or(&uniform);
    if weights.len() != n {
        return Err(ModelError::WeightLengthMismatch {
            weights: weights.len(),
            samples: n,
        });
    }
    Ok(weighted_moments(&inst.samples, weights))
}

fn weighted_moments(samples: &[f64], weights: &[f64]) -> (f64, f64) {
    let mu: f64 = samples.iter().zip(weights).map(|(x, w)| w * x).sum();
    let m2: f64 = samples.iter().zip(weights).map(|(x, w)| w * x * x).sum();
    let var = (m2 - mu * mu).max(0.0);
    (mu, var.sqrt())
}

/// A point in the dual multiplier space. `lambda1` prices the transport
/// budget, `lambda2` the mean target, `lambda3` the second raw moment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualPoint {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl DualPoint {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Self {
        Self { lambda1, lambda2, lambda3 }
    }

    /// Quadratic curvature `a = lambda1 + lambda3` of the per-sample
    /// integrand; the inner supremum is finite only for `a > 0`.
    pub fn curvature(&self) -> f64 {
        self.lambda1 + self.lambda3
    }

    /// The reduced outer variable `xi = lambda1 + lambda3` (identical to the
    /// curvature; both names are used by the two solver layers).
    pub fn xi(&self) -> f64 {
        self.curvature()
    }

    /// Per-sample linear coefficient `b_i = lambda1 * x_i - lambda2 / 2`.
    pub fn b(&self, x_i: f64) -> f64 {
        self.lambda1 * x_i - self.lambda2 / 2.0
    }
}

/// Which candidate maximizer of the per-sample integrand is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionId {
    /// Supremum at the boundary `x = 0`.
    Zero,
    /// Supremum at the overage-side vertex `x_lower` (below the order level).
    Lower,
    /// Supremum at the underage-side vertex `x_upper` (above the order level).
    Upper,
}

/// Which of the four intercept-ordering configurations is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseId {
    Case1,
    Case2,
    Case3,
    Case4,
}

/// Outcome of the per-sample inner supremum at a given dual point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionOutcome {
    pub region_id: RegionId,
    /// Optimal inner demand value, `>= 0`.
    pub x_star: f64,
    /// Supremum value of the integrand.
    pub g_value: f64,
    pub case_id: CaseId,
}

/// Iteration counters accumulated over a full solve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SolveIterations {
    pub bisection_steps: usize,
    pub xi_evaluations: usize,
    pub inner_descent_steps: usize,
}

/// Tolerances the solve actually ran with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveTolerances {
    pub xi_rel_tol: f64,
    pub q_abs_tol: f64,
}

/// Diagnostic flags for corner and fallback paths taken during a solve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SolveDiagnostics {
    /// Optimal order quantity pinned at zero by the subgradient sign.
    pub corner_at_zero: bool,
    /// The subgradient never changed sign on the expanded bracket.
    pub no_sign_change: bool,
    /// The inner line search hit its expansion cap before the objective
    /// turned upward (the minimum sits at the open end of the bracket).
    pub xi_capped: bool,
}

/// Full result of a robust newsvendor solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    /// Optimal order quantity.
    pub q_star: f64,
    /// Worst-case expected cost at `q_star` (the dual optimal value).
    pub worst_case_cost: f64,
    pub dual_point: DualPoint,
    pub xi_star: f64,
    /// Inner-supremum outcome per sample, aligned with the sorted samples.
    pub per_sample_regions: Vec<RegionOutcome>,
    pub iterations: SolveIterations,
    pub tolerances: SolveTolerances,
    pub diagnostics: SolveDiagnostics,
    /// `(q, subgradient)` at every bisection iterate, for auditing the
    /// envelope-derivative bound.
    pub bisection_trace: Vec<(f64, f64)>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn costs() -> CostParams {
        CostParams::new(20.0, 10.0).unwrap()
    }

    #[test]
    fn validate_sorts_decreasing() {
        let inst = ProblemInstance::new(vec![3.0, 1.0, 2.0], 1.0, costs())
            .with_moments(MomentSpec::new(2.0, 1.0).unwrap());
        let v = inst.validate().unwrap();
        assert_eq!(v.samples(), &[3.0, 2.0, 1.0]);
        assert_eq!(v.weights().len(), 3);
    }

    #[test]
    fn negative_sample_rejected() {
        let inst = ProblemInstance::new(vec![-1.0], 1.0, costs());
        assert!(matches!(
            inst.validate(),
            Err(ModelError::NegativeSample { index: 0, .. })
        ));
    }

    #[test]
    fn empty_samples_rejected() {
        let inst = ProblemInstance::new(vec![], 1.0, costs());
        assert!(matches!(inst.validate(), Err(ModelError::EmptySamples)));
    }

    #[test]
    fn nonpositive_cost_rejected() {
        assert!(matches!(
            CostParams::new(0.0, 1.0),
            Err(ModelError::NonpositiveCost { name: "c1", .. })
        ));
        assert!(matches!(
            CostParams::new(1.0, -2.0),
            Err(ModelError::NonpositiveCost { name: "c2", .. })
        ));
    }

    #[test]
    fn negative_delta_rejected() {
        let inst = ProblemInstance::new(vec![1.0], -0.5, costs());
        assert!(matches!(inst.validate(), Err(ModelError::NegativeDelta { .. })));
    }

    #[test]
    fn negative_sigma_rejected() {
        assert!(matches!(
            MomentSpec::new(1.0, -1.0),
            Err(ModelError::NegativeSigma { .. })
        ));
    }

    #[test]
    fn degenerate_point_mass_is_valid() {
        let c = CostParams::new(1.0, 1.0).unwrap();
        let inst = ProblemInstance::new(vec![5.0], 0.0, c)
            .with_moments(MomentSpec::new(5.0, 0.0).unwrap());
        let v = inst.validate().unwrap();
        assert_eq!(v.samples(), &[5.0]);
        assert_eq!(v.moments().sigma, 0.0);
    }

    #[test]
    fn validation_is_idempotent() {
        let inst = ProblemInstance::new(vec![4.0, 7.0, 1.0], 2.0, costs());
        let v1 = inst.validate().unwrap();
        let v2 = v1.clone().into_instance().validate().unwrap();
        assert_eq!(v1, v2);
    }

    #[test]
    fn empirical_moments_two_point() {
        let inst = ProblemInstance::new(vec![2.0, 4.0], 0.0, costs());
        let (mu, sigma) = empirical_moments(&inst).unwrap();
        assert_eq!(mu, 3.0);
        assert!((sigma - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empirical_moments_point_mass_exact() {
        let inst = ProblemInstance::new(vec![5.0], 0.0, costs());
        let (mu, sigma) = empirical_moments(&inst).unwrap();
        assert_eq!((mu, sigma), (5.0, 0.0));
    }

    #[test]
    fn empirical_moments_four_samples() {
        let inst = ProblemInstance::new(vec![1.0, 2.0, 3.0, 4.0], 0.0, costs());
        let (mu, sigma) = empirical_moments(&inst).unwrap();
        assert!((mu - 2.5).abs() < 1e-15);
        assert!((sigma - 1.25f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn moments_default_to_empirical() {
        let v = ProblemInstance::new(vec![2.0, 4.0], 1.0, costs())
            .validate()
            .unwrap();
        assert!((v.moments().mu - 3.0).abs() < 1e-15);
        assert!((v.moments().sigma - 1.0).abs() < 1e-15);
    }

    #[test]
    fn custom_weights_follow_sort_order() {
        let v = ProblemInstance::new(vec![1.0, 3.0], 0.0, costs())
            .with_weights(vec![0.25, 0.75])
            .validate()
            .unwrap();
        assert_eq!(v.samples(), &[3.0, 1.0]);
        assert_eq!(v.weights(), &[0.75, 0.25]);
    }

    #[test]
    fn bad_weights_rejected() {
        let r = ProblemInstance::new(vec![1.0, 2.0], 0.0, costs())
            .with_weights(vec![0.5, 0.6])
            .validate();
        assert!(matches!(r, Err(ModelError::BadWeights { .. })));
    }

    #[test]
    fn profit_params_require_ordering() {
        assert!(ProfitParams::new(30.0, 20.0, 10.0).is_ok());
        assert!(matches!(
            ProfitParams::new(30.0, 10.0, 0.0),
            Err(ModelError::OrderingViolation { .. })
        ));
        assert!(ProfitParams::new(10.0, 20.0, 5.0).is_err());
    }

    #[test]
    fn dual_point_derived_quantities() {
        let d = DualPoint::new(1.0, 4.0, 0.5);
        assert_eq!(d.curvature(), 1.5);
        assert_eq!(d.xi(), d.curvature());
        assert_eq!(d.b(3.0), 1.0 * 3.0 - 2.0);
    }
}
