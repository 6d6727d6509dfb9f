//! Declarative market instances: beliefs, costs-of-carry, supply and payoff.
//!
//! Every field is a function of `(t, x)` drawn from a small closed family
//! (constant, affine in `x`, or a bilinear sample table) so that instances can
//! be written down in JSON and evaluated anywhere on a truncated domain.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Default lower bound on every agent's volatility.
pub const DEFAULT_SIGMA_MIN: f64 = 1e-6;

/// Hard limit on the number of agent types; agent sets are stored as `u64` masks.
pub const MAX_AGENTS: usize = 64;

/// A real-valued field of `(t, x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CoefficientField {
    Constant {
        value: f64,
    },
    Affine {
        intercept: f64,
        slope: f64,
    },
    /// Bilinear interpolation of `values[k][j]` sampled at `(ts[k], xs[j])`,
    /// held constant outside the sampled rectangle.
    Table {
        ts: Vec<f64>,
        xs: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

impl CoefficientField {
    pub fn constant(value: f64) -> Self {
        CoefficientField::Constant { value }
    }

    pub fn affine(intercept: f64, slope: f64) -> Self {
        CoefficientField::Affine { intercept, slope }
    }

    #[inline]
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        match self {
            CoefficientField::Constant { value } => *value,
            CoefficientField::Affine { intercept, slope } => intercept + slope * x,
            CoefficientField::Table { ts, xs, values } => {
                let (k0, k1, wt) = bracket(ts, t);
                let (j0, j1, wx) = bracket(xs, x);
                let lo = lerp(values[k0][j0], values[k0][j1], wx);
                let hi = lerp(values[k1][j0], values[k1][j1], wx);
                lerp(lo, hi, wt)
            }
        }
    }

    pub fn is_time_independent(&self) -> bool {
        match self {
            CoefficientField::Table { ts, values, .. } => {
                ts.len() == 1 || values.windows(2).all(|w| w[0] == w[1])
            }
            _ => true,
        }
    }

    /// The field's value if it does not depend on `(t, x)` at all.
    pub fn as_constant(&self) -> Option<f64> {
        match self {
            CoefficientField::Constant { value } => Some(*value),
            CoefficientField::Affine { intercept, slope } if *slope == 0.0 => Some(*intercept),
            CoefficientField::Affine { .. } => None,
            CoefficientField::Table { values, .. } => {
                let first = values.first()?.first().copied()?;
                values
                    .iter()
                    .flatten()
                    .all(|v| *v == first)
                    .then_some(first)
            }
        }
    }

    /// Multiplies the field pointwise by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            CoefficientField::Constant { value } => CoefficientField::Constant {
                value: value * factor,
            },
            CoefficientField::Affine { intercept, slope } => CoefficientField::Affine {
                intercept: intercept * factor,
                slope: slope * factor,
            },
            CoefficientField::Table { ts, xs, values } => CoefficientField::Table {
                ts: ts.clone(),
                xs: xs.clone(),
                values: values
                    .iter()
                    .map(|row| row.iter().map(|v| v * factor).collect())
                    .collect(),
            },
        }
    }

    fn check_shape(&self, what: &str) -> std::result::Result<(), String> {
        match self {
            CoefficientField::Constant { value } => finite(*value, what),
            CoefficientField::Affine { intercept, slope } => {
                finite(*intercept, what)?;
                finite(*slope, what)
            }
            CoefficientField::Table { ts, xs, values } => {
                check_axis(ts, &format!("{what}.ts"))?;
                check_axis(xs, &format!("{what}.xs"))?;
                if values.len() != ts.len() || values.iter().any(|row| row.len() != xs.len()) {
                    return Err(format!(
                        "{what}: table values must be {} rows of {} samples",
                        ts.len(),
                        xs.len()
                    ));
                }
                values.iter().flatten().try_for_each(|v| finite(*v, what))
            }
        }
    }
}

/// The terminal payoff `f(y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PayoffSpec {
    Constant { value: f64 },
    /// `y ↦ y²`
    Quadratic,
    Affine { intercept: f64, slope: f64 },
    Table { xs: Vec<f64>, values: Vec<f64> },
}

impl PayoffSpec {
    #[inline]
    pub fn eval(&self, y: f64) -> f64 {
        match self {
            PayoffSpec::Constant { value } => *value,
            PayoffSpec::Quadratic => y * y,
            PayoffSpec::Affine { intercept, slope } => intercept + slope * y,
            PayoffSpec::Table { xs, values } => {
                let (j0, j1, w) = bracket(xs, y);
                lerp(values[j0], values[j1], w)
            }
        }
    }

    fn check_shape(&self) -> std::result::Result<(), String> {
        match self {
            PayoffSpec::Constant { value } => finite(*value, "payoff"),
            PayoffSpec::Quadratic => Ok(()),
            PayoffSpec::Affine { intercept, slope } => {
                finite(*intercept, "payoff")?;
                finite(*slope, "payoff")
            }
            PayoffSpec::Table { xs, values } => {
                check_axis(xs, "payoff.xs")?;
                if values.len() != xs.len() {
                    return Err("payoff: table needs one value per sample point".into());
                }
                values.iter().try_for_each(|v| finite(*v, "payoff"))
            }
        }
    }
}

/// One agent type's model of the state: `dX = b dt + σ dW`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefSpec {
    pub drift: CoefficientField,
    #[serde(rename = "vol")]
    pub volatility: CoefficientField,
}

impl BeliefSpec {
    pub fn constant(drift: f64, vol: f64) -> Self {
        BeliefSpec {
            drift: CoefficientField::constant(drift),
            volatility: CoefficientField::constant(vol),
        }
    }
}

/// Inverse cost coefficients `α` (larger means cheaper) and optional linear terms `β`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum CostStructure {
    Uniform {
        alpha_minus: f64,
        alpha_plus: f64,
    },
    #[serde(alias = "linear-augmented")]
    Linear {
        alpha_minus: f64,
        alpha_plus: f64,
        beta_minus: f64,
        beta_plus: f64,
    },
    Heterogeneous {
        alpha_minus: Vec<f64>,
        alpha_plus: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        beta_minus: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        beta_plus: Option<Vec<f64>>,
    },
}

impl CostStructure {
    pub fn uniform(alpha_minus: f64, alpha_plus: f64) -> Self {
        CostStructure::Uniform {
            alpha_minus,
            alpha_plus,
        }
    }

    /// Expands the structure into per-agent coefficient vectors.
    pub fn per_agent(&self, n: usize) -> AgentCosts {
        match self {
            CostStructure::Uniform {
                alpha_minus,
                alpha_plus,
            } => AgentCosts {
                alpha_minus: vec![*alpha_minus; n],
                alpha_plus: vec![*alpha_plus; n],
                beta_minus: vec![0.0; n],
                beta_plus: vec![0.0; n],
            },
            CostStructure::Linear {
                alpha_minus,
                alpha_plus,
                beta_minus,
                beta_plus,
            } => AgentCosts {
                alpha_minus: vec![*alpha_minus; n],
                alpha_plus: vec![*alpha_plus; n],
                beta_minus: vec![*beta_minus; n],
                beta_plus: vec![*beta_plus; n],
            },
            CostStructure::Heterogeneous {
                alpha_minus,
                alpha_plus,
                beta_minus,
                beta_plus,
            } => AgentCosts {
                alpha_minus: alpha_minus.clone(),
                alpha_plus: alpha_plus.clone(),
                beta_minus: beta_minus.clone().unwrap_or_else(|| vec![0.0; n]),
                beta_plus: beta_plus.clone().unwrap_or_else(|| vec![0.0; n]),
            },
        }
    }

    /// `(α₋, α₊)` when every agent shares them.
    pub fn uniform_alphas(&self) -> Option<(f64, f64)> {
        match self {
            CostStructure::Uniform {
                alpha_minus,
                alpha_plus,
            }
            | CostStructure::Linear {
                alpha_minus,
                alpha_plus,
                ..
            } => Some((*alpha_minus, *alpha_plus)),
            CostStructure::Heterogeneous { .. } => None,
        }
    }

    pub fn has_linear_terms(&self) -> bool {
        match self {
            CostStructure::Uniform { .. } => false,
            CostStructure::Linear {
                beta_minus,
                beta_plus,
                ..
            } => *beta_minus != 0.0 || *beta_plus != 0.0,
            CostStructure::Heterogeneous {
                beta_minus,
                beta_plus,
                ..
            } => [beta_minus, beta_plus]
                .iter()
                .any(|b| b.as_ref().is_some_and(|v| v.iter().any(|x| *x != 0.0))),
        }
    }

    /// Replaces `(α₋, α₊)` by `(λα₋, λα₊)` for every agent.
    pub fn scaled(&self, lambda: f64) -> Self {
        let scale = |v: &Vec<f64>| v.iter().map(|a| a * lambda).collect();
        match self {
            CostStructure::Uniform {
                alpha_minus,
                alpha_plus,
            } => CostStructure::Uniform {
                alpha_minus: alpha_minus * lambda,
                alpha_plus: alpha_plus * lambda,
            },
            CostStructure::Linear {
                alpha_minus,
                alpha_plus,
                beta_minus,
                beta_plus,
            } => CostStructure::Linear {
                alpha_minus: alpha_minus * lambda,
                alpha_plus: alpha_plus * lambda,
                beta_minus: *beta_minus,
                beta_plus: *beta_plus,
            },
            CostStructure::Heterogeneous {
                alpha_minus,
                alpha_plus,
                beta_minus,
                beta_plus,
            } => CostStructure::Heterogeneous {
                alpha_minus: scale(alpha_minus),
                alpha_plus: scale(alpha_plus),
                beta_minus: beta_minus.clone(),
                beta_plus: beta_plus.clone(),
            },
        }
    }

    fn check(&self, n: usize) -> Vec<String> {
        let mut problems = Vec::new();
        if let CostStructure::Heterogeneous {
            alpha_minus,
            alpha_plus,
            beta_minus,
            beta_plus,
        } = self
        {
            let lens = [
                Some(alpha_minus.len()),
                Some(alpha_plus.len()),
                beta_minus.as_ref().map(Vec::len),
                beta_plus.as_ref().map(Vec::len),
            ];
            if lens.iter().flatten().any(|len| *len != n) {
                problems.push(format!("heterogeneous costs need exactly {n} entries per coefficient"));
                return problems;
            }
        }
        let costs = self.per_agent(n);
        for i in 0..n {
            let (am, ap) = (costs.alpha_minus[i], costs.alpha_plus[i]);
            let (bm, bp) = (costs.beta_minus[i], costs.beta_plus[i]);
            if !(am > 0.0 && ap > 0.0 && am.is_finite() && ap.is_finite()) {
                problems.push(format!("agent {i}: alpha coefficients must be finite and > 0 (got {am}, {ap})"));
            } else if am > ap {
                problems.push(format!("agent {i}: alpha_minus = {am} exceeds alpha_plus = {ap}"));
            }
            if !(bm >= 0.0 && bp >= 0.0 && bm.is_finite() && bp.is_finite()) {
                problems.push(format!("agent {i}: beta coefficients must be finite and >= 0 (got {bm}, {bp})"));
            }
        }
        problems
    }
}

/// Per-agent cost coefficients; the uniform and linear modes are expanded into equal entries.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentCosts {
    pub alpha_minus: Vec<f64>,
    pub alpha_plus: Vec<f64>,
    pub beta_minus: Vec<f64>,
    pub beta_plus: Vec<f64>,
}

impl AgentCosts {
    pub fn len(&self) -> usize {
        self.alpha_minus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha_minus.is_empty()
    }

    /// Instantaneous cost-of-carry `c(y)` for agent `i`.
    #[inline]
    pub fn carry_cost(&self, i: usize, y: f64) -> f64 {
        if y >= 0.0 {
            y * y / (2.0 * self.alpha_plus[i]) + self.beta_plus[i] * y
        } else {
            y * y / (2.0 * self.alpha_minus[i]) - self.beta_minus[i] * y
        }
    }
}

/// A complete market instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketSpec {
    pub agents: Vec<BeliefSpec>,
    pub costs: CostStructure,
    pub supply: CoefficientField,
    pub payoff: PayoffSpec,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub x0: f64,
    /// Admits zero volatilities; such instances are solved with pure upwinding.
    #[serde(default, skip_serializing_if = "is_false")]
    pub degenerate: bool,
    #[serde(default = "default_sigma_min")]
    pub sigma_min: f64,
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn default_sigma_min() -> f64 {
    DEFAULT_SIGMA_MIN
}

impl MarketSpec {
    pub fn new(
        agents: Vec<BeliefSpec>,
        costs: CostStructure,
        supply: CoefficientField,
        payoff: PayoffSpec,
        horizon: f64,
        x0: f64,
    ) -> Self {
        MarketSpec {
            agents,
            costs,
            supply,
            payoff,
            horizon,
            x0,
            degenerate: false,
            sigma_min: DEFAULT_SIGMA_MIN,
        }
    }

    pub fn with_degenerate(mut self, degenerate: bool) -> Self {
        self.degenerate = degenerate;
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    #[inline]
    pub fn drift(&self, i: usize, t: f64, x: f64) -> f64 {
        self.agents[i].drift.eval(t, x)
    }

    #[inline]
    pub fn vol(&self, i: usize, t: f64, x: f64) -> f64 {
        self.agents[i].volatility.eval(t, x)
    }

    #[inline]
    pub fn supply_at(&self, t: f64, x: f64) -> f64 {
        self.supply.eval(t, x)
    }

    pub fn agent_costs(&self) -> AgentCosts {
        self.costs.per_agent(self.agents.len())
    }

    pub fn coefficients_time_independent(&self) -> bool {
        self.supply.is_time_independent()
            && self
                .agents
                .iter()
                .all(|a| a.drift.is_time_independent() && a.volatility.is_time_independent())
    }

    /// The one-agent market seen by agent `i` alone, with zero supply.
    pub fn single_agent(&self, i: usize) -> MarketSpec {
        let costs = self.agent_costs();
        MarketSpec {
            agents: vec![self.agents[i].clone()],
            costs: CostStructure::uniform(costs.alpha_minus[i], costs.alpha_plus[i]),
            supply: CoefficientField::constant(0.0),
            ..self.clone()
        }
    }

    /// Checks the invariants that do not need a grid.
    pub fn check_structure(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let n = self.agents.len();
        if n == 0 {
            report.push(Invariant::AgentCount, "at least one agent type is required", None);
        }
        if n > MAX_AGENTS {
            report.push(Invariant::AgentCount, format!("at most {MAX_AGENTS} agent types are supported"), None);
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            report.push(Invariant::Horizon, format!("horizon T must be finite and > 0 (got {})", self.horizon), None);
        }
        if !self.x0.is_finite() {
            report.push(Invariant::Shape, "x0 must be finite", None);
        }
        if !(self.sigma_min > 0.0) {
            report.push(Invariant::Shape, "sigma_min must be > 0", None);
        }
        for problem in self.costs.check(n) {
            report.push(Invariant::Costs, problem, None);
        }
        for (i, agent) in self.agents.iter().enumerate() {
            for (field, what) in [(&agent.drift, "drift"), (&agent.volatility, "vol")] {
                if let Err(msg) = field.check_shape(&format!("agents[{i}].{what}")) {
                    report.push(Invariant::Shape, msg, None);
                }
            }
        }
        if let Err(msg) = self.supply.check_shape("supply") {
            report.push(Invariant::Shape, msg, None);
        }
        if let Err(msg) = self.payoff.check_shape() {
            report.push(Invariant::Shape, msg, None);
        }
        report
    }
}

/// Which invariant a validation finding concerns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Invariant {
    AgentCount,
    Horizon,
    Shape,
    Costs,
    Parabolicity,
    NegativeSupply,
    NonFinite,
    Domain,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub invariant: Invariant,
    pub message: String,
    /// The offending `(t, x)` sample, when the violation is pointwise.
    pub at: Option<(f64, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, invariant: Invariant) -> bool {
        self.violations.iter().any(|v| v.invariant == invariant)
    }

    fn push(&mut self, invariant: Invariant, message: impl Into<String>, at: Option<(f64, f64)>) {
        self.violations.push(Violation {
            invariant,
            message: message.into(),
            at,
        });
    }

    pub fn into_result(self) -> Result<()> {
        if self.passed() {
            Ok(())
        } else {
            Err(Error::Validation(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "pass");
        }
        for v in &self.violations {
            match v.at {
                Some((t, x)) => writeln!(f, "  - {} at (t = {t}, x = {x})", v.message)?,
                None => writeln!(f, "  - {}", v.message)?,
            }
        }
        Ok(())
    }
}

/// Checks every market invariant on the nodes of `grid`.
///
/// Pointwise checks report the first offending `(t, x)` sample per invariant.
pub fn validate(spec: &MarketSpec, grid: &GridSpec) -> ValidationReport {
    let mut report = spec.check_structure();
    if !report.passed() {
        return report;
    }
    if !(grid.x_lo < spec.x0 && spec.x0 < grid.x_hi) {
        report.push(
            Invariant::Domain,
            format!("x0 = {} must lie strictly inside [{}, {}]", spec.x0, grid.x_lo, grid.x_hi),
            None,
        );
    }
    if grid.nx < 3 || grid.nt < 1 {
        report.push(Invariant::Domain, "grid needs nx >= 3 and nt >= 1", None);
        return report;
    }

    let rows: Vec<usize> = if spec.coefficients_time_independent() {
        vec![0]
    } else {
        (0..=grid.nt).collect()
    };
    let seen = |report: &mut ValidationReport, inv: Invariant| report.has(inv);
    for &k in &rows {
        let t = grid.time(k);
        for j in 0..grid.nx {
            let x = grid.x(j);
            for (i, agent) in spec.agents.iter().enumerate() {
                let b = agent.drift.eval(t, x);
                let sigma = agent.volatility.eval(t, x);
                if !(b.is_finite() && sigma.is_finite()) && !seen(&mut report, Invariant::NonFinite) {
                    report.push(Invariant::NonFinite, format!("agent {i}: non-finite coefficient"), Some((t, x)));
                }
                let floor = if spec.degenerate { 0.0 } else { spec.sigma_min };
                if sigma < floor && !seen(&mut report, Invariant::Parabolicity) {
                    let msg = if spec.degenerate {
                        format!("agent {i}: volatility {sigma} is negative")
                    } else {
                        format!(
                            "agent {i}: volatility {sigma} is below sigma_min = {} (flag the instance degenerate to allow zero volatility)",
                            spec.sigma_min
                        )
                    };
                    report.push(Invariant::Parabolicity, msg, Some((t, x)));
                }
            }
            let s = spec.supply.eval(t, x);
            if !s.is_finite() && !seen(&mut report, Invariant::NonFinite) {
                report.push(Invariant::NonFinite, "non-finite supply", Some((t, x)));
            }
            if s < 0.0 && !seen(&mut report, Invariant::NegativeSupply) {
                report.push(Invariant::NegativeSupply, format!("supply {s} is negative"), Some((t, x)));
            }
        }
    }
    for j in 0..grid.nx {
        let x = grid.x(j);
        if !spec.payoff.eval(x).is_finite() && !seen(&mut report, Invariant::NonFinite) {
            report.push(Invariant::NonFinite, "non-finite payoff", Some((spec.horizon, x)));
        }
    }
    report
}

#[inline]
fn lerp(a: f64, b: f64, w: f64) -> f64 {
    if w == 0.0 {
        a
    } else {
        a + (b - a) * w
    }
}

/// Locates `x` on an ascending axis: neighbouring indices and the weight of the upper one.
#[inline]
fn bracket(axis: &[f64], x: f64) -> (usize, usize, f64) {
    let last = axis.len() - 1;
    if last == 0 || x <= axis[0] {
        return (0, 0, 0.0);
    }
    if x >= axis[last] {
        return (last, last, 0.0);
    }
    let hi = axis.partition_point(|a| *a <= x);
    let lo = hi - 1;
    let w = (x - axis[lo]) / (axis[hi] - axis[lo]);
    (lo, hi, w)
}

fn finite(v: f64, what: &str) -> std::result::Result<(), String> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(format!("{what}: parameters must be finite"))
    }
}

fn check_axis(axis: &[f64], what: &str) -> std::result::Result<(), String> {
    if axis.is_empty() {
        return Err(format!("{what}: axis must not be empty"));
    }
    if axis.iter().any(|a| !a.is_finite()) || axis.windows(2).any(|w| w[0] >= w[1]) {
        return Err(format!("{what}: axis must be finite and strictly increasing"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Scheme;
    use proptest::prelude::*;

    fn two_agents(vol2: f64, supply: CoefficientField) -> MarketSpec {
        MarketSpec::new(
            vec![BeliefSpec::constant(1.0, 1.0), BeliefSpec::constant(-1.0, vol2)],
            CostStructure::uniform(1.0, 1.0),
            supply,
            PayoffSpec::Quadratic,
            1.0,
            0.0,
        )
    }

    fn grid() -> GridSpec {
        GridSpec::new(-3.0, 3.0, 61, 1.0, 400, Scheme::ExplicitUpwind).unwrap()
    }

    #[test]
    fn plain_instance_passes() {
        let report = validate(&two_agents(1.0, CoefficientField::constant(0.0)), &grid());
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn zero_vol_needs_degenerate_flag() {
        let spec = two_agents(0.0, CoefficientField::constant(0.0));
        let report = validate(&spec, &grid());
        assert!(report.has(Invariant::Parabolicity));
        assert!(report.violations[0].at.is_some());
        assert!(validate(&spec.with_degenerate(true), &grid()).passed());
    }

    #[test]
    fn negative_supply_is_reported_with_location() {
        let report = validate(&two_agents(1.0, CoefficientField::affine(0.0, 1.0)), &grid());
        assert!(report.has(Invariant::NegativeSupply));
        let (_, x) = report.violations[0].at.unwrap();
        assert!(x < 0.0);
    }

    #[test]
    fn cost_invariants() {
        let mut spec = two_agents(1.0, CoefficientField::constant(0.0));
        spec.costs = CostStructure::uniform(2.0, 1.0);
        assert!(validate(&spec, &grid()).has(Invariant::Costs));
        spec.costs = CostStructure::Linear {
            alpha_minus: 1.0,
            alpha_plus: 1.0,
            beta_minus: -0.1,
            beta_plus: 0.0,
        };
        assert!(validate(&spec, &grid()).has(Invariant::Costs));
        spec.costs = CostStructure::Heterogeneous {
            alpha_minus: vec![1.0],
            alpha_plus: vec![1.0, 2.0],
            beta_minus: None,
            beta_plus: None,
        };
        assert!(validate(&spec, &grid()).has(Invariant::Costs));
    }

    #[test]
    fn table_hits_samples_exactly() {
        let field = CoefficientField::Table {
            ts: vec![0.0, 0.5, 1.0],
            xs: vec![-1.0, 0.0, 0.3, 2.0],
            values: vec![
                vec![0.1, 0.7, 1.3, -2.0],
                vec![3.0, 0.2, 0.9, 1.1],
                vec![-0.4, 0.5, 0.6, 0.8],
            ],
        };
        if let CoefficientField::Table { ts, xs, values } = &field {
            for (k, t) in ts.iter().enumerate() {
                for (j, x) in xs.iter().enumerate() {
                    assert_eq!(field.eval(*t, *x), values[k][j]);
                }
            }
        }
        // midpoint in both directions is the mean of the four corners
        let mid = field.eval(0.25, -0.5);
        assert!((mid - (0.1 + 0.7 + 3.0 + 0.2) / 4.0).abs() < 1e-15);
        // flat extrapolation
        assert_eq!(field.eval(-1.0, -5.0), 0.1);
        assert_eq!(field.eval(2.0, 9.0), 0.8);
    }

    #[test]
    fn config_format() {
        let text = r#"{
            "agents": [
                {"drift": {"kind": "constant", "value": 1.0}, "vol": {"kind": "constant", "value": 1.0}},
                {"drift": {"kind": "affine", "intercept": 0.0, "slope": -0.5},
                 "vol": {"kind": "table", "ts": [0.0], "xs": [-1.0, 1.0], "values": [[1.0, 2.0]]}}
            ],
            "costs": {"mode": "uniform", "alpha_minus": 0.5, "alpha_plus": 1.0},
            "supply": {"kind": "constant", "value": 2.0},
            "payoff": {"kind": "quadratic"},
            "T": 1.0,
            "x0": 0.0
        }"#;
        let spec = MarketSpec::from_json(text).unwrap();
        assert_eq!(spec.n_agents(), 2);
        assert_eq!(spec.sigma_min, DEFAULT_SIGMA_MIN);
        assert!(!spec.degenerate);
        assert_eq!(spec.vol(1, 0.3, 0.0), 1.5);
        assert_eq!(spec.drift(1, 0.0, 2.0), -1.0);

        let linear: CostStructure = serde_json::from_str(
            r#"{"mode":"linear-augmented","alpha_minus":1,"alpha_plus":2,"beta_minus":0.1,"beta_plus":0}"#,
        )
        .unwrap();
        assert!(linear.has_linear_terms());
    }

    #[test]
    fn carry_cost_branches() {
        let costs = CostStructure::Linear {
            alpha_minus: 0.5,
            alpha_plus: 2.0,
            beta_minus: 0.3,
            beta_plus: 0.1,
        }
        .per_agent(1);
        assert_eq!(costs.carry_cost(0, 2.0), 4.0 / 4.0 + 0.2);
        assert_eq!(costs.carry_cost(0, -2.0), 4.0 / 1.0 + 0.6);
        assert_eq!(costs.carry_cost(0, 0.0), 0.0);
    }

    fn arb_field() -> impl Strategy<Value = CoefficientField> {
        prop_oneof![
            any::<f64>()
                .prop_filter("finite", |v| v.is_finite())
                .prop_map(CoefficientField::constant),
            (-1e6..1e6f64, -1e3..1e3f64).prop_map(|(a, b)| CoefficientField::affine(a, b)),
            (1usize..4, 1usize..5, prop::collection::vec(-1e3..1e3f64, 20)).prop_map(|(nt, nx, pool)| {
                CoefficientField::Table {
                    ts: (0..nt).map(|k| k as f64 * 0.37).collect(),
                    xs: (0..nx).map(|j| -1.0 + j as f64 * 0.91).collect(),
                    values: (0..nt).map(|k| (0..nx).map(|j| pool[(k * 5 + j) % 20]).collect()).collect(),
                }
            }),
        ]
    }

    proptest! {
        #[test]
        fn json_round_trip_is_exact(drift in arb_field(), vol in arb_field(), supply in arb_field(),
                                    am in 1e-3..10.0f64, ap_extra in 0.0..10.0f64,
                                    horizon in 1e-3..50.0f64, x0 in -1e3..1e3f64) {
            let spec = MarketSpec::new(
                vec![BeliefSpec { drift, volatility: vol }],
                CostStructure::uniform(am, am + ap_extra),
                supply,
                PayoffSpec::Affine { intercept: x0 * 0.1, slope: horizon },
                horizon,
                x0,
            );
            let reloaded = MarketSpec::from_json(&spec.to_json().unwrap()).unwrap();
            prop_assert_eq!(reloaded, spec);
        }

        #[test]
        fn evaluation_is_deterministic(field in arb_field(), t in -1.0..2.0f64, x in -5.0..5.0f64) {
            prop_assert_eq!(field.eval(t, x).to_bits(), field.eval(t, x).to_bits());
        }
    }
}
