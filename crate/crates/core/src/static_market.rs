//! The buy-and-hold market: agents trade once at `t = 0` and hold to `T`.
//!
//! Agent `i` expects the payoff `e_i` and holds `q_i = α(e_i − p)/T` with the
//! long-side `α₊ⁱ` when `e_i > p` and the short-side `α₋ⁱ` otherwise; the
//! static price clears `Σ q_i = s`.

use serde::Serialize;

use crate::clearing::AgentSet;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::market::{AgentCosts, CostStructure, MarketSpec};
use crate::solver::solve_expectation;

/// Largest agent count for which the subset maximization is attempted.
pub const STATIC_ENUMERATION_CAP: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StaticMethod {
    Enumerate,
    Root,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StaticEquilibrium {
    pub p_sta: f64,
    pub q: Vec<f64>,
    pub e: Vec<f64>,
    pub method: StaticMethod,
}

/// Static prices with free long positions (`p_inf`) and with short selling
/// prohibited (`p_no_short`).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StaticLimits {
    pub p_inf: f64,
    pub p_no_short: f64,
    /// The agents holding positive positions at `p_no_short`.
    pub holders: AgentSet,
}

struct StaticCosts {
    shared: Option<(f64, f64)>,
    costs: AgentCosts,
    s: f64,
    horizon: f64,
}

impl StaticCosts {
    fn new(spec: &MarketSpec, n: usize) -> Result<Self> {
        if n != spec.n_agents() {
            return Err(Error::invalid(format!(
                "expected {} expectations, got {n}",
                spec.n_agents()
            )));
        }
        if spec.costs.has_linear_terms() {
            return Err(Error::invalid("the static market supports quadratic costs only"));
        }
        let s = spec.supply.as_constant().ok_or(Error::NonConstantSupply)?;
        let shared = match spec.costs {
            CostStructure::Heterogeneous { .. } => None,
            _ => spec.costs.uniform_alphas(),
        };
        Ok(StaticCosts {
            shared,
            costs: spec.agent_costs(),
            s,
            horizon: spec.horizon,
        })
    }

    #[inline]
    fn alpha(&self, i: usize, long: bool) -> f64 {
        if long {
            self.costs.alpha_plus[i]
        } else {
            self.costs.alpha_minus[i]
        }
    }

    /// `T · (Σ q_i(p) − s)`.
    fn excess(&self, e: &[f64], p: f64) -> f64 {
        let mut total = 0.0;
        for (i, ei) in e.iter().enumerate() {
            total += self.alpha(i, *ei > p) * (ei - p);
        }
        total - self.s * self.horizon
    }

    fn positions(&self, e: &[f64], p: f64) -> Vec<f64> {
        e.iter()
            .enumerate()
            .map(|(i, ei)| self.alpha(i, *ei > p) * (ei - p) / self.horizon)
            .collect()
    }
}

/// Each agent's expectation `E_i[f(X(T))]` from the agent's own linear PDE on `grid`.
pub fn expectations(spec: &MarketSpec, grid: &GridSpec) -> Result<Vec<f64>> {
    if spec.supply.as_constant().is_none() {
        return Err(Error::NonConstantSupply);
    }
    (0..spec.n_agents())
        .map(|i| Ok(solve_expectation(spec, i, grid)?.p_dyn()))
        .collect()
}

/// Static price as the root of the piecewise-linear clearing condition.
pub fn static_price(e: &[f64], spec: &MarketSpec) -> Result<StaticEquilibrium> {
    let c = StaticCosts::new(spec, e.len())?;
    check_finite(e)?;
    let mut sorted = e.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let h = |p: f64| c.excess(e, p);
    // h is strictly decreasing with kinks at the e_i
    let k = sorted.partition_point(|p| h(*p) > 0.0);
    let p = if k == 0 {
        let slope: f64 = c.costs.alpha_plus.iter().sum();
        sorted[0] + h(sorted[0]) / slope
    } else if k == sorted.len() {
        let slope: f64 = c.costs.alpha_minus.iter().sum();
        let last = sorted[k - 1];
        last + h(last) / slope
    } else {
        let (lo, hi) = (sorted[k - 1], sorted[k]);
        let (h_lo, h_hi) = (h(lo), h(hi));
        if h_hi == 0.0 {
            hi
        } else {
            (lo + h_lo * (hi - lo) / (h_lo - h_hi)).clamp(lo, hi)
        }
    };
    Ok(StaticEquilibrium {
        p_sta: p,
        q: c.positions(e, p),
        e: e.to_vec(),
        method: StaticMethod::Root,
    })
}

/// Static price as the maximum over short groups `I` of
/// `(Σ_I α₋ e + Σ_{Iᶜ} α₊ e − sT) / (Σ_I α₋ + Σ_{Iᶜ} α₊)`.
pub fn static_price_enumerate(e: &[f64], spec: &MarketSpec) -> Result<StaticEquilibrium> {
    let c = StaticCosts::new(spec, e.len())?;
    check_finite(e)?;
    let n = e.len();
    if n > STATIC_ENUMERATION_CAP {
        return Err(Error::EnumerationCap {
            n,
            cap: STATIC_ENUMERATION_CAP,
        });
    }
    let st = c.s * c.horizon;
    let mut best = f64::NEG_INFINITY;
    for mask in 0..(1u64 << n) {
        let shorts = AgentSet::from_bits(mask);
        let value = match c.shared {
            Some((am, ap)) => {
                let (mut sum_i, mut sum_j) = (0.0, 0.0);
                for (i, ei) in e.iter().enumerate() {
                    if shorts.contains(i) {
                        sum_i += ei;
                    } else {
                        sum_j += ei;
                    }
                }
                let ni = shorts.len() as f64;
                (am * sum_i + ap * sum_j - st) / (ni * am + (n as f64 - ni) * ap)
            }
            None => {
                let (mut num, mut den) = (-st, 0.0);
                for (i, ei) in e.iter().enumerate() {
                    let a = c.alpha(i, !shorts.contains(i));
                    num += a * ei;
                    den += a;
                }
                num / den
            }
        };
        best = best.max(value);
    }
    Ok(StaticEquilibrium {
        p_sta: best,
        q: c.positions(e, best),
        e: e.to_vec(),
        method: StaticMethod::Enumerate,
    })
}

/// Limits of the static price as `α₊ → ∞` and as `α₋ → 0`.
pub fn static_limits(e: &[f64], spec: &MarketSpec) -> Result<StaticLimits> {
    let c = StaticCosts::new(spec, e.len())?;
    check_finite(e)?;
    let p_inf = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // the optimal holder group is a set of top expectations
    let mut order: Vec<usize> = (0..e.len()).collect();
    order.sort_by(|a, b| e[*b].total_cmp(&e[*a]).then(a.cmp(b)));
    let st = c.s * c.horizon;
    let (mut num, mut den) = (0.0, 0.0);
    let mut best = (f64::NEG_INFINITY, 0);
    for (k, &i) in order.iter().enumerate() {
        let ap = c.costs.alpha_plus[i];
        num += ap * e[i];
        den += ap;
        let value = (num - st) / den;
        if value > best.0 {
            best = (value, k + 1);
        }
    }
    Ok(StaticLimits {
        p_inf,
        p_no_short: best.0,
        holders: order[..best.1].iter().copied().collect(),
    })
}

fn check_finite(e: &[f64]) -> Result<()> {
    if e.is_empty() || e.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("expectations must be finite and nonempty"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{BeliefSpec, CoefficientField, PayoffSpec};
    use proptest::prelude::*;

    fn market(n: usize, costs: CostStructure, s: f64, horizon: f64) -> MarketSpec {
        MarketSpec::new(
            vec![BeliefSpec::constant(0.0, 1.0); n],
            costs,
            CoefficientField::constant(s),
            PayoffSpec::Quadratic,
            horizon,
            0.0,
        )
    }

    #[test]
    fn two_agent_example() {
        let spec = market(2, CostStructure::uniform(1.0, 1.0), 0.0, 1.0);
        for eq in [
            static_price(&[2.0, 0.0], &spec).unwrap(),
            static_price_enumerate(&[2.0, 0.0], &spec).unwrap(),
        ] {
            assert_eq!(eq.p_sta, 1.0);
            assert_eq!(eq.q, vec![1.0, -1.0]);
        }
    }

    #[test]
    fn limit_examples() {
        let spec = market(2, CostStructure::uniform(1.0, 1.0), 0.0, 1.0);
        let lim = static_limits(&[2.0, 0.0], &spec).unwrap();
        assert_eq!(lim.p_inf, 2.0);
        assert_eq!(lim.p_no_short, 2.0);
        assert_eq!(lim.holders, AgentSet::singleton(0));
        let spec = market(2, CostStructure::uniform(1.0, 1.0), 1.0, 1.0);
        let lim = static_limits(&[2.0, 0.0], &spec).unwrap();
        assert_eq!(lim.p_no_short, 1.0);
    }

    #[test]
    fn rejects_unsupported_markets() {
        let mut spec = market(2, CostStructure::uniform(1.0, 1.0), 0.0, 1.0);
        spec.supply = CoefficientField::affine(1.0, 0.1);
        assert!(matches!(static_price(&[1.0, 0.0], &spec), Err(Error::NonConstantSupply)));
        let spec = market(
            2,
            CostStructure::Linear {
                alpha_minus: 1.0,
                alpha_plus: 1.0,
                beta_minus: 0.1,
                beta_plus: 0.0,
            },
            0.0,
            1.0,
        );
        assert!(static_price(&[1.0, 0.0], &spec).is_err());
    }

    #[test]
    fn expectations_by_pde() {
        let spec = MarketSpec::new(
            vec![BeliefSpec::constant(0.0, 1.0), BeliefSpec::constant(1.0, 1.0)],
            CostStructure::uniform(1.0, 1.0),
            CoefficientField::constant(0.0),
            PayoffSpec::Quadratic,
            1.0,
            0.0,
        );
        let grid = GridSpec::for_spec(&spec, 801, 1.0).unwrap();
        let e = expectations(&spec, &grid).unwrap();
        assert!((e[0] - 1.0).abs() < 1e-3, "{e:?}");
        assert!((e[1] - 2.0).abs() < 2e-3, "{e:?}");

        let mut flat = spec.clone();
        flat.payoff = PayoffSpec::Constant { value: 0.7 };
        assert_eq!(expectations(&flat, &grid).unwrap(), vec![0.7, 0.7]);
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, f64, f64)> {
        (1usize..=8).prop_flat_map(|n| {
            (
                prop::collection::vec(-10.0..10.0f64, n),
                prop::collection::vec(0.05..5.0f64, n),
                prop::collection::vec(0.0..5.0f64, n),
                prop_oneof![Just(0.0), 0.0..10.0f64],
                0.1..5.0f64,
            )
                .prop_map(|(e, am, extra, s, t)| {
                    let ap = am.iter().zip(&extra).map(|(a, x)| a + x).collect();
                    (e, am, ap, s, t)
                })
        })
    }

    proptest! {
        #[test]
        fn root_matches_enumeration((e, am, ap, s, t) in instance()) {
            let n = e.len();
            for costs in [
                CostStructure::uniform(am[0], ap[0]),
                CostStructure::Heterogeneous { alpha_minus: am.clone(), alpha_plus: ap.clone(), beta_minus: None, beta_plus: None },
            ] {
                let spec = market(n, costs, s, t);
                let a = static_price(&e, &spec).unwrap();
                let b = static_price_enumerate(&e, &spec).unwrap();
                prop_assert!((a.p_sta - b.p_sta).abs() <= 1e-10 * (1.0 + a.p_sta.abs()), "{} vs {}", a.p_sta, b.p_sta);
                prop_assert!((a.q.iter().sum::<f64>() - s).abs() <= 1e-10 * (1.0 + s));
            }
        }

        #[test]
        fn no_short_limit_matches_subsets((e, am, ap, s, t) in instance()) {
            let spec = market(e.len(), CostStructure::Heterogeneous {
                alpha_minus: am, alpha_plus: ap.clone(), beta_minus: None, beta_plus: None,
            }, s, t);
            let lim = static_limits(&e, &spec).unwrap();
            let mut best = f64::NEG_INFINITY;
            for mask in 1..(1u64 << e.len()) {
                let j = AgentSet::from_bits(mask);
                let num: f64 = j.iter().map(|i| ap[i] * e[i]).sum();
                let den: f64 = j.iter().map(|i| ap[i]).sum();
                best = best.max((num - s * t) / den);
            }
            prop_assert!((lim.p_no_short - best).abs() <= 1e-10 * (1.0 + best.abs()));
        }

        #[test]
        fn scale_invariant((e, am, ap, s, t) in instance(), lambda in 0.1..10.0f64) {
            let n = e.len();
            let base = market(n, CostStructure::uniform(am[0], ap[0]), s, t);
            let scaled = market(n, CostStructure::uniform(lambda * am[0], lambda * ap[0]), lambda * s, t);
            let a = static_price_enumerate(&e, &base).unwrap().p_sta;
            let b = static_price_enumerate(&e, &scaled).unwrap().p_sta;
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }

        #[test]
        fn prices_approach_limits((e, am, ap, s, t) in instance()) {
            let n = e.len();
            let lim = static_limits(&e, &market(n, CostStructure::uniform(am[0], ap[0]), s, t)).unwrap();
            let free_long = static_price(&e, &market(n, CostStructure::uniform(am[0], 1e9), s, t)).unwrap();
            prop_assert!((free_long.p_sta - lim.p_inf).abs() <= 1e-6 * (1.0 + lim.p_inf.abs()));
            let no_short = static_price(&e, &market(n, CostStructure::uniform(1e-9, ap[0]), s, t)).unwrap();
            prop_assert!((no_short.p_sta - lim.p_no_short).abs() <= 1e-5 * (1.0 + lim.p_no_short.abs()));
        }
    }
}
