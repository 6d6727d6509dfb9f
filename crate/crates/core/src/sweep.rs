//! One-parameter families of markets for comparative statics.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{CostStructure, MarketSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParam {
    /// Multiplies the supply field.
    SScale,
    /// Sets `α₊` for every agent.
    AlphaPlus,
    /// Sets `α₋` for every agent.
    AlphaMinus,
    /// Multiplies `α₋`, `α₊` and the supply by the same factor.
    CommonScale,
}

impl SweepParam {
    pub const ALL: [SweepParam; 4] = [
        SweepParam::SScale,
        SweepParam::AlphaPlus,
        SweepParam::AlphaMinus,
        SweepParam::CommonScale,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::SScale => "s-scale",
            SweepParam::AlphaPlus => "alpha_plus",
            SweepParam::AlphaMinus => "alpha_minus",
            SweepParam::CommonScale => "common-scale",
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        SweepParam::ALL
            .into_iter()
            .find(|p| p.name().replace('_', "-") == norm)
            .ok_or_else(|| Error::invalid(format!("unknown sweep parameter '{s}'")))
    }
}

/// `spec` with `param` set to (or scaled by) `value`.
pub fn apply(spec: &MarketSpec, param: SweepParam, value: f64) -> Result<MarketSpec> {
    if !value.is_finite() || value <= 0.0 {
        return Err(Error::invalid(format!("{param} value must be finite and > 0 (got {value})")));
    }
    let mut out = spec.clone();
    match param {
        SweepParam::SScale => out.supply = spec.supply.scaled(value),
        SweepParam::CommonScale => {
            out.supply = spec.supply.scaled(value);
            out.costs = spec.costs.scaled(value);
        }
        SweepParam::AlphaPlus => set_alpha(&mut out.costs, None, Some(value)),
        SweepParam::AlphaMinus => set_alpha(&mut out.costs, Some(value), None),
    }
    Ok(out)
}

fn set_alpha(costs: &mut CostStructure, minus: Option<f64>, plus: Option<f64>) {
    match costs {
        CostStructure::Uniform {
            alpha_minus,
            alpha_plus,
        }
        | CostStructure::Linear {
            alpha_minus,
            alpha_plus,
            ..
        } => {
            if let Some(m) = minus {
                *alpha_minus = m;
            }
            if let Some(p) = plus {
                *alpha_plus = p;
            }
        }
        CostStructure::Heterogeneous {
            alpha_minus,
            alpha_plus,
            ..
        } => {
            if let Some(m) = minus {
                alpha_minus.iter_mut().for_each(|a| *a = m);
            }
            if let Some(p) = plus {
                alpha_plus.iter_mut().for_each(|a| *a = p);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{BeliefSpec, CoefficientField, PayoffSpec};

    fn spec() -> MarketSpec {
        MarketSpec::new(
            vec![BeliefSpec::constant(1.0, 1.0); 2],
            CostStructure::uniform(0.5, 1.0),
            CoefficientField::constant(2.0),
            PayoffSpec::Quadratic,
            1.0,
            0.0,
        )
    }

    #[test]
    fn parse_names() {
        for p in SweepParam::ALL {
            assert_eq!(p.name().parse::<SweepParam>().unwrap(), p);
        }
        assert_eq!("alpha-plus".parse::<SweepParam>().unwrap(), SweepParam::AlphaPlus);
        assert!("beta".parse::<SweepParam>().is_err());
    }

    #[test]
    fn applies() {
        let s = apply(&spec(), SweepParam::CommonScale, 4.0).unwrap();
        assert_eq!(s.costs, CostStructure::uniform(2.0, 4.0));
        assert_eq!(s.supply.as_constant(), Some(8.0));
        let s = apply(&spec(), SweepParam::AlphaMinus, 0.25).unwrap();
        assert_eq!(s.costs, CostStructure::uniform(0.25, 1.0));
        assert_eq!(s.supply.as_constant(), Some(2.0));
        let s = apply(&spec(), SweepParam::SScale, 0.5).unwrap();
        assert_eq!(s.supply.as_constant(), Some(1.0));
        assert!(apply(&spec(), SweepParam::AlphaPlus, 0.0).is_err());
    }
}
