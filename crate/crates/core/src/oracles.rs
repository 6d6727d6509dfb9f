//! Closed-form prices and portfolios for three small markets, used as
//! regression targets. Nothing here calls the solvers or the clearing kernel.
//!
//! * [`example_delay`]: zero volatility, drifts `(1, −1)`, `f(y) = y²`,
//!   no shorting, `α₊ = 1`, constant supply `s`.
//! * [`example_symmetric`]: `α₋ = α₊ = 1`, zero supply, `f(y) = y²`,
//!   constant drifts and volatilities.
//! * [`example_nocost`]: free long positions, `α₋ = 1`, drifts `(1, 0)`,
//!   zero volatility, `f(y) = y²`, started at `x = 0`.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "example", rename_all = "lowercase")]
pub enum Example {
    Delay {
        x: f64,
        s: f64,
        horizon: f64,
    },
    Symmetric {
        x: f64,
        b: [f64; 2],
        sigma_sq: [f64; 2],
        horizon: f64,
    },
    NoCost {
        horizon: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleResult {
    pub p_dyn: f64,
    pub p_sta: f64,
    /// `p_sta − p_dyn`.
    pub gap: f64,
    pub q: Vec<f64>,
    pub example: Example,
}

impl OracleResult {
    fn new(p_dyn: f64, p_sta: f64, q: Vec<f64>, example: Example) -> Self {
        OracleResult {
            p_dyn,
            p_sta,
            gap: p_sta - p_dyn,
            q,
            example,
        }
    }

    /// The equilibrium price function `v(t, x)`.
    pub fn value_at(&self, t: f64, x: f64) -> f64 {
        match self.example {
            Example::Delay { s, horizon, .. } => {
                let tau = horizon - t;
                if x.abs() + tau / 2.0 > s / 4.0 {
                    (x.abs() + tau).powi(2) - s * tau
                } else {
                    x * x - s * tau / 2.0
                }
            }
            Example::Symmetric {
                b,
                sigma_sq,
                horizon,
                ..
            } => {
                let tau = horizon - t;
                let mu = (b[0] + b[1]) / 2.0;
                let var = (sigma_sq[0] + sigma_sq[1]) / 2.0;
                x * x + 2.0 * x * mu * tau + mu * mu * tau * tau + var * tau
            }
            Example::NoCost { horizon } => {
                let tau = horizon - t;
                (x * x).max((x + tau).powi(2))
            }
        }
    }

    /// Equilibrium position `φ_i(t, x)` of agent `i` in feedback form.
    pub fn phi_at(&self, t: f64, x: f64, i: usize) -> f64 {
        match self.example {
            Example::Delay { s, horizon, .. } => {
                // agent 1 mirrors agent 0
                let x = if i == 0 { x } else { -x };
                let tau = horizon - t;
                if x.abs() + tau / 2.0 <= s / 4.0 {
                    s / 2.0 + 2.0 * x
                } else if x > 0.0 {
                    s
                } else if x < 0.0 {
                    0.0
                } else {
                    s / 2.0
                }
            }
            Example::Symmetric {
                b,
                sigma_sq,
                horizon,
                ..
            } => {
                let j = 1 - i;
                let tau = horizon - t;
                x * (b[i] - b[j]) + 0.5 * tau * (b[i] * b[i] - b[j] * b[j]) + 0.5 * (sigma_sq[i] - sigma_sq[j])
            }
            Example::NoCost { horizon } => {
                let tau = horizon - t;
                // the pessimist's short is ∂t v; the optimist takes the other side
                let pessimist = if x + tau / 2.0 >= 0.0 {
                    -2.0 * (x + tau)
                } else {
                    2.0 * x
                };
                let pessimist_index = if x + tau / 2.0 >= 0.0 { 1 } else { 0 };
                if i == pessimist_index {
                    pessimist
                } else {
                    -pessimist
                }
            }
        }
    }

    /// `φ_i(t, E_i[X(t)])`: the position agent `i` expects to hold at `t`.
    /// For the zero-volatility markets this is the almost-sure position.
    pub fn expected_path_position(&self, t: f64, i: usize) -> f64 {
        match self.example {
            Example::Delay { x, .. } => {
                let drift = if i == 0 { 1.0 } else { -1.0 };
                self.phi_at(t, x + drift * t, i)
            }
            Example::Symmetric { x, b, .. } => self.phi_at(t, x + b[i] * t, i),
            Example::NoCost { .. } => {
                let drift = if i == 0 { 1.0 } else { 0.0 };
                self.phi_at(t, drift * t, i)
            }
        }
    }
}

/// Zero-volatility market with opposing drifts where the static price exceeds the dynamic one.
pub fn example_delay(x: f64, s: f64, horizon: f64) -> Result<OracleResult> {
    if !(s > 0.0) {
        return Err(Error::invalid(format!("supply must be > 0 (got {s})")));
    }
    check_horizon(horizon)?;
    let quarter = s / 4.0;
    let p_sta = if x.abs() <= quarter {
        x * x + horizon * horizon - s * horizon / 2.0
    } else {
        x * x + horizon * horizon + 2.0 * x.abs() * horizon - s * horizon
    };
    let q0 = if x < -quarter {
        0.0
    } else if x > quarter {
        s
    } else {
        s / 2.0 + 2.0 * x
    };
    let example = Example::Delay { x, s, horizon };
    let mut result = OracleResult::new(0.0, p_sta, vec![q0, s - q0], example);
    result.p_dyn = result.value_at(0.0, x);
    result.gap = result.p_sta - result.p_dyn;
    Ok(result)
}

/// `p_sta − p_dyn` in the delay market by the three-region table.
pub fn delay_gap_table(x: f64, s: f64, horizon: f64) -> f64 {
    let a = x.abs();
    if a <= s / 4.0 - horizon / 2.0 {
        horizon * horizon
    } else if a < s / 4.0 {
        (s / 2.0 - 2.0 * a) * horizon
    } else {
        0.0
    }
}

/// Two agents with equal costs on both sides and zero supply.
pub fn example_symmetric(x: f64, b1: f64, b2: f64, s1sq: f64, s2sq: f64, horizon: f64) -> Result<OracleResult> {
    if !(s1sq > 0.0 && s2sq > 0.0) {
        return Err(Error::invalid("both variance rates must be > 0"));
    }
    check_horizon(horizon)?;
    let mu = (b1 + b2) / 2.0;
    let var = (s1sq + s2sq) / 2.0;
    let t = horizon;
    let p_dyn = x * x + 2.0 * x * mu * t + var * t + mu * mu * t * t;
    let p_sta = x * x + 2.0 * x * mu * t + var * t + 0.5 * (b1 * b1 + b2 * b2) * t * t;
    let q0 = x * (b1 - b2) + 0.5 * t * (b1 * b1 - b2 * b2) + 0.5 * (s1sq - s2sq);
    let example = Example::Symmetric {
        x,
        b: [b1, b2],
        sigma_sq: [s1sq, s2sq],
        horizon,
    };
    Ok(OracleResult::new(p_dyn, p_sta, vec![q0, -q0], example))
}

/// Free long positions with a strictly more optimistic agent; stated only at `x = 0`.
/// `q[0]` is the optimist's clearing position at zero supply.
pub fn example_nocost(x: f64, horizon: f64) -> Result<OracleResult> {
    if x != 0.0 {
        return Err(Error::invalid("this market is only specified at x = 0"));
    }
    check_horizon(horizon)?;
    let p = horizon * horizon;
    Ok(OracleResult::new(p, p, vec![horizon, -horizon], Example::NoCost { horizon }))
}

fn check_horizon(horizon: f64) -> Result<()> {
    if horizon > 0.0 && horizon.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("horizon must be > 0 (got {horizon})")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn delay_table() {
        let r = example_delay(0.0, 8.0, 1.0).unwrap();
        assert_eq!((r.p_dyn, r.p_sta, r.gap), (-4.0, -3.0, 1.0));
        let r = example_delay(1.8, 8.0, 1.0).unwrap();
        assert!((r.p_dyn + 0.16).abs() < 1e-14);
        assert!((r.p_sta - 0.24).abs() < 1e-14);
        assert!((r.gap - 0.4).abs() < 1e-14);
        let r = example_delay(3.0, 8.0, 1.0).unwrap();
        assert_eq!((r.p_dyn, r.p_sta, r.gap), (8.0, 8.0, 0.0));
        assert!(example_delay(0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn delay_paths() {
        // both agents build up towards the supply split as they drift apart
        let r = example_delay(0.0, 8.0, 1.0).unwrap();
        assert_eq!(r.expected_path_position(0.0, 0), 4.0);
        assert_eq!(r.expected_path_position(1.0, 0), 6.0);
        assert_eq!(r.expected_path_position(1.0, 1), 6.0);
        // outside the inner region the optimist holds everything
        let r = example_delay(3.0, 8.0, 1.0).unwrap();
        assert_eq!(r.expected_path_position(0.5, 0), 8.0);
        assert_eq!(r.expected_path_position(0.0, 1), 0.0);
    }

    #[test]
    fn symmetric_table() {
        let r = example_symmetric(0.0, 1.0, 0.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!((r.p_dyn, r.p_sta), (1.25, 1.5));
        assert_eq!(r.q, vec![0.5, -0.5]);
        assert_eq!((r.phi_at(0.0, 0.0, 0), r.phi_at(0.0, 0.0, 1)), (0.5, -0.5));
        let r = example_symmetric(0.0, 1.0, -1.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!((r.p_dyn, r.p_sta), (1.0, 2.0));
        let r = example_symmetric(0.7, 0.4, 0.4, 1.0, 2.0, 2.0).unwrap();
        assert_eq!(r.gap, 0.0);
        assert!(example_symmetric(0.0, 1.0, 0.0, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn nocost_table() {
        let r = example_nocost(0.0, 1.0).unwrap();
        assert_eq!((r.p_dyn, r.p_sta, r.q[1]), (1.0, 1.0, -1.0));
        assert_eq!(r.expected_path_position(0.0, 1), -2.0);
        assert_eq!(r.expected_path_position(1.0, 1), 0.0);
        let r = example_nocost(0.0, 2.0).unwrap();
        assert_eq!((r.p_dyn, r.q[1]), (4.0, -2.0));
        assert_eq!(r.phi_at(0.5, 0.3, 1), -2.0 * (0.3 + 1.5));
        assert!(example_nocost(0.1, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn delay_gap_matches_table(x in -6.0..6.0f64, s in 0.5..12.0f64, horizon in 0.05..3.0f64) {
            let r = example_delay(x, s, horizon).unwrap();
            prop_assert!((r.gap - delay_gap_table(x, s, horizon)).abs() <= 1e-12 * (1.0 + r.p_sta.abs()));
            prop_assert!(r.gap >= -1e-12);
            prop_assert!((r.q[0] + r.q[1] - s).abs() <= 1e-12 * s);
        }

        #[test]
        fn delay_gap_is_continuous(s in 0.5..12.0f64, horizon in 0.05..3.0f64) {
            for edge in [s / 4.0 - horizon / 2.0, s / 4.0] {
                if edge > 0.0 {
                    let inner = delay_gap_table(edge, s, horizon);
                    let outer = delay_gap_table(edge.next_up(), s, horizon);
                    prop_assert!((inner - outer).abs() <= 1e-12 * (1.0 + s * horizon));
                    // the closed-form boundary values themselves
                    let left = if edge == s / 4.0 { (s / 2.0 - 2.0 * edge) * horizon } else { horizon * horizon };
                    let right = if edge == s / 4.0 { 0.0 } else { (s / 2.0 - 2.0 * edge) * horizon };
                    prop_assert!((left - right).abs() <= 1e-12 * (1.0 + s * horizon));
                }
            }
        }

        #[test]
        fn symmetric_demands_at_zero_match_static(x in -3.0..3.0f64, b1 in -2.0..2.0f64, b2 in -2.0..2.0f64,
                                                  s1 in 0.1..3.0f64, s2 in 0.1..3.0f64, horizon in 0.1..3.0f64) {
            let r = example_symmetric(x, b1, b2, s1, s2, horizon).unwrap();
            for i in 0..2 {
                prop_assert!((r.phi_at(0.0, x, i) - r.q[i]).abs() <= 1e-12 * (1.0 + r.q[i].abs()));
            }
            prop_assert!((r.gap - (b1 - b2).powi(2) * horizon * horizon / 4.0).abs() <= 1e-12 * (1.0 + r.p_sta.abs()));
            prop_assert!((r.p_dyn - r.value_at(0.0, x)).abs() <= 1e-12 * (1.0 + r.p_dyn.abs()));
        }
    }
}
