//! Monte Carlo estimates by Euler–Maruyama simulation.
//!
//! Path `p` draws its normals from its own ChaCha stream (`seed`, stream `p`),
//! and path results are reduced in index order, so estimates are bit-identical
//! for any number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::clearing::ClearingKernel;
use crate::equilibrium::PortfolioField;
use crate::error::{Error, Result};
use crate::grid::default_domain;
use crate::market::MarketSpec;
use crate::solver::{Assignment, PriceField};

/// Largest tolerated fraction of paths that leave the coefficient domain.
pub const CLAMP_BUDGET: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub antithetic: bool,
    /// Interval on which coefficients are evaluated; the state itself is not
    /// clamped. Defaults to the solver's default domain.
    pub domain: Option<(f64, f64)>,
}

impl SimConfig {
    pub fn new(n_paths: usize, dt: f64, seed: u64) -> Self {
        SimConfig {
            n_paths,
            dt,
            seed,
            antithetic: false,
            domain: None,
        }
    }

    pub fn with_antithetic(mut self, antithetic: bool) -> Self {
        self.antithetic = antithetic;
        self
    }

    pub fn with_domain(mut self, lo: f64, hi: f64) -> Self {
        self.domain = Some((lo, hi));
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ValueEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    /// Paths whose coefficient lookups had to be clamped to the domain.
    pub clamped: usize,
}

/// A feedback position `Φ(t) = φ(t, X(t))` for one agent.
pub trait Strategy: Sync {
    fn position(&self, t: f64, x: f64) -> f64;
}

impl<F: Fn(f64, f64) -> f64 + Sync> Strategy for F {
    fn position(&self, t: f64, x: f64) -> f64 {
        self(t, x)
    }
}

/// `scale · φ_i + shift` for an equilibrium portfolio `φ_i`.
pub struct EquilibriumStrategy<'a> {
    pub portfolios: &'a PortfolioField,
    pub agent: usize,
    pub shift: f64,
    pub scale: f64,
}

impl<'a> EquilibriumStrategy<'a> {
    pub fn new(portfolios: &'a PortfolioField, agent: usize) -> Self {
        EquilibriumStrategy {
            portfolios,
            agent,
            shift: 0.0,
            scale: 1.0,
        }
    }

    pub fn shifted(mut self, shift: f64) -> Self {
        self.shift = shift;
        self
    }

    pub fn scaled(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }
}

impl Strategy for EquilibriumStrategy<'_> {
    fn position(&self, t: f64, x: f64) -> f64 {
        self.scale * self.portfolios.phi_eval(self.agent, t, x) + self.shift
    }
}

struct Setup {
    steps: usize,
    dt: f64,
    lo: f64,
    hi: f64,
}

fn setup(spec: &MarketSpec, cfg: &SimConfig) -> Result<Setup> {
    if cfg.n_paths < 2 {
        return Err(Error::invalid("at least two paths are required"));
    }
    if cfg.antithetic && !cfg.n_paths.is_multiple_of(2) {
        return Err(Error::invalid("antithetic sampling needs an even number of paths"));
    }
    if !(cfg.dt > 0.0) {
        return Err(Error::invalid("dt must be > 0"));
    }
    let ratio = spec.horizon / cfg.dt;
    let steps = ratio.round();
    if steps < 1.0 || (steps - ratio).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::invalid(format!(
            "dt = {} does not divide T = {}",
            cfg.dt, spec.horizon
        )));
    }
    let (lo, hi) = match cfg.domain {
        Some(d) => d,
        None => default_domain(spec, 1.0)?,
    };
    if !(lo < hi) {
        return Err(Error::invalid("simulation domain is empty"));
    }
    Ok(Setup {
        steps: steps as usize,
        dt: spec.horizon / steps,
        lo,
        hi,
    })
}

/// Normal draws for one path.
struct Noise {
    rng: ChaCha8Rng,
    sign: f64,
}

impl Noise {
    fn for_path(cfg: &SimConfig, path: usize) -> Self {
        let (stream, sign) = if cfg.antithetic {
            (path / 2, if path.is_multiple_of(2) { 1.0 } else { -1.0 })
        } else {
            (path, 1.0)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream as u64);
        Noise { rng, sign }
    }

    #[inline]
    fn next(&mut self) -> f64 {
        let z: f64 = self.rng.sample(StandardNormal);
        self.sign * z
    }
}

/// Runs `path` for every path index and reduces the results in order.
fn estimate<F>(cfg: &SimConfig, path: F) -> Result<ValueEstimate>
where
    F: Fn(&mut Noise) -> (f64, bool) + Sync,
{
    let run = |p: usize| path(&mut Noise::for_path(cfg, p));
    #[cfg(feature = "parallel")]
    let results: Vec<(f64, bool)> = {
        use rayon::prelude::*;
        (0..cfg.n_paths).into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<(f64, bool)> = (0..cfg.n_paths).map(run).collect();

    let clamped = results.iter().filter(|r| r.1).count();
    if clamped as f64 > CLAMP_BUDGET * cfg.n_paths as f64 {
        return Err(Error::TooManyClamped {
            clamped,
            n_paths: cfg.n_paths,
        });
    }
    let samples: Vec<f64> = if cfg.antithetic {
        results.chunks(2).map(|c| 0.5 * (c[0].0 + c[1].0)).collect()
    } else {
        results.iter().map(|r| r.0).collect()
    };
    let (mean, std_error) = mean_and_se(&samples);
    Ok(ValueEstimate {
        mean,
        std_error,
        n_paths: cfg.n_paths,
        clamped,
    })
}

/// Sample mean and its standard error, accumulated relative to the first
/// sample so that constant samples give their value and zero error exactly.
fn mean_and_se(samples: &[f64]) -> (f64, f64) {
    let m = samples.len() as f64;
    let pivot = samples[0];
    let shift: f64 = samples.iter().map(|y| y - pivot).sum::<f64>() / m;
    let mean = pivot + shift;
    let ss: f64 = samples.iter().map(|y| (y - pivot - shift).powi(2)).sum();
    let var = if samples.len() > 1 { ss / (m - 1.0) } else { 0.0 };
    (mean, (var / m).sqrt())
}

/// Value of the planner's control problem when `assignment` fixes the
/// short group: `E[f(X_T) − ∫ κ_I dt]` with `dX = μ_I dt + Σ_I dW`.
pub fn control_value<A: Assignment>(spec: &MarketSpec, assignment: &A, cfg: &SimConfig) -> Result<ValueEstimate> {
    let setup = setup(spec, cfg)?;
    let kernel = ClearingKernel::for_spec(spec)?;
    let n = spec.n_agents();
    let sqrt_dt = setup.dt.sqrt();
    estimate(cfg, |noise| {
        let mut b = vec![0.0; n];
        let mut var = vec![0.0; n];
        let mut x = spec.x0;
        let mut value = 0.0;
        let mut clamped = false;
        for m in 0..setup.steps {
            let t = m as f64 * setup.dt;
            let xc = x.clamp(setup.lo, setup.hi);
            clamped |= xc != x;
            for i in 0..n {
                b[i] = spec.drift(i, t, xc);
                var[i] = spec.vol(i, t, xc).powi(2);
            }
            let shorts = assignment.shorts(t, xc);
            let c = kernel
                .coefficients(shorts, shorts.complement(n), &b, &var, spec.supply_at(t, xc))
                .expect("a subset and its complement cover every agent");
            value -= c.kappa * setup.dt;
            x += c.mu * setup.dt + c.sigma_sq.sqrt() * sqrt_dt * noise.next();
        }
        (value + spec.payoff.eval(x), clamped)
    })
}

/// Expected net trading gain `E_i[∫ Φ dP − ∫ c(Φ) dt]` of `strategy` under
/// agent `agent`'s beliefs, with prices read from `field`.
pub fn strategy_payoff<S: Strategy>(
    spec: &MarketSpec,
    field: &PriceField,
    strategy: &S,
    agent: usize,
    cfg: &SimConfig,
) -> Result<ValueEstimate> {
    if agent >= spec.n_agents() || field.n_agents != spec.n_agents() {
        return Err(Error::invalid(format!("agent {agent} is not part of this market")));
    }
    let setup = setup(spec, cfg)?;
    let costs = spec.agent_costs();
    let sqrt_dt = setup.dt.sqrt();
    let p0 = field.eval(0.0, spec.x0);
    estimate(cfg, |noise| {
        let mut x = spec.x0;
        let mut price = p0;
        let mut value = 0.0;
        let mut clamped = false;
        for m in 0..setup.steps {
            let t = m as f64 * setup.dt;
            let xc = x.clamp(setup.lo, setup.hi);
            clamped |= xc != x;
            let position = strategy.position(t, xc);
            let b = spec.drift(agent, t, xc);
            let sigma = spec.vol(agent, t, xc);
            x += b * setup.dt + sigma * sqrt_dt * noise.next();
            let next = if m + 1 == setup.steps {
                spec.payoff.eval(x)
            } else {
                field.eval((m + 1) as f64 * setup.dt, x.clamp(setup.lo, setup.hi))
            };
            value += position * (next - price) - costs.carry_cost(agent, position) * setup.dt;
            price = next;
        }
        (value, clamped)
    })
}

/// `E_i[f(X(T))]` under agent `agent`'s beliefs.
pub fn belief_expectation(spec: &MarketSpec, agent: usize, cfg: &SimConfig) -> Result<ValueEstimate> {
    if agent >= spec.n_agents() {
        return Err(Error::invalid(format!("agent {agent} does not exist")));
    }
    let setup = setup(spec, cfg)?;
    let sqrt_dt = setup.dt.sqrt();
    estimate(cfg, |noise| {
        let mut x = spec.x0;
        let mut clamped = false;
        for m in 0..setup.steps {
            let t = m as f64 * setup.dt;
            let xc = x.clamp(setup.lo, setup.hi);
            clamped |= xc != x;
            x += spec.drift(agent, t, xc) * setup.dt + spec.vol(agent, t, xc) * sqrt_dt * noise.next();
        }
        (spec.payoff.eval(x), clamped)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clearing::AgentSet;
    use crate::market::{BeliefSpec, CoefficientField, CostStructure, PayoffSpec};

    fn one_agent(b: f64, payoff: PayoffSpec) -> MarketSpec {
        MarketSpec::new(
            vec![BeliefSpec::constant(b, 1.0)],
            CostStructure::uniform(1.0, 1.0),
            CoefficientField::constant(0.0),
            payoff,
            1.0,
            0.0,
        )
    }

    fn within(est: &ValueEstimate, target: f64) -> bool {
        (est.mean - target).abs() <= 3.0 * est.std_error
    }

    #[test]
    fn brownian_second_moment() {
        let spec = one_agent(0.0, PayoffSpec::Quadratic);
        let cfg = SimConfig::new(20_000, 0.01, 7);
        let est = belief_expectation(&spec, 0, &cfg).unwrap();
        assert!(within(&est, 1.0), "{est:?}");
        let est = control_value(&spec, &|_t: f64, _x: f64| AgentSet::EMPTY, &cfg).unwrap();
        assert!(within(&est, 1.0), "{est:?}");
        let est = belief_expectation(&one_agent(1.0, PayoffSpec::Quadratic), 0, &cfg).unwrap();
        assert!(within(&est, 2.0), "{est:?}");
    }

    #[test]
    fn constant_payoff_is_exact() {
        let spec = one_agent(0.3, PayoffSpec::Constant { value: 0.1 });
        let est = belief_expectation(&spec, 0, &SimConfig::new(1000, 0.01, 1)).unwrap();
        assert_eq!(est.mean, 0.1);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn antithetic_pairs_are_mirrored() {
        let spec = one_agent(0.0, PayoffSpec::Affine {
            intercept: 0.0,
            slope: 1.0,
        });
        // X_T is linear in the noise, so mirrored pairs cancel exactly
        let est = belief_expectation(&spec, 0, &SimConfig::new(1000, 0.1, 3).with_antithetic(true)).unwrap();
        assert!(est.mean.abs() < 1e-14);
        assert!(est.std_error < 1e-14);
    }

    #[test]
    fn rejects_bad_configs() {
        let spec = one_agent(0.0, PayoffSpec::Quadratic);
        assert!(belief_expectation(&spec, 0, &SimConfig::new(1, 0.1, 0)).is_err());
        assert!(belief_expectation(&spec, 0, &SimConfig::new(10, 0.3, 0)).is_err());
        assert!(belief_expectation(&spec, 0, &SimConfig::new(11, 0.1, 0).with_antithetic(true)).is_err());
        let tight = SimConfig::new(100, 0.01, 0).with_domain(-0.01, 0.01);
        assert!(matches!(
            belief_expectation(&spec, 0, &tight),
            Err(Error::TooManyClamped { .. })
        ));
    }

    #[test]
    fn same_seed_same_bits() {
        let spec = one_agent(0.2, PayoffSpec::Quadratic);
        let cfg = SimConfig::new(500, 0.01, 99);
        let a = belief_expectation(&spec, 0, &cfg).unwrap();
        let b = belief_expectation(&spec, 0, &cfg).unwrap();
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        let c = belief_expectation(&spec, 0, &SimConfig::new(500, 0.01, 100)).unwrap();
        assert_ne!(a.mean, c.mean);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn thread_count_does_not_matter() {
        let spec = one_agent(0.2, PayoffSpec::Quadratic);
        let cfg = SimConfig::new(2000, 0.01, 5);
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| belief_expectation(&spec, 0, &cfg).unwrap())
        };
        let (a, b) = (run(1), run(4));
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    }
}
