//! Explicit monotone finite-difference solvers for the equilibrium price PDE.
//!
//! Values are stepped backward from `v(T, ·) = f`. At each node every agent's
//! valuation rate `ell_i` is taken from the next time level, the clearing
//! kernel turns the rates into `θ = ∂t v`, and `v(t_k) = v(t_{k+1}) − Δt·θ`.
//! Each agent's first derivative is central where `|b_i|Δx ≤ σ_i²` and upwind
//! otherwise, and the Hamiltonian is nondecreasing in every `ell_i` with
//! weights summing to at most one, so every step is a monotone map under the
//! CFL bound checked by [`GridSpec::check_cfl`].

use serde::Serialize;

use crate::clearing::{AgentSet, ClearingKernel};
use crate::error::{Error, Result};
use crate::grid::{locate, GridSpec, Scheme};
use crate::market::{validate, MarketSpec};

pub use crate::clearing::Mode;

/// Number of nodes handled per parallel work item.
const CHUNK: usize = 256;

/// A solved price function on a grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PriceField {
    pub grid: GridSpec,
    pub mode: Mode,
    pub n_agents: usize,
    pub x0: f64,
    /// `(nt + 1) × nx`, row `k` at time `t_k`.
    values: Vec<f64>,
    /// `nt × nx`, row `k` holds the `θ` used to step from `t_{k+1}` to `t_k`.
    theta: Vec<f64>,
}

impl PriceField {
    #[inline]
    pub fn value(&self, k: usize, j: usize) -> f64 {
        self.values[k * self.grid.nx + j]
    }

    #[inline]
    pub fn theta(&self, k: usize, j: usize) -> f64 {
        self.theta[k * self.grid.nx + j]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let nx = self.grid.nx;
        &self.values[k * nx..(k + 1) * nx]
    }

    pub fn theta_row(&self, k: usize) -> &[f64] {
        let nx = self.grid.nx;
        &self.theta[k * nx..(k + 1) * nx]
    }

    /// Bilinear interpolation of `v` at `(t, x)`, clamped to the grid.
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        let g = &self.grid;
        let (k, wt) = locate(t, 0.0, g.dt(), g.nt + 1);
        let (j, wx) = g.locate_x(x);
        let at = |k: usize| lerp(self.value(k, j), self.value(k, j + 1), wx);
        if wt == 0.0 {
            at(k)
        } else {
            lerp(at(k), at(k + 1), wt)
        }
    }

    /// The dynamic equilibrium price `v(0, x0)`.
    pub fn p_dyn(&self) -> f64 {
        self.eval(0.0, self.x0)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn thetas(&self) -> &[f64] {
        &self.theta
    }
}

#[inline]
pub(crate) fn lerp(a: f64, b: f64, w: f64) -> f64 {
    if w == 0.0 {
        a
    } else if w == 1.0 {
        b
    } else {
        a + (b - a) * w
    }
}

/// Knobs that are not part of the numerical method proper.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveOptions {
    /// Constant added to every `θ`. Zero except when checking that the
    /// verification suite notices a broken solver.
    pub theta_bias: f64,
}

/// Which agents hold short positions at a point, for planner problems with a fixed control.
pub trait Assignment: Sync {
    fn shorts(&self, t: f64, x: f64) -> AgentSet;

    /// The assignment at grid node `(k, j)`; defaults to [`Assignment::shorts`].
    fn shorts_at_node(&self, k: usize, j: usize, t: f64, x: f64) -> AgentSet {
        let _ = (k, j);
        self.shorts(t, x)
    }
}

impl<F: Fn(f64, f64) -> AgentSet + Sync> Assignment for F {
    fn shorts(&self, t: f64, x: f64) -> AgentSet {
        self(t, x)
    }
}

/// Space discretization of an agent's valuation rate.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Stencil {
    dx: f64,
    scheme: Scheme,
}

impl Stencil {
    pub(crate) fn new(grid: &GridSpec) -> Self {
        Stencil {
            dx: grid.dx(),
            scheme: grid.scheme,
        }
    }

    /// `b v_x + ½σ² v_xx` from the three values around a node.
    #[inline]
    pub(crate) fn rate(&self, b: f64, sigma_sq: f64, vm: f64, v: f64, vp: f64) -> f64 {
        let dx = self.dx;
        let vxx = (vp - 2.0 * v + vm) / (dx * dx);
        let vx = if self.scheme == Scheme::ExplicitUpwind && b.abs() * dx <= sigma_sq {
            (vp - vm) / (2.0 * dx)
        } else if b > 0.0 {
            (vp - v) / dx
        } else if b < 0.0 {
            (v - vm) / dx
        } else {
            0.0
        };
        b * vx + 0.5 * sigma_sq * vxx
    }
}

/// Drift, variance rate and supply sampled on one time level, node-major.
pub(crate) struct Coefficients {
    n: usize,
    pub(crate) b: Vec<f64>,
    pub(crate) sigma_sq: Vec<f64>,
    pub(crate) supply: Vec<f64>,
    fixed: bool,
}

impl Coefficients {
    pub(crate) fn new(spec: &MarketSpec, grid: &GridSpec) -> Self {
        let n = spec.n_agents();
        let mut c = Coefficients {
            n,
            b: vec![0.0; n * grid.nx],
            sigma_sq: vec![0.0; n * grid.nx],
            supply: vec![0.0; grid.nx],
            fixed: false,
        };
        c.fill(spec, grid, 0.0);
        c.fixed = spec.coefficients_time_independent();
        c
    }

    pub(crate) fn at_time(&mut self, spec: &MarketSpec, grid: &GridSpec, t: f64) {
        if !self.fixed {
            self.fill(spec, grid, t);
        }
    }

    fn fill(&mut self, spec: &MarketSpec, grid: &GridSpec, t: f64) {
        for j in 0..grid.nx {
            let x = grid.x(j);
            for i in 0..self.n {
                self.b[j * self.n + i] = spec.drift(i, t, x);
                self.sigma_sq[j * self.n + i] = spec.vol(i, t, x).powi(2);
            }
            self.supply[j] = spec.supply_at(t, x);
        }
    }

    /// Every agent's rate at node `j` given the values `next` of the later time level.
    #[inline]
    pub(crate) fn rates(&self, stencil: &Stencil, next: &[f64], j: usize, ell: &mut [f64]) {
        let nx = next.len();
        let v = next[j];
        let vm = next[j.saturating_sub(1)];
        let vp = next[(j + 1).min(nx - 1)];
        let n = self.n;
        for i in 0..n {
            ell[i] = stencil.rate(self.b[j * n + i], self.sigma_sq[j * n + i], vm, v, vp);
        }
    }
}

/// How `θ` is obtained from the rates at a node.
trait NodeRule: Sync {
    fn theta(&self, k: usize, j: usize, ell: &[f64], s: f64, scratch: &mut Vec<f64>) -> f64;
}

struct Equilibrium<'a> {
    kernel: &'a ClearingKernel,
    mode: Mode,
    bias: f64,
}

impl NodeRule for Equilibrium<'_> {
    #[inline]
    fn theta(&self, _k: usize, _j: usize, ell: &[f64], s: f64, scratch: &mut Vec<f64>) -> f64 {
        self.kernel.theta(self.mode, ell, s, scratch) + self.bias
    }
}

struct Planner<'a, A: Assignment> {
    kernel: &'a ClearingKernel,
    assignment: &'a A,
    grid: &'a GridSpec,
}

impl<A: Assignment> NodeRule for Planner<'_, A> {
    #[inline]
    fn theta(&self, k: usize, j: usize, ell: &[f64], s: f64, _scratch: &mut Vec<f64>) -> f64 {
        let shorts = self
            .assignment
            .shorts_at_node(k, j, self.grid.time(k), self.grid.x(j));
        -self.kernel.quadratic_value(shorts, ell, s)
    }
}

/// Solves the equilibrium PDE for `spec` in the given mode.
pub fn solve_hjb(spec: &MarketSpec, grid: &GridSpec, mode: Mode) -> Result<PriceField> {
    solve_hjb_with(spec, grid, mode, SolveOptions::default())
}

pub fn solve_hjb_with(spec: &MarketSpec, grid: &GridSpec, mode: Mode, options: SolveOptions) -> Result<PriceField> {
    prepare(spec, grid)?;
    let kernel = ClearingKernel::for_spec(spec)?;
    let rule = Equilibrium {
        kernel: &kernel,
        mode,
        bias: options.theta_bias,
    };
    march(spec, grid, mode, &rule)
}

/// Solves the linear PDE of the planner who fixes the short group by `assignment`.
pub fn solve_linear<A: Assignment>(spec: &MarketSpec, grid: &GridSpec, assignment: &A) -> Result<PriceField> {
    prepare(spec, grid)?;
    let kernel = ClearingKernel::for_spec(spec)?;
    let rule = Planner {
        kernel: &kernel,
        assignment,
        grid,
    };
    march(spec, grid, Mode::Full, &rule)
}

/// Zero-volatility solve with short selling prohibited and pure upwinding.
pub fn solve_zero_vol(spec: &MarketSpec, grid: &GridSpec) -> Result<PriceField> {
    if !spec.degenerate {
        return Err(Error::invalid("the zero-volatility solver needs an instance flagged degenerate"));
    }
    if spec.supply.as_constant().is_none() {
        return Err(Error::NonConstantSupply);
    }
    let grid = grid.clone().with_scheme(Scheme::DegenerateUpwind);
    solve_hjb(spec, &grid, Mode::LimitShort)
}

/// `E_i[f(X(T)) | X(t) = x]` on the grid: the linear PDE of agent `i` alone, without costs.
pub fn solve_expectation(spec: &MarketSpec, agent: usize, grid: &GridSpec) -> Result<PriceField> {
    if agent >= spec.n_agents() {
        return Err(Error::invalid(format!("agent {agent} does not exist")));
    }
    let single = spec.single_agent(agent);
    let mut field = solve_hjb(&single, grid, Mode::LimitLong)?;
    field.n_agents = 1;
    Ok(field)
}

fn prepare(spec: &MarketSpec, grid: &GridSpec) -> Result<()> {
    validate(spec, grid).into_result()?;
    if grid.horizon != spec.horizon {
        return Err(Error::GridMismatch(format!(
            "grid horizon {} differs from T = {}",
            grid.horizon, spec.horizon
        )));
    }
    grid.check_cfl(spec)
}

fn march<R: NodeRule>(spec: &MarketSpec, grid: &GridSpec, mode: Mode, rule: &R) -> Result<PriceField> {
    let (nx, nt, n) = (grid.nx, grid.nt, spec.n_agents());
    let dt = grid.dt();
    let stencil = Stencil::new(grid);
    let mut values = vec![0.0; (nt + 1) * nx];
    let mut theta = vec![0.0; nt * nx];
    for j in 0..nx {
        values[nt * nx + j] = spec.payoff.eval(grid.x(j));
    }
    let mut coeffs = Coefficients::new(spec, grid);
    for k in (0..nt).rev() {
        coeffs.at_time(spec, grid, grid.time(k + 1));
        let (head, tail) = values.split_at_mut((k + 1) * nx);
        let next = &tail[..nx];
        let out = &mut head[k * nx..];
        let out_theta = &mut theta[k * nx..(k + 1) * nx];
        let step_chunk = |c: usize, vs: &mut [f64], ths: &mut [f64]| {
            let mut ell = vec![0.0; n];
            let mut scratch = Vec::with_capacity(2 * n);
            for (off, (v, th)) in vs.iter_mut().zip(ths.iter_mut()).enumerate() {
                let j = c * CHUNK + off;
                coeffs.rates(&stencil, next, j, &mut ell);
                let t = rule.theta(k, j, &ell, coeffs.supply[j], &mut scratch);
                *th = t;
                *v = next[j] - dt * t;
            }
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            out.par_chunks_mut(CHUNK)
                .zip(out_theta.par_chunks_mut(CHUNK))
                .enumerate()
                .for_each(|(c, (vs, ths))| step_chunk(c, vs, ths));
        }
        #[cfg(not(feature = "parallel"))]
        {
            out.chunks_mut(CHUNK)
                .zip(out_theta.chunks_mut(CHUNK))
                .enumerate()
                .for_each(|(c, (vs, ths))| step_chunk(c, vs, ths));
        }
        if let Some(j) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: k,
                node: j,
                t: grid.time(k),
                x: grid.x(j),
            });
        }
    }
    Ok(PriceField {
        grid: grid.clone(),
        mode,
        n_agents: n,
        x0: spec.x0,
        values,
        theta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{BeliefSpec, CoefficientField, CostStructure, PayoffSpec};

    fn spec(agents: Vec<BeliefSpec>, costs: CostStructure, s: f64, payoff: PayoffSpec) -> MarketSpec {
        MarketSpec::new(agents, costs, CoefficientField::constant(s), payoff, 1.0, 0.0)
    }

    fn symmetric() -> MarketSpec {
        spec(
            vec![BeliefSpec::constant(1.0, 1.0), BeliefSpec::constant(0.0, 1.0)],
            CostStructure::uniform(1.0, 1.0),
            0.0,
            PayoffSpec::Quadratic,
        )
    }

    fn coarse(spec: &MarketSpec) -> GridSpec {
        GridSpec::for_spec(spec, 201, 1.0).unwrap()
    }

    #[test]
    fn constant_payoff_is_preserved() {
        let s = spec(
            vec![BeliefSpec::constant(0.7, 0.4), BeliefSpec::constant(-1.0, 1.2)],
            CostStructure::uniform(0.5, 2.0),
            0.0,
            PayoffSpec::Constant { value: 3.5 },
        );
        for mode in [Mode::Full, Mode::LimitLong, Mode::LimitShort] {
            let field = solve_hjb(&s, &coarse(&s), mode).unwrap();
            assert!(field.values().iter().all(|v| *v == 3.5));
            assert!(field.thetas().iter().all(|t| *t == 0.0));
        }
    }

    #[test]
    fn terminal_row_is_the_payoff() {
        let s = symmetric();
        let grid = coarse(&s);
        let field = solve_hjb(&s, &grid, Mode::Full).unwrap();
        for j in 0..grid.nx {
            assert_eq!(field.value(grid.nt, j), grid.x(j).powi(2));
        }
    }

    #[test]
    fn brownian_second_moment() {
        let s = spec(
            vec![BeliefSpec::constant(0.0, 1.0)],
            CostStructure::uniform(1.0, 1.0),
            0.0,
            PayoffSpec::Quadratic,
        );
        let field = solve_hjb(&s, &GridSpec::for_spec(&s, 801, 1.0).unwrap(), Mode::Full).unwrap();
        assert!((field.p_dyn() - 1.0).abs() < 1e-3, "{}", field.p_dyn());
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let s = symmetric();
        let grid = coarse(&s).with_nt(3);
        assert!(matches!(solve_hjb(&s, &grid, Mode::Full), Err(Error::Cfl { .. })));
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let mut s = symmetric();
        s.supply = CoefficientField::constant(-1.0);
        assert!(matches!(solve_hjb(&s, &coarse(&symmetric()), Mode::Full), Err(Error::Validation(_))));
    }

    #[test]
    fn zero_vol_requires_flag() {
        let s = symmetric();
        assert!(solve_zero_vol(&s, &coarse(&s)).is_err());
    }

    #[test]
    fn planner_with_equal_costs_ignores_assignment() {
        let s = symmetric();
        let grid = coarse(&s);
        let a = solve_linear(&s, &grid, &|_t: f64, _x: f64| AgentSet::EMPTY).unwrap();
        let b = solve_linear(&s, &grid, &|_t: f64, x: f64| {
            if x > 0.0 {
                AgentSet::singleton(1)
            } else {
                AgentSet::singleton(0)
            }
        })
        .unwrap();
        let diff = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-9, "{diff}");
    }

    #[test]
    fn single_agent_planner_matches_hjb() {
        let s = spec(
            vec![BeliefSpec::constant(0.4, 0.8)],
            CostStructure::uniform(0.5, 1.0),
            0.0,
            PayoffSpec::Quadratic,
        );
        let grid = coarse(&s);
        let a = solve_hjb(&s, &grid, Mode::Full).unwrap();
        let b = solve_linear(&s, &grid, &|_t: f64, _x: f64| AgentSet::EMPTY).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn interpolation_reproduces_nodes() {
        let s = symmetric();
        let grid = coarse(&s);
        let field = solve_hjb(&s, &grid, Mode::Full).unwrap();
        for (k, j) in [(0, 0), (3, 17), (grid.nt, grid.nx - 1), (grid.nt / 2, grid.nx / 2)] {
            assert_eq!(field.eval(grid.time(k), grid.x(j)), field.value(k, j));
        }
    }
}
