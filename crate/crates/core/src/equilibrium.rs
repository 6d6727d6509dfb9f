//! Equilibrium portfolios recovered from a solved price field.

use serde::Serialize;

use crate::clearing::{AgentSet, ClearingKernel, Mode};
use crate::error::{Error, Result};
use crate::grid::{locate, GridSpec};
use crate::market::MarketSpec;
use crate::solver::{lerp, Assignment, Coefficients, PriceField, Stencil};

/// Per-agent positions `φ_i(t_k, x_j)` and local rates `𝓛^i v = ell_i + θ`
/// on rows `k = 0..nt` of the source grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PortfolioField {
    pub grid: GridSpec,
    pub mode: Mode,
    pub n_agents: usize,
    phi: Vec<f64>,
    rates: Vec<f64>,
    shorts: Vec<AgentSet>,
    supply: Vec<f64>,
    tie_nodes: usize,
}

impl PortfolioField {
    #[inline]
    fn at(&self, i: usize, k: usize, j: usize) -> usize {
        (k * self.grid.nx + j) * self.n_agents + i
    }

    #[inline]
    pub fn phi(&self, i: usize, k: usize, j: usize) -> f64 {
        self.phi[self.at(i, k, j)]
    }

    /// Overwrites one position; used to check residual reporting.
    pub fn set_phi(&mut self, i: usize, k: usize, j: usize, value: f64) {
        let at = self.at(i, k, j);
        self.phi[at] = value;
    }

    #[inline]
    pub fn rate(&self, i: usize, k: usize, j: usize) -> f64 {
        self.rates[self.at(i, k, j)]
    }

    /// Short group chosen by the clearing kernel at node `(k, j)`.
    pub fn shorts(&self, k: usize, j: usize) -> AgentSet {
        self.shorts[k * self.grid.nx + j]
    }

    pub fn supply(&self, k: usize, j: usize) -> f64 {
        self.supply[k * self.grid.nx + j]
    }

    /// Number of nodes where the long limit split the supply among tied agents.
    pub fn tie_nodes(&self) -> usize {
        self.tie_nodes
    }

    /// Bilinear interpolation of `φ_i`, clamped to the grid.
    pub fn phi_eval(&self, i: usize, t: f64, x: f64) -> f64 {
        self.interpolate(&self.phi, i, t, x)
    }

    /// Bilinear interpolation of `𝓛^i v`, clamped to the grid.
    pub fn rate_eval(&self, i: usize, t: f64, x: f64) -> f64 {
        self.interpolate(&self.rates, i, t, x)
    }

    fn interpolate(&self, data: &[f64], i: usize, t: f64, x: f64) -> f64 {
        let g = &self.grid;
        let (k, wt) = if g.nt == 1 {
            (0, 0.0)
        } else {
            locate(t, 0.0, g.dt(), g.nt)
        };
        let (j, wx) = g.locate_x(x);
        let at = |k: usize| lerp(data[self.at(i, k, j)], data[self.at(i, k, j + 1)], wx);
        if wt == 0.0 {
            at(k)
        } else {
            lerp(at(k), at(k + 1), wt)
        }
    }
}

/// Positions implied by `field`'s stored `θ` and the solver's own stencil.
pub fn portfolios(field: &PriceField, spec: &MarketSpec) -> Result<PortfolioField> {
    check_match(field, spec)?;
    let grid = &field.grid;
    let (nx, nt, n) = (grid.nx, grid.nt, spec.n_agents());
    let kernel = ClearingKernel::for_spec(spec)?;
    let stencil = Stencil::new(grid);
    let mut coeffs = Coefficients::new(spec, grid);
    let mut pf = PortfolioField {
        grid: grid.clone(),
        mode: field.mode,
        n_agents: n,
        phi: vec![0.0; nt * nx * n],
        rates: vec![0.0; nt * nx * n],
        shorts: vec![AgentSet::EMPTY; nt * nx],
        supply: vec![0.0; nt * nx],
        tie_nodes: 0,
    };
    let mut ell = vec![0.0; n];
    for k in 0..nt {
        coeffs.at_time(spec, grid, grid.time(k + 1));
        let next = field.row(k + 1);
        for j in 0..nx {
            coeffs.rates(&stencil, next, j, &mut ell);
            let theta = field.theta(k, j);
            let s = coeffs.supply[j];
            let base = (k * nx + j) * n;
            let tie = kernel.allocate(field.mode, &ell, theta, s, &mut pf.phi[base..base + n]);
            for i in 0..n {
                pf.rates[base + i] = ell[i] + theta;
            }
            pf.shorts[k * nx + j] = kernel.optimal_partition(&ell, theta).shorts;
            pf.supply[k * nx + j] = s;
            pf.tie_nodes += tie as usize;
        }
    }
    Ok(pf)
}

/// `max |Σ_i φ_i − s|` over all nodes, with `s` evaluated from `spec`.
pub fn clearing_residual(pf: &PortfolioField, spec: &MarketSpec) -> f64 {
    let grid = &pf.grid;
    let mut worst: f64 = 0.0;
    for k in 0..grid.nt {
        let t = grid.time(k + 1);
        for j in 0..grid.nx {
            let total: f64 = (0..pf.n_agents).map(|i| pf.phi(i, k, j)).sum();
            let r = (total - spec.supply_at(t, grid.x(j))).abs();
            worst = if r.is_nan() { f64::INFINITY } else { worst.max(r) };
        }
    }
    worst
}

fn check_match(field: &PriceField, spec: &MarketSpec) -> Result<()> {
    if field.n_agents != spec.n_agents() {
        return Err(Error::GridMismatch(format!(
            "field has {} agents, spec has {}",
            field.n_agents,
            spec.n_agents()
        )));
    }
    if field.grid.horizon != spec.horizon {
        return Err(Error::GridMismatch(format!(
            "field horizon {} differs from T = {}",
            field.grid.horizon, spec.horizon
        )));
    }
    if field.x0 != spec.x0 {
        return Err(Error::GridMismatch(format!("field x0 {} differs from {}", field.x0, spec.x0)));
    }
    Ok(())
}

/// The equilibrium short group read off a portfolio field: exact at grid
/// nodes, and `{i : 𝓛^i v < −β₋ⁱ}` from interpolated rates elsewhere.
pub struct FieldAssignment<'a> {
    pf: &'a PortfolioField,
    beta_minus: Vec<f64>,
}

impl<'a> FieldAssignment<'a> {
    pub fn new(pf: &'a PortfolioField, spec: &MarketSpec) -> Self {
        FieldAssignment {
            pf,
            beta_minus: spec.agent_costs().beta_minus,
        }
    }
}

impl Assignment for FieldAssignment<'_> {
    fn shorts(&self, t: f64, x: f64) -> AgentSet {
        (0..self.pf.n_agents)
            .filter(|&i| self.pf.rate_eval(i, t, x) < -self.beta_minus[i])
            .collect()
    }

    fn shorts_at_node(&self, k: usize, j: usize, t: f64, x: f64) -> AgentSet {
        if k < self.pf.grid.nt && j < self.pf.grid.nx {
            self.pf.shorts(k, j)
        } else {
            self.shorts(t, x)
        }
    }
}
