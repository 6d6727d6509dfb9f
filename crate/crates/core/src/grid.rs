//! Space-time grids for the backward solvers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::MarketSpec;

/// Fraction of the stable time step used when `nt` is chosen automatically.
pub const CFL_SAFETY: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Central first differences where the cell Péclet number allows it, upwind elsewhere.
    ExplicitUpwind,
    /// First-order upwind differences everywhere; used for zero-volatility instances.
    DegenerateUpwind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_lo: f64,
    pub x_hi: f64,
    pub nx: usize,
    pub horizon: f64,
    pub nt: usize,
    pub scheme: Scheme,
}

impl GridSpec {
    pub fn new(x_lo: f64, x_hi: f64, nx: usize, horizon: f64, nt: usize, scheme: Scheme) -> Result<Self> {
        if !(x_lo.is_finite() && x_hi.is_finite() && x_lo < x_hi) {
            return Err(Error::invalid(format!("grid bounds [{x_lo}, {x_hi}] are not an interval")));
        }
        if nx < 3 || nt < 1 {
            return Err(Error::invalid(format!("grid needs nx >= 3 and nt >= 1 (got {nx}, {nt})")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::invalid(format!("horizon must be > 0 (got {horizon})")));
        }
        Ok(GridSpec {
            x_lo,
            x_hi,
            nx,
            horizon,
            nt,
            scheme,
        })
    }

    /// Builds the default grid for `spec`: a domain centred on `x0` of half-width
    /// `multiplier · (5·max|b|·T + 8·max σ·√T)`, `nx` nodes, and the smallest
    /// `nt` that satisfies the CFL bound with safety factor [`CFL_SAFETY`].
    pub fn for_spec(spec: &MarketSpec, nx: usize, multiplier: f64) -> Result<Self> {
        let (x_lo, x_hi) = default_domain(spec, multiplier)?;
        let scheme = if spec.degenerate {
            Scheme::DegenerateUpwind
        } else {
            Scheme::ExplicitUpwind
        };
        let probe = GridSpec::new(x_lo, x_hi, nx, spec.horizon, 1, scheme)?;
        let rate = probe.max_rate(spec);
        let nt = if rate > 0.0 {
            ((spec.horizon * rate / CFL_SAFETY).ceil() as usize).max(1)
        } else {
            1
        };
        Ok(GridSpec { nt, ..probe })
    }

    pub fn with_nt(mut self, nt: usize) -> Self {
        self.nt = nt;
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        (self.x_hi - self.x_lo) / (self.nx - 1) as f64
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.horizon / self.nt as f64
    }

    #[inline]
    pub fn x(&self, j: usize) -> f64 {
        if j + 1 == self.nx {
            self.x_hi
        } else {
            self.x_lo + j as f64 * self.dx()
        }
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        if k == self.nt {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.nx).map(|j| self.x(j)).collect()
    }

    /// Largest value of `max_i (σ_i²/Δx² + |b_i|/Δx)` over the grid nodes.
    pub fn max_rate(&self, spec: &MarketSpec) -> f64 {
        let dx = self.dx();
        let rows: Vec<usize> = if spec.coefficients_time_independent() {
            vec![0]
        } else {
            (0..=self.nt).collect()
        };
        let mut rate: f64 = 0.0;
        for k in rows {
            let t = self.time(k);
            for j in 0..self.nx {
                let x = self.x(j);
                for i in 0..spec.n_agents() {
                    let b = spec.drift(i, t, x);
                    let sigma = spec.vol(i, t, x);
                    rate = rate.max(sigma * sigma / (dx * dx) + b.abs() / dx);
                }
            }
        }
        rate
    }

    /// Rejects the grid unless `Δt · max(σ²/Δx² + |b|/Δx) ≤ 1`.
    pub fn check_cfl(&self, spec: &MarketSpec) -> Result<()> {
        let rate = self.max_rate(spec);
        let dt = self.dt();
        if dt * rate <= 1.0 {
            return Ok(());
        }
        Err(Error::Cfl {
            dt,
            limit: 1.0 / rate,
            min_steps: (self.horizon * rate).ceil() as usize,
        })
    }

    /// Fractional position of `x` on the grid, clamped to the domain.
    #[inline]
    pub(crate) fn locate_x(&self, x: f64) -> (usize, f64) {
        locate(x, self.x_lo, self.dx(), self.nx)
    }
}

/// `(lo, hi)` of the default domain for `spec`.
pub fn default_domain(spec: &MarketSpec, multiplier: f64) -> Result<(f64, f64)> {
    if !(multiplier > 0.0 && multiplier.is_finite()) {
        return Err(Error::invalid(format!("domain width multiplier must be > 0 (got {multiplier})")));
    }
    let t = spec.horizon;
    let samples = 16;
    let mut max_b: f64 = 0.0;
    let mut max_sigma: f64 = 0.0;
    for m in 0..=samples {
        let tm = t * m as f64 / samples as f64;
        for i in 0..spec.n_agents() {
            max_b = max_b.max(spec.drift(i, tm, spec.x0).abs());
            max_sigma = max_sigma.max(spec.vol(i, tm, spec.x0).abs());
        }
    }
    let mut half = 5.0 * max_b * t + 8.0 * max_sigma * t.sqrt();
    if !(half > 0.0) {
        half = 1.0;
    }
    half *= multiplier;
    Ok((spec.x0 - half, spec.x0 + half))
}

/// Cell index and weight of the upper node for a uniform axis.
#[inline]
pub(crate) fn locate(x: f64, lo: f64, h: f64, n: usize) -> (usize, f64) {
    let mut u = (x - lo) / h;
    // snap to a node when `x` was produced from one
    let nearest = u.round();
    if (u - nearest).abs() < 1e-9 {
        u = nearest;
    }
    if !(u > 0.0) {
        return (0, 0.0);
    }
    let last = (n - 1) as f64;
    if u >= last {
        return (n - 2, 1.0);
    }
    let j = u.floor() as usize;
    (j, u - j as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{BeliefSpec, CoefficientField, CostStructure, PayoffSpec};

    fn symmetric() -> MarketSpec {
        MarketSpec::new(
            vec![BeliefSpec::constant(1.0, 1.0), BeliefSpec::constant(0.0, 1.0)],
            CostStructure::uniform(1.0, 1.0),
            CoefficientField::constant(0.0),
            PayoffSpec::Quadratic,
            1.0,
            0.0,
        )
    }

    #[test]
    fn default_domain_rule() {
        let (lo, hi) = default_domain(&symmetric(), 1.0).unwrap();
        assert_eq!((lo, hi), (-13.0, 13.0));
        let (lo, hi) = default_domain(&symmetric(), 0.5).unwrap();
        assert_eq!((lo, hi), (-6.5, 6.5));
    }

    #[test]
    fn auto_nt_satisfies_cfl() {
        let spec = symmetric();
        let grid = GridSpec::for_spec(&spec, 801, 1.0).unwrap();
        grid.check_cfl(&spec).unwrap();
        assert!(grid.clone().with_nt(grid.nt / 2).check_cfl(&spec).is_err());
    }

    #[test]
    fn cfl_error_reports_needed_steps() {
        let spec = symmetric();
        let grid = GridSpec::new(-13.0, 13.0, 801, 1.0, 10, Scheme::ExplicitUpwind).unwrap();
        match grid.check_cfl(&spec) {
            Err(Error::Cfl { min_steps, .. }) => {
                assert!(grid.clone().with_nt(min_steps).check_cfl(&spec).is_ok());
                assert!(grid.with_nt(min_steps - 1).check_cfl(&spec).is_err());
            }
            other => panic!("expected CFL error, got {other:?}"),
        }
    }

    #[test]
    fn nodes_hit_the_ends() {
        let grid = GridSpec::new(-1.0, 2.0, 7, 3.0, 9, Scheme::ExplicitUpwind).unwrap();
        assert_eq!(grid.x(0), -1.0);
        assert_eq!(grid.x(6), 2.0);
        assert_eq!(grid.time(9), 3.0);
        assert_eq!(grid.locate_x(-5.0), (0, 0.0));
        assert_eq!(grid.locate_x(5.0), (5, 1.0));
        let (j, w) = grid.locate_x(0.25);
        assert_eq!(j, 2);
        assert!((w - 0.5).abs() < 1e-12);
    }
}
