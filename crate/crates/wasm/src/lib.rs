//! Browser bindings. Every export takes plain numbers or a JSON string and
//! returns a JSON string; the `*_json` functions hold the logic and run natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use specmarket::clearing::{ClearingKernel, LocalValuations};
use specmarket::equilibrium::{clearing_residual, portfolios};
use specmarket::oracles::{delay_gap_table, example_delay};
use specmarket::solver::{solve_hjb, solve_zero_vol};
use specmarket::static_market::{expectations, static_limits, static_price};
use specmarket::verify::example_41;
use specmarket::{CostStructure, GridSpec, MarketSpec, Mode};

/// Largest grid the page may request.
pub const MAX_NX: usize = 1601;

#[derive(Serialize)]
struct PriceCurve {
    xs: Vec<f64>,
    v0: Vec<f64>,
    phi0: Vec<Vec<f64>>,
    p_dyn: f64,
    p_sta: Option<f64>,
    residual: f64,
    nt: usize,
}

#[derive(Serialize)]
struct DelayCurves {
    xs: Vec<f64>,
    solver: Vec<f64>,
    oracle: Vec<f64>,
    p_sta: Vec<f64>,
    gap: Vec<f64>,
}

#[derive(Serialize)]
struct Clearing {
    theta: f64,
    hamiltonian: f64,
    demands: Vec<f64>,
    shorts: Vec<usize>,
}

fn parse_mode(mode: &str) -> Result<Mode, String> {
    match mode {
        "full" => Ok(Mode::Full),
        "limit-long" => Ok(Mode::LimitLong),
        "limit-short" => Ok(Mode::LimitShort),
        other => Err(format!("unknown mode '{other}'")),
    }
}

fn check_nx(nx: usize) -> Result<(), String> {
    if (3..=MAX_NX).contains(&nx) {
        Ok(())
    } else {
        Err(format!("nx must be between 3 and {MAX_NX}"))
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

/// `v(0, ·)`, the time-zero positions and the prices at `x0` for a config.
pub fn price_curve_json(config: &str, nx: usize, mode: &str) -> Result<String, String> {
    check_nx(nx)?;
    let mode = parse_mode(mode)?;
    let spec = MarketSpec::from_json(config).map_err(|e| e.to_string())?;
    let grid = GridSpec::for_spec(&spec, nx, 1.0).map_err(|e| e.to_string())?;
    let field = solve_hjb(&spec, &grid, mode).map_err(|e| e.to_string())?;
    let pf = portfolios(&field, &spec).map_err(|e| e.to_string())?;
    let p_sta = match mode {
        Mode::Full => expectations(&spec, &grid)
            .and_then(|e| static_price(&e, &spec))
            .map(|eq| eq.p_sta)
            .ok(),
        _ => None,
    };
    let curve = PriceCurve {
        xs: grid.xs(),
        v0: field.row(0).to_vec(),
        phi0: (0..spec.n_agents())
            .map(|i| (0..grid.nx).map(|j| pf.phi(i, 0, j)).collect())
            .collect(),
        p_dyn: field.p_dyn(),
        p_sta,
        residual: clearing_residual(&pf, &spec),
        nt: grid.nt,
    };
    to_json(&curve)
}

/// Solver and closed-form prices across `x` for the zero-volatility delay market.
pub fn delay_curves_json(s: f64, horizon: f64, nx: usize) -> Result<String, String> {
    check_nx(nx)?;
    let mut spec = example_41(s, 0.0, 0.0);
    spec.horizon = horizon;
    let grid = GridSpec::for_spec(&spec, nx, 1.0).map_err(|e| e.to_string())?;
    let field = solve_zero_vol(&spec, &grid).map_err(|e| e.to_string())?;
    let mut curves = DelayCurves {
        xs: Vec::new(),
        solver: Vec::new(),
        oracle: Vec::new(),
        p_sta: Vec::new(),
        gap: Vec::new(),
    };
    for (j, x) in grid.xs().into_iter().enumerate() {
        let oracle = example_delay(x, s, horizon).map_err(|e| e.to_string())?;
        curves.xs.push(x);
        curves.solver.push(field.value(0, j));
        curves.oracle.push(oracle.p_dyn);
        let e = [(x + horizon).powi(2), (x - horizon).powi(2)];
        curves
            .p_sta
            .push(static_limits(&e, &spec).map_err(|e| e.to_string())?.p_no_short);
        curves.gap.push(delay_gap_table(x, s, horizon));
    }
    to_json(&curves)
}

/// Clears one node: local rates `ell`, uniform costs and supply `s`.
pub fn clear_json(ell: &[f64], alpha_minus: f64, alpha_plus: f64, s: f64, mode: &str) -> Result<String, String> {
    let mode = parse_mode(mode)?;
    let kernel = ClearingKernel::new(&CostStructure::uniform(alpha_minus, alpha_plus), ell.len()).map_err(|e| e.to_string())?;
    let r = kernel
        .clear_mode(mode, &LocalValuations::new(ell.to_vec(), s))
        .map_err(|e| e.to_string())?;
    to_json(&Clearing {
        theta: r.theta,
        hamiltonian: r.hamiltonian,
        shorts: r.optimizer.map(|p| p.shorts.iter().collect()).unwrap_or_default(),
        demands: r.demands,
    })
}

#[wasm_bindgen]
pub fn price_curve(config: &str, nx: usize, mode: &str) -> Result<String, JsError> {
    price_curve_json(config, nx, mode).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn delay_curves(s: f64, horizon: f64, nx: usize) -> Result<String, JsError> {
    delay_curves_json(s, horizon, nx).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn clear(ell: &[f64], alpha_minus: f64, alpha_plus: f64, s: f64, mode: &str) -> Result<String, JsError> {
    clear_json(ell, alpha_minus, alpha_plus, s, mode).map_err(|e| JsError::new(&e))
}
