//! CSV and JSON artifacts. Numbers are written with Rust's shortest
//! round-trip formatting, which never depends on the locale.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use specmarket::equilibrium::PortfolioField;
use specmarket::mc::ValueEstimate;
use specmarket::solver::PriceField;
use specmarket::sweep::SweepParam;
use specmarket::GridSpec;

use crate::{CliResult, Failure};

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub p_dyn: f64,
    pub p_sta: Option<f64>,
    pub gap: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GridSummary {
    pub x_lo: f64,
    pub x_hi: f64,
    pub nx: usize,
    pub nt: usize,
    pub scheme: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub command: String,
    pub spec_hash: String,
    pub mode: String,
    pub grid: GridSummary,
    pub p_dyn: Option<f64>,
    pub p_sta: Option<f64>,
    pub gap: Option<f64>,
    pub residual: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub e: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub q: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc: Option<ValueEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub param: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub rows: Vec<SweepRow>,
    /// Seconds per phase.
    pub timings: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

impl RunSummary {
    pub fn new(command: &str, spec_hash: String, mode: &str, grid: &GridSpec) -> Self {
        RunSummary {
            command: command.to_string(),
            spec_hash,
            mode: mode.to_string(),
            grid: GridSummary {
                x_lo: grid.x_lo,
                x_hi: grid.x_hi,
                nx: grid.nx,
                nt: grid.nt,
                scheme: format!("{:?}", grid.scheme),
            },
            p_dyn: None,
            p_sta: None,
            gap: None,
            residual: None,
            e: Vec::new(),
            q: Vec::new(),
            mc: None,
            param: None,
            rows: Vec::new(),
            timings: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    pub fn timing(&mut self, phase: &str, start: Instant) {
        self.timings.insert(phase.to_string(), start.elapsed().as_secs_f64());
    }

    /// Key/value pairs of every number except timings.
    fn entries(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("grid.x_lo".to_string(), num(self.grid.x_lo)),
            ("grid.x_hi".to_string(), num(self.grid.x_hi)),
            ("grid.nx".to_string(), self.grid.nx.to_string()),
            ("grid.nt".to_string(), self.grid.nt.to_string()),
        ];
        for (key, value) in [
            ("p_dyn", self.p_dyn),
            ("p_sta", self.p_sta),
            ("gap", self.gap),
            ("residual", self.residual),
        ] {
            if let Some(v) = value {
                out.push((key.to_string(), num(v)));
            }
        }
        for (i, v) in self.e.iter().enumerate() {
            out.push((format!("e_{i}"), num(*v)));
        }
        for (i, v) in self.q.iter().enumerate() {
            out.push((format!("q_{i}"), num(*v)));
        }
        if let Some(mc) = &self.mc {
            out.push(("mc.mean".to_string(), num(mc.mean)));
            out.push(("mc.std_error".to_string(), num(mc.std_error)));
            out.push(("mc.n_paths".to_string(), mc.n_paths.to_string()));
            out.push(("mc.clamped".to_string(), mc.clamped.to_string()));
        }
        out
    }

    pub fn brief(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "spec {}", &self.spec_hash[..16]);
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        for row in &self.rows {
            let opt = |x: Option<f64>| x.map(num).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "{} = {}: p_dyn {} p_sta {} gap {}",
                self.param.as_deref().unwrap_or("value"),
                num(row.value),
                num(row.p_dyn),
                opt(row.p_sta),
                opt(row.gap)
            );
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}

pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn spec_hash(canonical: &str) -> String {
    format!("{:x}", Sha256::digest(canonical.as_bytes()))
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

pub fn prepare_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(io(dir))
}

/// One row per node `(t_k, x_j)`, `k < nt`: price, `θ` and every agent's position.
pub fn write_field(path: &Path, field: &PriceField, pf: &PortfolioField) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["t".to_string(), "x".into(), "v".into(), "theta".into()];
    header.extend((0..pf.n_agents).map(|i| format!("phi_{i}")));
    w.write_record(&header).map_err(csv_err(path))?;
    let g = &field.grid;
    let mut record = Vec::with_capacity(header.len());
    for k in 0..g.nt {
        let t = num(g.time(k));
        for j in 0..g.nx {
            record.clear();
            record.push(t.clone());
            record.push(num(g.x(j)));
            record.push(num(field.value(k, j)));
            record.push(num(field.theta(k, j)));
            record.extend((0..pf.n_agents).map(|i| num(pf.phi(i, k, j))));
            w.write_record(&record).map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(io(path))
}

pub fn write_sweep(path: &Path, param: SweepParam, rows: &[SweepRow]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["param", "value", "p_dyn", "p_sta", "gap"]).map_err(csv_err(path))?;
    let opt = |x: Option<f64>| x.map(num).unwrap_or_default();
    for r in rows {
        w.write_record([param.name().to_string(), num(r.value), num(r.p_dyn), opt(r.p_sta), opt(r.gap)])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(io(path))
}

/// `summary.json` plus `summary.csv` (every number but timings) and `timings.csv`.
pub fn write_summary(dir: &Path, summary: &RunSummary) -> CliResult<()> {
    write_json(&dir.join("summary.json"), summary)?;
    let path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record(["key", "value"]).map_err(csv_err(&path))?;
    w.write_record(["command", &summary.command]).map_err(csv_err(&path))?;
    w.write_record(["spec_hash", &summary.spec_hash]).map_err(csv_err(&path))?;
    w.write_record(["mode", &summary.mode]).map_err(csv_err(&path))?;
    for (k, v) in summary.entries() {
        w.write_record([k, v]).map_err(csv_err(&path))?;
    }
    w.flush().map_err(io(&path))?;

    let path = dir.join("timings.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record(["phase", "seconds"]).map_err(csv_err(&path))?;
    for (k, v) in &summary.timings {
        w.write_record([k.clone(), num(*v)]).map_err(csv_err(&path))?;
    }
    w.flush().map_err(io(&path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Io(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(io(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, -1e-300, 1.0 / 3.0, 123456789.125, 1.25] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(1.25), "1.25");
        assert_eq!(num(2.0), "2.0");
    }

    #[test]
    fn hash_is_hex_sha256() {
        let h = spec_hash("abc");
        assert_eq!(h, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
