//! Rank correlation between visual separation and downstream quality.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use epl_core::metrics::spearman;

use crate::error::{CliError, Result};
use crate::experiment::{mean_std, ConsistencyRow, ResultRow};

pub const MIN_CELLS: usize = 5;

/// Replica means for one (dataset, mode) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub dataset: String,
    pub mode: String,
    pub embedding_knn: f64,
    pub propagation_kappa: f64,
    /// Mean C3 softmax kappa of this mode; `None` when C3 did not run.
    pub final_kappa: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationReport {
    pub cells: Vec<Cell>,
    /// Spearman rho of embedding k-NN consistency against propagation kappa;
    /// `None` when a series is constant.
    pub rho_propagation: Option<f64>,
    /// Against final classifier kappa, over cells that have one.
    pub rho_final: Option<f64>,
}

pub fn build_cells(consistency: &[ConsistencyRow], results: &[ResultRow]) -> Vec<Cell> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut vs: BTreeMap<(String, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for c in consistency {
        let key = (c.dataset.clone(), c.mode.clone());
        if !vs.contains_key(&key) {
            order.push(key.clone());
        }
        let e = vs.entry(key).or_default();
        e.0.push(c.embedding_knn);
        e.1.push(c.propagation_kappa);
    }
    let mut cp: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in results.iter().filter(|r| r.experiment.starts_with("C3") && r.mode != "baseline") {
        cp.entry((r.dataset.clone(), r.mode.clone()))
            .or_default()
            .push(r.kappa);
    }
    order
        .into_iter()
        .map(|key| {
            let (knn, kappa) = &vs[&key];
            let final_kappa = cp.get(&key).map(|v| mean_std(v).0);
            Cell {
                embedding_knn: mean_std(knn).0,
                propagation_kappa: mean_std(kappa).0,
                final_kappa,
                dataset: key.0,
                mode: key.1,
            }
        })
        .collect()
}

pub fn correlation_report(consistency: &[ConsistencyRow], results: &[ResultRow]) -> Result<CorrelationReport> {
    let cells = build_cells(consistency, results);
    if cells.len() < MIN_CELLS {
        return Err(CliError::config(format!(
            "correlation needs at least {MIN_CELLS} (dataset, mode) cells, found {}",
            cells.len()
        )));
    }
    let knn: Vec<f64> = cells.iter().map(|c| c.embedding_knn).collect();
    let prop: Vec<f64> = cells.iter().map(|c| c.propagation_kappa).collect();
    let rho_propagation = spearman(&knn, &prop)?;
    let with_final: Vec<&Cell> = cells.iter().filter(|c| c.final_kappa.is_some()).collect();
    let rho_final = if with_final.len() >= MIN_CELLS {
        let a: Vec<f64> = with_final.iter().map(|c| c.embedding_knn).collect();
        let b: Vec<f64> = with_final.iter().filter_map(|c| c.final_kappa).collect();
        spearman(&a, &b)?
    } else {
        None
    };
    Ok(CorrelationReport {
        cells,
        rho_propagation,
        rho_final,
    })
}

fn show(rho: Option<f64>) -> String {
    rho.map_or_else(|| "undefined".to_string(), |r| format!("{r:.6}"))
}

pub fn render(report: &CorrelationReport) -> String {
    let mut text = String::from("dataset,mode,embedding_knn,propagation_kappa,final_kappa\n");
    for c in &report.cells {
        let _ = writeln!(
            text,
            "{},{},{:.6},{:.6},{}",
            c.dataset,
            c.mode,
            c.embedding_knn,
            c.propagation_kappa,
            c.final_kappa.map_or_else(|| "na".to_string(), |k| format!("{k:.6}"))
        );
    }
    let _ = writeln!(text, "\nspearman_knn_vs_propagation_kappa = {}", show(report.rho_propagation));
    let _ = writeln!(text, "spearman_knn_vs_final_kappa = {}", show(report.rho_final));
    text
}

fn fields<'a>(path: &Path, line: usize, text: &'a str, n: usize) -> Result<Vec<&'a str>> {
    let f: Vec<&str> = text.split(',').collect();
    if f.len() != n {
        return Err(CliError::Input {
            path: path.to_path_buf(),
            message: format!("line {line}: expected {n} fields"),
        });
    }
    Ok(f)
}

fn num<T: std::str::FromStr>(path: &Path, line: usize, s: &str) -> Result<T> {
    s.parse().map_err(|_| CliError::Input {
        path: path.to_path_buf(),
        message: format!("line {line}: bad number {s:?}"),
    })
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .skip(1)
        .map(|(k, line)| {
            let f = fields(path, k + 1, line, 7)?;
            Ok(ResultRow {
                dataset: f[0].into(),
                experiment: f[1].into(),
                mode: f[2].into(),
                classifier: f[3].into(),
                seed: num(path, k + 1, f[4])?,
                accuracy: num(path, k + 1, f[5])?,
                kappa: num(path, k + 1, f[6])?,
            })
        })
        .collect()
}

pub fn read_consistency(path: &Path) -> Result<Vec<ConsistencyRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .skip(1)
        .map(|(k, line)| {
            let f = fields(path, k + 1, line, 7)?;
            Ok(ConsistencyRow {
                dataset: f[0].into(),
                mode: f[1].into(),
                seed: num(path, k + 1, f[2])?,
                embedding_knn: num(path, k + 1, f[3])?,
                latent_knn: num(path, k + 1, f[4])?,
                propagation_accuracy: num(path, k + 1, f[5])?,
                propagation_kappa: num(path, k + 1, f[6])?,
            })
        })
        .collect()
}
