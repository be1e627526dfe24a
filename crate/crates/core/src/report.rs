//! Trajectory CSV export and the text/JSON report files.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::{ConditionReport, KktReport, MonotonicityEstimate, OracleSolution};
use crate::dynamics::ClosedLoop;
use crate::graph::SpectralSummary;
use crate::sim::Trajectory;

/// Header row: `time`, `y_i_j`, `mu_i_j`, `eta_i_j`, then the four KKT
/// residual columns. Indices are zero-based.
pub fn csv_header(cl: &ClosedLoop) -> Vec<String> {
    let g = cl.game();
    let (big_n, n, l, m) = (g.n_players(), g.strategy_dim(), g.constraint_dim(), g.aggregate_dim());
    let mut h = vec!["time".to_string()];
    for (prefix, width) in [("y", n), ("mu", l), ("eta", m)] {
        for i in 0..big_n {
            for j in 0..width {
                h.push(format!("{prefix}_{i}_{j}"));
            }
        }
    }
    h.extend(["kkt_stationarity", "kkt_feasibility", "mu_consensus", "eta_tracking"].map(String::from));
    h
}

/// Writes a trajectory as CSV. Floats use the shortest representation
/// that round-trips, so output is byte-stable.
pub fn write_trajectory_csv<W: io::Write>(cl: &ClosedLoop, traj: &Trajectory<KktReport>, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(cl))?;
    let layout = cl.layout();
    let mut row: Vec<String> = Vec::new();
    for ((t, state), rep) in traj.times.iter().zip(&traj.states).zip(&traj.residuals) {
        row.clear();
        row.push(t.to_string());
        row.extend(cl.outputs(state).iter().map(f64::to_string));
        row.extend(state[layout.mu_all()].iter().map(f64::to_string));
        row.extend(state[layout.eta_all()].iter().map(f64::to_string));
        row.extend([rep.stationarity, rep.feasibility, rep.mu_consensus, rep.eta_tracking].iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn trajectory_csv_string(cl: &ClosedLoop, traj: &Trajectory<KktReport>) -> String {
    let mut buf = Vec::new();
    write_trajectory_csv(cl, traj, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is utf-8")
}

/// Writes `<stem>.txt` (the `Display` text) and `<stem>.json`.
pub fn write_report<T: Serialize + fmt::Display>(dir: &Path, stem: &str, report: &T) -> io::Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let txt = dir.join(format!("{stem}.txt"));
    let json = dir.join(format!("{stem}.json"));
    fs::write(&txt, format!("{report}\n"))?;
    let body = serde_json::to_string_pretty(report).map_err(io::Error::other)?;
    fs::write(&json, body + "\n")?;
    Ok((txt, json))
}

fn write_vec(f: &mut fmt::Formatter<'_>, key: &str, v: &[f64]) -> fmt::Result {
    let items: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    writeln!(f, "{key} = [{}]", items.join(", "))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub scenario: String,
    pub status: &'static str,
    pub final_time: f64,
    pub recorded_points: usize,
    pub y_final: Vec<f64>,
    pub mu_final: Vec<f64>,
    pub kkt: Option<KktReport>,
}

impl SimulationSummary {
    pub fn new(name: &str, cl: &ClosedLoop, traj: &Trajectory<KktReport>, diverged: bool) -> Self {
        let state = traj.final_state();
        let finite = !state.is_empty();
        Self {
            scenario: name.to_string(),
            status: if diverged { "diverged" } else { "ok" },
            final_time: traj.final_time(),
            recorded_points: traj.len(),
            y_final: if finite { cl.outputs(state).as_slice().to_vec() } else { Vec::new() },
            mu_final: if finite { state[cl.layout().mu_all()].to_vec() } else { Vec::new() },
            kkt: traj.final_residual().copied(),
        }
    }
}

impl fmt::Display for SimulationSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario = {}", self.scenario)?;
        writeln!(f, "status = {}", self.status)?;
        writeln!(f, "final_time = {}", self.final_time)?;
        writeln!(f, "recorded_points = {}", self.recorded_points)?;
        write_vec(f, "y_final", &self.y_final)?;
        write_vec(f, "mu_final", &self.mu_final)?;
        if let Some(k) = &self.kkt {
            write!(f, "{k}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSummary {
    pub scenario: String,
    pub y: Vec<f64>,
    pub mu: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub step: f64,
    pub cross_check: Option<f64>,
    pub kkt: KktReport,
}

impl OracleSummary {
    pub fn new(name: &str, sol: &OracleSolution, kkt: KktReport) -> Self {
        Self {
            scenario: name.to_string(),
            y: sol.y.clone(),
            mu: sol.mu.clone(),
            iterations: sol.iterations,
            residual: sol.residual,
            step: sol.step,
            cross_check: sol.cross_check,
            kkt,
        }
    }
}

impl fmt::Display for OracleSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario = {}", self.scenario)?;
        write_vec(f, "y", &self.y)?;
        write_vec(f, "mu", &self.mu)?;
        writeln!(f, "iterations = {}", self.iterations)?;
        writeln!(f, "residual = {:e}", self.residual)?;
        writeln!(f, "step = {}", self.step)?;
        match self.cross_check {
            Some(c) => writeln!(f, "cross_check = {c:e}")?,
            None => writeln!(f, "cross_check = none")?,
        }
        write!(f, "{}", self.kkt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckSummary {
    pub scenario: String,
    pub spectral: SpectralSummary,
    pub estimator_abscissa: f64,
    pub monotonicity: MonotonicityEstimate,
    pub coupling_norm: f64,
    pub double_integrator: Option<ConditionReport>,
    pub chain: Option<ConditionReport>,
}

impl fmt::Display for CheckSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.spectral;
        writeln!(f, "scenario = {}", self.scenario)?;
        writeln!(f, "lambda2 = {}", s.lambda2)?;
        writeln!(f, "laplacian_norm = {}", s.laplacian_norm)?;
        writeln!(f, "weight_balanced = {}", s.is_weight_balanced)?;
        writeln!(f, "strongly_connected = {}", s.is_strongly_connected)?;
        writeln!(f, "estimator_abscissa = {}", self.estimator_abscissa)?;
        writeln!(f, "omega = {}", self.monotonicity.omega)?;
        writeln!(f, "theta = {}", self.monotonicity.theta)?;
        writeln!(f, "monotonicity_method = {:?}", self.monotonicity.method)?;
        if let Some(w) = &self.monotonicity.warning {
            writeln!(f, "warning: {w}")?;
        }
        writeln!(f, "coupling_norm = {}", self.coupling_norm)?;
        for (name, rep) in [("double_integrator_conditions", &self.double_integrator), ("chain_conditions", &self.chain)] {
            if let Some(r) = rep {
                writeln!(f, "[{name}]")?;
                write!(f, "{r}")?;
            }
        }
        Ok(())
    }
}
