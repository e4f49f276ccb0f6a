//! Grid runs over a scenario and the CSV tables they produce.
//!
//! Every (grid value, arm, seed) cell is an independent simulation. Cells
//! run in parallel; results come back in cell order, so every table is a
//! pure function of the scenario.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::metrics::{metrics_csv, RunMetrics};
use crate::scenario::{Arm, Scenario, ScenarioError, Settings};
use crate::simnet::{EventKind, SimError, SimEventLog, Simulation};

/// Name used for the base cell of a scenario without grids.
pub const BASE: &str = "base";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{cell}: {source}")]
    Run { cell: String, source: SimError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Where a cell sits in the scenario.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellId {
    /// Grid name, or [`BASE`].
    pub grid: String,
    /// The swept value, empty for the base cell.
    pub value: String,
    pub arm: Arm,
    pub seed: u64,
}

impl CellId {
    /// File-name friendly identifier.
    pub fn tag(&self) -> String {
        let grid = if self.value.is_empty() { self.grid.clone() } else { format!("{}-{}", self.grid, self.value) };
        format!("{grid}_{}_seed{}", self.arm.label(), self.seed)
    }
}

/// Outcome of one cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub id: CellId,
    pub layers: usize,
    pub metrics: RunMetrics,
    /// Timeline rows, present when the scenario asks for them.
    pub timeline: Option<String>,
}

/// All cells of a scenario with their settings, in output order: grids in
/// file order (or the base cell), then values, then arms, then seeds.
pub fn cells(scenario: &Scenario) -> Result<Vec<(CellId, Settings)>, ScenarioError> {
    let mut groups: Vec<(String, String, Settings)> = Vec::new();
    if scenario.grids().is_empty() {
        groups.push((BASE.to_string(), String::new(), scenario.settings()?));
    }
    for g in scenario.grids() {
        for v in &g.values {
            groups.push((g.name.clone(), v.clone(), scenario.with_value(&g.key, v).settings()?));
        }
    }
    let mut out = Vec::new();
    for (grid, value, settings) in groups {
        for &arm in &settings.arms {
            for &seed in &settings.seeds {
                out.push((CellId { grid: grid.clone(), value: value.clone(), arm, seed }, settings.clone()));
            }
        }
    }
    Ok(out)
}

/// Timeline rows of every receiver: `wall,peer,stream_slot,target,quality,bandwidth_kbps`;
/// stalls have an empty target and quality -1.
pub fn timeline_rows(log: &SimEventLog) -> String {
    let mut capacity: BTreeMap<(u64, u32), f64> = BTreeMap::new();
    for e in log.of_kind(EventKind::Capacity) {
        capacity.insert((e.slot, e.peer.0), e.detail);
    }
    let mut out = String::new();
    for e in log.events() {
        let bw = capacity.get(&(e.slot, e.peer.0)).copied().unwrap_or(0.0);
        match e.kind {
            EventKind::Play => {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{:.3}",
                    e.slot,
                    e.peer.0,
                    e.chunk_slot.unwrap_or(0),
                    e.detail as i64,
                    e.layer.unwrap_or(-1),
                    bw
                );
            }
            EventKind::Stall => {
                let _ = writeln!(out, "{},{},{},,-1,{:.3}", e.slot, e.peer.0, e.chunk_slot.unwrap_or(0), bw);
            }
            _ => {}
        }
    }
    out
}

pub const TIMELINE_HEADER: &str = "grid,value,seed,wall,peer,stream_slot,target,quality,bandwidth_kbps";

/// Run one cell, returning its log alongside the result.
pub fn run_cell(id: &CellId, settings: &Settings) -> Result<(CellResult, SimEventLog), ExperimentError> {
    let cfg = settings.config(id.arm);
    let layers = cfg.profile.layer_count();
    let out = Simulation::new(cfg, id.seed).map_err(|source| ExperimentError::Run { cell: id.tag(), source })?.run();
    let timeline = settings.timelines.then(|| timeline_rows(&out.log));
    Ok((CellResult { id: id.clone(), layers, metrics: out.metrics, timeline }, out.log))
}

/// Run every cell of a scenario in parallel.
pub fn run_scenario(scenario: &Scenario) -> Result<Vec<CellResult>, ExperimentError> {
    let cells = cells(scenario)?;
    cells.par_iter().map(|(id, settings)| run_cell(id, settings).map(|(r, _)| r)).collect()
}

/// Metrics shown in the per-grid tables: `(file stem, value)`.
type Extract = fn(&RunMetrics) -> f64;
pub const FAMILY_METRICS: &[(&str, Extract)] = &[
    ("layer_changes", |m| m.mean_layer_changes()),
    ("stall_events", |m| m.mean_stall_events()),
    ("stall_duration", |m| m.mean_stall_duration()),
    ("utilization", |m| m.bandwidth_utilization()),
    ("effective_utilization", |m| m.effective_utilization()),
    ("useless_ratio", |m| m.useless_chunk_ratio()),
    ("late_ratio", |m| m.late_arrival_ratio()),
    ("useless_layer_ratio", |m| m.useless_layer_ratio()),
    ("relative_received", |m| m.relative_received_layer_ratio()),
];

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

/// Results grouped by (grid, value) then arm, preserving cell order.
fn grouped(results: &[CellResult]) -> Vec<((String, String), Vec<(Arm, Vec<&CellResult>)>)> {
    let mut out: Vec<((String, String), Vec<(Arm, Vec<&CellResult>)>)> = Vec::new();
    for r in results {
        let key = (r.id.grid.clone(), r.id.value.clone());
        if out.last().is_none_or(|(k, _)| *k != key) {
            out.push((key, Vec::new()));
        }
        let arms = &mut out.last_mut().expect("pushed above").1;
        match arms.iter_mut().find(|(a, _)| *a == r.id.arm) {
            Some((_, v)) => v.push(r),
            None => arms.push((r.id.arm, vec![r])),
        }
    }
    out
}

/// Mean over seeds of one metric for one (grid value, arm).
pub fn seed_mean(cells: &[&CellResult], f: impl Fn(&RunMetrics) -> f64) -> f64 {
    mean(&cells.iter().map(|c| f(&c.metrics)).collect::<Vec<_>>())
}

/// Per layer, the mean over seeds where the layer was demanded.
pub fn delivery_means(cells: &[&CellResult]) -> Vec<Option<f64>> {
    let layers = cells.iter().map(|c| c.layers).max().unwrap_or(0);
    (0..layers)
        .map(|l| {
            let v: Vec<f64> =
                cells.iter().filter_map(|c| c.metrics.delivery_ratio_per_layer().get(l).copied().flatten()).collect();
            (!v.is_empty()).then(|| mean(&v))
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// `summary.csv`: one row per cell.
pub fn summary_csv(results: &[CellResult]) -> String {
    let layers = results.iter().map(|r| r.layers).max().unwrap_or(0);
    let mut out = String::from("grid,value,arm,seed,played");
    for (name, _) in FAMILY_METRICS {
        let _ = write!(out, ",{name}");
    }
    out.push_str(",max_layer_changes,max_stall_duration");
    for l in 0..layers {
        let _ = write!(out, ",delivery_{l}");
    }
    out.push('\n');
    for r in results {
        let m = &r.metrics;
        let _ = write!(
            out,
            "{},{},{},{},{}",
            r.id.grid,
            r.id.value,
            r.id.arm.label(),
            r.id.seed,
            m.peers.iter().map(|p| p.played).sum::<u64>()
        );
        for (_, f) in FAMILY_METRICS {
            let _ = write!(out, ",{:.6}", f(m));
        }
        let _ = write!(out, ",{},{}", m.max_layer_changes(), m.max_stall_duration());
        let d = m.delivery_ratio_per_layer();
        for l in 0..layers {
            let _ = write!(out, ",{}", fmt_opt(d.get(l).copied().flatten()));
        }
        out.push('\n');
    }
    out
}

/// `means.csv`: one row per (grid value, arm), averaged over seeds.
pub fn means_csv(results: &[CellResult]) -> String {
    let mut out = String::from("grid,value,arm,seeds");
    for (name, _) in FAMILY_METRICS {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    for ((grid, value), arms) in grouped(results) {
        for (arm, cells) in arms {
            let _ = write!(out, "{grid},{value},{},{}", arm.label(), cells.len());
            for (_, f) in FAMILY_METRICS {
                let _ = write!(out, ",{:.6}", seed_mean(&cells, f));
            }
            out.push('\n');
        }
    }
    out
}

/// `<metric>_vs_<grid>.csv`: grid values down, arms across.
pub fn family_csv(results: &[CellResult], grid: &str, f: Extract) -> String {
    let groups: Vec<_> = grouped(results).into_iter().filter(|((g, _), _)| g == grid).collect();
    let mut out = String::from(grid);
    if let Some((_, arms)) = groups.first() {
        for (arm, _) in arms {
            let _ = write!(out, ",{}", arm.label());
        }
    }
    out.push('\n');
    for ((_, value), arms) in &groups {
        out.push_str(value);
        for (_, cells) in arms {
            let _ = write!(out, ",{:.6}", seed_mean(cells, f));
        }
        out.push('\n');
    }
    out
}

/// `delivery_per_layer.csv`: long format, one row per (grid value, arm, layer).
pub fn delivery_csv(results: &[CellResult]) -> String {
    let mut out = String::from("grid,value,arm,layer,delivery_ratio\n");
    for ((grid, value), arms) in grouped(results) {
        for (arm, cells) in arms {
            for (l, v) in delivery_means(&cells).into_iter().enumerate() {
                let _ = writeln!(out, "{grid},{value},{},{l},{}", arm.label(), fmt_opt(v));
            }
        }
    }
    out
}

fn write(path: PathBuf, content: &str, written: &mut Vec<PathBuf>) -> Result<(), ExperimentError> {
    fs::write(&path, content).map_err(|source| ExperimentError::Io { path: path.clone(), source })?;
    written.push(path);
    Ok(())
}

/// Write every table under `dir`; returns the files written.
pub fn write_outputs(scenario: &Scenario, results: &[CellResult], dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ExperimentError::Io { path, source }
    };
    let runs = dir.join("runs");
    fs::create_dir_all(&runs).map_err(io(&runs))?;
    let mut written = Vec::new();
    for r in results {
        let tag = r.id.tag();
        write(runs.join(format!("{tag}.csv")), &metrics_csv(&tag, &r.metrics, true), &mut written)?;
    }
    write(dir.join("summary.csv"), &summary_csv(results), &mut written)?;
    write(dir.join("means.csv"), &means_csv(results), &mut written)?;
    write(dir.join("delivery_per_layer.csv"), &delivery_csv(results), &mut written)?;
    for g in scenario.grids() {
        for (metric, f) in FAMILY_METRICS {
            write(dir.join(format!("{metric}_vs_{}.csv", g.name)), &family_csv(results, &g.name, *f), &mut written)?;
        }
    }
    let mut timelines: Vec<(Arm, String)> = Vec::new();
    for r in results {
        let Some(rows) = &r.timeline else { continue };
        let idx = match timelines.iter().position(|(a, _)| *a == r.id.arm) {
            Some(i) => i,
            None => {
                timelines.push((r.id.arm, format!("{TIMELINE_HEADER}\n")));
                timelines.len() - 1
            }
        };
        let buf = &mut timelines[idx].1;
        for row in rows.lines() {
            let _ = writeln!(buf, "{},{},{},{row}", r.id.grid, r.id.value, r.id.seed);
        }
    }
    for (arm, body) in timelines {
        write(dir.join(format!("timeline_{}.csv", arm.label())), &body, &mut written)?;
    }
    Ok(written)
}

#[derive(Debug, Error, PartialEq)]
pub enum CompareError {
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("no column `{0}`")]
    UnknownMetric(String),
    #[error("unknown relation `{0}`; expected lt, le or ge")]
    UnknownRelation(String),
    #[error("no comparable rows")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Lt,
    Le,
    Ge,
}

impl std::str::FromStr for Relation {
    type Err = CompareError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lt" => Ok(Relation::Lt),
            "le" => Ok(Relation::Le),
            "ge" => Ok(Relation::Ge),
            _ => Err(CompareError::UnknownRelation(s.to_string())),
        }
    }
}

impl Relation {
    pub fn holds(self, a: f64, b: f64) -> bool {
        match self {
            Relation::Lt => a < b,
            Relation::Le => a <= b,
            Relation::Ge => a >= b,
        }
    }
}

/// A row where the relation failed.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// 1-based data row.
    pub row: usize,
    pub key: String,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub compared: usize,
    pub violations: Vec<Violation>,
}

impl Comparison {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn rows(csv: &str) -> (Vec<&str>, Vec<Vec<&str>>) {
    let mut lines = csv.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().map(|h| h.split(',').collect()).unwrap_or_default();
    (header, lines.map(|l| l.split(',').collect()).collect())
}

/// Check `a[metric] <relation> b[metric]` row by row. Both tables must have
/// the same header and row count. Rows where either value is blank are
/// skipped.
pub fn compare(a: &str, b: &str, metric: &str, relation: Relation) -> Result<Comparison, CompareError> {
    let (ha, ra) = rows(a);
    let (hb, rb) = rows(b);
    if ha != hb {
        return Err(CompareError::Schema(format!("headers differ: `{}` vs `{}`", ha.join(","), hb.join(","))));
    }
    if ra.len() != rb.len() {
        return Err(CompareError::Schema(format!("{} rows vs {}", ra.len(), rb.len())));
    }
    let col = ha.iter().position(|h| *h == metric).ok_or_else(|| CompareError::UnknownMetric(metric.to_string()))?;
    let mut compared = 0;
    let mut violations = Vec::new();
    for (i, (x, y)) in ra.iter().zip(&rb).enumerate() {
        if x.len() != ha.len() || y.len() != ha.len() {
            return Err(CompareError::Schema(format!("row {} has the wrong width", i + 1)));
        }
        let (Ok(va), Ok(vb)) = (x[col].trim().parse::<f64>(), y[col].trim().parse::<f64>()) else { continue };
        compared += 1;
        if !relation.holds(va, vb) {
            let key: Vec<&str> = x.iter().copied().filter(|f| f.parse::<f64>().is_err()).collect();
            violations.push(Violation { row: i + 1, key: key.join(","), a: va, b: vb });
        }
    }
    if compared == 0 {
        return Err(CompareError::Empty);
    }
    Ok(Comparison { compared, violations })
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: &str = "run,peer,layer_changes\nx,1,2\nx,all,2.5\n";
    const B: &str = "run,peer,layer_changes\ny,1,3\ny,all,2.5\n";

    #[test]
    fn compare_relations() {
        let c = compare(A, B, "layer_changes", Relation::Le).unwrap();
        assert!(c.passed());
        assert_eq!(c.compared, 2);
        let c = compare(A, B, "layer_changes", Relation::Lt).unwrap();
        assert_eq!(c.violations, vec![Violation { row: 2, key: "x,all".into(), a: 2.5, b: 2.5 }]);
        assert!(compare(A, A, "layer_changes", Relation::Le).unwrap().passed());
        assert!(compare(A, A, "layer_changes", Relation::Ge).unwrap().passed());
    }

    #[test]
    fn compare_rejects_mismatched_tables() {
        let other = "run,peer,stalls\nx,1,2\n";
        assert!(matches!(compare(A, other, "layer_changes", Relation::Le), Err(CompareError::Schema(_))));
        assert!(matches!(compare(A, "run,peer,layer_changes\nx,1,2\n", "layer_changes", Relation::Le), Err(CompareError::Schema(_))));
        assert_eq!(compare(A, B, "nope", Relation::Le), Err(CompareError::UnknownMetric("nope".into())));
        assert_eq!("eq".parse::<Relation>(), Err(CompareError::UnknownRelation("eq".into())));
        let blank = "run,layer_changes\nx,\n";
        assert_eq!(compare(blank, blank, "layer_changes", Relation::Le), Err(CompareError::Empty));
    }

    #[test]
    fn cells_follow_grid_arm_seed_order() {
        let s = Scenario::parse(
            "name = t\nseeds = 1, 2\narms = hybrid+gap, raw+rr\ngrid.n = overlay.neighbors: 4, 8\n",
        )
        .unwrap();
        let ids: Vec<String> = cells(&s).unwrap().iter().map(|(id, _)| id.tag()).collect();
        assert_eq!(
            ids,
            vec![
                "n-4_hybrid-gap_seed1",
                "n-4_hybrid-gap_seed2",
                "n-4_raw-rr_seed1",
                "n-4_raw-rr_seed2",
                "n-8_hybrid-gap_seed1",
                "n-8_hybrid-gap_seed2",
                "n-8_raw-rr_seed1",
                "n-8_raw-rr_seed2",
            ]
        );
        let base = Scenario::parse("name = t\nseeds = 3\n").unwrap();
        assert_eq!(cells(&base).unwrap()[0].0.tag(), "base_hybrid-gap_seed3");
    }
}
