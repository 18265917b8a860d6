//! The `toy`, `sweep` and `swg-demo` runners.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use swgtoy_core::metrics::write_stepwise_csv;
use swgtoy_core::sampler::{write_ensemble_csv, write_trajectory_csv};
use swgtoy_core::swg::is_coherent;
use swgtoy_core::{
    sample_ensemble, EndpointMode, EndpointStats, GuidanceRule, Trajectory, TrajectoryReport,
    WindowPlan,
};

use crate::config::{Experiment, ResolvedMethod, WeightLabel};
use crate::svg;
use crate::CliError;

/// Share of unstable trajectories above which a cell is flagged.
pub const INSTABILITY_WARNING_RATE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Per-cell directories with ensembles, trajectories and plots.
    Toy,
    /// Report and curves only.
    Sweep,
    /// Toy outputs plus overlap grids, field dumps and baseline comparisons.
    SwgDemo,
}

/// Results of one (method, weight) ensemble.
#[derive(Debug, Clone)]
pub struct Cell {
    pub method: String,
    pub kind: &'static str,
    pub label: WeightLabel,
    pub trajectories: Vec<Trajectory>,
    pub report: TrajectoryReport,
    /// Endpoint distance to the optimal-denoiser run with the same seeds.
    pub matched: Option<EndpointStats>,
    /// Share of stable endpoints whose windows disagree on the nearest image.
    pub incoherent_fraction: Option<f64>,
    pub warnings: Vec<String>,
}

pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    let mut f = create(path)?;
    f.write_all(contents.as_bytes())
        .map_err(|e| CliError::io(path, e))?;
    f.flush().map_err(|e| CliError::io(path, e))
}

fn incoherent_fraction(
    exp: &Experiment,
    plan: &WindowPlan,
    trajectories: &[Trajectory],
) -> Result<Option<f64>, CliError> {
    let mut stable = 0usize;
    let mut incoherent = 0usize;
    for tr in trajectories.iter().filter(|t| !t.unstable) {
        stable += 1;
        incoherent += usize::from(!is_coherent(&exp.dataset, plan, &tr.endpoint)?);
    }
    Ok((stable > 0).then(|| incoherent as f64 / stable as f64))
}

fn ensemble(
    exp: &Experiment,
    method: &ResolvedMethod,
    rule: &GuidanceRule,
    seed: u64,
) -> Result<Vec<Trajectory>, CliError> {
    Ok(sample_ensemble(
        rule,
        &exp.schedule,
        exp.config.trajectories,
        seed,
        &method.policy,
        &exp.options,
    )?)
}

/// Samples every (method, weight) cell with the same seeds.
pub fn run_cells(exp: &Experiment, seed: u64) -> Result<Vec<Cell>, CliError> {
    let mut cells = Vec::new();
    for method in &exp.methods {
        let reference_rule = GuidanceRule::new(method.oracle.clone());
        let reference = ensemble(exp, method, &reference_rule, seed)?;
        for (label, rule) in &method.cells {
            tracing::info!(method = %method.name, w = %label, "sampling {} trajectories", exp.config.trajectories);
            let trajectories = ensemble(exp, method, rule, seed)?;
            let report = TrajectoryReport::build(
                &trajectories,
                EndpointMode::NearestPoint(&exp.dataset),
                Some(method.oracle.as_ref()),
            )?;
            let matched = match swgtoy_core::endpoint_error_stats(
                &trajectories,
                EndpointMode::MatchedReference(&reference),
            ) {
                Ok(s) => Some(s),
                Err(swgtoy_core::Error::UndefinedMetric(_)) => None,
                Err(e) => return Err(e.into()),
            };
            let incoherent_fraction = match &method.plan {
                Some(plan) => incoherent_fraction(exp, plan, &trajectories)?,
                None => None,
            };
            let mut warnings = method.warnings.clone();
            if report.instability_rate > INSTABILITY_WARNING_RATE {
                let msg = format!(
                    "{:.1}% of trajectories diverged at w={label}",
                    100.0 * report.instability_rate
                );
                tracing::warn!(method = %method.name, "{msg}");
                warnings.push(msg);
            }
            cells.push(Cell {
                method: method.name.clone(),
                kind: method.kind.as_str(),
                label: *label,
                trajectories,
                report,
                matched,
                incoherent_fraction,
                warnings,
            });
        }
    }
    Ok(cells)
}

pub const REPORT_HEADER: &str =
    "method,kind,w,n,n_stable,instability_rate,endpoint_error,endpoint_se,\
matched_error,matched_se,stepwise_mean,stepwise_final,incoherent_fraction,fid,fdd,is,warning";

fn report_row(cell: &Cell) -> String {
    let r = &cell.report;
    let stepwise = r.stepwise_error.as_ref();
    let n_stable = r.endpoint.map(|e| e.n_stable).unwrap_or(0);
    [
        csv_field(&cell.method),
        cell.kind.to_string(),
        cell.label.to_string(),
        r.n_trajectories.to_string(),
        n_stable.to_string(),
        r.instability_rate.to_string(),
        opt(r.endpoint.map(|e| e.mean)),
        opt(r.endpoint.map(|e| e.std_err)),
        opt(cell.matched.map(|e| e.mean)),
        opt(cell.matched.map(|e| e.std_err)),
        opt(stepwise.map(|s| s.iter().sum::<f64>() / s.len() as f64)),
        opt(stepwise.and_then(|s| s.last().copied())),
        opt(cell.incoherent_fraction),
        // Image-quality columns are kept for compatibility with larger
        // experiments and are always empty for toy data.
        String::new(),
        String::new(),
        String::new(),
        csv_field(&cell.warnings.join("; ")),
    ]
    .join(",")
}

pub fn report_csv(cells: &[Cell]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for cell in cells {
        out.push_str(&report_row(cell));
        out.push('\n');
    }
    out
}

fn cell_dir(out: &Path, cell: &Cell) -> PathBuf {
    out.join(&cell.method).join(format!("w_{}", cell.label))
}

fn write_cell(exp: &Experiment, out: &Path, cell: &Cell) -> Result<(), CliError> {
    let dir = cell_dir(out, cell);
    let path = dir.join("ensemble.csv");
    let mut f = create(&path)?;
    write_ensemble_csv(&cell.trajectories, &exp.dataset, &mut f)?;
    f.flush().map_err(|e| CliError::io(&path, e))?;
    for (i, tr) in cell
        .trajectories
        .iter()
        .take(exp.config.dump_trajectories)
        .enumerate()
    {
        let path = dir.join(format!("trajectory_{i}.csv"));
        let mut f = create(&path)?;
        write_trajectory_csv(tr, &mut f)?;
        f.flush().map_err(|e| CliError::io(&path, e))?;
    }
    let path = dir.join("stepwise.csv");
    let mut f = create(&path)?;
    write_stepwise_csv(cell.report.stepwise_error.as_deref().unwrap_or(&[]), &mut f)?;
    f.flush().map_err(|e| CliError::io(&path, e))?;
    if exp.dataset.dim() == 2 {
        let title = format!("{} w={}", cell.method, cell.label);
        let plot = svg::ensemble_plot(
            &title,
            &exp.dataset,
            &cell.trajectories,
            exp.config.dump_trajectories,
        );
        write_file(&dir.join("plot.svg"), &plot)?;
    }
    Ok(())
}

fn stepwise_chart(cells: &[Cell]) -> String {
    let series: Vec<(String, Vec<(f64, f64)>)> = cells
        .iter()
        .filter_map(|c| {
            let curve = c.report.stepwise_error.as_ref()?;
            let pts = curve
                .iter()
                .enumerate()
                .map(|(i, &e)| (i as f64, e))
                .collect();
            Some((format!("{} w={}", c.method, c.label), pts))
        })
        .collect();
    svg::line_chart("Mean step-wise prediction error", "step", "error", &series)
}

fn sweep_charts(cells: &[Cell]) -> (String, String) {
    let mut error: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    let mut unstable: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for c in cells {
        let WeightLabel::Value(w) = c.label else {
            continue;
        };
        let e = c.report.endpoint.map(|e| e.mean).unwrap_or(f64::NAN);
        match error.iter_mut().position(|(name, _)| *name == c.method) {
            Some(i) => {
                error[i].1.push((w, e));
                unstable[i].1.push((w, c.report.instability_rate));
            }
            None => {
                error.push((c.method.clone(), vec![(w, e)]));
                unstable.push((c.method.clone(), vec![(w, c.report.instability_rate)]));
            }
        }
    }
    for (_, s) in error.iter_mut().chain(unstable.iter_mut()) {
        s.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    (
        svg::line_chart("Endpoint error", "w", "error", &error),
        svg::line_chart("Unstable trajectories", "w", "rate", &unstable),
    )
}

/// Rows of a flattened grid field, one line per grid row.
fn grid_csv(shape: &swgtoy_core::GridShape, values: &[f64]) -> String {
    let mut out = String::new();
    for row in values.chunks(shape.width * shape.channels) {
        let line: Vec<String> = row.iter().map(f64::to_string).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// `#` lines describing the window plan, followed by CSV.
pub fn plan_header(plan: &WindowPlan) -> String {
    let s = &plan.shape;
    let mut out = String::new();
    let _ = writeln!(out, "# H={} W={} C={}", s.height, s.width, s.channels);
    let _ = writeln!(out, "# k={} l={} N={}", plan.k, plan.l, plan.n_windows());
    let _ = writeln!(out, "# s={} s_cols={}", plan.stride_rows, plan.stride_cols);
    let _ = writeln!(
        out,
        "# r={} r_cols={}",
        plan.overlap_ratio,
        plan.overlap_ratio_cols()
    );
    out
}

fn write_swg_extras(
    exp: &Experiment,
    out: &Path,
    seed: u64,
    cells: &[Cell],
) -> Result<(), CliError> {
    let probe_sigma = exp.config.probe_sigma;
    for method in &exp.methods {
        let dir = out.join(&method.name);
        let Some(rule) = method.cells.first().map(|(_, r)| r) else {
            continue;
        };
        let mine: Vec<&Cell> = cells.iter().filter(|c| c.method == method.name).collect();

        // Positive-only run with the same seeds as the baseline.
        let baseline_rule = GuidanceRule::new(rule.positive().clone());
        let baseline = ensemble(exp, method, &baseline_rule, seed)?;
        let reference = ensemble(exp, method, &GuidanceRule::new(method.oracle.clone()), seed)?;
        let baseline_matched = swgtoy_core::endpoint_error_stats(
            &baseline,
            EndpointMode::MatchedReference(&reference),
        )
        .ok();
        let baseline_incoherent = match &method.plan {
            Some(plan) => incoherent_fraction(exp, plan, &baseline)?,
            None => None,
        };

        let mut report = String::new();
        if let Some(plan) = &method.plan {
            report.push_str(&plan_header(plan));
            let field = plan.overlap();
            write_file(&dir.join("overlap_counts.csv"), &field.counts_csv())?;
            write_file(&dir.join("overlap_counts.pgm"), &field.counts_pgm())?;
            write_file(&dir.join("mask.csv"), &field.mask_csv())?;
            write_file(&dir.join("mask.pgm"), &field.mask_pgm())?;

            // Field dumps at a noisy version of the first dataset point.
            let mut rng = swgtoy_core::rng::rng_from_seed(seed);
            let noise = swgtoy_core::rng::normal_vec(&mut rng, exp.dataset.dim(), probe_sigma);
            let x: Vec<f64> = exp
                .dataset
                .point(0)
                .iter()
                .zip(&noise)
                .map(|(a, b)| a + b)
                .collect();
            let class = method.policy.class_for(0);
            let eps_pos = rule.positive().predict_noise(&x, probe_sigma, class)?;
            write_file(&dir.join("eps_pos.csv"), &grid_csv(&plan.shape, &eps_pos))?;
            if let Some(term) = rule.terms().first() {
                let eps_neg = term.negative.predict_noise(&x, probe_sigma, class)?;
                write_file(&dir.join("eps_neg.csv"), &grid_csv(&plan.shape, &eps_neg))?;
            }
        }
        for w in &method.warnings {
            let _ = writeln!(report, "# warning: {w}");
        }
        report.push_str("w,n,n_stable,instability_rate,endpoint_error,endpoint_se,matched_error,matched_se,incoherent_fraction\n");
        let mut comparison = String::from(
            "w,matched_error,baseline_matched_error,incoherent_fraction,baseline_incoherent_fraction\n",
        );
        for c in &mine {
            let r = &c.report;
            let _ = writeln!(
                report,
                "{},{},{},{},{},{},{},{},{}",
                c.label,
                r.n_trajectories,
                r.endpoint.map(|e| e.n_stable).unwrap_or(0),
                r.instability_rate,
                opt(r.endpoint.map(|e| e.mean)),
                opt(r.endpoint.map(|e| e.std_err)),
                opt(c.matched.map(|e| e.mean)),
                opt(c.matched.map(|e| e.std_err)),
                opt(c.incoherent_fraction),
            );
            let _ = writeln!(
                comparison,
                "{},{},{},{},{}",
                c.label,
                opt(c.matched.map(|e| e.mean)),
                opt(baseline_matched.map(|e| e.mean)),
                opt(c.incoherent_fraction),
                opt(baseline_incoherent),
            );
        }
        write_file(&dir.join("report.csv"), &report)?;
        write_file(&dir.join("comparison.csv"), &comparison)?;
    }
    Ok(())
}

/// Runs an experiment and writes its outputs under `out`.
pub fn run(exp: &Experiment, mode: Mode, out: &Path, seed: u64) -> Result<Vec<Cell>, CliError> {
    if mode == Mode::SwgDemo && exp.grid.is_none() {
        return Err(CliError::Config(
            "swg-demo needs a grid: use a corner-pair dataset or a [grid] table".into(),
        ));
    }
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let cells = run_cells(exp, seed)?;
    match mode {
        Mode::Toy | Mode::SwgDemo => {
            for cell in &cells {
                write_cell(exp, out, cell)?;
            }
            write_file(&out.join("report.csv"), &report_csv(&cells))?;
            write_file(&out.join("stepwise.svg"), &stepwise_chart(&cells))?;
            if mode == Mode::SwgDemo {
                write_swg_extras(exp, out, seed, &cells)?;
            }
        }
        Mode::Sweep => {
            write_file(&out.join("sweep.csv"), &report_csv(&cells))?;
            let (error, unstable) = sweep_charts(&cells);
            write_file(&out.join("sweep_error.svg"), &error)?;
            write_file(&out.join("sweep_instability.svg"), &unstable)?;
            write_file(&out.join("stepwise.svg"), &stepwise_chart(&cells))?;
        }
    }
    Ok(cells)
}
