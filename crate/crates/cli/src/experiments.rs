use std::sync::Arc;

use fraclab::aggregation::{
    covariance_shape, fit_constant, scaled_fluctuation, shape_indices, simulate_agents,
    transition_frequencies,
};
use fraclab::costs::{
    default_bandwidth, discretized_hedge, tc_limit_functional, value_with_costs, CostSchedule,
};
use fraclab::fbm::{HurstIndex, PathKind, SamplePath, TimeGrid};
use fraclab::market::{read_price_csv, ModelSimulator, ModelSpec, PricePath};
use fraclab::pathwise::{quadratic_variation, realized_qv, trapezoid};
use fraclab::stats::{mean_estimate, median, variance_estimate};
use fraclab::strategies::{
    convex_hedge, doubling_strategy, heat_kernel_strategy, momentum_strategy, zero_qv_strategy,
    Call, DoublingPath, Payoff,
};
use fraclab::tree::{
    find_arbitrage_node, terminal_values, wick_tree_terminal, BinaryTree, FractionalKernel,
    Prefix, WalkWeights, MAX_EXHAUSTIVE_DEPTH,
};
use rayon::prelude::*;

use crate::config::{Experiment, ExperimentConfig, Level, StrategyKind};
use crate::error::CliError;
use crate::report::{record, ExperimentReport, Outcome, Table};

type Run = Result<(), CliError>;

fn num(x: f64) -> String {
    x.to_string()
}

fn level(c: &ExperimentConfig) -> Result<u32, CliError> {
    c.level
        .fixed()
        .ok_or_else(|| CliError::Usage("this experiment needs a numeric --level".into()))
}

fn hurst(c: &ExperimentConfig) -> Result<HurstIndex, CliError> {
    Ok(HurstIndex::new(c.hurst())?)
}

fn simulate_paths(
    spec: ModelSpec,
    grid: TimeGrid,
    c: &ExperimentConfig,
    r: &mut ExperimentReport,
) -> Result<Vec<PricePath>, CliError> {
    let sim = ModelSimulator::new(spec, Arc::new(grid))?;
    if let Some(w) = sim.warning() {
        r.warn(w);
    }
    Ok((0..c.paths as u64)
        .into_par_iter()
        .map(|i| sim.path(c.seed, i))
        .collect::<fraclab::Result<Vec<_>>>()?)
}

fn dyadic_paths(
    spec: ModelSpec,
    c: &ExperimentConfig,
    r: &mut ExperimentReport,
) -> Result<Vec<PricePath>, CliError> {
    simulate_paths(spec, TimeGrid::dyadic(level(c)?, c.horizon)?, c, r)
}

pub fn dispatch(c: &ExperimentConfig, r: &mut ExperimentReport, tables: &mut Vec<Table>) -> Run {
    match c.experiment {
        Experiment::Simulate => simulate(c, r, tables),
        Experiment::Qv => qv(c, r, tables),
        Experiment::Arbitrage => arbitrage(c, r, tables),
        Experiment::Hedge => hedge(c, r, tables),
        Experiment::TransactionCosts => transaction_costs(c, r, tables),
        Experiment::Tree => tree(c, r, tables),
        Experiment::WickTree => wick_tree(c, r, tables),
        Experiment::Aggregate => aggregate(c, r, tables),
        Experiment::Agents => agents(c, r, tables),
    }
}

fn simulate(c: &ExperimentConfig, r: &mut ExperimentReport, tables: &mut Vec<Table>) -> Run {
    let paths = dyadic_paths(c.model, c, r)?;
    let mut table = Table::new("paths", &["path", "time", "price"]);
    let mut log_returns = Vec::with_capacity(paths.len());
    for (i, p) in paths.iter().enumerate() {
        for (t, s) in p.times().iter().zip(p.values()) {
            table.push(vec![i.to_string(), num(*t), num(*s)]);
        }
        let lr = (p.terminal() / p.s0()).ln();
        log_returns.push(lr);
        r.records.push(record([
            ("path", i as f64),
            ("terminal", p.terminal()),
            ("log_return", lr),
            ("min_price", p.values().iter().cloned().fold(f64::INFINITY, f64::min)),
        ]));
    }
    let terminals: Vec<f64> = paths.iter().map(PricePath::terminal).collect();
    r.estimate("mean_terminal", mean_estimate(&terminals));
    r.estimate("mean_log_return", mean_estimate(&log_returns));
    r.estimate("variance_log_return", variance_estimate(&log_returns));
    tables.push(table);
    Ok(())
}

fn qv(c: &ExperimentConfig, r: &mut ExperimentReport, tables: &mut Vec<Table>) -> Run {
    if let Some(input) = &c.input {
        let path = read_price_csv(std::fs::File::open(input)?)?;
        let s0 = path.s0();
        let logs = path.price.map(PathKind::Mixed, |_, s| (s / s0).ln())?;
        let (price_qv, log_qv, times) = match c.level {
            Level::Auto(_) => (
                realized_qv(&path.price),
                realized_qv(&logs),
                path.times().to_vec(),
            ),
            Level::Fixed(l) => (
                quadratic_variation(&path.price, l)?,
                quadratic_variation(&logs, l)?,
                path.price.subsample(l)?.times().to_vec(),
            ),
        };
        let mut table = Table::new("qv", &["time", "qv_price", "qv_log_price"]);
        for ((t, a), b) in times.iter().zip(&price_qv).zip(&log_qv) {
            table.push(vec![num(*t), num(*a), num(*b)]);
        }
        r.records.push(record([
            ("points", times.len() as f64),
            ("qv_price", *price_qv.last().expect("non-empty")),
            ("qv_log_price", *log_qv.last().expect("non-empty")),
        ]));
        r.exact("qv_price", *price_qv.last().expect("non-empty"));
        r.exact("qv_log_price", *log_qv.last().expect("non-empty"));
        tables.push(table);
        return Ok(());
    }
    let l = level(c)?;
    let paths = dyadic_paths(c.model, c, r)?;
    let sigma2 = c.model.sigma().powi(2);
    let rows: Vec<(f64, f64)> = paths
        .par_iter()
        .map(|p| {
            let q = *quadratic_variation(&p.price, l)?.last().expect("non-empty");
            let reference = trapezoid(&p.price, |_, s| sigma2 * s * s);
            Ok((q, reference))
        })
        .collect::<fraclab::Result<_>>()?;
    let mut table = Table::new("qv", &["path", "qv", "reference"]);
    for (i, (q, refv)) in rows.iter().enumerate() {
        table.push(vec![i.to_string(), num(*q), num(*refv)]);
        r.records.push(record([("path", i as f64), ("qv", *q), ("reference", *refv)]));
    }
    let qs: Vec<f64> = rows.iter().map(|x| x.0).collect();
    let refs: Vec<f64> = rows.iter().map(|x| x.1).collect();
    r.exact("median_qv", median(&qs));
    r.exact("median_reference", median(&refs));
    if sigma2 > 0.0 {
        let rel: Vec<f64> = rows.iter().map(|(q, f)| (q - f).abs() / f).collect();
        r.exact("median_relative_gap", median(&rel));
    }
    tables.push(table);
    Ok(())
}

fn values_table(values: &[f64]) -> Table {
    let mut t = Table::new("values", &["path", "terminal_value"]);
    for (i, v) in values.iter().enumerate() {
        t.push(vec![i.to_string(), num(*v)]);
    }
    t
}

fn arbitrage(c: &ExperimentConfig, r: &mut ExperimentReport, tables: &mut Vec<Table>) -> Run {
    let mut terminal = Vec::with_capacity(c.paths);
    let mut residual: f64 = 0.0;
    match c.strategy() {
        StrategyKind::Momentum => {
            let n = c.steps().ok_or_else(|| CliError::Usage("momentum needs --n".into()))?;
            let h = hurst(c)?;
            if h.value() < 0.5 {
                r.warn("momentum strategy with H < 1/2 is experimental");
            }
            let paths = simulate_paths(c.model, TimeGrid::uniform(n, c.horizon)?, c, r)?;
            let ledgers = paths
                .par_iter()
                .map(|p| momentum_strategy(p, n, h))
                .collect::<fraclab::Result<Vec<_>>>()?;
            let mut money = Vec::new();
            for (i, l) in ledgers.iter().enumerate() {
                terminal.push(l.terminal_value());
                money.push(l.max_money_in_stock());
                residual = residual.max(l.budget_residual());
                r.records.push(record([
                    ("path", i as f64),
                    ("terminal_value", l.terminal_value()),
                    ("max_money_in_stock", l.max_money_in_stock()),
                    ("running_min", l.running_min()),
                ]));
            }
            r.estimate("mean_terminal_value", mean_estimate(&terminal));
            r.exact("median_max_money_in_stock", median(&money));
        }
        StrategyKind::HeatKernel => {
            let paths = dyadic_paths(c.model, c, r)?;
            let outs = paths
                .par_iter()
                .map(heat_kernel_strategy)
                .collect::<fraclab::Result<Vec<_>>>()?;
            let target = outs.first().map_or(f64::NAN, |o| o.target);
            let mut err = Vec::new();
            for (i, o) in outs.iter().enumerate() {
                let v = o.ledger.terminal_value();
                terminal.push(v);
                err.push((v - o.target).abs());
                residual = residual.max(o.ledger.budget_residual());
                r.records.push(record([
                    ("path", i as f64),
                    ("terminal_value", v),
                    ("frozen_step_error", o.frozen_step_error),
                    ("running_min", o.ledger.running_min()),
                ]));
            }
            r.exact("target", target);
            r.exact("median_terminal_value", median(&terminal));
            r.exact("median_abs_error", median(&err));
        }
        StrategyKind::ZeroQv => {
            let paths = dyadic_paths(c.model, c, r)?;
            let ledgers = paths
                .par_iter()
                .map(zero_qv_strategy)
                .collect::<fraclab::Result<Vec<_>>>()?;
            let mut rel = Vec::new();
            let mut min: f64 = f64::INFINITY;
            for (i, (l, p)) in ledgers.iter().zip(&paths).enumerate() {
                let v = l.terminal_value();
                let identity = 0.5 * (p.terminal() - p.s0()).powi(2);
                let e = (v - identity).abs() / v.max(1e-6);
                terminal.push(v);
                rel.push(e);
                min = min.min(l.running_min());
                residual = residual.max(l.budget_residual());
                r.records.push(record([
                    ("path", i as f64),
                    ("terminal_value", v),
                    ("identity", identity),
                    ("relative_error", e),
                    ("running_min", l.running_min()),
                ]));
            }
            r.exact("median_relative_error", median(&rel));
            r.exact("min_running_min", min);
        }
        StrategyKind::Doubling => {
            let max_steps = c.max_steps.unwrap_or(100);
            let s0 = c.model.s0();
            let outs = (0..c.paths as u64)
                .into_par_iter()
                .map(|i| {
                    DoublingPath::sample(c.horizon, s0, max_steps, c.seed, i)
                        .map(|p| doubling_strategy(&p))
                })
                .collect::<fraclab::Result<Vec<_>>>()?;
            let mut stopped = 0usize;
            let mut min_stopped = f64::INFINITY;
            for (i, o) in outs.iter().enumerate() {
                let v = o.ledger.terminal_value();
                terminal.push(v);
                residual = residual.max(o.ledger.budget_residual());
                if let Some(sv) = o.stopped_value() {
                    stopped += 1;
                    min_stopped = min_stopped.min(sv);
                }
                r.records.push(record([
                    ("path", i as f64),
                    ("terminal_value", v),
                    ("stopped_at", o.stopped_at.map_or(f64::NAN, |k| k as f64)),
                    ("running_min", o.ledger.running_min()),
                ]));
            }
            r.exact("stopped_fraction", stopped as f64 / c.paths as f64);
            r.exact("min_stopped_value", min_stopped);
        }
    }
    r.exact("max_budget_residual", residual);
    tables.push(values_table(&terminal));
    Ok(())
}

fn hedge(c: &ExperimentConfig, r: &mut ExperimentReport, tables: &mut Vec<Table>) -> Run {
    let call = Call {
        strike: c.strike.unwrap_or(c.model.s0()),
    };
    let paths = dyadic_paths(c.model, c, r)?;
    let outs = paths
        .par_iter()
        .map(|p| convex_hedge(&call, p))
        .collect::<fraclab::Result<Vec<_>>>()?;
    let mut errs = Vec::new();
    let mut residual: f64 = 0.0;
    let mut terminal = Vec::new();
    for (i, o) in outs.iter().enumerate() {
        errs.push(o.replication_error.abs());
        terminal.push(o.ledger.terminal_value());
        residual = residual.max(o.ledger.budget_residual());
        r.records.push(record([
            ("path", i as f64),
            ("terminal_value", o.ledger.terminal_value()),
            ("replication_error", o.replication_error),
        ]));
    }
    r.exact("median_abs_replication_error", median(&errs));
    r.exact("max_budget_residual", residual);
    tables.push(values_table(&terminal));
    Ok(())
}

fn transaction_costs(c: &ExperimentConfig, r: &mut ExperimentReport, tables: &mut Vec<Table>) -> Run {
    let costs = c.costs();
    let steps = 1usize << level(c)?;
    let n = c.n.unwrap_or(steps);
    let eps = costs.eps.unwrap_or_else(|| default_bandwidth(steps));
    let schedule = CostSchedule::new(costs.k0, costs.alpha, n)?;
    let call = Call {
        strike: c.strike.unwrap_or(c.model.s0()),
    };
    let curvature = call.curvature();
    let paths = dyadic_paths(c.model, c, r)?;
    let outs = paths
        .par_iter()
        .map(|p| {
            let mut h = discretized_hedge(&call, p, n)?;
            let v = value_with_costs(&mut h, p, &schedule)?;
            let f = tc_limit_functional(p, &curvature, costs.k0, eps)?;
            Ok((v, f))
        })
        .collect::<fraclab::Result<Vec<_>>>()?;
    let mut table = Table::new(
        "costs",
        &["path", "frictionless", "cost", "value", "target", "gap", "functional"],
    );
    let (mut gaps, mut abs_gaps, mut funcs, mut ratios) = (vec![], vec![], vec![], vec![]);
    let mut residual: f64 = 0.0;
    for (i, (v, f)) in outs.iter().enumerate() {
        table.push(vec![
            i.to_string(),
            num(v.frictionless),
            num(v.cost),
            num(v.value),
            num(v.target),
            num(v.gap()),
            num(*f),
        ]);
        gaps.push(v.gap());
        abs_gaps.push(v.gap().abs());
        funcs.push(*f);
        if *f > 0.0 {
            ratios.push(v.gap() / f);
        }
        residual = residual.max(v.ledger.budget_residual());
        r.records.push(record([
            ("path", i as f64),
            ("gap", v.gap()),
            ("cost", v.cost),
            ("functional", *f),
            ("trades", v.trades as f64),
        ]));
    }
    r.exact("rate", schedule.rate());
    r.exact("bandwidth", eps);
    r.exact("median_gap", median(&gaps));
    r.exact("median_abs_gap", median(&abs_gaps));
    r.exact("median_functional", median(&funcs));
    if !ratios.is_empty() {
        r.exact("median_gap_to_functional", median(&ratios));
    }
    r.exact("max_budget_residual", residual);
    tables.push(table);
    Ok(())
}

fn kernel_stats(h: HurstIndex, r: &mut ExperimentReport) -> Result<(), CliError> {
    let k = FractionalKernel::new(h)?.constants();
    r.exact("kernel_calibrated_c", k.calibrated);
    r.exact("kernel_molchan_golosov_c", k.molchan_golosov);
    r.exact("kernel_relative_discrepancy", k.relative_discrepancy());
    r.exact("kernel_printed_radicand", k.printed_radicand);
    r.exact("kernel_printed_c", k.printed.unwrap_or(f64::NAN));
    if k.printed.is_none() {
        r.warn(format!(
            "printed kernel constant has a negative radicand ({:.6}) at H = {}; the calibrated constant {:.12} is used",
            k.printed_radicand, k.h, k.calibrated
        ));
    }
    Ok(())
}

fn arbitrage_table(tree: &BinaryTree) -> Table {
    let mut t = Table::new("arbitrage", &["depth", "path", "value", "up", "down", "direction"]);
    for a in tree.arbitrage_nodes() {
        t.push(vec![
            a.depth.to_string(),
            a.mask.to_string(),
            num(a.value),
            num(a.up_child),
            num(a.down_child),
            format!("{:?}", a.direction).to_lowercase(),
        ]);
    }
    t
}

fn tree_table(tree: &BinaryTree) -> Result<Table, CliError> {
    let mut buf = Vec::new();
    tree.write_csv(&mut buf)?;
    let mut rd = csv::Reader::from_reader(buf.as_slice());
    let mut t = Table::new("tree", &["depth", "path", "value"]);
    for row in rd.records() {
        t.push(row?.iter().map(str::to_string).collect());
    }
    Ok(t)
}

fn tree(c: &ExperimentConfig, r: &mut ExperimentReport, tables: &mut Vec<Table>) -> Run {
    let h = hurst(c)?;
    let n = c.n.unwrap_or(16);
    kernel_stats(h, r)?;
    let w = WalkWeights::new(n, h)?;
    match find_arbitrage_node(&w, &Prefix::AllUp) {
        Some(node) => {
            r.exact("arbitrage_depth", node.depth as f64);
            r.exact("arbitrage_margin", node.margin);
            r.exact("arbitrage_verified", if node.verified() { 1.0 } else { 0.0 });
        }
        None => r.exact("arbitrage_depth", f64::NAN),
    }
    let term = terminal_values(&w, c.seed, c.paths);
    r.estimate("terminal_variance", variance_estimate(&term));
    if n <= MAX_EXHAUSTIVE_DEPTH {
        let t = BinaryTree::fractional(&w)?;
        r.exact("arbitrage_nodes", t.arbitrage_nodes().len() as f64);
        tables.push(tree_table(&t)?);
        tables.push(arbitrage_table(&t));
    } else {
        r.warn(format!(
            "depth {n} exceeds the exhaustive cap {MAX_EXHAUSTIVE_DEPTH}; tree dump skipped"
        ));
    }
    Ok(())
}

fn wick_tree(c: &ExperimentConfig, r: &mut ExperimentReport, tables: &mut Vec<Table>) -> Run {
    let h = hurst(c)?;
    let n = c.n.unwrap_or(10);
    kernel_stats(h, r)?;
    let terminal = wick_tree_terminal(n, h)?;
    r.exact("expectation", terminal.expansion.expectation());
    if let Some(leaves) = &terminal.leaves {
        let w = WalkWeights::new(n, h)?;
        let wick = BinaryTree::wick(&w)?;
        let frac = BinaryTree::fractional(&w)?;
        r.exact("leaf_mean", leaves.iter().sum::<f64>() / leaves.len() as f64);
        r.exact("arbitrage_nodes", wick.arbitrage_nodes().len() as f64);
        let ratios: Vec<f64> = leaves.iter().zip(frac.leaves()).map(|(x, s)| x / s).collect();
        let spread = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        r.exact("wick_to_fractional_ratio_spread", spread);
        let mut t = Table::new("leaves", &["path", "wick", "fractional"]);
        for (i, (x, s)) in leaves.iter().zip(frac.leaves()).enumerate() {
            t.push(vec![i.to_string(), num(*x), num(*s)]);
        }
        tables.push(t);
        tables.push(tree_table(&wick)?);
        tables.push(arbitrage_table(&wick));
    } else {
        r.warn("leaf evaluation skipped above the exhaustive cap");
    }
    Ok(())
}

fn paths_table(paths: &[SamplePath]) -> Table {
    let mut t = Table::new("paths", &["replication", "time", "value"]);
    for (i, p) in paths.iter().enumerate() {
        for (time, v) in p.times().iter().zip(p.values()) {
            t.push(vec![i.to_string(), num(*time), num(*v)]);
        }
    }
    t
}

fn aggregate(c: &ExperimentConfig, r: &mut ExperimentReport, tables: &mut Vec<Table>) -> Run {
    let spec = c.renewal();
    let params = c.workload();
    let run = scaled_fluctuation(&spec, &params, c.seed, c.paths)?;
    if let Some(w) = &run.warning {
        r.warn(w.clone());
    }
    let last: Vec<f64> = run.paths.iter().map(|p| p.terminal()).collect();
    r.exact("hurst", run.hurst);
    r.exact("mean_sojourn", spec.mean());
    r.estimate("mean_at_horizon", mean_estimate(&last));
    r.estimate("variance_at_horizon", variance_estimate(&last));
    r.exact(
        "variance_target",
        params.horizon.powf(2.0 * run.hurst),
    );
    if c.paths > 1 {
        let idx = shape_indices(params.steps, params.steps.min(8));
        r.exact("covariance_shape", covariance_shape(&run.paths, &idx, run.hurst)?);
    }
    for (i, v) in last.iter().enumerate() {
        r.records.push(record([("replication", i as f64), ("terminal", *v)]));
    }
    tables.push(paths_table(&run.paths));
    Ok(())
}

fn agents(c: &ExperimentConfig, r: &mut ExperimentReport, tables: &mut Vec<Table>) -> Run {
    let spec = c.agents();
    let params = c.agent_params();
    let runs = (0..c.paths as u64)
        .map(|rep| simulate_agents(&spec, &params, c.seed, rep))
        .collect::<fraclab::Result<Vec<_>>>()?;
    let k = spec.states.len();
    let mut counts = vec![vec![0u64; k]; k];
    for run in &runs {
        for (row, x) in counts.iter_mut().zip(&run.transitions) {
            for (a, b) in row.iter_mut().zip(x) {
                *a += b;
            }
        }
    }
    let h = spec.hurst();
    let paths: Vec<SamplePath> = runs.into_iter().map(|r| r.path).collect();
    r.exact("hurst", h);
    r.exact("mean_mood", spec.mean_mood()?);
    if c.paths > 1 {
        r.exact("fitted_c", fit_constant(&paths, params.steps, h));
        let idx = shape_indices(params.steps, params.steps.min(8));
        r.exact("covariance_shape", covariance_shape(&paths, &idx, h)?);
    }
    for (i, row) in transition_frequencies(&counts).iter().enumerate() {
        for (j, (p_hat, se)) in row.iter().enumerate() {
            r.records.push(record([
                ("from", i as f64),
                ("to", j as f64),
                ("p", spec.transitions[i][j]),
                ("p_hat", *p_hat),
                ("se", *se),
            ]));
        }
    }
    tables.push(paths_table(&paths));
    Ok(())
}

/// Runs a validated configuration.
pub fn execute(c: &ExperimentConfig) -> Result<Outcome, CliError> {
    let start = std::time::Instant::now();
    let mut report = ExperimentReport::new(c.clone());
    let mut tables = Vec::new();
    dispatch(c, &mut report, &mut tables)?;
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(Outcome { report, tables })
}
