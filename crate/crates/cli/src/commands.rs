use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use clap::Parser;
use serde::Serialize;
use serde_json::{json, Value};

use spamm_core::matgen::{gen_cluster_hamiltonian, gen_decay_matrix, ClusterSpec, DecaySpec};
use spamm_core::mmio::{read_matrix_market_file, write_matrix_market, MmFormat, MmSymmetry};
use spamm_core::ordering::{
    apply_row_permutation, locality_metric, morton_permutation, permutation_to_json, reorder_permutation,
    row_permutation, PointCloud, DEFAULT_ORDER,
};
use spamm_core::sim::{
    amdahl_fit, assign_static, build_chare_graph, greedy_comm_balance, parallel_efficiency, simulate_iteration,
    ChareGraph, CostModel, SimReport,
};
use spamm_core::sp2::{energy_error, sp2_solve, SolveReport, Sp2Options};
use spamm_core::{convolution_census, multiply, DenseMatrix, Layout, MultiplyOptions, QuadTreeMatrix, SpammTolerance};

use crate::manifest::RunManifest;
use crate::{
    Cli, Command, CostArgs, CurveArg, Format, GenClusterArgs, GenCommand, GenDecayArgs, ModeArg, MultiplyArgs,
    NumericArgs, OrderArgs, SimArgs, Sp2Args, StatsArgs, SweepCommand, SweepNArgs, SweepPArgs, SweepTauArgs,
};

/// Argument combinations the parser cannot reject on its own.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

struct Ctx<'a> {
    format: Format,
    manifest_path: Option<&'a Path>,
    argv: &'a [String],
}

pub fn run(cli: Cli, argv: &[String]) -> Result<()> {
    let ctx = Ctx { format: cli.format, manifest_path: cli.manifest.as_deref(), argv };
    match cli.command {
        Command::Gen(GenCommand::Decay(a)) => gen_decay(&ctx, a),
        Command::Gen(GenCommand::Cluster(a)) => gen_cluster(&ctx, a),
        Command::Multiply(a) => cmd_multiply(&ctx, a),
        Command::Sp2(a) => cmd_sp2(&ctx, a),
        Command::Order(a) => cmd_order(&ctx, a),
        Command::Sim(a) => cmd_sim(&ctx, a),
        Command::Sweep(SweepCommand::Tau(a)) => sweep_tau(&ctx, a),
        Command::Sweep(SweepCommand::N(a)) => sweep_n(&ctx, a),
        Command::Sweep(SweepCommand::P(a)) => sweep_p(&ctx, a),
        Command::Stats(a) => cmd_stats(&ctx, a),
        Command::Replay(a) => {
            let m = RunManifest::read(&a.manifest_path)?;
            let inner = Cli::try_parse_from(&m.argv)?;
            if matches!(inner.command, Command::Replay(_)) {
                return Err(invalid("a manifest cannot replay another replay"));
            }
            run(inner, &m.argv)
        }
    }
}

fn tolerance(tau: f64) -> Result<SpammTolerance> {
    Ok(SpammTolerance::new(tau)?)
}

fn read_matrix(path: &Path) -> Result<DenseMatrix> {
    read_matrix_market_file(path).with_context(|| format!("reading {}", path.display()))
}

fn read_tree(path: &Path, layout: Layout) -> Result<QuadTreeMatrix> {
    Ok(QuadTreeMatrix::build_from_dense(&read_matrix(path)?, layout)?)
}

fn mm_bytes(m: &DenseMatrix) -> Result<Vec<u8>> {
    let symmetry = if m.is_symmetric() { MmSymmetry::Symmetric } else { MmSymmetry::General };
    let mut buf = Vec::new();
    write_matrix_market(&mut buf, m, MmFormat::Coordinate, symmetry)?;
    Ok(buf)
}

fn write_matrix(path: &Path, m: &DenseMatrix) -> Result<()> {
    std::fs::write(path, mm_bytes(m)?).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(v)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn stdout_json(v: &impl Serialize) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn write_csv<R: Serialize>(path: Option<&Path>, rows: &[R]) -> Result<()> {
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Prints a report as JSON or CSV, or the matrix itself for `--format mm`.
fn emit<R: Serialize>(ctx: &Ctx, report: &impl Serialize, rows: &[R], matrix: Option<&DenseMatrix>) -> Result<()> {
    match ctx.format {
        Format::Json => stdout_json(report),
        Format::Csv => write_csv(None, rows),
        Format::Mm => match matrix {
            Some(m) => Ok(io::stdout().lock().write_all(&mm_bytes(m)?)?),
            None => Err(invalid("this command has no matrix output for --format mm")),
        },
    }
}

fn finish(ctx: &Ctx, manifest: &RunManifest) -> Result<()> {
    if let Some(path) = manifest.write(ctx.manifest_path)? {
        eprintln!("manifest: {}", path.display());
    }
    Ok(())
}

fn multiply_options(n: &NumericArgs) -> Result<MultiplyOptions> {
    Ok(match n.mode {
        ModeArg::Serial => MultiplyOptions { deterministic: n.deterministic, ..MultiplyOptions::serial() },
        ModeArg::Tasked => {
            let workers = match n.workers {
                Some(0) => return Err(invalid("--workers must be at least 1")),
                Some(k) => k,
                None => std::thread::available_parallelism().map(|k| k.get()).unwrap_or(1),
            };
            MultiplyOptions::tasked(workers, n.deterministic)
        }
    })
}

fn numeric_layout(n: &NumericArgs) -> Result<Layout> {
    Ok(Layout::new(n.block_size, n.chunk_size)?)
}

fn gen_decay(ctx: &Ctx, a: GenDecayArgs) -> Result<()> {
    let spec = DecaySpec { kind: a.kind.into(), c: a.c, lambda: a.lambda, seed: a.seed };
    let m = gen_decay_matrix(a.n, &spec)?;
    write_matrix(&a.out, &m)?;
    let mut manifest = RunManifest::new("gen decay", ctx.argv, &a)?;
    manifest.seeds.push(a.seed);
    manifest.output(&a.out);
    manifest.results = json!({ "n": a.n });
    finish(ctx, &manifest)?;
    emit::<()>(ctx, &json!({ "out": a.out, "n": a.n }), &[], Some(&m))
}

fn gen_cluster(ctx: &Ctx, a: GenClusterArgs) -> Result<()> {
    let mut spec = ClusterSpec::new(a.molecules, a.seed);
    spec.rows_per_molecule = a.rows_per_molecule;
    spec.occupied_per_molecule = a.occupied_per_molecule;
    if let Some(v) = a.density {
        spec.box_density = v;
    }
    if let Some(v) = a.length_scale {
        spec.length_scale = v;
    }
    if let Some(v) = a.coupling {
        spec.coupling = v;
    }
    if let Some(v) = a.min_gap {
        spec.min_gap = v;
    }
    let h = gen_cluster_hamiltonian(&spec)?;
    let (f, cloud) = if a.hilbert {
        let point_perm = reorder_permutation(&h.cloud, DEFAULT_ORDER)?;
        let rows = row_permutation(&h.cloud, &point_perm)?;
        (apply_row_permutation(&h.f, &rows)?, h.cloud.permuted(&point_perm)?)
    } else {
        (h.f.clone(), h.cloud.clone())
    };
    write_matrix(&a.out, &f)?;
    let mut manifest = RunManifest::new("gen cluster", ctx.argv, &a)?;
    manifest.parameters = json!({ "args": manifest.parameters, "spec": spec });
    manifest.seeds.push(a.seed);
    manifest.output(&a.out);
    if let Some(xyz) = &a.xyz {
        let mut w = BufWriter::new(File::create(xyz).with_context(|| format!("creating {}", xyz.display()))?);
        cloud.write_xyz(&mut w, &format!("molecules={} seed={}", a.molecules, a.seed))?;
        w.flush()?;
        manifest.output(xyz);
    }
    let summary = json!({
        "n_native": f.n(),
        "n_occ": h.n_occ,
        "guaranteed_gap": h.guaranteed_gap,
        "coupling_scale": h.coupling_scale,
        "box_side": spec.box_side(),
    });
    manifest.results = summary.clone();
    finish(ctx, &manifest)?;
    emit::<()>(ctx, &summary, &[], Some(&f))
}

#[derive(Serialize)]
struct TierRow {
    t: u32,
    visited: u64,
    culled: u64,
}

fn cmd_multiply(ctx: &Ctx, a: MultiplyArgs) -> Result<()> {
    let layout = numeric_layout(&a.numeric)?;
    let tau = tolerance(a.numeric.tau)?;
    let options = multiply_options(&a.numeric)?;
    let ta = read_tree(&a.a, layout)?;
    let tb = match &a.b {
        Some(p) => read_tree(p, layout)?,
        None => ta.clone(),
    };
    let (c, stats) = multiply(&ta, &tb, tau, &options)?;
    let check = c.verify_norms();
    let dense = c.to_dense();
    let mut manifest = RunManifest::new("multiply", ctx.argv, &a)?;
    manifest.input(&a.a);
    if let Some(b) = &a.b {
        manifest.input(b);
    }
    if let Some(out) = &a.out {
        write_matrix(out, &dense)?;
        manifest.output(out);
    }
    let report = json!({ "stats": stats, "norm_check": check });
    if let Some(path) = &a.stats {
        write_json(path, &stats)?;
        manifest.output(path);
    }
    manifest.results = json!({ "leaf_products": stats.leaf_products, "norms_valid": check.valid });
    finish(ctx, &manifest)?;
    let rows: Vec<TierRow> = stats.tiers.iter().map(|t| TierRow { t: t.t, visited: t.visited, culled: t.culled }).collect();
    emit(ctx, &report, &rows, Some(&dense))
}

#[derive(Serialize)]
struct IterRow {
    iteration: usize,
    trace: f64,
    branch: String,
    leaf_products: u64,
    wall_seconds: f64,
}

fn cmd_sp2(ctx: &Ctx, a: Sp2Args) -> Result<()> {
    let layout = numeric_layout(&a.numeric)?;
    let tau = tolerance(a.numeric.tau)?;
    let options = Sp2Options {
        tau,
        max_iter: a.max_iter,
        idempotency_tol: a.idem_tol,
        trace_rel_tol: a.trace_rel_tol,
        multiply: multiply_options(&a.numeric)?,
    };
    let f = read_tree(&a.f, layout)?;
    let (p, state) = sp2_solve(&f, a.n_occ, &options)?;
    let report = SolveReport::new(&state, tau)?;
    let dense = p.to_dense();
    let mut manifest = RunManifest::new("sp2", ctx.argv, &a)?;
    manifest.input(&a.f);
    if let Some(out) = &a.out {
        write_matrix(out, &dense)?;
        manifest.output(out);
    }
    if let Some(path) = &a.report {
        write_json(path, &report)?;
        manifest.output(path);
    }
    manifest.results = json!({ "iterations": report.iterations, "converged": report.converged });
    finish(ctx, &manifest)?;
    if !report.converged {
        eprintln!("warning: {}", report.diagnostic.as_deref().unwrap_or("not converged"));
    }
    let rows: Vec<IterRow> = (0..state.iteration)
        .map(|k| IterRow {
            iteration: k + 1,
            trace: state.trace_history[k + 1],
            branch: format!("{:?}", state.branch_history[k]).to_uppercase(),
            leaf_products: state.leaf_products_per_iteration[k],
            wall_seconds: state.wall_seconds_per_iteration[k],
        })
        .collect();
    emit(ctx, &report, &rows, Some(&dense))
}

fn parse_multiplicities(items: &[String]) -> Result<HashMap<String, usize>> {
    let mut map = HashMap::new();
    for item in items {
        let (label, count) = item
            .split_once('=')
            .ok_or_else(|| invalid(format!("multiplicity '{item}' is not LABEL=ROWS")))?;
        let rows: usize = count.parse().map_err(|_| invalid(format!("bad row count in '{item}'")))?;
        map.insert(label.to_string(), rows);
    }
    Ok(map)
}

fn cmd_order(ctx: &Ctx, a: OrderArgs) -> Result<()> {
    let table = parse_multiplicities(&a.multiplicity)?;
    let file = File::open(&a.xyz).with_context(|| format!("opening {}", a.xyz.display()))?;
    let cloud = PointCloud::read_xyz(BufReader::new(file), &table, a.rows_per_point)?;
    let perm = match a.curve {
        CurveArg::Hilbert => reorder_permutation(&cloud, a.order)?,
        CurveArg::Morton => morton_permutation(&cloud, a.order)?,
    };
    std::fs::write(&a.out, permutation_to_json(&perm) + "\n").with_context(|| format!("writing {}", a.out.display()))?;
    let mut manifest = RunManifest::new("order", ctx.argv, &a)?;
    manifest.input(&a.xyz);
    manifest.output(&a.out);
    let mut summary = json!({ "points": cloud.len(), "rows": cloud.n_rows() });
    let mut reordered = None;
    if let (Some(mpath), Some(rpath)) = (&a.matrix, &a.reordered) {
        let m = read_matrix(mpath)?;
        if m.n() != cloud.n_rows() {
            return Err(invalid(format!("matrix has {} rows but the cloud spans {}", m.n(), cloud.n_rows())));
        }
        let rows = row_permutation(&cloud, &perm)?;
        let r = apply_row_permutation(&m, &rows)?;
        write_matrix(rpath, &r)?;
        manifest.input(mpath);
        manifest.output(rpath);
        summary["locality_before"] = serde_json::to_value(locality_metric(&m, a.threshold)?)?;
        summary["locality_after"] = serde_json::to_value(locality_metric(&r, a.threshold)?)?;
        reordered = Some(r);
    }
    manifest.results = summary.clone();
    finish(ctx, &manifest)?;
    emit::<()>(ctx, &summary, &[], reordered.as_ref())
}

fn cost_model(cost: &CostArgs, block_size: usize, manifest: &mut RunManifest) -> CostModel {
    let per_flop = match cost.per_flop {
        Some(v) => v,
        None => {
            let v = CostModel::calibrated(block_size).per_flop_seconds;
            // pin the measured value so a replay reproduces the run
            manifest.argv.push("--per-flop".into());
            manifest.argv.push(format!("{v:e}"));
            v
        }
    };
    CostModel {
        per_flop_seconds: per_flop,
        per_message_seconds: cost.per_message,
        per_byte_seconds: cost.per_byte,
        phase_overhead_seconds: cost.phase_overhead,
        ..CostModel::default()
    }
}

fn graph_summary(g: &ChareGraph) -> Value {
    json!({
        "n_padded": g.n_padded,
        "chunk_size": g.chunk_size,
        "leaf_tier": g.leaf_tier(),
        "n_chares": g.n_chares(),
        "enabled_per_tier": (0..=g.leaf_tier()).map(|t| g.enabled_count(t)).collect::<Vec<_>>(),
        "leaf_products": g.total_leaf_products(),
    })
}

fn trimmed(mut r: SimReport, full: bool) -> SimReport {
    if !full {
        r.measured_load.clear();
    }
    r
}

fn sim_graph(a: &Path, b: Option<&Path>, tau: f64, block_size: usize, chunk_size: usize) -> Result<ChareGraph> {
    let layout = Layout::with_block(block_size)?;
    let ta = read_tree(a, layout)?;
    let tb = match b {
        Some(p) => read_tree(p, layout)?,
        None => ta.clone(),
    };
    Ok(build_chare_graph(&ta, &tb, tolerance(tau)?, chunk_size)?)
}

fn cmd_sim(ctx: &Ctx, a: SimArgs) -> Result<()> {
    let graph = sim_graph(&a.a, a.b.as_deref(), a.tau, a.block_size, a.chunk_size)?;
    let mut manifest = RunManifest::new("sim", ctx.argv, &a)?;
    let model = cost_model(&a.cost, a.block_size, &mut manifest);
    let weight = a.cost.comm_weight.unwrap_or(model.per_byte_seconds);
    let static_asg = assign_static(&graph, a.p, a.cost.strategy.into())?;
    let first = simulate_iteration(&graph, &static_asg, &model)?;
    let balanced_asg = greedy_comm_balance(&graph, &first, a.p, weight)?;
    let second = simulate_iteration(&graph, &balanced_asg, &model)?;
    let report = json!({
        "graph": graph_summary(&graph),
        "cost_model": model,
        "comm_weight": weight,
        "static": trimmed(first, a.full),
        "balanced": trimmed(second, a.full),
    });
    manifest.input(&a.a);
    if let Some(b) = &a.b {
        manifest.input(b);
    }
    if let Some(out) = &a.out {
        write_json(out, &report)?;
        manifest.output(out);
    }
    manifest.results = json!({ "static_makespan": report["static"]["makespan"], "balanced_makespan": report["balanced"]["makespan"] });
    finish(ctx, &manifest)?;
    emit::<()>(ctx, &report, &[], None)
}

#[derive(Serialize)]
struct TauRow {
    tau: f64,
    energy_error: f64,
    abs_error_per_row: f64,
    iterations: usize,
    converged: bool,
    leaf_products_last: u64,
    leaf_products_total: u64,
    wall_seconds: f64,
}

fn sweep_tau(ctx: &Ctx, a: SweepTauArgs) -> Result<()> {
    let f = read_tree(&a.f, Layout::with_block(a.block_size)?)?;
    let reference = Sp2Options { max_iter: a.max_iter, ..Sp2Options::default() };
    let (p_ref, _) = sp2_solve(&f, a.n_occ, &reference)?;
    let mut rows = Vec::new();
    for &tau in &a.taus {
        let options = Sp2Options { tau: tolerance(tau)?, ..reference };
        let (p, state) = sp2_solve(&f, a.n_occ, &options)?;
        let e = energy_error(&f, &p_ref, &p)?;
        rows.push(TauRow {
            tau,
            energy_error: e,
            abs_error_per_row: e.abs() / f.n_native() as f64,
            iterations: state.iteration,
            converged: state.converged,
            leaf_products_last: state.leaf_products_per_iteration.last().copied().unwrap_or(0),
            leaf_products_total: state.leaf_products_per_iteration.iter().sum(),
            wall_seconds: state.wall_seconds_per_iteration.iter().sum(),
        });
    }
    let mut manifest = RunManifest::new("sweep tau", ctx.argv, &a)?;
    manifest.input(&a.f);
    if let Some(out) = &a.out {
        manifest.output(out);
    }
    write_csv(a.out.as_deref(), &rows)?;
    finish(ctx, &manifest)
}

#[derive(Serialize)]
struct NRow {
    n: usize,
    leaf_products: u64,
    ratio: Option<f64>,
    flop_estimate: u64,
}

fn sweep_n(ctx: &Ctx, a: SweepNArgs) -> Result<()> {
    let tau = tolerance(a.tau)?;
    let layout = Layout::with_block(a.block_size)?;
    let mut rows: Vec<NRow> = Vec::new();
    for &n in &a.ns {
        let spec = DecaySpec { kind: a.kind.into(), c: a.c, lambda: a.lambda, seed: a.seed };
        let m = QuadTreeMatrix::build_from_dense(&gen_decay_matrix(n, &spec)?, layout)?;
        let stats = convolution_census(&m, &m, tau)?;
        let ratio = rows.last().map(|r| stats.leaf_products as f64 / r.leaf_products as f64);
        rows.push(NRow { n, leaf_products: stats.leaf_products, ratio, flop_estimate: stats.flop_estimate });
    }
    let mut manifest = RunManifest::new("sweep n", ctx.argv, &a)?;
    manifest.seeds.push(a.seed);
    if let Some(out) = &a.out {
        manifest.output(out);
    }
    write_csv(a.out.as_deref(), &rows)?;
    finish(ctx, &manifest)
}

#[derive(Serialize)]
struct PRow {
    p: usize,
    static_makespan: Option<f64>,
    makespan: f64,
    efficiency: f64,
    total_messages: Option<u64>,
    cross_pe_messages: Option<u64>,
    busy_imbalance: Option<f64>,
}

fn sweep_p(ctx: &Ctx, a: SweepPArgs) -> Result<()> {
    if a.ps.contains(&0) {
        return Err(invalid("core counts must be positive"));
    }
    let mut manifest = RunManifest::new("sweep p", ctx.argv, &a)?;
    let mut rows = Vec::new();
    if let (Some(ts), Some(tp)) = (a.inject_ts, a.inject_tp) {
        let t1 = ts + tp;
        for &p in &a.ps {
            let t = ts + tp / p as f64;
            rows.push(PRow {
                p,
                static_makespan: None,
                makespan: t,
                efficiency: parallel_efficiency(t1, t, p)?,
                total_messages: None,
                cross_pe_messages: None,
                busy_imbalance: None,
            });
        }
    } else {
        let path = a.a.as_deref().ok_or_else(|| invalid("--a is required without injected timings"))?;
        manifest.input(path);
        let graph = sim_graph(path, None, a.tau, a.block_size, a.chunk_size)?;
        let model = cost_model(&a.cost, a.block_size, &mut manifest);
        let weight = a.cost.comm_weight.unwrap_or(model.per_byte_seconds);
        let serial = simulate_iteration(&graph, &assign_static(&graph, 1, a.cost.strategy.into())?, &model)?;
        for &p in &a.ps {
            let first = simulate_iteration(&graph, &assign_static(&graph, p, a.cost.strategy.into())?, &model)?;
            let second = simulate_iteration(&graph, &greedy_comm_balance(&graph, &first, p, weight)?, &model)?;
            rows.push(PRow {
                p,
                static_makespan: Some(first.makespan),
                makespan: second.makespan,
                efficiency: parallel_efficiency(serial.makespan, second.makespan, p)?,
                total_messages: Some(second.total_messages),
                cross_pe_messages: Some(second.cross_pe_messages),
                busy_imbalance: Some(second.busy_imbalance()),
            });
        }
    }
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.p as f64, r.makespan)).collect();
    let fit = amdahl_fit(&points).ok();
    if let Some(out) = &a.out {
        manifest.output(out);
    }
    write_csv(a.out.as_deref(), &rows)?;
    if let Some(path) = &a.fit {
        write_json(path, &fit)?;
        manifest.output(path);
    } else if a.out.is_some() {
        stdout_json(&fit)?;
    }
    manifest.results = serde_json::to_value(fit)?;
    finish(ctx, &manifest)
}

fn cmd_stats(ctx: &Ctx, a: StatsArgs) -> Result<()> {
    let m = read_tree(&a.a, Layout::with_block(a.block_size)?)?;
    let check = m.verify_norms();
    let occ = m.occupancy_stats(&a.bins)?;
    let records = occ.records();
    let report = json!({
        "n_native": m.n_native(),
        "n_padded": m.n_padded(),
        "depth": m.depth(),
        "leaf_count": m.leaf_count(),
        "norm_check": check,
        "occupancy": records,
        "below": occ.below,
        "above": occ.above,
        "null_leaf_count": occ.null_leaf_count,
    });
    let mut manifest = RunManifest::new("stats", ctx.argv, &a)?;
    manifest.input(&a.a);
    if let Some(out) = &a.out {
        write_json(out, &report)?;
        manifest.output(out);
    }
    finish(ctx, &manifest)?;
    emit(ctx, &report, &records, None)
}
