// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use kcpd_core::cost::GramPrefix;
use kcpd_core::ingest::{self, DatasetEntry, EmbedServiceConfig};
use kcpd_core::kernels::{compute_gram, KernelKind};
use kcpd_core::segmentation::{dp_penalized_with, pelt_penalized_with};
use kcpd_core::simulate::{
    self, ChangePointCount, ConcentrationConfig, ExperimentConfig, SimConfig, Spacing,
};
use kcpd_core::{metrics, KcpdError, KernelSpec, PenaltySchedule, Result, Segmentation, VERSION};
use serde_json::{json, Map, Value};

use crate::{
    ConcentrationArgs, EmbedArgs, EvalArgs, Format, KernelArg, KernelOpts, SegmentArgs, SimOpts,
    SimulateArgs, Solver, SweepArgs,
};

const DEFAULT_C_RBF: f64 = 0.05;
const DEFAULT_C_COSINE: f64 = 0.088;

fn invalid(msg: impl Into<String>) -> KcpdError {
    KcpdError::InvalidInput(msg.into())
}

fn kernel_spec(kind: KernelArg, bandwidth: &str) -> Result<KernelSpec> {
    let spec = match kind {
        KernelArg::Cosine => KernelSpec::cosine(),
        KernelArg::Rbf if bandwidth == "median" => KernelSpec::rbf_median(),
        KernelArg::Rbf => KernelSpec::rbf(
            bandwidth
                .parse()
                .map_err(|_| invalid(format!("bandwidth must be `median` or a number, got {bandwidth:?}")))?,
        ),
    };
    spec.validate()?;
    Ok(spec)
}

fn penalty_constant(opts: &KernelOpts) -> f64 {
    opts.c.unwrap_or(match opts.kernel {
        KernelArg::Rbf => DEFAULT_C_RBF,
        KernelArg::Cosine => DEFAULT_C_COSINE,
    })
}

fn schedule(opts: &KernelOpts) -> Result<PenaltySchedule> {
    let s = PenaltySchedule::new(penalty_constant(opts));
    s.validate()?;
    Ok(s)
}

fn emit(out: &Option<PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, content)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(content.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn emit_json(out: &Option<PathBuf>, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    emit(out, &text)
}

/// Adds `version` and `args` to a JSON object.
fn with_context(value: Value, args: &impl serde::Serialize) -> Result<Value> {
    let mut map = match value {
        Value::Object(m) => m,
        other => {
            let mut m = Map::new();
            m.insert("result".into(), other);
            m
        }
    };
    map.insert("version".into(), json!(VERSION));
    map.insert("args".into(), serde_json::to_value(args)?);
    Ok(Value::Object(map))
}

fn is_jsonl(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "jsonl")
}

fn load_sequence(path: &Path, skip_header: bool) -> Result<DatasetEntry> {
    if is_jsonl(path) {
        ingest::load_jsonl(path)
    } else {
        DatasetEntry::new(ingest::load_csv_matrix(path, skip_header)?, None, None)
    }
}

fn load_segmentation(path: &Path) -> Result<Segmentation> {
    if is_jsonl(path) {
        return ingest::load_jsonl(path)?
            .gold
            .ok_or_else(|| invalid(format!("{} has no boundary_after flags", path.display())));
    }
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn segment(args: &SegmentArgs) -> Result<()> {
    let entry = load_sequence(&args.input, args.skip_header)?;
    let spec = kernel_spec(args.kernel.kernel, &args.kernel.bandwidth)?;
    let schedule = schedule(&args.kernel)?;
    let start = Instant::now();
    let seq = if spec.kind == KernelKind::Cosine || args.normalize {
        entry.seq.normalized()?
    } else {
        entry.seq.clone()
    };
    let gram = compute_gram(&seq, &spec)?;
    let prefix = GramPrefix::build(&gram);
    let t = prefix.len();
    let beta = args.beta.unwrap_or_else(|| schedule.beta(t));
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(invalid(format!("beta must be finite and >= 0, got {beta}")));
    }
    let result = match args.solver {
        Solver::Pelt => pelt_penalized_with(&prefix, beta, args.kernel.min_size)?.0,
        Solver::Dp => dp_penalized_with(&prefix, beta, args.kernel.min_size)?,
    };
    let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    log::info!("T = {t}, K = {}, {runtime_ms:.1} ms", result.num_change_points());

    if args.output.format == Some(Format::Csv) {
        let mut csv = String::from("start,end,cost\n");
        for ((s, e), c) in result.segmentation.segments().zip(&result.per_segment_costs) {
            csv.push_str(&format!("{s},{e},{c}\n"));
        }
        return emit(&args.output.out, &csv);
    }
    let mut out = json!({
        "T": t,
        "change_points": result.segmentation.change_points(),
        "K": result.num_change_points(),
        "objective": result.objective,
        "per_segment_costs": result.per_segment_costs,
        "beta": beta,
        "runtime_ms": runtime_ms,
        "config": {
            "kernel": gram.kernel(),
            "C": penalty_constant(&args.kernel),
            "beta_override": args.beta,
            "min_size": args.kernel.min_size,
            "solver": args.solver,
            "normalized": spec.kind == KernelKind::Cosine || args.normalize,
            "penalty_floor": schedule.floor(t),
        },
    });
    if let Some(gold) = &entry.gold {
        out["metrics"] = serde_json::to_value(metrics::evaluate(gold, &result.segmentation, None, None)?)?;
    }
    emit_json(&args.output.out, &with_context(out, args)?)
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let reference = load_segmentation(&args.reference)?;
    let hyp = load_segmentation(&args.hyp)?;
    let report = metrics::evaluate(&reference, &hyp, args.window, args.ell)?;
    if args.output.format == Some(Format::Csv) {
        let csv = format!(
            "pk,window_diff,window,k_true,k_est,k_match,loc_err_est_to_true,loc_err_true_to_est,ell_t\n{},{},{},{},{},{},{},{},{}\n",
            report.pk,
            report.window_diff,
            report.window,
            report.k_true,
            report.k_est,
            report.k_match,
            report.loc_err_est_to_true,
            report.loc_err_true_to_est,
            report.ell_t
        );
        return emit(&args.output.out, &csv);
    }
    let mut value = serde_json::to_value(&report)?;
    value["config"] = json!({ "window": report.window, "ell_t": report.ell_t });
    emit_json(&args.output.out, &with_context(value, args)?)
}

fn sim_config(opts: &SimOpts, t: usize) -> Result<SimConfig> {
    let k = match opts.k.as_str() {
        "auto" => ChangePointCount::Auto,
        other => ChangePointCount::Fixed(
            other
                .parse()
                .map_err(|_| invalid(format!("--K must be `auto` or an integer, got {other:?}")))?,
        ),
    };
    Ok(SimConfig {
        t,
        d: opts.d,
        m: opts.m,
        k,
        min_spacing: opts
            .ell
            .map_or(Spacing::Scaled { floor: 20, divisor: 4 }, Spacing::Fixed),
        mean_shift: opts.delta,
        noise_sigma: opts.sigma,
        seed: opts.seed,
    })
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let base = sim_config(&args.sim, args.t_grid.first().copied().unwrap_or(0))?;
    let config = ExperimentConfig {
        t_grid: args.t_grid.clone(),
        replicates: args.replicates,
        base,
        kernel: kernel_spec(args.kernel.kernel, &args.kernel.bandwidth)?,
        schedule: schedule(&args.kernel)?,
        min_size: args.kernel.min_size,
        record_runtime: args.timing,
    };
    let report = simulate::consistency_experiment(&config)?;
    let csv = report.to_csv()?;
    if let Some(path) = &args.csv_out {
        fs::write(path, &csv)?;
    }
    if args.output.format == Some(Format::Csv) {
        return emit(&args.output.out, &csv);
    }
    let resolved: Vec<Value> = args
        .t_grid
        .iter()
        .map(|&t| {
            let c = base.with_t(t);
            json!({ "T": t, "K": c.resolved_k(), "ell": c.resolved_spacing(), "beta": config.schedule.beta(t) })
        })
        .collect();
    let mut value = serde_json::to_value(&report)?;
    value["resolved"] = Value::Array(resolved);
    emit_json(&args.output.out, &with_context(value, args)?)
}

pub fn sweep(args: &SweepArgs) -> Result<()> {
    let spec = kernel_spec(args.kernel.kernel, &args.kernel.bandwidth)?;
    let table = match &args.input {
        Some(path) => {
            let entry = load_sequence(path, args.skip_header)?;
            let seq = if args.normalize { entry.seq.normalized()? } else { entry.seq };
            let prefix = simulate::prefix_for(&seq, &spec)?;
            simulate::sweep_penalty(&prefix, &args.c_grid, args.kernel.min_size)?
        }
        None => simulate::sweep_penalty_replicates(
            &sim_config(&args.sim, args.t)?,
            &spec,
            &args.c_grid,
            args.replicates,
            args.kernel.min_size,
        )?,
    };
    if !table.monotone {
        log::warn!("detected change points increase somewhere along the C grid");
    }
    if args.output.format == Some(Format::Json) {
        let value = serde_json::to_value(&table)?;
        return emit_json(&args.output.out, &with_context(value, args)?);
    }
    emit(&args.output.out, &table.to_csv())
}

fn load_texts(path: &Path) -> Result<Vec<String>> {
    if !is_jsonl(path) {
        return ingest::load_texts(path);
    }
    let reader = BufReader::new(fs::File::open(path)?);
    let mut texts = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Value = serde_json::from_str(&line).map_err(|e| KcpdError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let text = row["text"].as_str().ok_or_else(|| KcpdError::Parse {
            line: i + 1,
            msg: "missing string field \"text\"".into(),
        })?;
        texts.push(text.to_string());
    }
    Ok(texts)
}

pub fn embed(args: &EmbedArgs) -> Result<()> {
    let texts = load_texts(&args.input)?;
    let config = EmbedServiceConfig {
        endpoint: args.endpoint.clone(),
        model: args.model.clone(),
        token_env: args.token_env.clone(),
        batch_size: args.batch_size,
        max_retries: args.max_retries,
        timeout_secs: args.timeout,
        vector_path: args.vector_path.clone(),
        backoff_base_ms: args.backoff_ms,
        parallel_connections: args.parallel_connections,
    };
    let vectors = ingest::fetch_embeddings(&config, &texts)?;
    let mut out = String::new();
    for (v, t) in vectors.iter().zip(&texts) {
        out.push_str(&serde_json::to_string(&json!({ "vec": v, "text": t }))?);
        out.push('\n');
    }
    emit(&args.out, &out)
}

pub fn concentration(args: &ConcentrationArgs) -> Result<()> {
    let config = ConcentrationConfig {
        n: args.n,
        m: args.m,
        d: args.d,
        sigma: args.sigma,
        kernel: kernel_spec(args.kernel, &args.bandwidth)?,
        x_grid: args.x_grid.clone(),
        replicates: args.replicates,
        seed: args.seed,
    };
    let report = simulate::concentration_check(&config)?;
    if args.output.format == Some(Format::Csv) {
        let mut csv = String::from("x,empirical_tail,stderr,bound,bound_clipped\n");
        for r in &report.rows {
            csv.push_str(&format!("{},{},{},{},{}\n", r.x, r.empirical_tail, r.stderr, r.bound, r.bound_clipped));
        }
        return emit(&args.output.out, &csv);
    }
    emit_json(&args.output.out, &with_context(serde_json::to_value(&report)?, args)?)
}
