use std::fs::File;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::manifest::Manifest;
use super::spec::{BuiltSource, SourceSpec};
use super::*;
use crate::autodiff::ParamStore;
use crate::lower::{
    ck_monotonicity_check, train_lower_bound, ConstantU, HillClimb, LowerBoundModel, LowerConfig, LowerError,
};
use crate::oracles::{
    ba_for_distortion, ba_solve, discretize, reverse_waterfill, water_level, BaConfig, BaSolution, GridSpec,
    OracleError, RdPoint,
};
use crate::sandwich::{run_sandwich, write_envelope_csv, SandwichError};
use crate::sources::{write_binary, write_csv, SourceError, SourceKind};
use crate::stats::Summary;
use crate::upper::{evaluate_rd_point, train_upper_bound, DecoderSpec, PriorSpec, UpperConfig, UpperError};

struct Ctx {
    out: PathBuf,
    jobs: usize,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn create(&self, name: &str) -> Result<File, CliError> {
        Ok(File::create(self.path(name))?)
    }
}

/// Runs the selected or replayed command, writing into `cli.out`.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let mut command = match (&cli.command, &cli.from_manifest) {
        (Some(_), Some(_)) => return Err(CliError::Usage("give either a command or --from-manifest, not both".into())),
        (Some(c), None) => c.clone(),
        (None, Some(p)) => Manifest::read(p)?.run,
        (None, None) => return Err(CliError::Usage("no command given".into())),
    };
    if let Ok(text) = std::env::var("RD_SEED") {
        let seed = text
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("RD_SEED must be an unsigned integer, got {text:?}")))?;
        if let Some(s) = command.seed_mut() {
            *s = seed;
        }
    }
    if cli.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let ctx = Ctx {
        out: cli.out.clone(),
        jobs: cli.jobs,
    };
    if !matches!(command, Command::Stats(_)) {
        std::fs::create_dir_all(&ctx.out)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.jobs)
        .build()
        .map_err(|e| CliError::Other(e.to_string()))?;
    pool.install(|| match &command {
        Command::GenSource(a) => gen_source(&ctx, &command, a),
        Command::Oracle(a) => oracle(&ctx, &command, a),
        Command::TrainUb(a) => train_ub(&ctx, &command, a),
        Command::TrainLb(a) => train_lb(&ctx, &command, a),
        Command::Sandwich(a) => sandwich(&ctx, &command, a),
        Command::DiagCk(a) => diag_ck(&ctx, &command, a),
        Command::Stats(a) => stats(a),
    })
}

fn build_source(text: &str, seed: u64) -> Result<(SourceSpec, BuiltSource), CliError> {
    let spec: SourceSpec = text.parse()?;
    let built = spec.build(seed)?;
    Ok((spec, built))
}

fn is_banana(spec: &SourceSpec) -> bool {
    spec.kind.starts_with("banana")
}

fn source_err(e: SourceError) -> CliError {
    match e {
        SourceError::Io { .. } | SourceError::Exhausted { .. } => CliError::Other(e.to_string()),
        _ => CliError::Usage(e.to_string()),
    }
}

fn oracle_err(e: OracleError) -> CliError {
    match e {
        OracleError::Source(s) => source_err(s),
        _ => CliError::Usage(e.to_string()),
    }
}

fn upper_err(e: UpperError) -> CliError {
    match e {
        UpperError::Invalid(_) => CliError::Usage(e.to_string()),
        UpperError::Source(s) => source_err(s),
        _ => CliError::Numerical(e.to_string()),
    }
}

fn lower_err(e: LowerError) -> CliError {
    match e {
        LowerError::Invalid(_) => CliError::Usage(e.to_string()),
        LowerError::Source(s) => source_err(s),
        _ => CliError::Numerical(e.to_string()),
    }
}

fn sandwich_err(e: SandwichError) -> CliError {
    match e {
        SandwichError::Upper(u) => upper_err(u),
        SandwichError::Lower(l) => lower_err(l),
        SandwichError::Empty(_) => CliError::Numerical(e.to_string()),
        _ => CliError::Other(e.to_string()),
    }
}

fn checked(converged: bool, what: &str) -> Result<(), CliError> {
    if converged {
        Ok(())
    } else {
        Err(CliError::NotConverged(what.to_string()))
    }
}

fn gen_source(ctx: &Ctx, run: &Command, a: &GenSourceArgs) -> Result<(), CliError> {
    let (_, mut b) = build_source(&a.source, a.seed)?;
    let batch = b.source.sample(a.count as usize).map_err(source_err)?;
    let n = b.source.dimension();
    let name = match a.format {
        FileFormat::Csv => "samples.csv",
        FileFormat::Binary => "samples.rds",
    };
    let path = ctx.path(name);
    match a.format {
        FileFormat::Csv => write_csv(&path, n, batch.data.data()),
        FileFormat::Binary => write_binary(&path, n, batch.data.data()),
    }
    .map_err(source_err)?;
    println!("wrote {} rows of dimension {n} to {}", a.count, path.display());
    Manifest::new(run, true, vec![name.into()], json!({ "count": a.count, "dimension": n })).write(&ctx.out)
}

const PAIRINGS: &str = "valid pairings: gaussian, std-gaussian, random-gaussian -> reverse water-filling; \
bernoulli, discrete -> Blahut-Arimoto; banana (or any 1-D/2-D continuous source) with \
--grid-lo, --grid-hi and --grid-bins -> discretized Blahut-Arimoto";

struct CurveRow {
    lambda: f64,
    point: RdPoint,
    converged: bool,
}

fn oracle(ctx: &Ctx, run: &Command, a: &OracleArgs) -> Result<(), CliError> {
    if a.lambda.is_empty() == a.distortion.is_empty() {
        return Err(CliError::Usage("give exactly one of --lambda and --D".into()));
    }
    let (_, b) = build_source(&a.source, a.seed)?;
    let rows = if let Some(vars) = b.source.gaussian_variances() {
        gaussian_curve(&vars, a)?
    } else {
        let grid = (a.grid_lo, a.grid_hi, a.grid_bins);
        let tabular = match (b.source.kind(), grid) {
            (SourceKind::DiscreteTabular { .. }, _) => b.source.clone(),
            (SourceKind::FileSamples { .. }, _) => return Err(CliError::Usage(format!("no oracle for file sources; {PAIRINGS}"))),
            (_, (Some(lo), Some(hi), Some(bins))) => {
                discretize(&b.source, &GridSpec::new(lo, hi, bins).with_samples(a.grid_samples)).map_err(oracle_err)?
            }
            _ => return Err(CliError::Usage(format!("{} needs explicit grid flags; {PAIRINGS}", a.source))),
        };
        ba_curve(&tabular, b.metric, a)?
    };
    let mut w = csv::Writer::from_writer(ctx.create("curve.csv")?);
    w.write_record(["lambda", "D", "R_nats", "R_bits", "converged"])?;
    println!("{:>12} {:>12} {:>12} {:>12}", "lambda", "D", "R_nats", "R_bits");
    for r in &rows {
        w.serialize((r.lambda, r.point.distortion, r.point.rate, r.point.rate_bits(), r.converged))?;
        println!(
            "{:>12.6} {:>12.6} {:>12.6} {:>12.6}",
            r.lambda,
            r.point.distortion,
            r.point.rate,
            r.point.rate_bits()
        );
    }
    w.flush()?;
    let converged = rows.iter().all(|r| r.converged);
    let points: Vec<_> = rows.iter().map(|r| &r.point).collect();
    Manifest::new(run, converged, vec!["curve.csv".into()], json!({ "points": points })).write(&ctx.out)?;
    checked(converged, "Blahut-Arimoto hit its iteration limit")
}

fn gaussian_curve(vars: &[f64], a: &OracleArgs) -> Result<Vec<CurveRow>, CliError> {
    let total: f64 = vars.iter().sum();
    let mut rows = Vec::new();
    for &lambda in &a.lambda {
        if !(lambda > 0.0) {
            return Err(CliError::Usage(format!("lambda must be positive, got {lambda}")));
        }
        let theta = 0.5 / lambda;
        let d: f64 = vars.iter().map(|v| v.min(theta)).sum();
        let rate = reverse_waterfill(vars, d).map_err(oracle_err)?;
        rows.push(CurveRow {
            lambda,
            point: RdPoint::new(d, rate).with_lambda(lambda),
            converged: true,
        });
    }
    for &d in &a.distortion {
        let rate = reverse_waterfill(vars, d).map_err(oracle_err)?;
        let lambda = if d < total { 0.5 / water_level(vars, d).map_err(oracle_err)? } else { 0.0 };
        rows.push(CurveRow {
            lambda,
            point: RdPoint::new(d, rate).with_lambda(lambda),
            converged: true,
        });
    }
    Ok(rows)
}

fn ba_curve(tabular: &crate::sources::Source, metric: crate::sources::DistortionMetric, a: &OracleArgs) -> Result<Vec<CurveRow>, CliError> {
    let SourceKind::DiscreteTabular { support, pmf } = tabular.kind() else {
        unreachable!("tabular source")
    };
    let reproduction: Vec<Vec<f64>> = match a.reproduction_points {
        None => support.clone(),
        Some(count) => {
            if support[0].len() != 1 || count < 2 {
                return Err(CliError::Usage("--reproduction-points needs a 1-D support and at least 2 points".into()));
            }
            let lo = support.iter().map(|s| s[0]).fold(f64::INFINITY, f64::min);
            let hi = support.iter().map(|s| s[0]).fold(f64::NEG_INFINITY, f64::max);
            (0..count).map(|i| vec![lo + (hi - lo) * i as f64 / (count - 1) as f64]).collect()
        }
    };
    let cfg = BaConfig {
        tol: a.tol,
        max_iter: a.max_iter,
    };
    let row = |s: BaSolution| CurveRow {
        lambda: s.point.lambda.unwrap_or(f64::NAN),
        converged: s.converged,
        point: s.point,
    };
    let mut rows = Vec::new();
    for &lambda in &a.lambda {
        rows.push(row(ba_solve(pmf, support, &reproduction, metric, lambda, &cfg).map_err(oracle_err)?));
    }
    for &d in &a.distortion {
        rows.push(row(ba_for_distortion(pmf, support, &reproduction, metric, d, &cfg).map_err(oracle_err)?));
    }
    Ok(rows)
}

fn upper_config(spec: &SourceSpec, n: usize, lambda: f64, seed: u64, o: &UbOptions) -> UpperConfig {
    let latent = o.latent_dim.unwrap_or(n);
    let prior = match o.prior {
        PriorChoice::Gaussian => PriorSpec::FactorizedGaussian,
        PriorChoice::Flow => PriorSpec::AffineCouplingFlow {
            layers: o.flow_layers,
            hidden: o.flow_hidden,
        },
        PriorChoice::Auto if is_banana(spec) => PriorSpec::AffineCouplingFlow {
            layers: o.flow_layers,
            hidden: o.flow_hidden,
        },
        PriorChoice::Auto => PriorSpec::FactorizedGaussian,
    };
    let mlp = DecoderSpec::Mlp {
        hidden: o.decoder_hidden.clone(),
        activation: o.activation,
    };
    let decoder = match o.decoder {
        DecoderChoice::Identity => DecoderSpec::Identity,
        DecoderChoice::Mlp => mlp,
        DecoderChoice::Auto if latent == n => DecoderSpec::Identity,
        DecoderChoice::Auto => mlp,
    };
    UpperConfig {
        prior,
        encoder_hidden: o.encoder_hidden.clone(),
        activation: o.activation,
        decoder,
        batch_size: o.batch_size,
        steps: o.steps,
        lr: o.lr,
        seed,
        m_eval: o.m_eval,
        convergence_window: o.window,
        convergence_tol: o.tol,
        ..UpperConfig::new(lambda, latent)
    }
}

fn write_upper_trace(path: &Path, trace: &[crate::upper::TraceRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "rate_term", "distortion_term", "loss"])?;
    for r in trace {
        w.serialize((r.step, r.rate, r.distortion, r.loss))?;
    }
    w.flush()?;
    Ok(())
}

fn train_ub(ctx: &Ctx, run: &Command, a: &TrainUbArgs) -> Result<(), CliError> {
    let (spec, b) = build_source(&a.source, a.seed)?;
    let cfg = upper_config(&spec, b.source.dimension(), a.lambda, a.seed, &a.ub);
    let trained = match train_upper_bound(&b.source, &cfg) {
        Ok(r) => r,
        Err(UpperError::Diverged { step, cause, trace }) => {
            write_upper_trace(&ctx.path("trace.csv"), &trace)?;
            let msg = format!("diverged at step {step}: {cause}");
            Manifest::failed(run, vec!["trace.csv".into()], &msg).write(&ctx.out)?;
            return Err(CliError::Numerical(msg));
        }
        Err(e) => return Err(upper_err(e)),
    };
    write_upper_trace(&ctx.path("trace.csv"), &trained.trace)?;
    trained
        .model
        .params
        .save_json(&ctx.path("params.json"))
        .map_err(|e| CliError::Other(e.to_string()))?;
    let eval = evaluate_rd_point(&trained.model, &b.source, cfg.m_eval, a.seed).map_err(upper_err)?;
    println!("{}", eval.table_row());
    let results = json!({
        "config": cfg,
        "point": eval.point,
        "rate": eval.rate,
        "distortion": eval.distortion,
        "R_bits": eval.point.rate_bits(),
        "loss_trace": "trace.csv",
    });
    Manifest::new(run, trained.converged, vec!["trace.csv".into(), "params.json".into()], results).write(&ctx.out)?;
    checked(trained.converged, "loss still moving over the trailing window")
}

fn lower_config(spec: &SourceSpec, n: usize, lambda: f64, seed: u64, o: &LbOptions) -> LowerConfig {
    let preset = if is_banana(spec) {
        LowerConfig::banana(n, lambda)
    } else {
        LowerConfig::gaussian(n, lambda)
    };
    LowerConfig {
        k: o.k.map_or(preset.k, |k| k as usize),
        m: o.m as usize,
        top_t: o.top_t as usize,
        steps: o.steps,
        lr: o.lr,
        seed,
        hidden: o.hidden.clone().unwrap_or(preset.hidden.clone()),
        climb: HillClimb {
            max_iter: o.climb_max_iter,
            tol: o.climb_tol,
            merge_radius: o.merge_radius,
        },
        alpha_ema: o.alpha_ema,
        m_eval: o.m_eval,
        convergence_window: o.window,
        convergence_tol: o.tol,
        ..preset
    }
}

fn train_lb(ctx: &Ctx, run: &Command, a: &TrainLbArgs) -> Result<(), CliError> {
    let (spec, b) = build_source(&a.source, a.seed)?;
    let cfg = lower_config(&spec, b.source.dimension(), a.lambda, a.seed, &a.lb);
    let write_trace = |trace: &[crate::lower::LowerTraceRow]| -> Result<(), CliError> {
        let mut w = csv::Writer::from_path(ctx.path("trace.csv"))?;
        w.write_record(["step", "objective", "mean_neg_log_u", "log_alpha", "log_mean_ck"])?;
        for r in trace {
            w.serialize((r.step, r.objective, r.mean_neg_log_u, r.log_alpha, r.log_mean_ck))?;
        }
        w.flush()?;
        Ok(())
    };
    let trained = match train_lower_bound(&b.source, &cfg) {
        Ok(r) => r,
        Err(LowerError::Diverged { step, cause, trace }) => {
            write_trace(&trace)?;
            let msg = format!("diverged at step {step}: {cause}");
            Manifest::failed(run, vec!["trace.csv".into()], &msg).write(&ctx.out)?;
            return Err(CliError::Numerical(msg));
        }
        Err(e) => return Err(lower_err(e)),
    };
    write_trace(&trained.trace)?;
    trained
        .model
        .params
        .save_json(&ctx.path("params.json"))
        .map_err(|e| CliError::Other(e.to_string()))?;
    let e = &trained.estimate;
    let mut w = csv::Writer::from_writer(ctx.create("log_ck.csv")?);
    w.write_record(["draw", "log_ck"])?;
    for (i, v) in e.log_ck.iter().enumerate() {
        w.serialize((i, v))?;
    }
    w.flush()?;
    let line = crate::lower::EnvelopeLine {
        lambda: a.lambda,
        intercept: e.lcb,
    };
    let d_max = (e.lcb.max(0.0) / a.lambda).max(1e-12) * 1.25;
    write_envelope_csv(&[line], d_max, 101, ctx.create("envelope.csv")?).map_err(sandwich_err)?;
    println!(
        "lambda {}  k {}  intercept {:.6} +- {:.6}  LCB90 {:.6}  (ln k = {:.4})",
        a.lambda,
        e.k,
        e.xi.mean,
        e.xi.std_error(),
        e.lcb,
        e.ln_k()
    );
    let results = json!({
        "config": cfg,
        "lambda": a.lambda,
        "k": cfg.k,
        "m": cfg.m,
        "top_t": cfg.top_t,
        "intercept_mean": e.xi.mean,
        "intercept_std": e.xi.std,
        "intercept_lcb": e.lcb,
        "m_eval": e.xi.count,
        "log_alpha": e.log_alpha,
        "ln_k": e.ln_k(),
        "climbs_converged": e.climbs_converged,
        "log_ck_values": "log_ck.csv",
        "loss_trace": "trace.csv",
    });
    let files = ["trace.csv", "params.json", "log_ck.csv", "envelope.csv"].map(String::from).to_vec();
    Manifest::new(run, trained.converged, files, results).write(&ctx.out)?;
    checked(trained.converged, "objective still moving over the trailing window")
}

fn sandwich(ctx: &Ctx, run: &Command, a: &SandwichArgs) -> Result<(), CliError> {
    let (spec, b) = build_source(&a.source, a.seed)?;
    let n = b.source.dimension();
    if a.lambdas.len() < 2 {
        log::warn!("a single slope gives a degenerate gap table");
    }
    let ub = UbOptions {
        latent_dim: a.ub_latent_dim,
        prior: a.ub_prior,
        flow_layers: 4,
        flow_hidden: 64,
        decoder: DecoderChoice::Auto,
        encoder_hidden: a.ub_hidden.clone(),
        decoder_hidden: a.ub_hidden.clone(),
        activation: crate::autodiff::Activation::Softplus,
        batch_size: a.ub_batch_size,
        steps: a.ub_steps,
        lr: a.ub_lr,
        m_eval: a.ub_m_eval,
        window: 5_000,
        tol: 1e-3,
    };
    let lb = LbOptions {
        k: a.lb_k,
        m: a.lb_m.max(1),
        top_t: a.lb_top_t.max(1),
        hidden: a.lb_hidden.clone(),
        steps: a.lb_steps,
        lr: a.lb_lr,
        alpha_ema: 0.8,
        m_eval: a.lb_m_eval,
        climb_max_iter: 500,
        climb_tol: 1e-9,
        merge_radius: 1e-3,
        window: 500,
        tol: 1e-2,
    };
    let first = a.lambdas.first().copied().unwrap_or(1.0);
    let ucfg = upper_config(&spec, n, first, a.seed, &ub);
    let lcfg = lower_config(&spec, n, first, a.seed, &lb);
    let result = run_sandwich(&b.source, &a.lambdas, &ucfg, &lcfg, ctx.jobs).map_err(sandwich_err)?;
    let report = &result.report;

    serde_json::to_writer_pretty(ctx.create("report.json")?, &result)?;
    report.write_gap_csv(ctx.create("gap.csv")?).map_err(sandwich_err)?;
    let mut w = csv::Writer::from_writer(ctx.create("upper.csv")?);
    w.write_record(["lambda", "D", "R_nats", "R_bits", "converged"])?;
    for p in &result.upper.points {
        let pt = &p.evaluation.point;
        w.serialize((pt.lambda.unwrap_or(f64::NAN), pt.distortion, pt.rate, pt.rate_bits(), p.converged))?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_writer(ctx.create("lower.csv")?);
    w.write_record(["lambda", "intercept_mean", "intercept_std_error", "intercept_lcb", "converged"])?;
    for p in &result.lower.points {
        let e = &p.estimate;
        w.serialize((e.lambda, e.xi.mean, e.xi.std_error(), e.lcb, p.converged))?;
    }
    w.flush()?;
    let d_max = report.upper.last().map_or(1.0, |p| p.distortion).max(1e-12);
    write_envelope_csv(&result.lower.lines(), d_max, 200, ctx.create("envelope.csv")?).map_err(sandwich_err)?;

    let mean_bits = report.mean_gap_bits();
    match mean_bits {
        Some(g) => println!("mean gap {:.4} bits over {} grid points", g, report.gap.len()),
        None => println!("no overlapping distortion range"),
    }
    let failures: Vec<String> = result
        .upper
        .failures
        .iter()
        .map(|f| format!("upper lambda={}: {}", f.lambda, f.error))
        .chain(result.lower.failures.iter().map(|f| format!("lower lambda={}: {}", f.lambda, f.error)))
        .collect();
    let converged = failures.is_empty()
        && result.upper.points.iter().all(|p| p.converged)
        && result.lower.points.iter().all(|p| p.converged);
    let results = json!({
        "upper_config": ucfg,
        "lower_config": lcfg,
        "mean_gap_nats": report.mean_gap_nats(),
        "mean_gap_bits": mean_bits,
        "grid_points": report.gap.len(),
        "warnings": report.warnings,
        "failures": failures,
    });
    let files = ["report.json", "gap.csv", "upper.csv", "lower.csv", "envelope.csv"].map(String::from).to_vec();
    let mut manifest = Manifest::new(run, converged, files, results);
    if !failures.is_empty() {
        manifest.status = "numerical-failure".into();
    }
    manifest.write(&ctx.out)?;
    if !failures.is_empty() {
        return Err(CliError::Numerical(failures.join("; ")));
    }
    checked(converged, "at least one model did not converge")
}

fn load_lower_model(path: &Path, dimension: usize) -> Result<LowerBoundModel, CliError> {
    let m = Manifest::read(path)?;
    let Command::TrainLb(a) = &m.run else {
        return Err(CliError::Usage(format!("{} is not a train-lb manifest", path.display())));
    };
    let spec: SourceSpec = a.source.parse()?;
    let cfg = lower_config(&spec, dimension, a.lambda, a.seed, &a.lb);
    let mut model = LowerBoundModel::new(dimension, &cfg).map_err(lower_err)?;
    let params_path = path.parent().unwrap_or(Path::new(".")).join("params.json");
    model.params = ParamStore::load_json(&params_path).map_err(|e| CliError::Usage(format!("{}: {e}", params_path.display())))?;
    Ok(model)
}

fn diag_ck(ctx: &Ctx, run: &Command, a: &DiagCkArgs) -> Result<(), CliError> {
    let (_, b) = build_source(&a.source, a.seed)?;
    if !(a.lambda >= 0.0) {
        return Err(CliError::Usage(format!("lambda must be nonnegative, got {}", a.lambda)));
    }
    let climb = HillClimb::default();
    let rows = match &a.lb_manifest {
        Some(p) => {
            let model = load_lower_model(p, b.source.dimension())?;
            ck_monotonicity_check(&model, &b.source, a.lambda, &a.ks, a.trials, a.seed, &climb)
        }
        None => ck_monotonicity_check(&ConstantU(a.log_u), &b.source, a.lambda, &a.ks, a.trials, a.seed, &climb),
    }
    .map_err(lower_err)?;
    let mut w = csv::Writer::from_writer(ctx.create("ck.csv")?);
    w.write_record(["k", "trials", "mean_ck", "std_error"])?;
    println!("{:>8} {:>8} {:>14} {:>12}", "k", "trials", "mean C_k", "std error");
    for r in &rows {
        w.serialize((r.k, r.trials, r.mean, r.std_error))?;
        println!("{:>8} {:>8} {:>14.6} {:>12.6}", r.k, r.trials, r.mean, r.std_error);
    }
    w.flush()?;
    Manifest::new(run, true, vec!["ck.csv".into()], json!({ "rows": rows })).write(&ctx.out)
}

fn stats(a: &StatsArgs) -> Result<(), CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(a.header)
        .from_path(&a.input)
        .map_err(|e| CliError::Usage(format!("{}: {e}", a.input.display())))?;
    let index = match a.column.parse::<usize>() {
        Ok(i) => i,
        Err(_) if a.header => reader
            .headers()?
            .iter()
            .position(|h| h.trim() == a.column)
            .ok_or_else(|| CliError::Usage(format!("no column named {:?}", a.column)))?,
        Err(_) => return Err(CliError::Usage("named columns need --header".into())),
    };
    let mut values = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let field = rec
            .get(index)
            .ok_or_else(|| CliError::Usage(format!("row {} has no column {index}", line + 1)))?;
        values.push(
            field
                .trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("row {}: cannot parse {field:?}", line + 1)))?,
        );
    }
    if values.is_empty() {
        return Err(CliError::Usage("no values".into()));
    }
    let s = Summary::of(&values);
    let out = json!({
        "count": s.count,
        "mean": s.mean,
        "std": s.std,
        "std_error": s.std_error(),
        "ci95": s.ci95(),
        "lcb90": s.lcb90(),
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}
