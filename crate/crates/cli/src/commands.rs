use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use latentfit::autoencoder::{train_three_stage_with, AutoencoderModel, BuildOptions, Stages, ThreeStageConfig};
use latentfit::baselines::{crlb_sigma_f, crlb_sigma_tau, fit_signal, param_names, CrlbInputs, FitResult};
use latentfit::eval::{
    bench_csv, bench_encoder, bench_sizes, default_fit, estimate_distribution, reference_params, run_scan,
    scan_csv, snr_sweep, sweep_csv, BenchConfig, BenchTarget, Feature, Method, Precision, ScanScenario, SweepConfig,
    STANDARD_SIZES,
};
use latentfit::nn::TrainConfig;
use latentfit::signals::{
    gen_signal, make_dataset, rng_stream, Dataset, DatasetSpec, ParamDistribution, ParamSpread, SamplingGrid,
    SignalKind, SignalParams, TRAINING_SNR,
};

use crate::config::{pick, pick_q, RunConfig};
use crate::{
    BenchArgs, Cli, CliError, Command, CrlbArgs, DistArgs, EvalCommand, FitArgs, GenerateArgs, GridArgs, HistArgs,
    ModelCommand, ModelDataArgs, ReconstructArgs, ScanArgs, SweepArgs, TrainArgs, TruthArgs,
};

type Result<T> = std::result::Result<T, CliError>;

struct Ctx {
    cfg: RunConfig,
    seed: u64,
    json: bool,
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = match cli.seed.or(cfg.seed) {
        Some(s) => s,
        None => match std::env::var("LATENTFIT_SEED") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("LATENTFIT_SEED must be an unsigned integer, got '{v}'")))?,
            Err(_) => 0,
        },
    };
    let is_bench = matches!(cli.command, Command::Eval(EvalCommand::Bench(_)));
    let threads = cli.threads.or(cfg.threads).or(is_bench.then_some(1));
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let ctx = Ctx { cfg, seed, json: cli.json };
    match cli.command {
        Command::Generate(a) => generate(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Encode(a) => encode(&ctx, a),
        Command::Reconstruct(a) => reconstruct(&ctx, a),
        Command::Fit(a) => fit(&ctx, a),
        Command::Crlb(a) => crlb(&ctx, a),
        Command::Eval(EvalCommand::Hist(a)) => hist(&ctx, a),
        Command::Eval(EvalCommand::Sweep(a)) => sweep(&ctx, a),
        Command::Eval(EvalCommand::Scan(a)) => scan(&ctx, a),
        Command::Eval(EvalCommand::Bench(a)) => bench(&ctx, a),
        Command::Model(ModelCommand::Inspect { model }) => inspect(&ctx, &model),
    }
}

// ------------------------------------------------------------------ helpers

fn parse_kind(s: &str) -> Result<SignalKind> {
    s.parse().map_err(|e: latentfit::Error| CliError::Usage(e.to_string()))
}

fn kind(flag: &Option<String>, ctx: &Ctx) -> Result<SignalKind> {
    parse_kind(flag.as_deref().or(ctx.cfg.kind.as_deref()).unwrap_or("exp"))
}

fn grid(a: &GridArgs, ctx: &Ctx) -> Result<SamplingGrid> {
    let d = SamplingGrid::default();
    Ok(SamplingGrid::new(
        pick(a.n_samples, ctx.cfg.n_samples, d.n_samples()),
        pick_q(a.sample_rate, ctx.cfg.sample_rate, d.sample_rate()),
    )?)
}

fn dist(a: &DistArgs, ctx: &Ctx) -> Result<ParamDistribution> {
    let d = ParamDistribution::default();
    let c = &ctx.cfg;
    let spread = |base: ParamSpread, mean, cmean, std, cstd| ParamSpread {
        mean: pick_q(mean, cmean, base.mean),
        std: pick_q(std, cstd, base.std),
        ..base
    };
    let dist = ParamDistribution {
        tau: spread(d.tau, a.tau_mean, c.tau_mean, a.tau_std, c.tau_std),
        freq: spread(d.freq, a.freq_mean, c.freq_mean, a.freq_std, c.freq_std),
        phase: spread(d.phase, a.phase_mean, c.phase_mean, a.phase_std, c.phase_std),
    };
    dist.validate()?;
    Ok(dist)
}

/// True parameters for evaluations; unset values come from the reference signal.
fn truth(kind: SignalKind, a: &TruthArgs, ctx: &Ctx) -> Result<SignalParams> {
    let c = &ctx.cfg;
    let tau = a.tau.or(c.tau.map(|q| q.0));
    let freq = a.freq.or(c.freq.map(|q| q.0));
    let phase = a.phase.or(c.phase.map(|q| q.0));
    let mut p = reference_params(kind);
    match &mut p {
        SignalParams::ExpDecay(e) => {
            if freq.is_some() || phase.is_some() {
                return Err(CliError::Usage("--freq and --phase apply to osc models only".into()));
            }
            e.tau = tau.unwrap_or(e.tau);
        }
        SignalParams::DampedOsc(o) => {
            o.tau = tau.unwrap_or(o.tau);
            o.freq = freq.unwrap_or(o.freq);
            o.phase = phase.unwrap_or(o.phase);
        }
    }
    p.validate()?;
    Ok(p)
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("no such file: {}", path.display())))
    }
}

fn format_err(path: &Path, e: latentfit::Error) -> CliError {
    match e {
        latentfit::Error::Format(_) | latentfit::Error::Json(_) => {
            CliError::Usage(format!("{}: {e}", path.display()))
        }
        e => e.into(),
    }
}

fn load_model(path: &Path) -> Result<AutoencoderModel> {
    require_file(path)?;
    AutoencoderModel::load(path).map_err(|e| format_err(path, e))
}

/// Reads a binary dataset, or a JSON one when the file starts with `{`.
fn load_dataset(path: &Path) -> Result<Dataset> {
    require_file(path)?;
    let bytes = std::fs::read(path)?;
    let data = if bytes.first() == Some(&b'{') {
        Dataset::from_json(&String::from_utf8_lossy(&bytes))
    } else {
        Dataset::read_from(bytes.as_slice())
    };
    data.map_err(|e| format_err(path, e))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn to_json(v: &impl Serialize) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(latentfit::Error::from)?;
    s.push('\n');
    Ok(s)
}

fn f(v: f64) -> String {
    format!("{v:e}")
}

fn unit_cols(kind: SignalKind) -> Vec<String> {
    kind.free_params()
        .iter()
        .zip(kind.free_param_units())
        .map(|(n, u)| format!("{n}_{}", u.to_ascii_lowercase()))
        .collect()
}

// ----------------------------------------------------------------- commands

fn generate(ctx: &Ctx, a: GenerateArgs) -> Result<()> {
    let kind = kind(&a.kind, ctx)?;
    let base = DatasetSpec::training(kind, ctx.seed);
    let spec = DatasetSpec {
        n: pick(a.n, ctx.cfg.n, base.n),
        dist: dist(&a.dist, ctx)?,
        grid: grid(&a.grid, ctx)?,
        snr: pick_q(a.snr, ctx.cfg.snr, TRAINING_SNR),
        latent_bound: a.latent_bound.or(ctx.cfg.latent_bound),
        ..base
    };
    let data = make_dataset(&spec)?;
    if ctx.json {
        std::fs::write(&a.out, data.to_json()?)?;
    } else {
        data.save(&a.out)?;
    }
    eprintln!("wrote {} {kind} signals to {}", data.len(), a.out.display());
    Ok(())
}

fn train(ctx: &Ctx, a: TrainArgs) -> Result<()> {
    let c = &ctx.cfg;
    let kind = kind(&a.kind, ctx)?;
    let dist = dist(&a.dist, ctx)?;
    let build = BuildOptions {
        seed: ctx.seed,
        input_init_gain: pick(a.input_init_gain, c.input_init_gain, BuildOptions::default().input_init_gain),
        grid: grid(&a.grid, ctx)?,
        dist,
    };
    let d = ThreeStageConfig::default();
    let stage_epochs = match &a.stage_epochs {
        Some(s) => {
            let v: Vec<usize> = s
                .split(',')
                .map(|x| x.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| CliError::Usage(format!("--stage-epochs expects three integers, got '{s}'")))?;
            <[usize; 3]>::try_from(v)
                .map_err(|_| CliError::Usage(format!("--stage-epochs expects three integers, got '{s}'")))?
        }
        None => c.stage_epochs.unwrap_or(d.stage_epochs),
    };
    let stages = match a.stages.as_deref().or(c.stages.as_deref()).unwrap_or("all") {
        "all" => Stages::ALL,
        "reconstruction" => Stages::RECONSTRUCTION_ONLY,
        s => return Err(CliError::Usage(format!("unknown stages '{s}' (expected all|reconstruction)"))),
    };
    let cfg = ThreeStageConfig {
        n_datasets: pick(a.datasets, c.datasets, d.n_datasets),
        reps_per_dataset: pick(a.reps, c.reps, d.reps_per_dataset),
        stage_epochs,
        train: TrainConfig {
            learning_rate: pick(a.learning_rate, c.learning_rate, d.train.learning_rate),
            batch_size: pick(a.batch_size, c.batch_size, d.train.batch_size),
            seed: ctx.seed,
            ..d.train
        },
        signals_per_dataset: a.signals_per_dataset.or(c.signals_per_dataset),
        snr: pick_q(a.snr, c.snr, d.snr),
        dist,
        latent_bound: pick(a.latent_bound, c.latent_bound, d.latent_bound),
        validation_fraction: pick(a.validation_fraction, c.validation_fraction, d.validation_fraction),
        stages,
    };
    cfg.validate()?;
    let mut model = AutoencoderModel::build(kind, &build)?;
    let report = train_three_stage_with(&mut model, &cfg, |p| {
        eprintln!(
            "progress dataset={} rep={} stage={} epoch={} loss={:e}",
            p.dataset, p.rep, p.stage, p.epochs_done, p.loss
        );
    })?;
    model.save(&a.out)?;
    if let Some(path) = &a.report {
        std::fs::write(path, to_json(&report)?)?;
    }
    eprintln!("trained {kind} model in {:.1} s, saved to {}", report.wall_time_s, a.out.display());
    Ok(())
}

fn encode(ctx: &Ctx, a: ModelDataArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let data = load_dataset(&a.data)?;
    let estimates = model.encode_batch(&data.signals)?;
    let kind = model.kind();
    if ctx.json {
        return emit(a.out.as_deref(), &to_json(&estimates)?);
    }
    let with_truth = data.kind() == kind;
    let cols = unit_cols(kind);
    let mut header = vec!["signal_index".to_string()];
    header.extend(cols.iter().cloned());
    if with_truth {
        header.extend(cols.iter().map(|c| format!("true_{c}")));
    }
    let mut out = header.join(",") + "\n";
    for (i, (est, t)) in estimates.iter().zip(&data.truths).enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(est.free_values().into_iter().map(f));
        if with_truth {
            row.extend(t.free_values().into_iter().map(f));
        }
        out += &(row.join(",") + "\n");
    }
    emit(a.out.as_deref(), &out)
}

fn reconstruct(ctx: &Ctx, a: ReconstructArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let data = load_dataset(&a.data)?;
    let signals = data
        .signals
        .par_iter()
        .map(|s| model.reconstruct(s))
        .collect::<latentfit::Result<Vec<_>>>()?;
    let mse: Vec<f64> = data
        .signals
        .iter()
        .zip(&signals)
        .map(|(x, y)| {
            let n = x.len() as f64;
            x.samples().iter().zip(y.samples()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n
        })
        .collect();
    let out = Dataset {
        spec: data.spec,
        signals,
        truths: data.truths,
    };
    out.save(&a.out)?;
    if ctx.json {
        return emit(None, &to_json(&mse)?);
    }
    let mut text = String::from("signal_index,mse\n");
    for (i, m) in mse.iter().enumerate() {
        text += &format!("{i},{}\n", f(*m));
    }
    emit(None, &text)
}

#[derive(Serialize)]
struct FitRow {
    index: usize,
    result: Option<FitResult>,
    error: Option<String>,
}

fn fit_values(p: &SignalParams) -> Vec<f64> {
    match p {
        SignalParams::ExpDecay(p) => vec![p.amplitude, p.tau, p.offset],
        SignalParams::DampedOsc(p) => vec![p.amplitude, p.tau, p.freq, p.phase, p.offset],
    }
}

fn fit(ctx: &Ctx, a: FitArgs) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let kind = match &a.kind {
        Some(k) => parse_kind(k)?,
        None => data.kind(),
    };
    let rows: Vec<FitRow> = data
        .signals
        .par_iter()
        .enumerate()
        .map(|(index, s)| match fit_signal(kind, s, None) {
            Ok(r) => FitRow { index, result: Some(r), error: None },
            Err(e) => FitRow { index, result: None, error: Some(e.to_string()) },
        })
        .collect();
    let failed = rows.iter().filter(|r| r.result.as_ref().map_or(true, |r| !r.converged)).count();
    if failed > 0 {
        eprintln!("{failed} of {} fits failed or did not converge", rows.len());
    }
    if ctx.json {
        return emit(a.out.as_deref(), &to_json(&rows)?);
    }
    let units = |n: &str| match n {
        "tau" => "_s",
        "freq" => "_hz",
        "phase" => "_rad",
        _ => "",
    };
    let mut header = vec!["signal_index".to_string(), "status".into(), "iterations".into(), "residual_rms".into()];
    for n in param_names(kind) {
        header.push(format!("{n}{}", units(n)));
        header.push(format!("{n}_sigma{}", units(n)));
    }
    let mut out = header.join(",") + "\n";
    for r in &rows {
        let mut row = vec![r.index.to_string()];
        match &r.result {
            Some(res) => {
                row.push(if res.converged { "converged" } else { "not-converged" }.into());
                row.push(res.iterations.to_string());
                row.push(f(res.residual_rms));
                for (v, s) in fit_values(&res.params).into_iter().zip(&res.sigma) {
                    row.push(f(v));
                    row.push(f(*s));
                }
            }
            None => {
                row.push("failed".into());
                row.extend(std::iter::repeat(String::new()).take(2 + 2 * param_names(kind).len()));
            }
        }
        out += &(row.join(",") + "\n");
    }
    emit(a.out.as_deref(), &out)
}

fn crlb(ctx: &Ctx, a: CrlbArgs) -> Result<()> {
    let g = grid(&a.grid, ctx)?;
    let snr = a
        .snr
        .or(ctx.cfg.snr.map(|q| q.0))
        .ok_or_else(|| CliError::Usage("crlb needs --snr".into()))?;
    let tau = a
        .tau
        .or(ctx.cfg.tau.map(|q| q.0))
        .ok_or_else(|| CliError::Usage("crlb needs --tau".into()))?;
    let inputs = CrlbInputs {
        snr,
        f_bw: a.fbw.unwrap_or(g.sample_rate()),
        t_m: a.tm.unwrap_or(g.duration()),
        tau,
    };
    let sigma_f = crlb_sigma_f(&inputs)?;
    let sigma_tau = crlb_sigma_tau(&inputs)?;
    if ctx.json {
        #[derive(Serialize)]
        struct Out {
            sigma_f_hz: f64,
            sigma_tau_s: f64,
        }
        return emit(None, &to_json(&Out { sigma_f_hz: sigma_f, sigma_tau_s: sigma_tau })?);
    }
    emit(None, &format!("sigma_f_hz,sigma_tau_s\n{},{}\n", f(sigma_f), f(sigma_tau)))
}

fn hist(ctx: &Ctx, a: HistArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let kind = model.kind();
    let truth = truth(kind, &a.truth, ctx)?;
    let param = a.param.as_deref().unwrap_or("tau");
    let j = kind
        .free_params()
        .iter()
        .position(|p| *p == param)
        .ok_or_else(|| CliError::Usage(format!("{kind} has no parameter '{param}' (have {:?})", kind.free_params())))?;
    let method = match a.method.as_deref().unwrap_or("autoencoder") {
        "autoencoder" | "ae" => Method::Autoencoder,
        "least-squares" | "ls" => Method::LeastSquares,
        m => return Err(CliError::Usage(format!("unknown method '{m}' (expected autoencoder|least-squares)"))),
    };
    let n = pick(a.n, ctx.cfg.n, 1000);
    let snr = pick_q(a.snr, ctx.cfg.snr, 32.0);
    let seed = ctx.seed;
    let estimates: Vec<Option<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_stream(seed, i as u64);
            let s = gen_signal(&truth, model.grid(), snr, &mut rng)?;
            Ok(match method {
                Method::Autoencoder => model.encode(&s).ok().map(|p| p.free_values()[j]),
                Method::LeastSquares => match fit_signal(kind, &s, None) {
                    Ok(r) if r.converged => Some(r.params.free_values()[j]),
                    _ => None,
                },
            })
        })
        .collect::<latentfit::Result<_>>()?;
    let ok: Vec<f64> = estimates.iter().flatten().copied().collect();
    if ok.len() < n {
        eprintln!("{} of {n} estimates failed", n - ok.len());
    }
    let summary = estimate_distribution(&ok, truth.free_values()[j])?;
    eprintln!(
        "{method} {param}: n={} mean offset={:e} std={:e}{}",
        summary.n,
        summary.mean,
        summary.stddev,
        summary
            .fit
            .as_ref()
            .map(|g| format!(" gaussian centre={:e}({:e}) fwhm={:e}", g.center, g.center_err, g.fwhm))
            .unwrap_or_default()
    );
    if ctx.json {
        return emit(a.out.as_deref(), &to_json(&summary)?);
    }
    emit(a.out.as_deref(), &summary.histogram_csv(kind.free_param_units()[j]))
}

fn sweep(ctx: &Ctx, a: SweepArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let kind = model.kind();
    let truth = truth(kind, &a.truth, ctx)?;
    let mut cfg = SweepConfig::standard_grid(truth, pick(a.n_per_point, ctx.cfg.n_per_point, 1000), ctx.seed);
    if let Some(s) = a.snrs.or(ctx.cfg.snrs.as_ref().map(|v| v.iter().map(|q| q.0).collect())) {
        cfg.snrs = s;
    }
    let rows = snr_sweep(&model, &default_fit(kind), &cfg)?;
    for r in rows.iter().filter(|r| r.flagged) {
        eprintln!("warning: {} failed {} of {} estimates at SNR {}", r.method, r.failures, r.failures + r.n_ok, r.snr);
    }
    if ctx.json {
        return emit(a.out.as_deref(), &to_json(&rows)?);
    }
    emit(a.out.as_deref(), &sweep_csv(&rows, kind))
}

fn scan(ctx: &Ctx, a: ScanArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let kind = model.kind();
    let baseline = truth(kind, &a.truth, ctx)?;
    let feature = match a.feature.as_deref().or(ctx.cfg.feature.as_deref()) {
        None if kind == SignalKind::DampedOsc => Feature::CottonEffect,
        None | Some("lorentzian") => Feature::LorentzianAbsorption,
        Some("cotton") => Feature::CottonEffect,
        Some(s) => return Err(CliError::Usage(format!("unknown feature '{s}' (expected lorentzian|cotton)"))),
    };
    let base = match feature {
        Feature::LorentzianAbsorption => ScanScenario::lorentzian(baseline),
        Feature::CottonEffect => ScanScenario::cotton(baseline),
    };
    let scenario = ScanScenario {
        snr: pick_q(a.snr, ctx.cfg.snr, base.snr),
        ..base
    };
    let n = pick(a.n_per_point, ctx.cfg.n_per_point, 100);
    let rows = run_scan(&model, &default_fit(kind), &scenario, n, ctx.seed)?;
    if ctx.json {
        return emit(a.out.as_deref(), &to_json(&rows)?);
    }
    emit(a.out.as_deref(), &scan_csv(&rows, kind))
}

fn bench(ctx: &Ctx, a: BenchArgs) -> Result<()> {
    let d = BenchConfig::default();
    let cfg = BenchConfig {
        batch_size: pick(a.batch_size, ctx.cfg.n, d.batch_size),
        repetitions: pick(a.repetitions, ctx.cfg.repetitions, d.repetitions),
        warmup: pick(a.warmup, ctx.cfg.warmup, d.warmup),
        seed: ctx.seed,
        parallel: a.parallel,
        precision: match a.precision.as_deref().unwrap_or("f64") {
            "f64" => Precision::F64,
            "f32" => Precision::F32,
            p => return Err(CliError::Usage(format!("unknown precision '{p}' (expected f64|f32)"))),
        },
    };
    let mut reports = Vec::new();
    if a.noop {
        reports.push(bench_encoder(&BenchTarget::Noop, &cfg)?);
    }
    match &a.model {
        Some(p) => {
            let model = load_model(p)?;
            reports.push(bench_encoder(&BenchTarget::Model(&model), &cfg)?);
        }
        None => reports.extend(bench_sizes(STANDARD_SIZES, &cfg)?),
    }
    for r in &reports {
        eprintln!("{}: {} FLOPs, {:.0} signals/s", r.description, r.flops, r.rate_hz);
    }
    if ctx.json {
        return emit(a.out.as_deref(), &to_json(&reports)?);
    }
    emit(a.out.as_deref(), &bench_csv(&reports))
}

fn inspect(ctx: &Ctx, path: &Path) -> Result<()> {
    let model = load_model(path)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        kind: SignalKind,
        trained: bool,
        widths: Vec<usize>,
        latent_layer: usize,
        encoder_flops: u64,
        n_samples: usize,
        sample_rate_hz: f64,
        mapping: &'a latentfit::autoencoder::LatentMapping,
    }
    let s = Summary {
        kind: model.kind(),
        trained: model.is_trained(),
        widths: model.network().widths(),
        latent_layer: model.latent_layer(),
        encoder_flops: model.encoder_flops(),
        n_samples: model.grid().n_samples(),
        sample_rate_hz: model.grid().sample_rate(),
        mapping: model.mapping(),
    };
    if ctx.json {
        return emit(None, &to_json(&s)?);
    }
    let mut out = format!(
        "kind: {}\ntrained: {}\nwidths: {}\nlatent layer: {}\nencoder FLOPs: {}\ngrid: {} samples at {:e} Hz\n",
        s.kind,
        s.trained,
        s.widths.iter().map(usize::to_string).collect::<Vec<_>>().join("-"),
        s.latent_layer,
        s.encoder_flops,
        s.n_samples,
        s.sample_rate_hz
    );
    for ax in model.mapping().axes() {
        out += &format!("latent {}: mean {:e}, scale {:e}\n", ax.name, ax.mean, ax.spread);
    }
    emit(None, &out)
}
