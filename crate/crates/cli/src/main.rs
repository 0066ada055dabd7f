//! `repurpose` command-line tool.

mod verify;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use repurpose_core::partition::model_cross_edges;
use repurpose_core::repurpose::{direct_sparsify, repurpose_model_with, PipelineOptions, RepurposedModel};
use repurpose_core::simulator::{speedup_report, write_speedup_csv};
use repurpose_core::synth::random_batch;
use repurpose_core::tensor::max_relative_error;
use repurpose_core::{
    distributed_forward, error_certificate, load_model, shard_model, simulate, Error, ExecMode,
    PartitionSpec, PlatformConfig, RepurposeConfig, SequentialModel, Workload,
};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "repurpose", version, about = "Restructure dense networks for multi-worker inference")]
struct Cli {
    /// Seed for every random draw (probe batches, verification instances).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print only errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Reassign neurons to workers and prune cross-worker weights.
    Repurpose(RepurposeArgs),
    /// Prune cross-worker weights without moving any neuron.
    Sparsify(SparsifyArgs),
    /// Check the algorithms against brute-force oracles.
    Verify(VerifyArgs),
    /// Estimate compute and communication time on a platform.
    Simulate(SimulateArgs),
    /// Per-layer nonzero and cross-edge counts.
    Stats(ModelArgs),
    /// Run the sharded model and compare it to the monolithic one.
    Forward(ForwardArgs),
}

#[derive(Debug, Args)]
#[group(id = "placement", required = true, multiple = false)]
struct Placement {
    /// Partition spec JSON.
    #[arg(long, group = "placement")]
    partition: Option<PathBuf>,
    /// Balanced split over this many workers.
    #[arg(long, group = "placement")]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Model directory (manifest.json plus tensor files).
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    placement: Placement,
}

#[derive(Debug, Args)]
#[group(id = "budget", required = true, multiple = false)]
struct Budget {
    /// Extra penalty on cross-worker weights.
    #[arg(long, group = "budget")]
    eta2: Option<f64>,
    /// Per-layer squared deviation budget; eta2 is calibrated to it.
    #[arg(long, group = "budget")]
    epsilon: Option<f64>,
}

#[derive(Debug, Args)]
struct RepurposeArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Penalty on every kept weight.
    #[arg(long, default_value_t = 0.0)]
    eta1: f64,
    #[command(flatten)]
    budget: Budget,
    /// Keep output neurons in their original order.
    #[arg(long)]
    pin_output: bool,
    /// Probe samples used to measure the certificate's signal bound.
    #[arg(long, default_value_t = 64)]
    probe_samples: usize,
}

#[derive(Debug, Args)]
struct SparsifyArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0.0)]
    eta1: f64,
    #[command(flatten)]
    budget: Budget,
    #[arg(long, default_value_t = 64)]
    probe_samples: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VerifyMode {
    Lemma1,
    Assignment,
    Bound,
    Exec,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    mode: VerifyMode,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Swap the in-block and cross thresholds in the checked column cost.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// `datacenter`, `edge` or a path to a platform JSON file.
    #[arg(long, default_value = "datacenter")]
    platform: String,
    #[arg(long, default_value_t = 8192)]
    neurons: usize,
    #[arg(long, default_value_t = 2)]
    nodes: usize,
    /// Fraction of cross-block weights removed.
    #[arg(long, default_value_t = 0.0)]
    sparsity: f64,
    #[arg(long, default_value_t = 5)]
    layers: usize,
    /// Report speedups per flavor averaged over 2..=nodes instead.
    #[arg(long)]
    sweep: bool,
}

#[derive(Debug, Args)]
struct ForwardArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Batch size of the random input.
    #[arg(long, default_value_t = 8)]
    samples: usize,
    /// Run workers one after another instead of in parallel.
    #[arg(long)]
    sequential: bool,
}

/// Outcome of a command that ran to completion.
enum Status {
    Ok,
    Mismatch,
}

struct Ctx {
    seed: u64,
    out: Option<PathBuf>,
    quiet: bool,
}

impl Ctx {
    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }

    fn out_dir(&self) -> anyhow::Result<&Path> {
        let dir = self.out.as_deref().ok_or_else(|| Error::Config("--out <dir> is required".into()))?;
        fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
        Ok(dir)
    }

    fn out_file(&self, name: &str) -> anyhow::Result<Option<BufWriter<File>>> {
        if self.out.is_none() {
            return Ok(None);
        }
        let path = self.out_dir()?.join(name);
        let f = File::create(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
        Ok(Some(BufWriter::new(f)))
    }
}

fn load(args: &ModelArgs) -> anyhow::Result<(SequentialModel, PartitionSpec)> {
    let model = load_model(&args.model)?;
    let spec = match (&args.placement.partition, args.placement.workers) {
        (Some(path), _) => PartitionSpec::load(path)?,
        (None, Some(p)) => PartitionSpec::balanced(p, &model.widths())?,
        (None, None) => unreachable!("clap requires one placement flag"),
    };
    spec.validate(&model)?;
    Ok((model, spec))
}

fn print_json(value: &impl Serialize) -> anyhow::Result<()> {
    let mut stdout = io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, value)?;
    writeln!(stdout)?;
    Ok(())
}

fn resolve_budget(
    ctx: &Ctx,
    model: &SequentialModel,
    spec: &PartitionSpec,
    eta1: f64,
    budget: &Budget,
    opts: PipelineOptions,
) -> anyhow::Result<RepurposeConfig> {
    Ok(match (budget.eta2, budget.epsilon) {
        (Some(eta2), _) => RepurposeConfig::new(eta1, eta2)?,
        (None, Some(eps)) => {
            let cfg = repurpose_core::repurpose::calibrate_eta2_with(model, spec, eta1, eps, opts)?;
            ctx.say(format!("calibrated eta2 = {:.6e} for epsilon = {eps}", cfg.eta2));
            cfg
        }
        (None, None) => unreachable!("clap requires one budget flag"),
    })
}

fn finish_restructure(
    ctx: &Ctx,
    original: &SequentialModel,
    rep: &RepurposedModel,
    probe_samples: usize,
) -> anyhow::Result<Status> {
    let out = ctx.out_dir()?;
    let probe = random_batch(&mut ctx.rng(), original.widths()[0], probe_samples.max(1), 1.0);
    let cert = error_certificate(original, rep, &probe)?;
    rep.save(out, Some(&cert))?;
    ctx.say("layer  cross_before  cross_after  deviation");
    for l in 0..rep.cross_edges_after.len() {
        ctx.say(format!(
            "{l:>5}  {:>12}  {:>11}  {:.6e}",
            rep.cross_edges_before[l], rep.cross_edges_after[l], rep.per_layer_deviation[l]
        ));
    }
    ctx.say(format!(
        "certificate: tau = {:.6}, B = {:.6}, epsilon = {:.6e}, bound = {:.6e}, probe max error = {:.6e}",
        cert.tau,
        cert.b,
        cert.epsilon,
        cert.bound,
        cert.sample_errors.iter().copied().fold(0.0, f64::max)
    ));
    ctx.say(format!("wrote {}", out.display()));
    Ok(Status::Ok)
}

fn cmd_repurpose(ctx: &Ctx, args: &RepurposeArgs) -> anyhow::Result<Status> {
    let (model, spec) = load(&args.model)?;
    let opts = PipelineOptions { pin_output: args.pin_output };
    let cfg = resolve_budget(ctx, &model, &spec, args.eta1, &args.budget, opts)?;
    let rep = repurpose_model_with(&model, &spec, &cfg, opts)?;
    finish_restructure(ctx, &model, &rep, args.probe_samples)
}

fn cmd_sparsify(ctx: &Ctx, args: &SparsifyArgs) -> anyhow::Result<Status> {
    let (model, spec) = load(&args.model)?;
    let cfg = match (args.budget.eta2, args.budget.epsilon) {
        (Some(eta2), _) => RepurposeConfig::new(args.eta1, eta2)?,
        // The baseline never moves neurons; bisect on its own deviation.
        _ => calibrate_baseline(&model, &spec, args.eta1, args.budget.epsilon.unwrap())?,
    };
    let rep = direct_sparsify(&model, &spec, &cfg)?;
    finish_restructure(ctx, &model, &rep, args.probe_samples)
}

fn calibrate_baseline(
    model: &SequentialModel,
    spec: &PartitionSpec,
    eta1: f64,
    epsilon: f64,
) -> anyhow::Result<RepurposeConfig> {
    let feasible = |eta2: f64| -> anyhow::Result<bool> {
        let rep = direct_sparsify(model, spec, &RepurposeConfig::new(eta1, eta2)?)?;
        Ok(rep.per_layer_deviation.iter().all(|d| d * d <= epsilon))
    };
    let upper = model.dense_layers()?.iter().map(|d| d.weight.max_abs().powi(2)).fold(0.0, f64::max);
    if feasible(upper)? {
        return Ok(RepurposeConfig::new(eta1, upper)?);
    }
    if !feasible(0.0)? {
        return Err(Error::Infeasible(format!("eta1 = {eta1} alone exceeds the budget {epsilon}")).into());
    }
    let (mut lo, mut hi) = (0.0, upper);
    while hi - lo > 1e-3 * hi {
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(RepurposeConfig::new(eta1, lo)?)
}

#[derive(Serialize)]
struct LayerStats {
    layer: usize,
    rows: usize,
    cols: usize,
    nonzeros: usize,
    cross_edges: usize,
    cross_fraction: f64,
}

fn cmd_stats(ctx: &Ctx, args: &ModelArgs) -> anyhow::Result<Status> {
    let (model, spec) = load(args)?;
    let cross = model_cross_edges(&model, &spec)?;
    let stats: Vec<LayerStats> = model
        .dense_layers()?
        .iter()
        .zip(&cross)
        .enumerate()
        .map(|(layer, (d, &cross_edges))| {
            let nonzeros = d.weight.count_nonzero();
            LayerStats {
                layer,
                rows: d.weight.rows(),
                cols: d.weight.cols(),
                nonzeros,
                cross_edges,
                cross_fraction: if nonzeros == 0 { 0.0 } else { cross_edges as f64 / nonzeros as f64 },
            }
        })
        .collect();
    if !ctx.quiet {
        print_json(&stats)?;
    }
    if let Some(f) = ctx.out_file("stats.json")? {
        serde_json::to_writer_pretty(f, &stats)?;
    }
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct ForwardSummary {
    max_relative_error: f64,
    comm_values: u64,
    multiplies_per_worker: Vec<u64>,
}

const FORWARD_TOLERANCE: f64 = 1e-9;

fn cmd_forward(ctx: &Ctx, args: &ForwardArgs) -> anyhow::Result<Status> {
    let (model, spec) = load(&args.model)?;
    let sharded = shard_model(&model, &spec)?;
    let x = random_batch(&mut ctx.rng(), model.widths()[0], args.samples.max(1), 1.0);
    let mode = if args.sequential { ExecMode::Sequential } else { ExecMode::Parallel };
    let dist = distributed_forward(&sharded, &x, mode)?;
    let err = max_relative_error(&dist.concat()?, &model.output(&x)?);
    let summary = ForwardSummary {
        max_relative_error: err,
        comm_values: dist.comm.total_values(),
        multiplies_per_worker: (0..spec.workers).map(|k| dist.worker_multiplies(k)).collect(),
    };
    if !ctx.quiet {
        print_json(&summary)?;
    }
    if let Some(f) = ctx.out_file("comm.csv")? {
        dist.comm.write_csv(f)?;
    }
    if err <= FORWARD_TOLERANCE {
        Ok(Status::Ok)
    } else {
        eprintln!("distributed output differs from monolithic by {err:e}");
        Ok(Status::Mismatch)
    }
}

const SWEEP_FLAVORS: [f64; 4] = [0.5, 0.75, 0.9, 0.99];

fn cmd_simulate(ctx: &Ctx, args: &SimulateArgs) -> anyhow::Result<Status> {
    let platform = PlatformConfig::resolve(&args.platform)?;
    if args.sweep {
        let nodes: Vec<usize> = (2..=args.nodes.max(2)).collect();
        let rows = speedup_report(&platform, args.neurons, &SWEEP_FLAVORS, &nodes)?;
        if !ctx.quiet {
            print_json(&rows)?;
        }
        if let Some(f) = ctx.out_file("speedup.csv")? {
            write_speedup_csv(&rows, f)?;
        }
        return Ok(Status::Ok);
    }
    let workload = Workload { layers: args.layers, ..Workload::new(args.neurons, args.nodes, args.sparsity) };
    let report = simulate(&platform, &workload)?;
    if !ctx.quiet {
        print_json(&report)?;
    }
    if let Some(f) = ctx.out_file("simulate.csv")? {
        report.write_csv(f, true)?;
    }
    Ok(Status::Ok)
}

fn run(cli: &Cli) -> anyhow::Result<Status> {
    let ctx = Ctx { seed: cli.seed, out: cli.out.clone(), quiet: cli.quiet };
    match &cli.command {
        Command::Repurpose(a) => cmd_repurpose(&ctx, a),
        Command::Sparsify(a) => cmd_sparsify(&ctx, a),
        Command::Verify(a) => verify::run(&ctx, a),
        Command::Simulate(a) => cmd_simulate(&ctx, a),
        Command::Stats(a) => cmd_stats(&ctx, a),
        Command::Forward(a) => cmd_forward(&ctx, a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Infeasible(_)) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Mismatch) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
