use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use ldp_trajstream::allocation::{Division, Strategy};
use ldp_trajstream::eval::{evaluate, EvalConfig};
use ldp_trajstream::grid::BoundingBox;
use ldp_trajstream::harness::ingest::write_records;
use ldp_trajstream::harness::output::write_all;
use ldp_trajstream::harness::{
    generate, ingest, run, GeneratorSpec, InputSource, RunConfig, Variant,
};

#[derive(Parser)]
#[command(
    name = "trajstream",
    version,
    about = "Private trajectory stream synthesis simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect, model and synthesize a stream, then score and write artifacts.
    Run(RunArgs),
    /// Write a generated stream as CSV.
    Generate(GenerateArgs),
    /// Score a synthetic stream CSV against an original one.
    Evaluate(EvaluateArgs),
}

/// Parses a bare enum name through its serde representation.
fn serde_name<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    serde_name(s)
}

fn parse_division(s: &str) -> Result<Division, String> {
    serde_name(s)
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    serde_name(s)
}

fn parse_bbox(s: &str) -> Result<BoundingBox, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [a, b, c, d] => BoundingBox::new(a, b, c, d).map_err(|e| e.to_string()),
        _ => Err("expected min_x,min_y,max_x,max_y".into()),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV with header user_id,timestamp,x,y.
    #[arg(long, conflicts_with = "generator")]
    input: Option<PathBuf>,
    /// JSON generator spec to use as input.
    #[arg(long)]
    generator: Option<PathBuf>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    w: Option<usize>,
    /// Grid side length.
    #[arg(long)]
    k: Option<usize>,
    /// Grid box as min_x,min_y,max_x,max_y.
    #[arg(long, value_parser = parse_bbox)]
    bbox: Option<BoundingBox>,
    /// adaptive, uniform or sample.
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
    /// budget or population.
    #[arg(long, value_parser = parse_division)]
    division: Option<Division>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    kappa: Option<usize>,
    #[arg(long)]
    p_max: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Time-range size of the evaluation queries.
    #[arg(long)]
    phi: Option<u32>,
    /// retrasyn, all_update or no_eq.
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "TRAJSTREAM_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                RunConfig::from_json_file(p).with_context(|| format!("loading {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(p) = self.input {
            cfg.input = InputSource::File(p);
        }
        if let Some(p) = self.generator {
            cfg.input = InputSource::Generator(read_json(&p)?);
        }
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag { cfg.$($field).+ = v; })*
            };
        }
        set!(
            epsilon => epsilon,
            w => w,
            k => grid.k,
            strategy => allocation.strategy,
            division => allocation.division,
            alpha => allocation.alpha,
            kappa => allocation.kappa,
            p_max => allocation.p_max,
            phi => eval.phi,
            variant => variant,
            seed => seed,
        );
        if self.bbox.is_some() {
            cfg.grid.bbox = self.bbox;
        }
        if self.lambda.is_some() {
            cfg.synth.lambda = self.lambda;
        }
        if self.output_dir.is_some() {
            cfg.output_dir = self.output_dir;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// JSON generator spec; defaults are used for missing fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    ticks: Option<u32>,
    #[arg(long)]
    initial_users: Option<usize>,
    #[arg(long)]
    arrivals_per_tick: Option<usize>,
    #[arg(long)]
    quit_prob: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV; stdout when absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    original: PathBuf,
    #[arg(long)]
    synthetic: PathBuf,
    #[arg(long, default_value_t = 6)]
    k: usize,
    /// Grid box as min_x,min_y,max_x,max_y; the original's covering box when absent.
    #[arg(long, value_parser = parse_bbox)]
    bbox: Option<BoundingBox>,
    /// JSON evaluation settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    phi: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let cfg = args.into_config()?;
    let outcome = run(&cfg)?;
    if let Some(dir) = &cfg.output_dir {
        for p in
            write_all(dir, &outcome).with_context(|| format!("writing to {}", dir.display()))?
        {
            eprintln!("wrote {}", p.display());
        }
    }
    println!("{}", serde_json::to_string_pretty(&outcome.report)?);
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let mut spec: GeneratorSpec = match &args.spec {
        Some(p) => read_json(p)?,
        None => GeneratorSpec::default(),
    };
    if let Some(v) = args.k {
        spec.k = v;
    }
    if let Some(v) = args.ticks {
        spec.ticks = v;
    }
    if let Some(v) = args.initial_users {
        spec.initial_users = v;
    }
    if let Some(v) = args.arrivals_per_tick {
        spec.arrivals_per_tick = v;
    }
    if let Some(v) = args.quit_prob {
        spec.quit_prob = v;
    }
    let records = generate(&spec, args.seed)?;
    match &args.output {
        Some(p) => {
            let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            write_records(BufWriter::new(f), &records)?;
        }
        None => write_records(io::stdout().lock(), &records)?,
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let mut eval: EvalConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => EvalConfig::default(),
    };
    if let Some(v) = args.phi {
        eval.phi = v;
    }
    if let Some(v) = args.seed {
        eval.seed = v;
    }
    let original = ingest(&args.original, args.k, args.bbox)?;
    let synthetic = ingest(&args.synthetic, args.k, Some(original.grid.bbox))?;
    if synthetic.last_tick < original.first_tick || synthetic.first_tick > original.last_tick {
        bail!("synthetic stream does not overlap the original time range");
    }
    let (first, last) = (
        original.first_tick.min(synthetic.first_tick),
        original.last_tick.max(synthetic.last_tick),
    );
    let mut orig = original.to_trajectories();
    let mut syn = synthetic.to_trajectories();
    for set in [&mut orig, &mut syn] {
        set.first_tick = first;
        set.last_tick = last;
    }
    let report = evaluate(&orig, &syn, &eval)?;
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, &report)?;
    writeln!(out)?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(a) => cmd_run(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    }
}
