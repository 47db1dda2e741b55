//! Command-line front end: decode, simulate, grid search, dataset generation
//! and benchmarking.

mod lm_spec;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use refdecode::harness::report::{
    write_bench_csv, write_compression_pivot, write_grid_csv, write_grid_json, write_stats_csv,
};
use refdecode::harness::synth::{gen_synthetic, SynthParams};
use refdecode::harness::tokenizer::ByteTokenizer;
use refdecode::harness::{
    benchmark, decode_sample, grid_search, load_dataset, sample_config, save_dataset, simulate_samples,
    DatasetSample, HarnessError, Scenario,
};
use refdecode::simulator::write_traces_csv;
use refdecode::{aggregate_stats, stepwise_decode, DecodeConfig, DecodeTrace, ReferenceSet, TokenId, TokenSeq};

use lm_spec::LmSpec;

#[derive(Parser, Debug)]
#[command(name = "refdecode", version, about = "Reference-accelerated lossless greedy decoding")]
struct Cli {
    /// Seed for tie-breaking and generation.
    #[arg(long, global = true, env = "REFDECODE_SEED", default_value_t = 0)]
    seed: u64,
    /// Worker threads for per-sample parallelism (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Decode samples with a model, copying from their references.
    Decode(DecodeArgs),
    /// Reconstruct decoding traces from dataset targets, or sweep (n, k).
    Simulate(SimulateArgs),
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Time stepwise against reference-accelerated decoding.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Model spec, e.g. `hash:seed=7,h=3`, `ngram:order=3`, `scripted`.
    #[arg(long, required_unless_present = "lm_config", conflicts_with = "lm_config")]
    lm: Option<LmSpec>,
    /// TOML file with `kind` and the same keys as --lm.
    #[arg(long, value_name = "FILE")]
    lm_config: Option<PathBuf>,
}

impl ModelArgs {
    fn spec(&self) -> anyhow::Result<LmSpec> {
        match (&self.lm, &self.lm_config) {
            (Some(spec), _) => Ok(spec.clone()),
            (None, Some(path)) => LmSpec::from_config_file(path),
            (None, None) => bail!("no model given"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum RefsMode {
    /// Copy from each sample's reference documents.
    Dataset,
    /// Decode without references.
    None,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Dataset file (one JSON sample per line).
    #[arg(long, conflicts_with = "prompt")]
    dataset: Option<PathBuf>,
    /// Inline prompt: space-separated ids, or text with --text.
    #[arg(long, required_unless_present = "dataset")]
    prompt: Option<String>,
    /// Inline reference document (repeatable).
    #[arg(long = "doc", requires = "prompt")]
    docs: Vec<String>,
    /// Inline target, used by the scripted model.
    #[arg(long, requires = "prompt")]
    target: Option<String>,
    #[arg(long, value_enum, default_value_t = RefsMode::Dataset)]
    refs: RefsMode,
    /// Trailing tokens that must match a reference span (n).
    #[arg(long)]
    match_len: usize,
    /// Reference tokens drafted per match (k).
    #[arg(long)]
    copy_len: usize,
    #[arg(long, default_value_t = 256)]
    max_new_tokens: usize,
    /// Stop token (default: 0 for the scripted model, none otherwise).
    #[arg(long)]
    stop_token: Option<TokenId>,
    /// Treat inline prompt, docs and target as text (byte tokenizer) and print decoded text.
    #[arg(long)]
    text: bool,
    /// Also run stepwise decoding and fail if outputs differ.
    #[arg(long)]
    check: bool,
    /// Write per-sample outputs and totals as JSON lines.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Write per-step trace records as CSV.
    #[arg(long, value_name = "FILE")]
    trace_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, required_unless_present = "grid")]
    match_len: Option<usize>,
    #[arg(long, required_unless_present = "grid")]
    copy_len: Option<usize>,
    /// Sweep, e.g. `--grid n=1:3 k=4:18` (ranges inclusive; lists as `n=1,2`).
    #[arg(long, num_args = 2, value_names = ["N_RANGE", "K_RANGE"], conflicts_with_all = ["match_len", "copy_len"])]
    grid: Option<Vec<String>>,
    /// Trace CSV, or the long-form grid table with --grid.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Summary statistics CSV (single run only).
    #[arg(long, value_name = "FILE")]
    stats_out: Option<PathBuf>,
    /// Compression table with one row per k and one column per n (grid only).
    #[arg(long, value_name = "FILE")]
    pivot_out: Option<PathBuf>,
    /// Full grid result as JSON (grid only).
    #[arg(long, value_name = "FILE")]
    json_out: Option<PathBuf>,
}

fn parse_overlap(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    match s.parse::<Scenario>()? {
        Scenario::Custom => Err("custom datasets cannot be generated".into()),
        other => Ok(other),
    }
}

#[derive(Args, Debug, Clone)]
struct SynthArgs {
    #[arg(long, value_parser = parse_scenario, default_value = "retrieval")]
    scenario: Scenario,
    /// Fraction of each target planted in the references, in [0, 1].
    #[arg(long, value_parser = parse_overlap, default_value_t = 0.6)]
    overlap: f64,
    /// Number of samples.
    #[arg(long = "n", default_value_t = 100)]
    num_samples: usize,
    /// Target length (scenario default when omitted).
    #[arg(long)]
    target_len: Option<usize>,
    #[arg(long)]
    num_docs: Option<usize>,
    /// Filler tokens per reference document.
    #[arg(long)]
    doc_len: Option<usize>,
    #[arg(long)]
    query_len: Option<usize>,
    #[arg(long, default_value_t = 32_000)]
    vocab_size: usize,
}

impl SynthArgs {
    fn params(&self, seed: u64) -> SynthParams {
        let d = SynthParams::for_scenario(self.scenario);
        SynthParams {
            num_samples: self.num_samples,
            target_len: self.target_len.unwrap_or(d.target_len),
            num_docs: self.num_docs.unwrap_or(d.num_docs),
            doc_len: self.doc_len.unwrap_or(d.doc_len),
            query_len: self.query_len.unwrap_or(d.query_len),
            overlap: self.overlap,
            vocab_size: self.vocab_size,
            seed,
            ..d
        }
    }
}

#[derive(Args, Debug)]
struct GenArgs {
    #[command(flatten)]
    synth: SynthArgs,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Dataset file; a synthetic set is generated when omitted.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[command(flatten)]
    synth: SynthArgs,
    #[arg(long, default_value_t = 1)]
    match_len: usize,
    #[arg(long, default_value_t = 18)]
    copy_len: usize,
    #[arg(long, default_value_t = 256)]
    max_new_tokens: usize,
    #[arg(long)]
    stop_token: Option<TokenId>,
    /// Repetitions to average over.
    #[arg(long, default_value_t = 3)]
    reps: usize,
    /// Report CSV.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn parse_ids(s: &str) -> anyhow::Result<TokenSeq> {
    refdecode::lm::parse_token_line(s).map_err(anyhow::Error::msg)
}

fn decode_config(match_len: usize, copy_len: usize, max_new: usize, stop: Option<TokenId>, seed: u64) -> anyhow::Result<DecodeConfig> {
    let cfg = DecodeConfig::new(match_len, copy_len, max_new)
        .with_stop_token(stop)
        .with_seed(seed);
    cfg.validate()?;
    Ok(cfg)
}

fn inline_sample(args: &DecodeArgs) -> anyhow::Result<DatasetSample> {
    let tok = ByteTokenizer;
    let encode = |s: &str| -> anyhow::Result<TokenSeq> {
        if args.text {
            Ok(tok.encode(s))
        } else {
            parse_ids(s)
        }
    };
    let prompt = encode(args.prompt.as_deref().unwrap_or_default())?;
    let docs = args.docs.iter().map(|d| encode(d)).collect::<anyhow::Result<Vec<_>>>()?;
    Ok(DatasetSample {
        sample_id: "inline".into(),
        scenario: Scenario::Custom,
        prompt,
        target: args.target.as_deref().map(encode).transpose()?,
        docs: ReferenceSet::from_token_lists(docs),
    })
}

#[derive(Serialize)]
struct DecodeLine<'a> {
    sample_id: &'a str,
    output: &'a [TokenId],
    steps: usize,
    triggers: usize,
    accepted: usize,
    output_tokens: usize,
}

fn summary(t: &DecodeTrace) -> String {
    format!(
        "steps={} triggers={} accepted={} outputs={} compression={:.4}",
        t.totals.num_steps,
        t.totals.num_triggers,
        t.totals.num_accepted,
        t.totals.num_output_tokens,
        t.compression_ratio()
    )
}

fn join_ids(ids: &[TokenId]) -> String {
    ids.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}

fn cmd_decode(args: &DecodeArgs, seed: u64) -> anyhow::Result<()> {
    let spec = args.model.spec()?;
    let stop = args.stop_token.or(spec.default_stop());
    let cfg = decode_config(args.match_len, args.copy_len, args.max_new_tokens, stop, seed)?;
    let samples = match &args.dataset {
        Some(path) => load_dataset(path)?,
        None => vec![inline_sample(args)?],
    };
    let use_refs = args.refs == RefsMode::Dataset;

    let stdout = std::io::stdout();
    let mut so = stdout.lock();
    let mut traces = Vec::with_capacity(samples.len());
    let mut out = args.out.as_deref().map(create).transpose()?;
    for s in &samples {
        let lm = spec.build(s, stop.unwrap_or_default())?;
        let d = decode_sample(&lm, s, &cfg, use_refs)?;
        if args.check {
            let base = stepwise_decode(&lm, &s.prompt, &sample_config(&cfg, s))?;
            if base.output != d.output {
                return Err(HarnessError::Mismatch { sample_id: s.sample_id.clone() }.into());
            }
        }
        writeln!(so, "{}: {}", s.sample_id, summary(&d.trace))?;
        writeln!(so, "  output: {}", join_ids(&d.output))?;
        if args.text {
            writeln!(so, "  text: {:?}", ByteTokenizer.decode(&d.output))?;
        }
        if let Some(w) = out.as_mut() {
            serde_json::to_writer(
                &mut *w,
                &DecodeLine {
                    sample_id: &s.sample_id,
                    output: &d.output,
                    steps: d.trace.totals.num_steps,
                    triggers: d.trace.totals.num_triggers,
                    accepted: d.trace.totals.num_accepted,
                    output_tokens: d.trace.totals.num_output_tokens,
                },
            )?;
            w.write_all(b"\n")?;
        }
        traces.push((s.sample_id.clone(), d.trace));
    }
    if let Some(mut w) = out {
        w.flush()?;
    }
    if let Some(path) = &args.trace_out {
        write_traces_csv(create(path)?, traces.iter().map(|(id, t)| (id.as_str(), t)))?;
    }
    let stats = aggregate_stats(traces.iter().map(|(_, t)| t))?;
    writeln!(
        so,
        "total: samples={} steps/sample={:.4} triggers/sample={:.4} accepted/sample={:.4} outputs/sample={:.4} compression={:.4}",
        traces.len(),
        stats.steps_per_sample,
        stats.triggers_per_sample,
        stats.accepted_per_sample,
        stats.outputs_per_sample,
        stats.compression_ratio
    )?;
    Ok(())
}

fn parse_axis(spec: &str) -> anyhow::Result<(char, Vec<usize>)> {
    let (name, values) = spec
        .split_once('=')
        .with_context(|| format!("grid axis {spec:?} must look like n=1:3 or k=4,8"))?;
    let name = match name.trim() {
        "n" => 'n',
        "k" => 'k',
        other => bail!("unknown grid axis {other:?} (expected n or k)"),
    };
    let values = if let Some((lo, hi)) = values.split_once(':') {
        let (lo, hi): (usize, usize) = (lo.trim().parse()?, hi.trim().parse()?);
        if lo > hi {
            bail!("empty range {spec:?}");
        }
        (lo..=hi).collect()
    } else {
        values
            .split(',')
            .map(|v| v.trim().parse::<usize>().map_err(anyhow::Error::from))
            .collect::<anyhow::Result<Vec<_>>>()?
    };
    if values.contains(&0) {
        bail!("grid values must be >= 1 in {spec:?}");
    }
    Ok((name, values))
}

fn cmd_simulate(args: &SimulateArgs, seed: u64) -> anyhow::Result<()> {
    let samples = load_dataset(&args.dataset)?;
    let stdout = std::io::stdout();
    let mut so = stdout.lock();
    if let Some(axes) = &args.grid {
        let mut ns = None;
        let mut ks = None;
        for a in axes {
            match parse_axis(a)? {
                ('n', v) => ns = Some(v),
                (_, v) => ks = Some(v),
            }
        }
        let (Some(ns), Some(ks)) = (ns, ks) else {
            bail!("--grid needs one n axis and one k axis");
        };
        let grid = grid_search(&samples, &ns, &ks, seed)?;
        write_compression_pivot(&mut so, &grid)?;
        let best = grid.cell(grid.best.0, grid.best.1).expect("best cell exists");
        writeln!(
            so,
            "best: n={} k={} compression={:.6}",
            best.n, best.k, best.stats.compression_ratio
        )?;
        if let Some(p) = &args.out {
            write_grid_csv(create(p)?, &grid)?;
        }
        if let Some(p) = &args.pivot_out {
            write_compression_pivot(create(p)?, &grid)?;
        }
        if let Some(p) = &args.json_out {
            let mut w = create(p)?;
            write_grid_json(&mut w, &grid)?;
            w.flush()?;
        }
        return Ok(());
    }

    let (n, k) = (args.match_len.unwrap_or(1), args.copy_len.unwrap_or(18));
    let traces = simulate_samples(&samples, n, k, seed)?;
    let stats = aggregate_stats(traces.iter().map(|(_, t)| t))?;
    write_stats_csv(&mut so, n, k, &stats)?;
    if let Some(p) = &args.out {
        write_traces_csv(create(p)?, traces.iter().map(|(id, t)| (id.as_str(), t)))?;
    }
    if let Some(p) = &args.stats_out {
        write_stats_csv(create(p)?, n, k, &stats)?;
    }
    Ok(())
}

fn cmd_gen(args: &GenArgs, seed: u64) -> anyhow::Result<()> {
    let samples = gen_synthetic(&args.synth.params(seed))?;
    save_dataset(&args.out, &samples)?;
    println!("wrote {} samples to {}", samples.len(), args.out.display());
    Ok(())
}

fn cmd_bench(args: &BenchArgs, seed: u64) -> anyhow::Result<()> {
    let spec = args.model.spec()?;
    let stop = args.stop_token.or(spec.default_stop());
    let cfg = decode_config(args.match_len, args.copy_len, args.max_new_tokens, stop, seed)?;
    let samples = match &args.dataset {
        Some(path) => load_dataset(path)?,
        None => gen_synthetic(&args.synth.params(seed))?,
    };
    let stop_id = stop.unwrap_or_default();
    let report = benchmark(
        spec.kind(),
        |s| spec.build(s, stop_id).map_err(|e| HarnessError::InvalidParam(format!("{e:#}"))),
        &samples,
        &cfg,
        args.reps,
    )?;
    write_bench_csv(std::io::stdout().lock(), std::slice::from_ref(&report))?;
    if let Some(p) = &args.out {
        write_bench_csv(create(p)?, std::slice::from_ref(&report))?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .context("configuring worker pool")?;
    }
    match &cli.command {
        Command::Decode(a) => cmd_decode(a, cli.seed),
        Command::Simulate(a) => cmd_simulate(a, cli.seed),
        Command::Gen(a) => cmd_gen(a, cli.seed),
        Command::Bench(a) => cmd_bench(a, cli.seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
