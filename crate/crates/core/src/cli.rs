//! Command-line front end. Every subcommand reads and writes the documented
//! file formats so they can be chained: `synth -> train -> embed -> eval`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::aeom::{MetaBlockConfig, ScoreMethod};
use crate::bench::{bench_throughput, BenchDims, BenchMethod};
use crate::error::{AvseError, Result};
use crate::eval::{evaluate_protocol, GroundTruth, Protocol, RetrievalReport};
use crate::objectives::{finite_difference_check, random_check_instance, LossConfig};
use crate::pipeline::build_indexes;
use crate::sampler::{make_sample_plan, PatchGrid, SamplingConfig, SamplingStrategy};
use crate::store::{
    load_checkpoint, read_dataset, read_file, read_index, save_checkpoint, write_atomic, write_dataset,
    write_index, IndexKind,
};
use crate::synth::{synth_dataset, SyntheticDatasetSpec};
use crate::trainer::{fit, TrainConfig, TrainState};

pub const THREADS_ENV: &str = "AVSE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "avse", version, about = "Asymmetric visual semantic embedding toolkit", arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw patch groups on a grid and write the plan as JSON.
    Sample(SampleArgs),
    /// Generate a synthetic two-half dataset.
    Synth(SynthArgs),
    /// Train the toy encoder on a dataset file.
    Train(TrainArgs),
    /// Encode a dataset with a checkpoint and write image and text indexes.
    Embed(EmbedArgs),
    /// Score an index against text queries and report Recall@K.
    Eval(EvalArgs),
    /// Time exhaustive scoring for several methods and candidate counts.
    Bench(BenchArgs),
    /// Compare analytic and finite-difference gradients on a random batch.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long, default_value = "14x14")]
    pub grid: PatchGrid,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 2)]
    pub groups: usize,
    /// Patches per group; defaults to half the grid, rounded up.
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long, default_value = "radial")]
    pub strategy: SamplingStrategy,
    /// Width of the Gaussian strategy; defaults to min(rows, cols) / 4.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub seed: u64,
    /// Output path; the plan is printed when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    pub images: usize,
    #[arg(long, default_value_t = 5)]
    pub caps: usize,
    #[arg(long, default_value_t = 16)]
    pub latent_dim: usize,
    #[arg(long, default_value = "8x8")]
    pub grid: PatchGrid,
    #[arg(long, default_value_t = 32)]
    pub d_in: usize,
    #[arg(long, default_value_t = 8)]
    pub tokens: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth JSON path; defaults to the output path with a `.gt.json` extension.
    #[arg(long)]
    pub gt_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON training config; the desk schedule is used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-step loss log (CSV).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Overrides the config seed (and the sampling seed).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub images_out: PathBuf,
    #[arg(long)]
    pub texts_out: PathBuf,
    /// Seed for the per-image sample plans.
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value = "full")]
    pub protocol: Protocol,
    #[arg(long, default_value = "aeom")]
    pub method: ScoreMethod,
    /// Meta-block width; defaults to d1 / 2.
    #[arg(long)]
    pub d2: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "1000,10000,100000")]
    pub counts: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "aeom,cosine,xattn")]
    pub methods: Vec<BenchMethod>,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 512)]
    pub d1: usize,
    #[arg(long, default_value_t = 256)]
    pub d2: usize,
    #[arg(long, default_value_t = 2)]
    pub views: usize,
    #[arg(long, default_value_t = 196)]
    pub regions: usize,
    #[arg(long, default_value_t = 12)]
    pub words: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    /// `d_in,d1,d2,n`.
    #[arg(long, value_delimiter = ',', default_value = "3,4,2,2")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 1e-4)]
    pub h: f64,
}

#[derive(Debug, Serialize)]
struct EvalOutput {
    method: ScoreMethod,
    protocol: Protocol,
    images: usize,
    queries: usize,
    report: RetrievalReport,
}

/// Parses `argv` and runs the selected subcommand, returning the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Sample(args) => sample(args),
        Command::Synth(args) => synth(args),
        Command::Train(args) => train(args),
        Command::Embed(args) => embed(args),
        Command::Eval(args) => eval(args),
        Command::Bench(args) => bench(args),
        Command::Gradcheck(args) => gradcheck(args),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn sample(args: SampleArgs) -> Result<()> {
    let mut config = SamplingConfig::for_grid(args.grid, args.alpha, args.seed);
    config.group_count = args.groups;
    if let Some(k) = args.group_size {
        config.group_size = k;
    }
    config.strategy = args.strategy;
    config.gaussian_sigma = args.sigma;
    let plan = make_sample_plan(args.grid, &config)?;
    let json = plan.to_json()?;
    match args.out {
        Some(path) => write_text(&path, &json),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn default_gt_path(out: &Path) -> PathBuf {
    out.with_extension("gt.json")
}

fn synth(args: SynthArgs) -> Result<()> {
    let spec = SyntheticDatasetSpec {
        num_images: args.images,
        captions_per_image: args.caps,
        latent_dim: args.latent_dim,
        grid: args.grid,
        d_in: args.d_in,
        tokens_per_caption: args.tokens,
        noise_sigma: args.noise,
        seed: args.seed,
    };
    let dataset = synth_dataset(&spec)?;
    write_dataset(&dataset, &args.out)?;
    let gt_path = args.gt_out.unwrap_or_else(|| default_gt_path(&args.out));
    write_text(&gt_path, &serde_json::to_string_pretty(&dataset.gt)?)?;
    println!(
        "wrote {} images / {} captions to {} (ground truth {})",
        dataset.num_images(),
        dataset.gt.num_captions(),
        args.out.display(),
        gt_path.display()
    );
    Ok(())
}

fn loss_log_csv(state: &TrainState) -> String {
    let mut out = String::from("step,l_m,l_reg,total,lr\n");
    for (i, rec) in state.history.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            i + 1,
            rec.loss.l_m,
            rec.loss.l_reg,
            rec.loss.total,
            rec.lr
        ));
    }
    out
}

fn train(args: TrainArgs) -> Result<()> {
    let dataset = read_dataset(&args.data)?;
    let mut config = match &args.config {
        Some(path) => serde_json::from_slice::<TrainConfig>(&read_file(path)?)?,
        None => TrainConfig::desk(dataset.grid(), args.seed.unwrap_or(0)),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
        config.sampling_cfg.seed = seed;
    }
    let state = fit(&config, &dataset)?;
    save_checkpoint(&state, &args.out)?;
    if let Some(log) = &args.log {
        write_text(log, &loss_log_csv(&state))?;
    }
    let last = state.history.last().map(|r| r.loss.total).unwrap_or(f64::NAN);
    println!("trained {} steps, final loss {:.6}, checkpoint {}", state.step, last, args.out.display());
    Ok(())
}

fn embed(args: EmbedArgs) -> Result<()> {
    let state = load_checkpoint(&args.ckpt)?;
    let dataset = read_dataset(&args.data)?;
    if dataset.d_in() != state.params.d_in() {
        return Err(AvseError::Domain(format!(
            "dataset feature width {} does not match encoder input width {}",
            dataset.d_in(),
            state.params.d_in()
        )));
    }
    let (images, texts) = build_indexes(&state.params, &dataset, &state.config.sampling_cfg, args.seed)?;
    write_index(&images, &args.images_out)?;
    write_index(&texts, &args.texts_out)?;
    println!("embedded {} images and {} captions", images.len(), texts.len());
    Ok(())
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(value) = std::env::var(THREADS_ENV) {
        let n: usize = value
            .trim()
            .parse()
            .map_err(|_| AvseError::Domain(format!("{THREADS_ENV} must be a positive integer, got '{value}'")))?;
        if n == 0 {
            return Err(AvseError::Domain(format!("{THREADS_ENV} must be at least 1")));
        }
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| AvseError::Domain(format!("cannot start evaluation threads: {e}")))
}

fn eval(args: EvalArgs) -> Result<()> {
    let index = read_index(&args.index)?;
    let queries = read_index(&args.queries)?;
    if index.kind != IndexKind::Image || queries.kind != IndexKind::Text {
        return Err(AvseError::Domain("--index must be an image index and --queries a text index".into()));
    }
    if index.d1 != queries.d1 {
        return Err(AvseError::Domain(format!(
            "image d1 {} does not match text d1 {}",
            index.d1, queries.d1
        )));
    }
    let gt: GroundTruth = serde_json::from_slice(&read_file(&args.gt)?)?;
    let d1 = index.d1 as usize;
    let blocks = MetaBlockConfig::new(d1, args.d2.unwrap_or(d1 / 2), index.n_views as usize)?;
    let images = index.rows_f64();
    let texts = queries.rows_f64();
    let report = thread_pool()?
        .install(|| evaluate_protocol(&images, &texts, &gt, args.protocol, &blocks, args.method))?;
    let output = EvalOutput {
        method: args.method,
        protocol: args.protocol,
        images: images.len(),
        queries: texts.len(),
        report,
    };
    let json = serde_json::to_string_pretty(&output)?;
    match &args.out {
        Some(path) => write_text(path, &json)?,
        None => println!("{json}"),
    }
    println!(
        "{}: text R@1 {:.2} R@5 {:.2} R@10 {:.2} | image R@1 {:.2} R@5 {:.2} R@10 {:.2} | rsum {:.2}",
        args.method,
        report.text_retrieval.r1,
        report.text_retrieval.r5,
        report.text_retrieval.r10,
        report.image_retrieval.r1,
        report.image_retrieval.r5,
        report.image_retrieval.r10,
        report.rsum
    );
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let dims = BenchDims {
        d1: args.d1,
        d2: args.d2,
        n_views: args.views,
        regions: args.regions,
        words: args.words,
        ..BenchDims::default()
    };
    let report = bench_throughput(&args.methods, &args.counts, &dims, args.reps, args.seed)?;
    let csv = report.to_csv();
    match &args.out {
        Some(path) => write_text(path, &csv)?,
        None => print!("{csv}"),
    }
    for method in &args.methods {
        if let Some(fit) = report.loglog_fit(*method) {
            println!("{method}: log-log slope {:.3} (r^2 {:.4})", fit.slope, fit.r_squared);
        }
    }
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> Result<()> {
    let [d_in, d1, d2, n] = args.dims[..] else {
        return Err(AvseError::Domain(format!(
            "--dims expects d_in,d1,d2,n (got {} values)",
            args.dims.len()
        )));
    };
    if d_in == 0 || args.batch < 2 {
        return Err(AvseError::Domain("gradcheck needs d_in >= 1 and batch >= 2".into()));
    }
    let blocks = MetaBlockConfig::new(d1, d2, n)?;
    let loss = LossConfig::for_dim(d1);
    let (batch, params, cfg) = random_check_instance(args.seed, args.batch, d_in, blocks, loss);
    let report = finite_difference_check(&batch, &params, &cfg, args.h)?;
    print!("{}", report.render());
    Ok(())
}
