use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};

use dlen_core::gradcheck::{block_suite, model_check, op_suite};
use dlen_core::image::Image;
use dlen_core::synth::{procedural_scene, synth_lowlight};
use dlen_core::train::fit;
use dlen_core::{
    load_checkpoint, load_image, save_checkpoint, save_image, scan_dataset, selftest, AdamConfig,
    DlenConfig, DlenModel, MetricReport, Prng, SsimKind, TrainOptions, Trainer,
};

#[derive(Parser)]
#[command(name = "dlen", version, about = "Low-light image enhancement: train, enhance, evaluate")]
struct Cli {
    /// Worker threads (1 gives fully deterministic scheduling).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log verbosity: error, warn, info, debug.
    #[arg(long, global = true, default_value = "info")]
    log: String,

    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a paired dataset and write a checkpoint.
    Train(TrainArgs),
    /// Enhance one image or every image in a directory.
    Enhance(EnhanceArgs),
    /// PSNR/SSIM of a model on a paired dataset.
    Eval(EvalArgs),
    /// Build a synthetic paired dataset.
    Synth(SynthArgs),
    /// Finite-difference gradient suite (64-bit); exit 0 iff every check passes.
    Gradcheck(GradcheckArgs),
    /// Built-in wavelet, metric, determinism and shape checks.
    Selftest {
        #[arg(long, env = "DLEN_SEED", default_value_t = 0)]
        seed: u64,
    },
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 128)]
    crop: usize,
    #[arg(long, env = "DLEN_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    width: usize,
    /// Structure branch width (default: half of --width, rounded to even).
    #[arg(long)]
    seb_width: Option<usize>,
    #[arg(long, default_value_t = 2e-4)]
    lr: f64,
    #[arg(long)]
    no_lwn: bool,
    #[arg(long)]
    no_seab: bool,
    #[arg(long)]
    no_augment: bool,
    /// Log the loss every K iterations.
    #[arg(long, default_value_t = 50)]
    log_every: usize,
    /// Also write the per-iteration losses here.
    #[arg(long)]
    loss_log: Option<PathBuf>,
}

#[derive(clap::Args)]
struct EnhanceArgs {
    #[arg(long)]
    model: PathBuf,
    /// A PPM file or a directory of them.
    #[arg(long)]
    input: PathBuf,
    /// Output file (or directory when the input is a directory).
    #[arg(long)]
    output: PathBuf,
    /// Write I_lu, I_flb, I_feb, L_tilde and a residual summary here.
    #[arg(long)]
    dump_intermediates: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SsimArg {
    Windowed,
    Global,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data_dir: PathBuf,
    /// Tab-separated report; a `.kv` sibling is written next to it.
    #[arg(long)]
    report: PathBuf,
    #[arg(long, value_enum, default_value = "windowed")]
    ssim: SsimArg,
}

#[derive(clap::Args)]
struct SynthArgs {
    /// Directory of normal-light PPM images.
    #[arg(long, conflicts_with = "procedural")]
    input_dir: Option<PathBuf>,
    /// Generate this many procedural scenes instead of reading images.
    #[arg(long)]
    procedural: Option<usize>,
    /// Procedural scene size.
    #[arg(long, default_value_t = 128)]
    size: usize,
    /// Output root; `low/` and `high/` are created inside.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.35)]
    gain: f64,
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    #[arg(long, env = "DLEN_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(clap::Args)]
struct GradcheckArgs {
    #[arg(long, env = "DLEN_SEED", default_value_t = 0)]
    seed: u64,
    /// Elements probed per whole-model parameter tensor (0 = all).
    #[arg(long, default_value_t = 32)]
    model_coords: usize,
}

fn model_config(a: &TrainArgs) -> DlenConfig {
    let mut cfg = DlenConfig::new(a.width);
    if let Some(s) = a.seb_width {
        cfg.seb_width = s;
    }
    cfg.use_lwn = !a.no_lwn;
    cfg.use_seab = !a.no_seab;
    let side = a.crop.div_ceil(8) * 8;
    cfg.train_h = side;
    cfg.train_w = side;
    cfg
}

fn train(a: TrainArgs) -> Result<()> {
    let ds = scan_dataset(&a.data_dir)?;
    let pairs = ds.load_all()?;
    info!("{} training pairs from {}", pairs.len(), a.data_dir.display());
    let model = DlenModel::<f32>::init(model_config(&a), a.seed)?;
    info!("{} parameters", model.num_params());
    let opts = TrainOptions {
        iters: a.iters,
        batch: a.batch,
        crop: a.crop,
        seed: a.seed,
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
        log_every: a.log_every,
        augment: !a.no_augment,
    };
    let mut trainer = Trainer::new(model, opts.adam);
    let losses = fit(&mut trainer, &pairs, &opts)?;
    if let Some(path) = &a.loss_log {
        let text: String = losses.iter().map(|l| format!("{l:.9}\n")).collect();
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    save_checkpoint(&trainer.model, &a.out)?;
    info!("checkpoint written to {}", a.out.display());
    Ok(())
}

fn enhance_one(model: &DlenModel<f32>, input: &Path, output: &Path, dump: Option<&Path>) -> Result<()> {
    let img = load_image(input)?;
    let out = model.enhance(&img.to_tensor())?;
    save_image(&Image::from_tensor(&out.i_en, 0)?, output)?;
    if let Some(dir) = dump {
        fs::create_dir_all(dir)?;
        let stem = input.file_stem().unwrap_or_default().to_string_lossy();
        for (name, t) in [
            ("i_lu", &out.i_lu),
            ("i_flb", &out.i_flb),
            ("i_feb", &out.i_feb),
            ("l_tilde", &out.l_tilde),
        ] {
            save_image(&Image::from_tensor(t, 0)?, &dir.join(format!("{stem}.{name}.ppm")))?;
        }
        let max_abs = |d: &[f32]| d.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        let diff = out.i_en.max_abs_diff(&out.i_lu);
        let summary = format!(
            "max_abs_i_flb={}\nmax_abs_i_feb={}\nmax_abs_i_en_minus_i_lu={}\n",
            max_abs(out.i_flb.data()),
            max_abs(out.i_feb.data()),
            diff
        );
        fs::write(dir.join(format!("{stem}.residuals.txt")), summary)?;
    }
    Ok(())
}

fn ppm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "ppm"))
        .collect();
    files.sort();
    Ok(files)
}

fn enhance(a: EnhanceArgs) -> Result<()> {
    let model = load_checkpoint(&a.model)?;
    let dump = a.dump_intermediates.as_deref();
    if a.input.is_dir() {
        fs::create_dir_all(&a.output)?;
        for path in ppm_files(&a.input)? {
            let name = path.file_name().expect("listed file");
            enhance_one(&model, &path, &a.output.join(name), dump)?;
        }
    } else {
        enhance_one(&model, &a.input, &a.output, dump)?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let model = load_checkpoint(&a.model)?;
    let ds = scan_dataset(&a.data_dir)?;
    let kind = match a.ssim {
        SsimArg::Windowed => SsimKind::Windowed,
        SsimArg::Global => SsimKind::Global,
    };
    let mut report = MetricReport::new(kind);
    for (i, entry) in ds.entries.iter().enumerate() {
        let pair = ds.load_pair(i)?;
        let out = model.enhance(&pair.low.to_tensor())?;
        // Score what would be saved: clamped and 8-bit quantized.
        let enhanced = Image::from_bytes(pair.low.width, pair.low.height, &Image::from_tensor(&out.i_en, 0)?.to_bytes())?;
        report.add(&entry.name, &enhanced, &pair.high)?;
    }
    fs::write(&a.report, report.to_tsv())?;
    fs::write(a.report.with_extension("kv"), report.to_kv())?;
    println!(
        "{} images  mean PSNR {:.4} dB  mean SSIM {:.4} ({})",
        report.entries.len(),
        report.mean_psnr(),
        report.mean_ssim(),
        kind.name()
    );
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let (low_dir, high_dir) = (a.out.join("low"), a.out.join("high"));
    fs::create_dir_all(&low_dir)?;
    fs::create_dir_all(&high_dir)?;
    let mut rng = Prng::new(a.seed);
    let sources: Vec<(String, Image)> = match (&a.input_dir, a.procedural) {
        (Some(dir), None) => ppm_files(dir)?
            .into_iter()
            .map(|p| {
                let name = p.file_name().expect("listed file").to_string_lossy().into_owned();
                Ok((name, load_image(&p)?))
            })
            .collect::<Result<_>>()?,
        (None, Some(n)) => (0..n)
            .map(|i| (format!("scene_{i:04}.ppm"), procedural_scene(a.size, a.size, &mut rng)))
            .collect(),
        _ => bail!("pass exactly one of --input-dir or --procedural"),
    };
    if sources.is_empty() {
        warn!("no source images found");
    }
    for (name, high) in &sources {
        let low = synth_lowlight(high, a.gamma, a.gain, a.noise, rng.below(u64::MAX))?;
        save_image(high, &high_dir.join(name))?;
        save_image(&low, &low_dir.join(name))?;
    }
    info!("{} pairs written to {}", sources.len(), a.out.display());
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<bool> {
    let mut results = op_suite(a.seed, 5)?;
    results.extend(block_suite(a.seed, 5)?);
    let coords = (a.model_coords > 0).then_some(a.model_coords);
    results.push(model_check(a.seed, coords)?);
    let mut ok = true;
    for r in &results {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status}  {:<26} rel {:.3e}  tol {:.0e}  worst {}",
            r.name, r.rel_error, r.tolerance, r.worst_input
        );
        ok &= r.passed();
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.cmd {
        Command::Train(a) => train(a).map(|_| true),
        Command::Enhance(a) => enhance(a).map(|_| true),
        Command::Eval(a) => eval(a).map(|_| true),
        Command::Synth(a) => synth(a).map(|_| true),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Selftest { seed } => {
            let results = selftest::run(seed)?;
            for r in &results {
                let status = if r.passed { "PASS" } else { "FAIL" };
                println!("{status}  {:<24} {}", r.name, r.detail);
            }
            Ok(results.iter().all(|r| r.passed))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
