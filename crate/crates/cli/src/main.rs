use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sanet_core::bench::{time_iterations, BenchReport, DEFAULT_ITERS, DEFAULT_WARMUP};
use sanet_core::io::{
    colorize, preprocess, read_image, read_label_map, read_stf, write_label_map, write_raster, Normalization, Palette,
};
use sanet_core::kernels::set_single_threaded;
use sanet_core::tensor::argmax_channels;
use sanet_core::train::{sad_gradcheck, Confusion, GradCheckConfig};
use sanet_core::{describe, init_weights, write_stf, Model, ModelConfig, Prefix, Shape, Tensor4, Variant};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Parser)]
#[command(name = "sanet", version, about = "SANet semantic segmentation on the CPU")]
struct Cli {
    /// Run every kernel on the calling thread.
    #[arg(long, value_enum, global = true, default_value_t = Threads::Auto)]
    threads: Threads,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Threads {
    Single,
    Auto,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(clap::Args)]
struct ModelArgs {
    #[arg(long, default_value = "s", value_parser = parse_variant)]
    variant: Variant,
    #[arg(long, default_value_t = 19)]
    classes: usize,
}

impl ModelArgs {
    fn config(&self) -> ModelConfig {
        ModelConfig::new(self.variant, self.classes)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Segment one image and write a colour-coded P6.
    Infer {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        /// Comma-separated scale factors whose probabilities are averaged.
        #[arg(long, value_delimiter = ',')]
        scales: Option<Vec<f64>>,
        /// Text file of `class_id R G B` lines; defaults to Cityscapes colours.
        #[arg(long)]
        palette: Option<PathBuf>,
        /// Also write the raw class ids as a P5 label map.
        #[arg(long)]
        labels_out: Option<PathBuf>,
    },
    /// Time batch-1 inference on a synthetic input.
    Bench {
        /// STF weights; random weights from --seed when absent.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Input size as HEIGHTxWIDTH.
        #[arg(long, default_value = "1024x2048", value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long, default_value_t = DEFAULT_ITERS)]
        iters: usize,
        #[arg(long, default_value_t = DEFAULT_WARMUP)]
        warmup: usize,
        #[arg(long, value_enum, default_value_t = Switch::On)]
        fold_bn: Switch,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        model: ModelArgs,
        /// Write the report as JSON as well.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Print per-stage shapes, block counts, parameters and receptive fields.
    Describe {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "1024x2048", value_parser = parse_size)]
        size: (usize, usize),
    },
    /// Analytic and impulse-measured receptive fields at L3, DP2 and L6.
    Rf {
        #[arg(long, default_value = "s", value_parser = parse_variant)]
        variant: Variant,
    },
    /// Run the built-in oracle checks.
    Selftest,
    /// Check the decoder's analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Toy feature size as CxHxW.
        #[arg(long, default_value = "4x6x6", value_parser = parse_chw)]
        dims: (usize, usize, usize),
    },
    /// Write deterministic random weights as STF.
    ExportRandom {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Mean IoU over P5 prediction and label maps paired by file name.
    Eval {
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        label_dir: PathBuf,
        #[arg(long)]
        classes: usize,
        #[arg(long, default_value_t = 255)]
        ignore: u32,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: sanet_core::Error| e.to_string())
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HEIGHTxWIDTH, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<usize>().ok().filter(|&n| n > 0);
    match (parse(h), parse(w)) {
        (Some(h), Some(w)) => Ok((h, w)),
        _ => Err(format!("expected positive HEIGHTxWIDTH, got `{s}`")),
    }
}

fn parse_chw(s: &str) -> Result<(usize, usize, usize), String> {
    let v: Vec<usize> = s
        .split(['x', 'X'])
        .map(|p| p.trim().parse().ok().filter(|&n| n > 0))
        .collect::<Option<_>>()
        .ok_or_else(|| format!("expected CxHxW, got `{s}`"))?;
    match v[..] {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(format!("expected CxHxW, got `{s}`")),
    }
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    msg: String,
}

impl From<sanet_core::Error> for Failure {
    fn from(e: sanet_core::Error) -> Self {
        Failure {
            code: EXIT_DATA,
            msg: e.to_string(),
        }
    }
}

impl From<sanet_core::io::StfError> for Failure {
    fn from(e: sanet_core::io::StfError) -> Self {
        sanet_core::Error::from(e).into()
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        msg: msg.into(),
    }
}

fn data(msg: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_DATA,
        msg: msg.into(),
    }
}

type CmdResult = Result<(), Failure>;

fn load_model(weights: &Path, cfg: &ModelConfig) -> Result<Model, Failure> {
    let store = read_stf(weights).map_err(|e| data(format!("{}: {e}", weights.display())))?;
    Ok(Model::build(cfg, &store)?)
}

fn infer(
    weights: &Path,
    image: &Path,
    out: &Path,
    model: &ModelArgs,
    scales: Option<&[f64]>,
    palette: Option<&Path>,
    labels_out: Option<&Path>,
) -> CmdResult {
    if let Some(s) = scales {
        if s.is_empty() || !s.iter().all(|&v| v.is_finite() && v > 0.0) {
            return Err(usage(format!("scales must be positive, got {s:?}")));
        }
    }
    let cfg = model.config();
    let net = load_model(weights, &cfg)?.fold_bn()?;
    let palette = match palette {
        Some(p) => Palette::load(p)?,
        None => Palette::for_classes(cfg.num_classes),
    };
    let img = preprocess(&read_image(image)?, &Normalization::default())?;
    let scores = match scales {
        None => net.forward(&img)?,
        Some(s) => net.multi_scale_infer(&img, s)?,
    };
    let labels = argmax_channels(&scores)?;
    write_raster(&colorize(&labels, &palette)?, out)?;
    if let Some(path) = labels_out {
        write_label_map(&labels, path)?;
    }
    println!("wrote {} ({}x{})", out.display(), labels.width(), labels.height());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn bench(
    weights: Option<&Path>,
    size: (usize, usize),
    iters: usize,
    warmup: usize,
    fold_bn: Switch,
    seed: u64,
    model: &ModelArgs,
    json: Option<&Path>,
    single: bool,
) -> CmdResult {
    if iters == 0 {
        return Err(usage("--iters must be at least 1"));
    }
    let cfg = model.config();
    let mut net = match weights {
        Some(w) => load_model(w, &cfg)?,
        None => Model::build(&cfg, &init_weights(&cfg, seed)?)?,
    };
    if fold_bn == Switch::On {
        net = net.fold_bn()?;
    }
    let (h, w) = size;
    let img = Tensor4::from_fn(Shape::new(1, cfg.in_channels, h, w), |_, c, y, x| {
        ((x * 7 + y * 13 + c * 29) % 255) as f32 / 255.0 - 0.5
    });
    let mut checksum = 0f64;
    let latencies = time_iterations(warmup, iters, || {
        let out = net.forward(&img)?;
        checksum = out.data().iter().map(|&v| v as f64).sum();
        Ok(())
    })?;
    let report = BenchReport::from_latencies(warmup, latencies, single, fold_bn == Switch::On)?;
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    println!(
        "engine: sanet {} on {}/{}, {} logical cpus",
        env!("CARGO_PKG_VERSION"),
        std::env::consts::OS,
        std::env::consts::ARCH,
        cpus
    );
    println!("model: {}  input: 1x{}x{}x{}", cfg.variant.name(), cfg.in_channels, h, w);
    println!("{report}");
    println!("output checksum {checksum:.6}");
    if let Some(path) = json {
        let doc = serde_json::json!({
            "model": cfg.variant.name(),
            "input": [1, cfg.in_channels, h, w],
            "warmup_iters": report.warmup_iters,
            "timed_iters": report.timed_iters,
            "latencies_ms": report.latencies_ms,
            "mean_ms": report.mean_ms,
            "median_ms": report.median_ms,
            "min_ms": report.min_ms,
            "fps": report.fps,
            "cov": report.cov,
            "single_threaded": report.single_threaded,
            "bn_folded": report.bn_folded,
            "output_checksum": checksum,
        });
        let text = serde_json::to_string_pretty(&doc).expect("json values are finite");
        std::fs::write(path, text).map_err(|e| data(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn rf(variant: Variant) -> CmdResult {
    let probe = Model::probe(&ModelConfig::new(variant, 1))?;
    println!("{} receptive fields (input pixels)", variant.name());
    println!("{:<6} {:>10} {:>6} {:>10}", "tap", "analytic", "jump", "impulse");
    for prefix in Prefix::ALL {
        let s = sanet_core::receptive::receptive_field_summary(&probe.chain(prefix));
        let m = probe.impulse_receptive_field(prefix)?;
        let show = |v: (usize, usize)| if v.0 == v.1 { v.0.to_string() } else { format!("{}x{}", v.0, v.1) };
        println!("{:<6} {:>10} {:>6} {:>10}", prefix.name(), show(s.rf), show(s.jump), show(m));
    }
    Ok(())
}

fn selftest() -> CmdResult {
    let outcomes = sanet_core::selftest::run_all()?;
    let mut failed = 0;
    for o in &outcomes {
        let tag = if o.passed() { "PASS" } else { "FAIL" };
        println!("{tag} {:<40} cases {:>4}  worst {:.3e}  tol {:.0e}", o.name, o.cases, o.worst, o.tolerance);
        failed += usize::from(!o.passed());
    }
    if failed > 0 {
        return Err(Failure {
            code: EXIT_CHECK,
            msg: format!("{failed} of {} checks failed", outcomes.len()),
        });
    }
    println!("all {} checks passed", outcomes.len());
    Ok(())
}

const GRADCHECK_TOLERANCE: f64 = 1e-3;

fn gradcheck(seeds: u64, (c, h, w): (usize, usize, usize)) -> CmdResult {
    if seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let shape = Shape::new(1, c, h, w);
    let mut worst = 0f64;
    for seed in 0..seeds {
        let cfg = GradCheckConfig {
            seed,
            ..GradCheckConfig::default()
        };
        let report = sad_gradcheck(shape, &cfg)?;
        worst = worst.max(report.max_rel());
        if seed == 0 {
            for t in &report.tensors {
                println!("{:<6} coords {:>3}  max abs {:.3e}  max rel {:.3e}", t.name, t.checked, t.max_abs, t.max_rel);
            }
        }
    }
    println!("worst relative error over {seeds} seeds: {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:.0e})");
    if worst > GRADCHECK_TOLERANCE {
        return Err(Failure {
            code: EXIT_CHECK,
            msg: "gradient check failed".into(),
        });
    }
    Ok(())
}

fn export_random(seed: u64, out: &Path, model: &ModelArgs) -> CmdResult {
    let store = init_weights(&model.config(), seed)?;
    write_stf(&store, out)?;
    println!("wrote {} tensors ({} values) to {}", store.len(), store.total_elements(), out.display());
    Ok(())
}

fn eval(pred_dir: &Path, label_dir: &Path, classes: usize, ignore: u32) -> CmdResult {
    if classes == 0 {
        return Err(usage("--classes must be at least 1"));
    }
    let read_dir = |d: &Path| -> Result<Vec<PathBuf>, Failure> {
        let mut v: Vec<PathBuf> = std::fs::read_dir(d)
            .map_err(|e| data(format!("{}: {e}", d.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        v.sort();
        Ok(v)
    };
    let preds = read_dir(pred_dir)?;
    if preds.is_empty() {
        return Err(data(format!("{} holds no prediction files", pred_dir.display())));
    }
    let mut confusion = Confusion::new(classes);
    for pred_path in &preds {
        let name = pred_path.file_name().expect("read_dir entries have names");
        let label_path = label_dir.join(name);
        if !label_path.is_file() {
            return Err(data(format!("no label map {} for {}", label_path.display(), pred_path.display())));
        }
        let pred = read_label_map(pred_path)?.with_ignore(ignore);
        let labels = read_label_map(&label_path)?.with_ignore(ignore);
        confusion
            .accumulate(&pred, &labels)
            .map_err(|e| data(format!("{}: {e}", pred_path.display())))?;
    }
    let report = confusion.report();
    println!("images: {}", preds.len());
    for (c, iou) in report.per_class.iter().enumerate() {
        match iou {
            Some(v) => println!("class {c:>3}  iou {v:.6}"),
            None => println!("class {c:>3}  iou -"),
        }
    }
    match report.mean {
        Some(m) => println!("mIoU {m:.6}"),
        None => println!("mIoU - (no class present)"),
    }
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    let single = cli.threads == Threads::Single;
    set_single_threaded(single);
    match cli.command {
        Command::Infer {
            weights,
            image,
            out,
            model,
            scales,
            palette,
            labels_out,
        } => infer(
            &weights,
            &image,
            &out,
            &model,
            scales.as_deref(),
            palette.as_deref(),
            labels_out.as_deref(),
        ),
        Command::Bench {
            weights,
            size,
            iters,
            warmup,
            fold_bn,
            seed,
            model,
            json,
        } => bench(weights.as_deref(), size, iters, warmup, fold_bn, seed, &model, json.as_deref(), single),
        Command::Describe { model, size } => {
            let cfg = model.config();
            let net = Model::build(&cfg, &init_weights(&cfg, 0)?)?;
            println!("{}", describe(&net, size.0, size.1)?);
            Ok(())
        }
        Command::Rf { variant } => rf(variant),
        Command::Selftest => selftest(),
        Command::Gradcheck { seeds, dims } => gradcheck(seeds, dims),
        Command::ExportRandom { seed, out, model } => export_random(seed, &out, &model),
        Command::Eval {
            pred_dir,
            label_dir,
            classes,
            ignore,
        } => eval(&pred_dir, &label_dir, classes, ignore),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
