//! Command-line front end for the svt pipeline.
//!
//! Subcommands: `gen-data` (synthetic motion dataset), `pretrain`
//! (self-distillation training), `probe` (linear probe on frozen features),
//! `attn-map` (classification-token attention export).
//!
//! Exit codes are a stable contract: 0 success, 1 usage error (bad flags),
//! 2 runtime or data error (bad config, missing files, unreadable inputs).
//! Every run writes a `config.digest` file next to its outputs, and every
//! subcommand is deterministic given its flags and seed.

use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use svt::backbone::{forward, BackboneConfig, ModelParams};
use svt::checkpoint::load_checkpoint;
use svt::config::{sha256_hex, TrainConfig};
use svt::eval::{
    clip_feature, linear_probe, predict_multicrop, read_labels, slow_fast_features,
    uniform_indices, ProbeConfig, SlowFastSpec,
};
use svt::image::{gather_frames, resize_frames};
use svt::trainer::Trainer;
use svt::videoio::{
    generate_synthetic_video, read_raw_video, write_raw_video, BackgroundStyle, MotionClass,
    RawVideo, SyntheticSpec,
};

#[derive(Parser)]
#[command(
    name = "svt",
    version,
    about = "Self-supervised video transformer: data generation, pretraining, probing, attention export",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic motion dataset
    GenData(GenDataArgs),
    /// Pretrain by teacher-student self-distillation over multi-scale views
    Pretrain(PretrainArgs),
    /// Train a linear probe on frozen slow-fast features
    Probe(ProbeArgs),
    /// Export classification-token spatial attention maps
    AttnMap(AttnMapArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output directory for the dataset
    #[arg(long)]
    out: PathBuf,
    /// Number of motion classes (1-4: right, left, down, up)
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Videos per class
    #[arg(long, default_value_t = 10)]
    per_class: usize,
    /// Frames per video (minimum 16)
    #[arg(long, default_value_t = 32)]
    frames: usize,
    /// Square frame edge in pixels
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Master seed; video i of class c is generated with seed + c*per_class + i
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PretrainArgs {
    /// Training config file (key = value lines, # comments)
    #[arg(long)]
    config: PathBuf,
    /// Output directory for metrics.jsonl and checkpoints
    #[arg(long)]
    out: PathBuf,
    /// Resume from this checkpoint directory (must match the config's digest)
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct ProbeArgs {
    /// Checkpoint directory (as written by pretrain)
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset directory containing .svtvid files and labels.tsv
    #[arg(long)]
    data: PathBuf,
    /// Output directory for probe_report.json and predictions.jsonl
    #[arg(long)]
    out: PathBuf,
    /// Control arm: probe a freshly initialized backbone of the same
    /// architecture instead of the checkpoint's teacher weights
    #[arg(long)]
    random_baseline: bool,
    /// Use only the slow clip's feature (skip fast-clip fusion)
    #[arg(long)]
    slow_only: bool,
    /// Hold out the last N videos of each class as the test split
    /// (default: one fifth of the smallest class, at least 1)
    #[arg(long)]
    test_per_class: Option<usize>,
    /// Seed for probe training (epoch shuffles) and the random baseline
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Score test videos with three-crop averaging in predictions.jsonl
    #[arg(long)]
    multicrop: bool,
}

#[derive(Args)]
struct AttnMapArgs {
    /// Checkpoint directory (as written by pretrain)
    #[arg(long)]
    ckpt: PathBuf,
    /// Video file to visualize
    #[arg(long)]
    video: PathBuf,
    /// Output directory for per-frame CSV and PGM files
    #[arg(long)]
    out: PathBuf,
}

/// A command failure carrying its exit code: usage errors are 1, runtime
/// and data errors are 2.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<svt::Error> for Failure {
    fn from(err: svt::Error) -> Self {
        Failure::Runtime(err.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(err: std::io::Error) -> Self {
        Failure::Runtime(format!("i/o error: {err}"))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help and --version arrive as "errors" but are successes;
            // anything else (unknown flag, bad value, no subcommand) is a
            // usage error.
            let is_info = matches!(
                err.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = err.print();
            return if is_info { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    let result = match cli.command {
        Command::GenData(args) => cmd_gen_data(&args),
        Command::Pretrain(args) => cmd_pretrain(&args),
        Command::Probe(args) => cmd_probe(&args),
        Command::AttnMap(args) => cmd_attn_map(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}

/// Write the run's configuration fingerprint next to its outputs.
fn write_digest(out: &Path, digest: &str) -> Result<(), Failure> {
    std::fs::write(out.join("config.digest"), format!("{digest}\n"))?;
    Ok(())
}

fn cmd_gen_data(args: &GenDataArgs) -> Result<(), Failure> {
    if args.classes == 0 || args.classes > MotionClass::ALL.len() {
        return Err(Failure::Usage(format!(
            "--classes {} is out of range: between 1 and {} motion classes exist",
            args.classes,
            MotionClass::ALL.len()
        )));
    }
    if args.per_class == 0 {
        return Err(Failure::Usage("--per-class must be at least 1".into()));
    }
    if args.frames < 16 {
        return Err(Failure::Usage(format!(
            "--frames {} is too small: global views subsample 16 frames, so every video needs at least 16",
            args.frames
        )));
    }
    if args.size < 8 {
        return Err(Failure::Usage(format!(
            "--size {} is too small: the moving object needs at least an 8-pixel frame",
            args.size
        )));
    }

    std::fs::create_dir_all(&args.out)?;
    let mut labels = String::new();
    for class in 0..args.classes {
        for i in 0..args.per_class {
            let spec = SyntheticSpec {
                motion_class: MotionClass::ALL[class],
                n_frames: args.frames,
                height: args.size,
                width: args.size,
                object_size: (args.size / 4).max(1),
                speed: 0.5,
                background_style: BackgroundStyle::Gradient,
                seed: args.seed + (class * args.per_class + i) as u64,
            };
            let (video, label) = generate_synthetic_video(&spec)?;
            debug_assert_eq!(label, class);
            let name = format!("class{class}_{i:03}.svtvid");
            write_raw_video(&video, &args.out.join(&name))?;
            labels.push_str(&format!("{name}\t{class}\n"));
        }
    }
    std::fs::write(args.out.join("labels.tsv"), labels)?;

    let listing = format!(
        "classes={}\nframes={}\nper_class={}\nseed={}\nsize={}\n",
        args.classes, args.frames, args.per_class, args.seed, args.size
    );
    write_digest(&args.out, &sha256_hex(&listing))?;
    println!(
        "generated {} videos ({} classes x {} each) in {}",
        args.classes * args.per_class,
        args.classes,
        args.per_class,
        args.out.display()
    );
    Ok(())
}

fn cmd_pretrain(args: &PretrainArgs) -> Result<(), Failure> {
    let config = TrainConfig::from_file(&args.config)?;
    let mut trainer = match &args.resume {
        Some(dir) => Trainer::resume(config, dir)?,
        None => Trainer::new(config)?,
    };
    std::fs::create_dir_all(&args.out)?;
    write_digest(&args.out, &trainer.digest)?;
    trainer.run(&args.out)?;
    println!("pretrain complete at step {} -> {}", trainer.step, args.out.display());
    Ok(())
}

/// Load a checkpoint's backbone config (from its `config.txt` sidecar),
/// verify the digest recorded in the manifest, and return the teacher
/// parameters — or, for the control arm, a fresh initialization of the same
/// architecture.
fn load_model(
    ckpt: &Path,
    random_init: Option<u64>,
) -> Result<(BackboneConfig, ModelParams<f32>, String), Failure> {
    let sidecar = ckpt.join("config.txt");
    let text = std::fs::read_to_string(&sidecar).map_err(|err| {
        Failure::Runtime(format!("cannot read {}: {err}", sidecar.display()))
    })?;
    let config = TrainConfig::parse_str(&text)?;
    let digest = config.digest();
    let snapshot = load_checkpoint(ckpt, &config.backbone)?;
    if snapshot.config_digest != digest {
        return Err(svt::Error::DigestMismatch {
            ckpt: snapshot.config_digest,
            current: digest,
        }
        .into());
    }
    let params = match random_init {
        Some(seed) => ModelParams::<f32>::init(&config.backbone, seed)?,
        None => snapshot.teacher,
    };
    Ok((config.backbone, params, digest))
}

/// Slow-fast (or slow-only) feature of one dataset video, as f64.
fn video_feature(
    params: &ModelParams<f32>,
    backbone: &BackboneConfig,
    video: &RawVideo,
    spec: &SlowFastSpec,
    slow_only: bool,
) -> Result<Vec<f64>, Failure> {
    let feature = if slow_only {
        if video.n_frames() < spec.slow.0 {
            return Err(svt::Error::VideoTooShort {
                len: video.n_frames(),
                needed: spec.slow.0,
            }
            .into());
        }
        clip_feature(params, backbone, video, spec.slow.0, spec.slow.1)?
    } else {
        slow_fast_features(params, backbone, video, spec)?
    };
    Ok(feature.iter().map(|v| *v as f64).collect())
}

fn cmd_probe(args: &ProbeArgs) -> Result<(), Failure> {
    if args.test_per_class == Some(0) {
        return Err(Failure::Usage("--test-per-class must be at least 1".into()));
    }
    let random_init = args.random_baseline.then_some(args.seed);
    let (backbone, params, digest) = load_model(&args.ckpt, random_init)?;
    let labels = read_labels(&args.data)?;
    if labels.is_empty() {
        return Err(Failure::Runtime(format!(
            "dataset error: empty labels.tsv in {}",
            args.data.display()
        )));
    }
    let n_classes = labels.iter().map(|(_, c)| c + 1).max().unwrap();

    // Last N of each class (file order) become the test split.
    let mut per_class_count = vec![0usize; n_classes];
    for (_, class) in &labels {
        per_class_count[*class] += 1;
    }
    let smallest = per_class_count.iter().copied().filter(|&n| n > 0).min().unwrap();
    let test_n = args.test_per_class.unwrap_or_else(|| (smallest / 5).max(1));
    if test_n >= smallest {
        return Err(Failure::Runtime(format!(
            "dataset error: holding out {test_n} per class leaves no training data (smallest class has {smallest})"
        )));
    }
    let mut seen = vec![0usize; n_classes];
    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    for (name, class) in &labels {
        seen[*class] += 1;
        if seen[*class] <= per_class_count[*class] - test_n {
            train_rows.push((name.clone(), *class));
        } else {
            test_rows.push((name.clone(), *class));
        }
    }

    let spec = SlowFastSpec::default();
    let total = train_rows.len() + test_rows.len();
    let mut done = 0usize;
    let mut featurize = |rows: &[(String, usize)]| -> Result<Vec<(Vec<f64>, usize)>, Failure> {
        let mut out = Vec::with_capacity(rows.len());
        for (name, class) in rows {
            let video = read_raw_video(&args.data.join(name))?;
            out.push((video_feature(&params, &backbone, &video, &spec, args.slow_only)?, *class));
            done += 1;
            if done % 20 == 0 {
                eprintln!("features {done}/{total}");
            }
        }
        Ok(out)
    };
    let train_set = featurize(&train_rows)?;
    let test_set = featurize(&test_rows)?;

    let mut probe_cfg = ProbeConfig::new(n_classes);
    probe_cfg.seed = args.seed;
    let (classifier, accuracy) = linear_probe(&train_set, &test_set, &probe_cfg)?;

    std::fs::create_dir_all(&args.out)?;
    let mut predictions = String::new();
    for ((name, class), (feature, _)) in test_rows.iter().zip(&test_set) {
        let scores = if args.multicrop {
            let video = read_raw_video(&args.data.join(name))?;
            predict_multicrop(&params, &backbone, &classifier, &video, &spec)?
        } else {
            classifier.scores(feature)
        };
        let pred = scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite scores"))
            .map(|(k, _)| k)
            .unwrap();
        let line = serde_json::json!({
            "file": name,
            "label": class,
            "pred": pred,
            "scores": scores,
        });
        predictions.push_str(&line.to_string());
        predictions.push('\n');
    }
    std::fs::write(args.out.join("predictions.jsonl"), predictions)?;

    let report = serde_json::json!({
        "accuracy": accuracy,
        "n_train": train_set.len(),
        "n_test": test_set.len(),
        "seed": args.seed,
        "config_digest": digest,
    });
    std::fs::write(
        args.out.join("probe_report.json"),
        format!("{}\n", serde_json::to_string_pretty(&report).expect("serializable report")),
    )?;
    write_digest(&args.out, &digest)?;
    println!(
        "probe accuracy {:.4} ({} train / {} test)",
        accuracy,
        train_set.len(),
        test_set.len()
    );
    Ok(())
}

fn cmd_attn_map(args: &AttnMapArgs) -> Result<(), Failure> {
    let (backbone, params, digest) = load_model(&args.ckpt, None)?;
    let video = read_raw_video(&args.video)?;
    let n_frames = video.n_frames();
    if n_frames < 4 {
        return Err(svt::Error::VideoTooShort { len: n_frames, needed: 4 }.into());
    }

    // Feed the model four uniformly sampled frames at the largest square
    // resolution its positional table supports (at most the standard 224).
    let grid = backbone.spatial_side().min((224 / backbone.patch_size).max(1));
    let edge = grid * backbone.patch_size;
    let indices = uniform_indices(n_frames, 4);
    let clip = gather_frames::<f32>(&video, &indices);
    let clip = resize_frames(clip.view(), edge, edge);
    let output = forward(&params, &backbone, clip.view())?;
    let attention = output
        .spatial_cls_attention
        .last()
        .expect("at least one block");
    let (t, n_heads, s_plus_1) = attention.dim();
    assert_eq!(t, 4);
    let s = s_plus_1 - 1;

    std::fs::create_dir_all(&args.out)?;
    for (k, &src) in indices.iter().enumerate() {
        // Head-averaged attention row of the classification token, with its
        // self-attention entry dropped and the rest renormalized to sum 1.
        let mut row = vec![0.0f64; s];
        for head in 0..n_heads {
            for j in 0..s {
                row[j] += attention[(k, head, j)] as f64;
            }
        }
        let sum: f64 = row.iter().sum();
        for v in &mut row {
            *v /= sum;
        }

        let csv = row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        let stem = format!("attn-frame{k}-src{src:03}");
        std::fs::write(args.out.join(format!("{stem}.csv")), format!("{csv}\n"))?;

        // Upsample the grid bilinearly to the source frame size and write a
        // max-normalized grayscale image.
        let mut grid_img = ndarray::Array4::<f32>::zeros((1, grid, grid, 3));
        for j in 0..s {
            let value = row[j] as f32;
            for c in 0..3 {
                grid_img[(0, j / grid, j % grid, c)] = value;
            }
        }
        let up = resize_frames(grid_img.view(), video.height(), video.width());
        let peak = up.iter().cloned().fold(0.0f32, f32::max);
        let gray: Vec<u8> = (0..video.height() * video.width())
            .map(|p| {
                let v = up[(0, p / video.width(), p % video.width(), 0)];
                if peak > 0.0 { ((v / peak) * 255.0).round() as u8 } else { 0 }
            })
            .collect();
        write_pgm(&args.out.join(format!("{stem}.pgm")), video.height(), video.width(), &gray)?;
    }
    write_digest(&args.out, &digest)?;
    println!(
        "wrote attention maps for frames {:?} of {} -> {}",
        indices,
        args.video.display(),
        args.out.display()
    );
    Ok(())
}

/// Binary grayscale PGM (P5, maxval 255), `gray` in row-major order.
fn write_pgm(path: &Path, h: usize, w: usize, gray: &[u8]) -> Result<(), Failure> {
    assert_eq!(gray.len(), h * w);
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend_from_slice(gray);
    std::fs::write(path, bytes)?;
    Ok(())
}
