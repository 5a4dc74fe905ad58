use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use occluface::data::dataset::list_images;
use occluface::data::ppm::{decode_ppm, encode_ppm, RgbImage};
use occluface::data::{augment::augment_pixels, decode_resize, load_dataset, AugmentSpec, OcclusionClass};
use occluface::gru::{gradcheck, GRADCHECK_THRESHOLD};
use occluface::metrics::{report, report_table, tally, ReportFormat, Variant};
use occluface::model::{
    build_network, load_checkpoint, save_checkpoint, train_with, Model, NetworkConfig, Profile, TrainConfig,
};
use occluface::nn::cost::{conv_cost, depletion_ratio, ConvCostInput};
use occluface::reid::{run_batch, Clock, Gallery, SystemClock, DEFAULT_THRESHOLD};

#[derive(Parser)]
#[command(name = "occluface", version, about = "Occluded-face classification and re-identification")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Log progress to standard error.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Full,
    Toy,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Full => Profile::Full,
            ProfileArg::Toy => Profile::Toy,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportArg {
    Text,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Standard,
    Literal,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network on a <person>/<class>/*.ppm tree and save a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint to write.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value = "toy")]
        profile: ProfileArg,
        /// Training settings as `key = value` lines.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the seed from --config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the epoch count from --config.
        #[arg(long)]
        epochs: Option<usize>,
        /// Optional held-out tree for per-epoch validation.
        #[arg(long)]
        validation: Option<PathBuf>,
    },
    /// Per-class accuracy, JSI and MCC on a labelled tree.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        report: ReportArg,
        /// Formula set for JSI and MCC.
        #[arg(long, value_enum, default_value = "standard")]
        variant: VariantArg,
    },
    /// Predict the occlusion class of one image.
    Classify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// Add every person of a labelled tree (or just --person) to a gallery.
    Enroll {
        #[arg(long)]
        model: PathBuf,
        /// Created when missing.
        #[arg(long)]
        gallery: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        person: Option<String>,
    },
    /// Run both stages on one image and report the gate decision.
    Identify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        gallery: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Process a directory of face crops, logging gate passes.
    Watch {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        gallery: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Write randomly transformed copies of every image under --in.
    Augment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Variants per image.
        #[arg(long, default_value_t = 4)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Depthwise-separable convolution cost and its ratio to a full convolution.
    Cost {
        #[arg(long)]
        h: u64,
        #[arg(long)]
        w: u64,
        #[arg(long)]
        din: u64,
        #[arg(long)]
        dout: u64,
        #[arg(long)]
        k: u64,
    },
    /// Compare GRU backpropagation against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        cases: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .parse_default_env()
        .init();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn read_model(path: &Path) -> Result<Model> {
    load_checkpoint(path).with_context(|| format!("--model {}", path.display()))
}

fn read_gallery(path: &Path) -> Result<Gallery> {
    Gallery::load(path).with_context(|| format!("--gallery {}", path.display()))
}

fn read_image(path: &Path, size: usize) -> Result<occluface::Tensor> {
    let bytes = fs::read(path).with_context(|| format!("--image {}", path.display()))?;
    decode_resize(&bytes, size).with_context(|| format!("--image {}", path.display()))
}

fn fmt_probs(p: &occluface::Tensor) -> String {
    p.data().iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(",")
}

fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Train {
            data,
            model,
            profile,
            config,
            seed,
            epochs,
            validation,
        } => {
            let profile = Profile::from(profile);
            let mut tc = TrainConfig::for_profile(profile);
            if let Some(p) = &config {
                let text = fs::read_to_string(p).with_context(|| format!("--config {}", p.display()))?;
                tc = tc.overlay(&text).with_context(|| format!("--config {}", p.display()))?;
            }
            if let Some(s) = seed {
                tc.seed = s;
            }
            if let Some(e) = epochs {
                tc.epochs = e;
            }
            let cfg = NetworkConfig::for_profile(profile);
            let train_set = load_dataset(&data, cfg.input_size).with_context(|| format!("--data {}", data.display()))?;
            let val_set = match &validation {
                Some(v) => load_dataset(v, cfg.input_size).with_context(|| format!("--validation {}", v.display()))?.images,
                None => Vec::new(),
            };
            let mut m = build_network(&cfg, tc.seed)?;
            train_with(&mut m, &train_set.images, &val_set, &tc, |r| {
                let val = match (r.val_loss, r.val_accuracy) {
                    (Some(l), Some(a)) => format!(" val_loss={l:.6} val_acc={a:.4}"),
                    _ => String::new(),
                };
                println!(
                    "epoch={} lr={:.6} train_loss={:.6} train_acc={:.4}{val}",
                    r.epoch + 1,
                    r.learning_rate,
                    r.train_loss,
                    r.train_accuracy
                );
            })?;
            save_checkpoint(&m, &model).with_context(|| format!("--model {}", model.display()))?;
            println!("saved={}", model.display());
        }
        Command::Eval {
            data,
            model,
            report: fmt,
            variant,
        } => {
            let m = read_model(&model)?;
            let ds = load_dataset(&data, m.config.input_size).with_context(|| format!("--data {}", data.display()))?;
            let mut preds = Vec::with_capacity(ds.images.len());
            for img in &ds.images {
                preds.push(m.classify(&img.pixels).with_context(|| img.source.display().to_string())?);
            }
            let truths: Vec<OcclusionClass> = ds.images.iter().map(|i| i.occlusion).collect();
            let rep = report(&tally(&preds, &truths)?)?;
            let format = match fmt {
                ReportArg::Text => ReportFormat::Text,
                ReportArg::Csv => ReportFormat::Csv,
            };
            let variant = match variant {
                VariantArg::Standard => Variant::Standard,
                VariantArg::Literal => Variant::Literal,
            };
            print!("{}", report_table(&rep.rows, format, variant)?);
            if matches!(format, ReportFormat::Text) {
                let correct = preds.iter().zip(&truths).filter(|(p, t)| p == t).count();
                println!("samples={} correct={correct}", rep.samples);
            }
        }
        Command::Classify { model, image } => {
            let m = read_model(&model)?;
            let img = read_image(&image, m.config.input_size)?;
            let inf = m.infer(&img)?;
            println!("class={}", inf.class().folder_name());
            println!("probs={}", fmt_probs(&inf.probs));
        }
        Command::Enroll {
            model,
            gallery,
            data,
            person,
        } => {
            let m = read_model(&model)?;
            let mut g = if gallery.exists() {
                read_gallery(&gallery)?
            } else {
                Gallery::new(m.config.hidden_size)
            };
            if g.dim() != m.config.hidden_size {
                bail!("--gallery {}: embedding size {} does not match the model's {}", gallery.display(), g.dim(), m.config.hidden_size);
            }
            let ds = load_dataset(&data, m.config.input_size).with_context(|| format!("--data {}", data.display()))?;
            let now = SystemClock.now();
            let persons: Vec<String> = match &person {
                Some(p) => vec![p.clone()],
                None => ds.persons().into_iter().map(String::from).collect(),
            };
            for p in persons {
                let imgs: Vec<_> = ds.images.iter().filter(|i| i.person == p).cloned().collect();
                if imgs.is_empty() {
                    bail!("--person {p}: no images under {}", data.display());
                }
                let n = g.enroll(&p, &imgs, &m, now)?;
                println!("enrolled person={p} images={n}");
            }
            g.save(&gallery).with_context(|| format!("--gallery {}", gallery.display()))?;
        }
        Command::Identify {
            model,
            gallery,
            image,
            threshold,
        } => {
            let m = read_model(&model)?;
            let g = read_gallery(&gallery)?;
            let img = read_image(&image, m.config.input_size)?;
            let r = occluface::reid::process_probe(&m, &g, &img, threshold)?;
            println!("class={}", r.occlusion.folder_name());
            println!("classifier_person={}", r.classifier_person.as_deref().unwrap_or("-"));
            println!("identifier_person={}", r.identifier_person);
            println!("score={:.4}", r.score);
            println!("gate={}", if r.passed { "pass" } else { "fail" });
        }
        Command::Watch {
            model,
            gallery,
            input,
            log,
            threshold,
        } => {
            let m = read_model(&model)?;
            let g = read_gallery(&gallery)?;
            let s = run_batch(&m, &g, &input, &log, threshold, &SystemClock).with_context(|| format!("--in {}", input.display()))?;
            for o in &s.outcomes {
                println!(
                    "{} person={} class={} score={:.4} gate={}",
                    o.path.display(),
                    o.result.identifier_person,
                    o.result.occlusion.folder_name(),
                    o.result.score,
                    if o.result.passed { "pass" } else { "fail" }
                );
            }
            for (p, e) in &s.errors {
                eprintln!("{}: {e}", p.display());
            }
            println!(
                "processed={} passed={} failed_gate={} errored={}",
                s.processed, s.passed, s.failed_gate, s.errored
            );
        }
        Command::Augment { input, out, count, seed } => {
            let spec = AugmentSpec {
                seed,
                ..AugmentSpec::default()
            };
            let mut written = 0usize;
            let mut draw = 0u64;
            for file in walk_ppm(&input)? {
                let rel = file.strip_prefix(&input).unwrap_or(&file);
                let bytes = fs::read(&file).with_context(|| format!("--in {}", file.display()))?;
                let rgb = decode_ppm(&bytes).with_context(|| format!("--in {}", file.display()))?;
                let pixels = rgb.to_tensor();
                let stem = rel.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
                let dir = out.join(rel.parent().unwrap_or(Path::new("")));
                fs::create_dir_all(&dir).with_context(|| format!("--out {}", dir.display()))?;
                for i in 0..count {
                    let t = augment_pixels(&pixels, &spec, draw)?;
                    draw += 1;
                    let target = dir.join(format!("{stem}_aug{i}.ppm"));
                    fs::write(&target, encode_ppm(&RgbImage::from_tensor(&t)?))
                        .with_context(|| format!("--out {}", target.display()))?;
                    written += 1;
                }
            }
            println!("written={written}");
        }
        Command::Cost { h, w, din, dout, k } => {
            let c = ConvCostInput::new(h, w, din, dout, k)?;
            println!("cost={}", conv_cost(&c)?);
            println!("D={:.6}", depletion_ratio(&c)?);
        }
        Command::Gradcheck { seed, cases } => {
            let r = gradcheck(seed, cases)?;
            for (name, err) in &r.max_rel_error {
                println!("{name} max_rel_error={err:.3e}");
            }
            println!("worst={:.3e} threshold={:.0e} cases={}", r.worst(), GRADCHECK_THRESHOLD, r.cases);
            if r.passed() {
                println!("PASS");
            } else {
                println!("FAIL");
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Every `.ppm` below `root`, in sorted order.
fn walk_ppm(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = list_images(root).with_context(|| format!("--in {}", root.display()))?;
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .with_context(|| format!("--in {}", root.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for d in dirs {
        out.extend(walk_ppm(&d)?);
    }
    Ok(out)
}
