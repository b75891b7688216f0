//! Subcommands: `dataset`, `train`, `infer`, `ablate`, `eval`.

use std::fs::{self, File};
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use iepg_core::fusion::{guide_sequence, FusionModel, SourceBundle, Variant};
use iepg_core::gec::{gen_semantic_sequence, GecModel};
use iepg_core::metrics::{eval_report, EvalOptions, MetricReport};
use iepg_core::pose::{DatasetConfig, PoseSkeleton};
use iepg_core::train::{
    drop_intermediates, gec_validation, select_pairs, GecTrainer, LossRecord, PairSelection, PisTrainer,
};
use serde::Serialize;

use crate::ablation::{comparison_table, parse_arms, ArmResult, Study};
use crate::checkpoint::{write_atomic, Checkpoint};
use crate::config::{resolve_seed, RunConfig};
use crate::data::{load_dataset, parse_frame_id, write_dataset, SkeletonJson};
use crate::error::{CliError, CliResult};
use crate::images::{overlay, semantic_rgb, write_ppm, write_rgb};

#[derive(Debug, Parser)]
#[command(name = "iepg", version, about = "Incremental-evolution pose generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic turning dataset.
    Dataset(DatasetArgs),
    /// Train one stage.
    Train(TrainArgs),
    /// Synthesize one turn and write every evolution frame.
    Infer(InferArgs),
    /// Train and score study arms.
    Ablate(AblateArgs),
    /// Score a trained synthesizer on the test split.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 28)]
    pub persons: usize,
    #[arg(long, default_value_t = 15.0)]
    pub yaw_step: f64,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long)]
    pub test_persons: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Gec,
    Pis,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub stage: Stage,
    #[arg(long)]
    pub config: PathBuf,
    /// Global evolution checkpoint (required for `pis`).
    #[arg(long)]
    pub gec: Option<PathBuf>,
    /// Fusion depth: S, B or L.
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub increments: Option<usize>,
    /// Overrides the configured step count of the stage.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub fusion: PathBuf,
    #[arg(long)]
    pub gec: Option<PathBuf>,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Source frame as `<person>:<yaw index>`.
    #[arg(long)]
    pub source: String,
    /// Target yaw in degrees (a multiple of the dataset's yaw step).
    #[arg(long, conflicts_with = "target_skeleton", required_unless_present = "target_skeleton")]
    pub target_yaw: Option<f64>,
    /// Target skeleton as dataset JSON (`keypoints`, `visible`).
    #[arg(long)]
    pub target_skeleton: Option<PathBuf>,
    /// Intermediate guides; defaults to the checkpoint's training value.
    #[arg(long)]
    pub increments: Option<usize>,
    /// Intermediate guides randomly dropped before synthesis.
    #[arg(long, default_value_t = 0)]
    pub remove: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Trained global evolution checkpoint; trained from the config when absent.
    #[arg(long)]
    pub gec: Option<PathBuf>,
    /// Arm or group names: full, inc<N>, remove<N>, no_tpkf, no_iec, no_msc,
    /// no_eada, ie6, ie9, increments, removal, knockouts, all.
    #[arg(long, num_args = 1.., default_value = "all")]
    pub arms: Vec<String>,
    /// `exhaustive`, `sampled N` or `gap DEG` (default: the training gap).
    #[arg(long, num_args = 1..=2)]
    pub pairs: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub fusion: PathBuf,
    #[arg(long)]
    pub gec: Option<PathBuf>,
    #[arg(long)]
    pub dataset: PathBuf,
    /// `exhaustive`, `sampled N` or `gap DEG`.
    #[arg(long, num_args = 1..=2, default_values_t = ["exhaustive".to_string()])]
    pub pairs: Vec<String>,
    #[arg(long)]
    pub increments: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub remove: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report path.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Dataset(a) => cmd_dataset(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Infer(a) => cmd_infer(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Eval(a) => cmd_eval(&a),
    }
}

pub fn parse_pairs(words: &[String]) -> CliResult<PairSelection> {
    let num = |w: Option<&String>| -> CliResult<f64> {
        w.and_then(|s| s.parse().ok())
            .ok_or_else(|| CliError::Usage("pair mode needs a numeric argument".into()))
    };
    match words.first().map(String::as_str) {
        Some("exhaustive") if words.len() == 1 => Ok(PairSelection::Exhaustive),
        Some("sampled") => {
            let n = num(words.get(1))?;
            if n < 1.0 || n.fract() != 0.0 {
                return Err(CliError::Usage("sample count must be a positive integer".into()));
            }
            Ok(PairSelection::Sampled(n as usize))
        }
        Some("gap") => Ok(PairSelection::Gap(num(words.get(1))?)),
        _ => Err(CliError::Usage(format!(
            "unknown pair mode `{}` (expected exhaustive, sampled N or gap DEG)",
            words.join(" ")
        ))),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn cmd_dataset(a: &DatasetArgs) -> CliResult<()> {
    let cfg = DatasetConfig {
        n_persons: a.persons,
        yaw_step_deg: a.yaw_step,
        image_size: a.size,
        seed: resolve_seed(a.seed, 0)?,
        test_persons: a.test_persons,
    };
    let (data, index) = write_dataset(&cfg, &a.out)?;
    println!(
        "wrote {} frames ({} persons × {} yaws, {} test persons) to {}, digest {}",
        data.frame_count(),
        data.frames.len(),
        data.yaw_count(),
        data.test_ids.len(),
        a.out.display(),
        index.digest
    );
    Ok(())
}

/// Append-only loss log, truncated at the start of a run.
struct LossLog(BufWriter<File>);

impl LossLog {
    fn create(path: &Path) -> CliResult<Self> {
        let f = File::create(path).map_err(|e| CliError::io(path, e))?;
        Ok(LossLog(BufWriter::new(f)))
    }

    fn write(&mut self, r: &LossRecord, path: &Path) -> CliResult<()> {
        writeln!(self.0, "{r}").map_err(|e| CliError::io(path, e))
    }

    fn flush(&mut self, path: &Path) -> CliResult<()> {
        self.0.flush().map_err(|e| CliError::io(path, e))
    }
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(v) = a.variant {
        cfg.fusion.variant = v;
    }
    if let Some(n) = a.increments {
        cfg.train.increments = n;
    }
    match (a.stage, a.steps) {
        (Stage::Gec, Some(n)) => cfg.train.gec_steps = n,
        (Stage::Pis, Some(n)) => cfg.train.pis_steps = n,
        _ => {}
    }
    cfg.validate()?;
    // Check the prerequisite before any expensive work.
    let gec_ckpt = match (a.stage, &a.gec) {
        (Stage::Pis, None) => {
            return Err(CliError::Usage("`train pis` requires --gec <checkpoint>".into()));
        }
        (Stage::Pis, Some(p)) => Some(Checkpoint::load(p)?),
        (Stage::Gec, _) => None,
    };
    let data = load_dataset(&cfg.dataset)?;
    cfg.fusion.image_size = data.image_size();
    fs::create_dir_all(&cfg.out_dir).map_err(|e| CliError::io(&cfg.out_dir, e))?;
    write_atomic(&cfg.out_dir.join("config.json"), cfg.to_json().as_bytes())?;
    let every = cfg.checkpoint_every;
    let periodic = |step: usize, total: usize| step == total || (every > 0 && step.is_multiple_of(every));
    let mut rng = iepg_core::rng_from_seed(cfg.train.seed);
    match a.stage {
        Stage::Gec => {
            let (ckpt_path, log_path) = (cfg.out_dir.join("gec.ckpt"), cfg.out_dir.join("gec_loss.log"));
            let mut log = LossLog::create(&log_path)?;
            let model = GecModel::new(&cfg.gec, &mut rng)?;
            let mut t = GecTrainer::new(model, &cfg.train, &data)?;
            while t.step < cfg.train.gec_steps {
                for r in t.train_step(&data)? {
                    log.write(&r, &log_path)?;
                }
                if periodic(t.step, cfg.train.gec_steps) {
                    log.flush(&log_path)?;
                    Checkpoint::from_gec(&t.model, &cfg.train, t.step).save(&ckpt_path)?;
                }
            }
            if cfg.train.gec_steps == 0 {
                Checkpoint::from_gec(&t.model, &cfg.train, 0).save(&ckpt_path)?;
            }
            log.flush(&log_path)?;
            let v = gec_validation(&t.model, &data, &cfg.train, *cfg.train.gec_increments.iter().max().unwrap_or(&0), cfg.train.seed)?;
            println!(
                "gec: {} steps, held-out pose loss {:.6}, endpoint errors {:.4} / {:.4}; wrote {}",
                t.step,
                v.pose,
                v.first_error,
                v.last_error,
                ckpt_path.display()
            );
        }
        Stage::Pis => {
            let gec = gec_ckpt.expect("checked above").to_gec()?;
            let (ckpt_path, log_path) = (cfg.out_dir.join("pis.ckpt"), cfg.out_dir.join("pis_loss.log"));
            let mut log = LossLog::create(&log_path)?;
            let model = FusionModel::new(&cfg.fusion, &mut rng)?;
            let mut t = PisTrainer::new(model, Some(gec), &cfg.train, &data)?;
            while t.step < cfg.train.pis_steps {
                for r in t.train_step(&data)? {
                    log.write(&r, &log_path)?;
                }
                if periodic(t.step, cfg.train.pis_steps) {
                    log.flush(&log_path)?;
                    Checkpoint::from_fusion(&t.model, &cfg.train, t.step).save(&ckpt_path)?;
                }
            }
            log.flush(&log_path)?;
            let (model, _) = t.finish()?;
            if cfg.train.pis_steps == 0 {
                Checkpoint::from_fusion(&model, &cfg.train, 0).save(&ckpt_path)?;
            }
            println!("pis: {} steps; wrote {}", cfg.train.pis_steps, ckpt_path.display());
        }
    }
    Ok(())
}

fn load_gec(path: Option<&PathBuf>, steps: usize) -> CliResult<Option<GecModel>> {
    match path {
        Some(p) => Ok(Some(Checkpoint::load(p)?.to_gec()?)),
        None if steps > 1 => Err(CliError::Usage(
            "intermediate guides need a global evolution checkpoint (--gec)".into(),
        )),
        None => Ok(None),
    }
}

#[derive(Serialize)]
struct InferRecord<'a> {
    source: &'a str,
    target_yaw: Option<f64>,
    steps: usize,
    removed: usize,
    seed: u64,
    frames: Vec<InferFrame>,
}

#[derive(Serialize)]
struct InferFrame {
    t: usize,
    image: String,
    overlay: String,
    semantic: String,
    skeleton: SkeletonJson,
}

pub fn cmd_infer(a: &InferArgs) -> CliResult<()> {
    let ckpt = Checkpoint::load(&a.fusion)?;
    let fusion = ckpt.to_fusion()?;
    let increments = a.increments.unwrap_or(ckpt.meta.train.increments);
    let steps = increments + 1;
    let gec = load_gec(a.gec.as_ref(), steps)?;
    let data = load_dataset(&a.dataset)?;
    if data.image_size() != fusion.cfg.image_size {
        return Err(CliError::Usage(format!(
            "the synthesizer was trained at {}px, the dataset is {}px",
            fusion.cfg.image_size,
            data.image_size()
        )));
    }
    let (person, yaw) = parse_frame_id(&a.source, &data)?;
    let src = data.frame(person, yaw);
    let target = match (&a.target_skeleton, a.target_yaw) {
        (Some(p), _) => SkeletonJson::load(p)?,
        (None, Some(deg)) => {
            let k = deg / data.config.yaw_step_deg;
            if (k - k.round()).abs() > 1e-9 || k < 0.0 || k.round() as usize >= data.yaw_count() {
                return Err(CliError::Usage(format!(
                    "target yaw {deg} is not a dataset yaw (multiples of {} below 360)",
                    data.config.yaw_step_deg
                )));
            }
            data.frame(person, k.round() as usize).skeleton.clone()
        }
        (None, None) => return Err(CliError::Usage("give --target-yaw or --target-skeleton".into())),
    };
    let seed = resolve_seed(a.seed, 0)?;
    let mut rng = iepg_core::rng_from_seed(seed);
    let mut guides: Vec<PoseSkeleton> = guide_sequence(&src.skeleton, &target, gec.as_ref(), steps, &mut rng)?;
    drop_intermediates(&mut guides, a.remove, &mut rng)?;
    let bundle = SourceBundle::new(src.image.clone(), &src.skeleton, fusion.cfg.heatmap_sigma);
    let (_, seq) = fusion.synthesize_guided(&bundle, &guides)?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    let semantics = gen_semantic_sequence(&guides, fusion.cfg.image_size);
    let mut frames = Vec::with_capacity(seq.len());
    for (i, (f, sem)) in seq.frames().iter().zip(&semantics).enumerate() {
        let t = i + 1;
        let names = [format!("image_t{t:02}.ppm"), format!("overlay_t{t:02}.ppm"), format!("semantic_t{t:02}.ppm")];
        write_ppm(&a.out.join(&names[0]), &f.image)?;
        write_rgb(&a.out.join(&names[1]), &overlay(&f.image, &f.skeleton))?;
        write_rgb(&a.out.join(&names[2]), &semantic_rgb(sem))?;
        let [image, overlay, semantic] = names;
        frames.push(InferFrame {
            t,
            image,
            overlay,
            semantic,
            skeleton: SkeletonJson::from(&f.skeleton),
        });
    }
    let n = frames.len();
    write_json(
        &a.out.join("sequence.json"),
        &InferRecord {
            source: &a.source,
            target_yaw: a.target_yaw,
            steps,
            removed: a.remove,
            seed,
            frames,
        },
    )?;
    println!("wrote {n} evolution frames to {}", a.out.display());
    Ok(())
}

fn print_report(report: &MetricReport) {
    print!("{}", report.table());
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    let sel = parse_pairs(&a.pairs)?;
    let ckpt = Checkpoint::load(&a.fusion)?;
    let fusion = ckpt.to_fusion()?;
    let steps = a.increments.unwrap_or(ckpt.meta.train.increments) + 1;
    let gec = load_gec(a.gec.as_ref(), steps)?;
    let data = load_dataset(&a.dataset)?;
    let seed = resolve_seed(a.seed, 0)?;
    let pairs = select_pairs(&data, &data.test_ids, &sel, seed)?;
    let opts = EvalOptions {
        steps,
        remove: a.remove,
        seed,
    };
    let report = eval_report(&fusion, gec.as_ref(), &data, &pairs, &opts)?;
    print_report(&report);
    write_json(&a.out, &report)
}

#[derive(Serialize)]
struct AblationOutput<'a> {
    config: &'a RunConfig,
    arms: Vec<ArmSummary<'a>>,
}

#[derive(Serialize)]
struct ArmSummary<'a> {
    arm: &'a str,
    mean_ssim: f64,
    mean_psnr: f64,
    report: &'a MetricReport,
}

pub fn cmd_ablate(a: &AblateArgs) -> CliResult<()> {
    let cfg = RunConfig::load(&a.config)?;
    let arms = parse_arms(&a.arms, cfg.train.increments)?;
    let data = load_dataset(&cfg.dataset)?;
    let sel = match &a.pairs {
        Some(words) => parse_pairs(words)?,
        None => PairSelection::Gap(cfg.train.pair_gap_deg),
    };
    let pairs = select_pairs(&data, &data.test_ids, &sel, cfg.train.seed)?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| CliError::io(&cfg.out_dir, e))?;
    let gec = match &a.gec {
        Some(p) => Checkpoint::load(p)?.to_gec()?,
        None => {
            let mut rng = iepg_core::rng_from_seed(cfg.train.seed);
            let model = GecModel::new(&cfg.gec, &mut rng)?;
            let log_path = cfg.out_dir.join("gec_loss.log");
            let mut log = LossLog::create(&log_path)?;
            let mut t = GecTrainer::new(model, &cfg.train, &data)?;
            while t.step < cfg.train.gec_steps {
                for r in t.train_step(&data)? {
                    log.write(&r, &log_path)?;
                }
            }
            log.flush(&log_path)?;
            Checkpoint::from_gec(&t.model, &cfg.train, t.step).save(&cfg.out_dir.join("gec.ckpt"))?;
            t.model
        }
    };
    let mut fusion = cfg.fusion.clone();
    fusion.image_size = data.image_size();
    let log_path = cfg.out_dir.join("ablate_loss.log");
    let mut log = LossLog::create(&log_path)?;
    let mut failure = None;
    let mut sink = |arm: &str, r: &LossRecord| {
        if failure.is_none() {
            if let Err(e) = writeln!(log.0, "{arm} {r}") {
                failure = Some(e);
            }
        }
    };
    let mut study = Study::new(&data, &gec, fusion, cfg.train.clone(), pairs, cfg.train.seed);
    let results: Vec<ArmResult> = study.run(&arms, &mut sink)?;
    if let Some(e) = failure {
        return Err(CliError::io(&log_path, e));
    }
    log.flush(&log_path)?;
    print!("{}", comparison_table(&results));
    let out = AblationOutput {
        config: &cfg,
        arms: results
            .iter()
            .map(|r| ArmSummary {
                arm: &r.arm,
                mean_ssim: r.report.mean_ssim,
                mean_psnr: r.report.mean_psnr,
                report: &r.report,
            })
            .collect(),
    };
    write_json(&cfg.out_dir.join("ablation.json"), &out)?;
    fs::write(cfg.out_dir.join("ablation.txt"), comparison_table(&results))
        .map_err(|e| CliError::io(cfg.out_dir.join("ablation.txt"), e))
}
