//! `valence`: synthesize a cohort, featurize it, train and evaluate the
//! valence models and write a report.
//!
//! Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error.

mod config;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use valence_core::cohort::{generate_synthetic_cohort, load_cohort, save_cohort, Question, COHORT_FILES};
use valence_core::harness::{
    embedder_weights, emit_report, evaluate_model, featurize, question_baseline, train_model, Dataset, FeatureMode,
    FeatureSet, ModelEntry, ModelKind, Parents, QuestionReport, Report, SensingVariant, SplitName, TrainOverride,
};
use valence_core::nn::Checkpoint;
use valence_core::rocket::KernelSharing;
use valence_core::seed::Seed;

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<valence_core::Error> for CliError {
    fn from(e: valence_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "valence", version, about = "Voice-valence prediction pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Workspace directory; every other path is relative to it.
    #[arg(long)]
    out: PathBuf,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// JSON run configuration, overridden by explicit flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long)]
    threads: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort (sensing log, EMA log, diary archive).
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        participants: Option<usize>,
        #[arg(long)]
        days: Option<usize>,
    },
    /// Compute and cache feature archives.
    Featurize {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        feat: FeatureArgs,
        #[arg(long, value_enum, default_value = "all")]
        mode: ModeArg,
    },
    /// Train per-question models.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sel: Selection,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Score trained models and print top-1/top-2 tables.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sel: Selection,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Write the consolidated test-set report for every trained model.
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// synth, featurize, train and report in one go.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        feat: FeatureArgs,
        #[arg(long)]
        participants: Option<usize>,
        #[arg(long)]
        days: Option<usize>,
        /// Also run the ROCKET sensing variant.
        #[arg(long)]
        rocket: bool,
    },
}

#[derive(Args, Clone)]
struct FeatureArgs {
    /// Embedder weight archive.
    #[arg(long, conflicts_with = "random_init")]
    weights: Option<PathBuf>,
    /// Use seeded random embedder weights.
    #[arg(long)]
    random_init: bool,
    #[arg(long)]
    width_divisor: Option<usize>,
    #[arg(long)]
    kernels: Option<usize>,
    #[arg(long)]
    per_stream_kernels: bool,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    sample_rate: Option<u32>,
    /// DBSCAN radius in metres.
    #[arg(long)]
    eps_m: Option<f64>,
    #[arg(long)]
    min_samples: Option<usize>,
}

#[derive(Args, Clone)]
struct Selection {
    /// audio-text, sensing[-vggish|-rocket], hybrid[-vggish|-rocket], overall[-vggish|-rocket] or all.
    #[arg(long, default_value = "all")]
    model: String,
    #[arg(long, value_enum, default_value = "all")]
    question: QuestionArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    AudioText,
    SensingVggish,
    SensingRocket,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Validation,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum QuestionArg {
    Negativeness,
    Loudness,
    Control,
    Power,
    All,
}

impl QuestionArg {
    fn questions(self) -> Vec<Question> {
        match self {
            QuestionArg::Negativeness => vec![Question::Negativeness],
            QuestionArg::Loudness => vec![Question::Loudness],
            QuestionArg::Control => vec![Question::Control],
            QuestionArg::Power => vec![Question::Power],
            QuestionArg::All => Question::ALL.to_vec(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn setup(common: &Common) -> CliResult<RunConfig> {
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.set_seed(Seed(s));
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Synth {
            common,
            participants,
            days,
        } => {
            let mut cfg = setup(&common)?;
            cmd_synth(&common, &mut cfg, participants, days)
        }
        Command::Featurize { common, feat, mode } => {
            let mut cfg = setup(&common)?;
            apply_feature_args(&mut cfg, &feat)?;
            let modes = match mode {
                ModeArg::AudioText => vec![FeatureMode::AudioText],
                ModeArg::SensingVggish => vec![FeatureMode::SensingVggish],
                ModeArg::SensingRocket => vec![FeatureMode::SensingRocket],
                ModeArg::All => vec![FeatureMode::AudioText, FeatureMode::SensingVggish, FeatureMode::SensingRocket],
            };
            cmd_featurize(&common, &cfg, &feat, &modes)
        }
        Command::Train {
            common,
            sel,
            epochs,
            batch_size,
            learning_rate,
        } => {
            let mut cfg = setup(&common)?;
            let kinds = select_kinds(&sel.model)?;
            if epochs.is_some() || batch_size.is_some() {
                for k in &kinds {
                    let o = cfg.experiment.overrides.entry(k.name()).or_insert(TrainOverride::default());
                    o.epochs = epochs.or(o.epochs);
                    o.batch_size = batch_size.or(o.batch_size);
                }
            }
            if let Some(lr) = learning_rate {
                cfg.experiment.adam.learning_rate = lr;
            }
            cmd_train(&common, &cfg, &kinds, &sel.question.questions())
        }
        Command::Evaluate { common, sel, split } => {
            setup(&common)?;
            let which = match split {
                SplitArg::Validation => SplitName::Validation,
                SplitArg::Test => SplitName::Test,
            };
            cmd_evaluate(&common, &select_kinds(&sel.model)?, &sel.question.questions(), which)
        }
        Command::Report { common } => {
            let cfg = setup(&common)?;
            cmd_report(&common, &cfg).map(|_| ())
        }
        Command::Pipeline {
            common,
            feat,
            participants,
            days,
            rocket,
        } => {
            let mut cfg = setup(&common)?;
            apply_feature_args(&mut cfg, &feat)?;
            cmd_synth(&common, &mut cfg, participants, days)?;
            let mut modes = vec![FeatureMode::AudioText, FeatureMode::SensingVggish];
            if rocket {
                modes.push(FeatureMode::SensingRocket);
                cfg.experiment.variants = vec![SensingVariant::Vggish, SensingVariant::Rocket];
            }
            cmd_featurize(&common, &cfg, &feat, &modes)?;
            cmd_train(&common, &cfg, &cfg.experiment.kinds(), &Question::ALL)?;
            let report = cmd_report(&common, &cfg)?;
            print_report(&report);
            Ok(())
        }
    }
}

fn apply_feature_args(cfg: &mut RunConfig, a: &FeatureArgs) -> CliResult {
    let f = &mut cfg.features;
    if let Some(d) = a.width_divisor {
        f.embedder.width_divisor = d;
    }
    if let Some(k) = a.kernels {
        f.rocket_kernels = k;
    }
    if a.per_stream_kernels {
        f.kernel_sharing = KernelSharing::PerStream;
    }
    if let Some(e) = a.epsilon {
        f.transform.epsilon = e;
    }
    if let Some(r) = a.sample_rate {
        f.transform.sample_rate_hz = r;
    }
    if let Some(e) = a.eps_m {
        f.mobility.eps_m = e;
    }
    if let Some(m) = a.min_samples {
        f.mobility.min_samples = m;
    }
    f.transform.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    f.embedder.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(())
}

fn refuse_overwrite(path: &Path, force: bool) -> CliResult {
    if path.exists() && !force {
        return Err(CliError::Runtime(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn create_dir(path: &Path) -> CliResult {
    std::fs::create_dir_all(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn cmd_synth(common: &Common, cfg: &mut RunConfig, participants: Option<usize>, days: Option<usize>) -> CliResult {
    if let Some(p) = participants {
        cfg.synth.n_participants = p;
    }
    if let Some(d) = days {
        cfg.synth.n_days = d;
    }
    cfg.synth.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    for f in COHORT_FILES {
        refuse_overwrite(&common.out.join(f), common.force)?;
    }
    create_dir(&common.out)?;
    let cohort = generate_synthetic_cohort(&cfg.synth)?;
    save_cohort(&common.out, &cohort)?;
    eprintln!(
        "synth: {} participants, {} EMA responses, {} diaries, {} sensing events -> {}",
        cohort.participants.len(),
        cohort.ema.len(),
        cohort.diaries.len(),
        cohort.events.len(),
        common.out.display()
    );
    Ok(())
}

fn features_path(out: &Path, mode: FeatureMode) -> PathBuf {
    out.join("features").join(format!("{}.tarc", mode.name()))
}

fn cmd_featurize(common: &Common, cfg: &RunConfig, feat: &FeatureArgs, modes: &[FeatureMode]) -> CliResult {
    let needs_embedder = modes.iter().any(|m| *m != FeatureMode::SensingRocket);
    let weights_path = feat.weights.as_ref().map(|p| common.out.join(p));
    if needs_embedder && weights_path.is_none() && !feat.random_init {
        return Err(CliError::Usage(
            "embedder weights are required: pass --weights <archive> or --random-init".into(),
        ));
    }
    let cohort = load_cohort(&common.out)?;
    let weights = embedder_weights(&cfg.features.embedder, weights_path.as_deref())?;
    create_dir(&common.out.join("features"))?;
    for &mode in modes {
        let path = features_path(&common.out, mode);
        if path.exists() && !common.force {
            let cached = FeatureSet::load(&path)?;
            if cached.config_digest == cfg.features.digest() {
                eprintln!("featurize: {} is up to date", path.display());
                continue;
            }
            return Err(CliError::Runtime(format!(
                "{} was built with a different configuration; pass --force to rebuild",
                path.display()
            )));
        }
        let set = featurize(&cohort, &cfg.features, &weights, &[mode])?;
        let width: usize = mode.blocks().iter().map(|b| b.width()).sum();
        set.save(&path)?;
        eprintln!(
            "featurize: {} instances x {} features ({}) -> {}",
            set.len(),
            width,
            mode.name(),
            path.display()
        );
    }
    Ok(())
}

fn select_kinds(model: &str) -> CliResult<Vec<ModelKind>> {
    if model == "all" {
        return Ok(vec![
            ModelKind::AudioText,
            ModelKind::Sensing(SensingVariant::Vggish),
            ModelKind::Hybrid(SensingVariant::Vggish),
            ModelKind::Overall(SensingVariant::Vggish),
        ]);
    }
    model
        .split(',')
        .map(|m| m.trim().parse::<ModelKind>().map_err(|e| CliError::Usage(e.to_string())))
        .collect()
}

fn modes_for(kind: ModelKind) -> Vec<FeatureMode> {
    let sensing = |v| match v {
        SensingVariant::Vggish => FeatureMode::SensingVggish,
        SensingVariant::Rocket => FeatureMode::SensingRocket,
    };
    match kind {
        ModelKind::AudioText => vec![FeatureMode::AudioText],
        ModelKind::Sensing(v) => vec![sensing(v)],
        ModelKind::Hybrid(v) | ModelKind::Overall(v) => vec![FeatureMode::AudioText, sensing(v)],
    }
}

/// Merged feature archives covering `kinds`.
fn load_features(out: &Path, kinds: &[ModelKind]) -> CliResult<FeatureSet> {
    let mut modes: Vec<FeatureMode> = Vec::new();
    for k in kinds {
        for m in modes_for(*k) {
            if !modes.contains(&m) {
                modes.push(m);
            }
        }
    }
    let mut set: Option<FeatureSet> = None;
    for m in modes {
        let path = features_path(out, m);
        if !path.exists() {
            return Err(CliError::Runtime(
                valence_core::Error::Dependency {
                    missing: path.display().to_string(),
                    hint: format!("run `valence featurize --mode {}` first", m.name().replace('_', "-")),
                }
                .to_string(),
            ));
        }
        let f = FeatureSet::load(&path)?;
        match &mut set {
            None => set = Some(f),
            Some(s) => s.merge(f)?,
        }
    }
    set.ok_or_else(|| CliError::Usage("no models selected".into()))
}

fn checkpoint_path(out: &Path, kind: ModelKind, q: Question) -> PathBuf {
    out.join("checkpoints").join(kind.name()).join(format!("{}.tarc", q.as_str()))
}

fn load_parent(out: &Path, parent: ModelKind, child: ModelKind, q: Question) -> CliResult<Checkpoint> {
    let p = checkpoint_path(out, parent, q);
    if !p.exists() {
        return Err(CliError::Runtime(
            valence_core::Error::Dependency {
                missing: format!("the {parent} checkpoint for {q} ({})", p.display()),
                hint: format!("run `valence train --model {}` before training {child}", parent.name().replace('_', "-")),
            }
            .to_string(),
        ));
    }
    Ok(Checkpoint::load(p)?)
}

fn load_parents(out: &Path, kind: ModelKind, q: Question) -> CliResult<Option<(Checkpoint, Checkpoint)>> {
    match kind.parents() {
        None => Ok(None),
        Some((a, s)) => Ok(Some((load_parent(out, a, kind, q)?, load_parent(out, s, kind, q)?))),
    }
}

/// Parents first, so `--model all` can train a hybrid after its inputs.
fn ordered(kinds: &[ModelKind]) -> Vec<ModelKind> {
    let mut v = kinds.to_vec();
    v.sort_by_key(|k| matches!(k, ModelKind::Hybrid(_)));
    v
}

fn cmd_train(common: &Common, cfg: &RunConfig, kinds: &[ModelKind], questions: &[Question]) -> CliResult {
    let kinds = ordered(kinds);
    // dependency check up front, before any training
    for &k in &kinds {
        if let Some((a, s)) = k.parents() {
            for q in questions {
                for p in [a, s] {
                    if !kinds.contains(&p) && !checkpoint_path(&common.out, p, *q).exists() {
                        load_parent(&common.out, p, k, *q)?;
                    }
                }
            }
        }
    }
    let features = load_features(&common.out, &kinds)?;
    let data = Dataset::new(&features);
    for &k in &kinds {
        for &q in questions {
            let path = checkpoint_path(&common.out, k, q);
            refuse_overwrite(&path, common.force)?;
            let parents = load_parents(&common.out, k, q)?;
            let p = parents.as_ref().map(|(a, s)| Parents {
                audio_text: a,
                sensing: s,
            });
            let outcome = train_model(&data, k, q, &cfg.experiment, p)?;
            create_dir(path.parent().expect("checkpoint dir"))?;
            outcome.checkpoint.save(&path)?;
            let last = outcome.history.last().expect("at least one epoch");
            eprintln!(
                "train: {k} {q}: {} epochs, best epoch {} (val top-1 {:.3}), final train loss {:.4} -> {}",
                outcome.history.len(),
                outcome.best_epoch,
                outcome.history[outcome.best_epoch - 1].val_top1.unwrap_or(f64::NAN),
                last.train_loss,
                path.display()
            );
        }
    }
    Ok(())
}

fn evaluate_one(out: &Path, data: &Dataset<'_>, k: ModelKind, q: Question, which: SplitName) -> CliResult<ModelEntry> {
    let path = checkpoint_path(out, k, q);
    if !path.exists() {
        return Err(CliError::Runtime(format!(
            "no checkpoint for {k} {q} at {}; run `valence train --model {}` first",
            path.display(),
            k.name().replace('_', "-")
        )));
    }
    let ck = Checkpoint::load(&path)?;
    let parents = load_parents(out, k, q)?;
    let p = parents.as_ref().map(|(a, s)| Parents {
        audio_text: a,
        sensing: s,
    });
    Ok(evaluate_model(data, k, q, &ck, p, which)?)
}

fn cmd_evaluate(common: &Common, kinds: &[ModelKind], questions: &[Question], which: SplitName) -> CliResult {
    let features = load_features(&common.out, kinds)?;
    let data = Dataset::new(&features);
    println!("{:<14} {:<16} {:>9} {:>9} {:>9} {:>9}", "question", "model", "top1-mic", "top1-mac", "top2-mic", "top2-mac");
    for &q in questions {
        let (chance, _) = question_baseline(&data, q)?;
        if which == SplitName::Test {
            println!(
                "{:<14} {:<16} {:>9.3} {:>9.3} {:>9.3} {:>9.3}",
                q.as_str(),
                "chance",
                chance.top1.micro,
                chance.top1.macro_,
                chance.top2.micro,
                chance.top2.macro_
            );
        }
        for &k in kinds {
            let e = evaluate_one(&common.out, &data, k, q, which)?;
            println!(
                "{:<14} {:<16} {:>9.3} {:>9.3} {:>9.3} {:>9.3}",
                q.as_str(),
                k.name(),
                e.top1.micro,
                e.top1.macro_,
                e.top2.micro,
                e.top2.macro_
            );
        }
    }
    Ok(())
}

fn trained_kinds(out: &Path) -> Vec<ModelKind> {
    let mut kinds: Vec<ModelKind> = std::fs::read_dir(out.join("checkpoints"))
        .into_iter()
        .flatten()
        .flatten()
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.parse().ok()))
        .collect();
    kinds.sort();
    kinds
}

fn cmd_report(common: &Common, cfg: &RunConfig) -> CliResult<Report> {
    let kinds = trained_kinds(&common.out);
    if kinds.is_empty() {
        return Err(CliError::Runtime(format!(
            "no checkpoints under {}; run `valence train` first",
            common.out.join("checkpoints").display()
        )));
    }
    let features = load_features(&common.out, &kinds)?;
    let data = Dataset::new(&features);
    let mut report = Report::new(&data, &cfg.experiment);
    for q in Question::ALL {
        let (chance, prevalence) = question_baseline(&data, q)?;
        let mut models = BTreeMap::new();
        for &k in &kinds {
            if checkpoint_path(&common.out, k, q).exists() {
                models.insert(k.name(), evaluate_one(&common.out, &data, k, q, SplitName::Test)?);
            }
        }
        report.questions.insert(
            q.as_str().to_string(),
            QuestionReport {
                prevalence,
                chance,
                models,
            },
        );
    }
    let path = common.out.join("report.json");
    emit_report(&report, &path)?;
    eprintln!("report: {}", path.display());
    Ok(report)
}

fn print_report(r: &Report) {
    for (q, qr) in &r.questions {
        let mut line = format!("{q:<13} chance {:.3}/{:.3}", qr.chance.top1.micro, qr.chance.top2.micro);
        for (m, e) in &qr.models {
            line += &format!("  {m} {:.3}/{:.3}", e.top1.micro, e.top2.micro);
        }
        println!("{line}");
    }
}
