//! The `gen-data`, `train`, `eval` and `predict` subcommands.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use slicefuse::checkpoint::Checkpoint;
use slicefuse::crf::CrfGrid;
use slicefuse::data::{
    generate_synthetic, label_stats, manifest, patient_folds, read_dataset, select, split_patients, write_dataset,
    MarkovParams, SyntheticConfig, VolumeRecord,
};
use slicefuse::fusion::HeadMode;
use slicefuse::metrics::{EmrMode, MetricsReport};
use slicefuse::training::{history_csv, TrainConfig};

use crate::error::CliError;
use crate::experiment::{render_table, train_fold, FoldModels, ModelKind, ModelSettings};

#[derive(Debug, Parser)]
#[command(name = "slicefuse", version, about = "Bidirectional slice fusion for multi-label volume annotation")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with Markov-coherent labels.
    GenData(GenDataArgs),
    /// Train the base head and the requested models on every fold.
    Train(TrainArgs),
    /// Score trained folds on the held-out test split and print the comparison table.
    Eval(EvalArgs),
    /// Write per-volume prediction matrices as CSV.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output dataset file; a `.manifest.tsv` is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub volumes: usize,
    #[arg(long, default_value_t = 2)]
    pub volumes_per_patient: usize,
    #[arg(long, default_value_t = 49)]
    pub slices: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 11)]
    pub biomarkers: usize,
    /// Markov stay probability, shared by every biomarker.
    #[arg(long, default_value_t = 0.9)]
    pub p_stay: f64,
    /// Stationary positive rate, shared by every biomarker.
    #[arg(long, default_value_t = 0.2)]
    pub positive_rate: f64,
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.05)]
    pub label_noise: f64,
    /// Append a column that is set when no other biomarker is.
    #[arg(long)]
    pub healthy: bool,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

impl GenDataArgs {
    pub fn config(&self) -> SyntheticConfig {
        SyntheticConfig {
            volumes: self.volumes,
            volumes_per_patient: self.volumes_per_patient,
            slices: self.slices,
            dim: self.dim,
            markov: vec![MarkovParams { p_stay: self.p_stay, positive_rate: self.positive_rate }; self.biomarkers],
            mu: self.mu,
            sigma: self.sigma,
            label_noise: self.label_noise,
            healthy_column: self.healthy,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HeadArg {
    Concat,
    Symmetric,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory for checkpoints, histories and fold logs.
    #[arg(long)]
    pub out: PathBuf,
    /// Models besides the base head, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "fused,mlp,crf")]
    pub models: Vec<ModelKind>,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Fraction of patients held out as the fixed test split.
    #[arg(long, default_value_t = 0.1)]
    pub test_fraction: f64,
    /// Training config file (`key = value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Config file for the MLP optimizer; defaults to the main config.
    #[arg(long)]
    pub mlp_config: Option<PathBuf>,
    /// Overrides the config seed; also seeds the splits.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config epoch count.
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Overrides the config learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, value_enum, default_value_t = HeadArg::Concat)]
    pub head_mode: HeadArg,
    #[arg(long, default_value_t = slicefuse::mlp::DEFAULT_MLP_HIDDEN)]
    pub mlp_hidden: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmrArg {
    Strict,
    MissesOnly,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Dataset to score; defaults to the one recorded by `train`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = EmrArg::Strict)]
    pub emr_mode: EmrArg,
    /// Rebuild the table from stored per-fold reports without scoring.
    #[arg(long)]
    pub from_reports: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
    #[arg(long, default_value = "fused")]
    pub model: ModelKind,
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for `<volume_id>.csv` files.
    #[arg(long)]
    pub out: PathBuf,
    /// Only this volume.
    #[arg(long)]
    pub volume: Option<String>,
}

/// Everything `eval` needs to reproduce the splits of a `train` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub dataset: PathBuf,
    pub models: Vec<ModelKind>,
    pub folds: usize,
    pub test_fraction: f64,
    pub split_seed: u64,
    pub settings: ModelSettings,
}

const SPEC_FILE: &str = "experiment.json";
const TABLE_FILE: &str = "table.txt";

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Predict(a) => predict(&a),
    }
}

fn gen_data(args: &GenDataArgs) -> Result<(), CliError> {
    let cfg = args.config();
    let records = generate_synthetic(&cfg)?;
    write_dataset(&records, &args.out)?;
    fs::write(manifest_path(&args.out), manifest(&records))?;
    let stats = label_stats(&records);
    println!(
        "wrote {} volumes ({} slices, {} labels per slice) to {}",
        records.len(),
        stats.slices,
        cfg.label_columns(),
        args.out.display()
    );
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    println!("positive rate:      {}", fmt(&stats.positive_rate));
    println!("lag-1 correlation:  {}", fmt(&stats.lag1_autocorrelation));
    Ok(())
}

fn manifest_path(data: &Path) -> PathBuf {
    let mut name = data.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.tsv");
    data.with_file_name(name)
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig, CliError> {
    match path {
        None => Ok(TrainConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            Ok(TrainConfig::from_toml_str(&text)?)
        }
    }
}

fn apply_overrides(cfg: &mut TrainConfig, args: &TrainArgs) -> Result<(), CliError> {
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(e) = args.max_epochs {
        cfg.max_epochs = e;
    }
    if let Some(lr) = args.lr {
        cfg.lr = lr;
    }
    Ok(cfg.validate()?)
}

fn fold_dir(run: &Path, fold: usize) -> PathBuf {
    run.join(format!("fold-{fold:02}"))
}

fn checkpoint_path(dir: &Path, kind: ModelKind) -> PathBuf {
    dir.join(format!("{}.sfck", kind.name()))
}

/// Test split and per-fold `(train, val)` record indices.
type Folds = (Vec<usize>, Vec<(Vec<usize>, Vec<usize>)>);

fn make_folds(records: &[VolumeRecord], spec: &ExperimentSpec) -> Result<Folds, CliError> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(CliError::Usage(format!("--test-fraction must lie in (0, 1), got {}", spec.test_fraction)));
    }
    let outer = split_patients(records, [1.0 - spec.test_fraction, 0.0, spec.test_fraction], spec.split_seed)?;
    let folds = patient_folds(records, &outer.train, spec.folds, spec.split_seed)?;
    Ok((outer.test, folds))
}

fn folds_log(records: &[VolumeRecord], test: &[usize], folds: &[(Vec<usize>, Vec<usize>)]) -> String {
    let mut out = String::from("fold\tsplit\tvolume_id\tpatient_id\n");
    let mut put = |fold: &str, split: &str, idx: &[usize]| {
        for &i in idx {
            let _ = writeln!(out, "{fold}\t{split}\t{}\t{}", records[i].volume_id, records[i].patient_id);
        }
    };
    put("-", "test", test);
    for (f, (train, val)) in folds.iter().enumerate() {
        put(&f.to_string(), "train", train);
        put(&f.to_string(), "val", val);
    }
    out
}

fn train(args: &TrainArgs) -> Result<(), CliError> {
    if args.folds == 0 {
        return Err(CliError::Usage("--folds must be at least 1".into()));
    }
    let mut cfg = load_config(args.config.as_deref())?;
    apply_overrides(&mut cfg, args)?;
    let mlp_train = match &args.mlp_config {
        Some(p) => {
            let mut m = load_config(Some(p))?;
            m.seed = cfg.seed;
            Some(m)
        }
        None => None,
    };
    let records = read_dataset(&args.data)?;
    let mut models: Vec<ModelKind> = args.models.iter().copied().filter(|k| *k != ModelKind::Base).collect();
    models.sort();
    models.dedup();
    let spec = ExperimentSpec {
        dataset: args.data.clone(),
        models,
        folds: args.folds,
        test_fraction: args.test_fraction,
        split_seed: cfg.seed,
        settings: ModelSettings {
            train: cfg,
            mlp_train,
            hidden: args.hidden,
            head_mode: match args.head_mode {
                HeadArg::Concat => HeadMode::Concat,
                HeadArg::Symmetric => HeadMode::Symmetric,
            },
            mlp_hidden: args.mlp_hidden,
            crf_grid: CrfGrid::default(),
        },
    };
    let (test, folds) = make_folds(&records, &spec)?;
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join(SPEC_FILE), serde_json::to_string_pretty(&spec)? + "\n")?;
    fs::write(args.out.join("folds.txt"), folds_log(&records, &test, &folds))?;

    for (f, (train_idx, val_idx)) in folds.iter().enumerate() {
        let dir = fold_dir(&args.out, f);
        fs::create_dir_all(&dir)?;
        let base_path = checkpoint_path(&dir, ModelKind::Base);
        let head = if base_path.exists() {
            let head = Checkpoint::read(&base_path)?
                .head
                .ok_or_else(|| CliError::Data(format!("{} has no base head", base_path.display())))?;
            println!("fold {f}: reusing stage-1 model {}", base_path.display());
            Some(head)
        } else {
            None
        };
        let (tr, va) = (select(&records, train_idx), select(&records, val_idx));
        let trained = train_fold(&tr, &va, &spec.settings, &spec.models, head)?;
        write_fold(&dir, &trained)?;
        let names: Vec<&str> = ModelKind::ALL
            .into_iter()
            .filter(|&k| trained.has(k) && (k != ModelKind::Base || trained.histories.contains_key(&k)))
            .map(ModelKind::name)
            .collect();
        println!("fold {f}: {} train / {} val volumes, trained {}", tr.len(), va.len(), names.join(", "));
    }
    Ok(())
}

fn write_fold(dir: &Path, m: &FoldModels) -> Result<(), CliError> {
    for (kind, rows) in &m.histories {
        fs::write(dir.join(format!("history-{}.csv", kind.name())), history_csv(rows))?;
    }
    if m.histories.contains_key(&ModelKind::Base) {
        let ck = Checkpoint { head: m.head.clone(), ..Default::default() };
        ck.write(&checkpoint_path(dir, ModelKind::Base))?;
    }
    if let Some(f) = &m.fused {
        let ck = Checkpoint { fusion: Some(f.clone()), ..Default::default() };
        ck.write(&checkpoint_path(dir, ModelKind::Fused))?;
    }
    if let Some(mlp) = &m.mlp {
        let ck = Checkpoint { mlp: Some(mlp.clone()), ..Default::default() };
        ck.write(&checkpoint_path(dir, ModelKind::Mlp))?;
    }
    if let Some(crf) = &m.crf {
        let ck = Checkpoint { head: m.head.clone(), crf: Some(crf.clone()), ..Default::default() };
        ck.write(&checkpoint_path(dir, ModelKind::Crf))?;
    }
    if let Some((before, after)) = &m.crf_logit_checksums {
        if before != after {
            return Err(CliError::Numeric("base logits changed while fitting the CRF".into()));
        }
        fs::write(dir.join("crf-base-logits.sha256"), format!("{before}\n"))?;
    }
    Ok(())
}

fn read_spec(run: &Path) -> Result<ExperimentSpec, CliError> {
    let path = run.join(SPEC_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads every checkpoint present in a fold directory.
fn load_fold(dir: &Path) -> Result<FoldModels, CliError> {
    let mut m = FoldModels::default();
    for kind in ModelKind::ALL {
        let path = checkpoint_path(dir, kind);
        if !path.exists() {
            continue;
        }
        let ck = Checkpoint::read(&path)?;
        match kind {
            ModelKind::Base => m.head = ck.head,
            ModelKind::Fused => m.fused = ck.fusion,
            ModelKind::Mlp => m.mlp = ck.mlp,
            ModelKind::Crf => {
                m.crf = ck.crf;
                if m.head.is_none() {
                    m.head = ck.head;
                }
            }
        }
    }
    Ok(m)
}

fn report_path(dir: &Path, kind: ModelKind) -> PathBuf {
    dir.join(format!("report-{}.json", kind.name()))
}

fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let spec = read_spec(&args.run)?;
    let kinds: Vec<ModelKind> = std::iter::once(ModelKind::Base).chain(spec.models.iter().copied()).collect();
    let mut reports: BTreeMap<ModelKind, Vec<MetricsReport>> = BTreeMap::new();

    if args.from_reports {
        for f in 0..spec.folds {
            let dir = fold_dir(&args.run, f);
            for &kind in &kinds {
                let path = report_path(&dir, kind);
                let text = fs::read_to_string(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                reports.entry(kind).or_default().push(MetricsReport::from_canonical_str(&text)?);
            }
        }
    } else {
        let data = args.data.clone().unwrap_or_else(|| spec.dataset.clone());
        let records = read_dataset(&data)?;
        let (test, _) = make_folds(&records, &spec)?;
        let test = select(&records, &test);
        let mode = match args.emr_mode {
            EmrArg::Strict => EmrMode::Strict,
            EmrArg::MissesOnly => EmrMode::MissesOnly,
        };
        for f in 0..spec.folds {
            let dir = fold_dir(&args.run, f);
            let models = load_fold(&dir)?;
            for &kind in &kinds {
                if !models.has(kind) {
                    return Err(CliError::Data(format!(
                        "missing {} checkpoint in {}",
                        kind.name(),
                        dir.display()
                    )));
                }
                let report = models.evaluate(kind, &test, mode)?;
                fs::write(report_path(&dir, kind), report.to_canonical_string())?;
                reports.entry(kind).or_default().push(report);
            }
        }
    }
    let table = render_table(&reports);
    fs::write(args.run.join(TABLE_FILE), &table)?;
    print!("{table}");
    Ok(())
}

fn predict(args: &PredictArgs) -> Result<(), CliError> {
    let models = load_fold(&fold_dir(&args.run, args.fold))?;
    if !models.has(args.model) {
        return Err(CliError::Data(format!("fold {} has no {} checkpoint", args.fold, args.model)));
    }
    let records = read_dataset(&args.data)?;
    let chosen: Vec<&VolumeRecord> = match &args.volume {
        Some(id) => {
            let r = records
                .iter()
                .find(|r| &r.volume_id == id)
                .ok_or_else(|| CliError::Data(format!("volume {id} not in dataset")))?;
            vec![r]
        }
        None => records.iter().collect(),
    };
    fs::create_dir_all(&args.out)?;
    for r in chosen {
        let p = models.predict(args.model, r)?;
        let mut csv = String::from("slice");
        for b in 0..p.cols() {
            let _ = write!(csv, ",b{b}");
        }
        csv.push('\n');
        for s in 0..p.rows() {
            let _ = write!(csv, "{s}");
            for v in p.row_slice(s) {
                let _ = write!(csv, ",{v}");
            }
            csv.push('\n');
        }
        fs::write(args.out.join(format!("{}.csv", r.volume_id)), csv)?;
    }
    Ok(())
}
