//! The `pbpm` command line: ingest → featurize → embed → encode →
//! train/tune → evaluate → report. Stages talk only through files in the
//! output directory, tracked by `manifest.json`.

pub mod workspace;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use pbpm_core::eval::{classification_report, confusion_matrix, render_accuracy_table, render_side_by_side, ClassificationReport};
use pbpm_core::event_log::{load_csv, log_stats, write_csv, xes_to_eventlog, EventLog, LogConfig};
use pbpm_core::featurize::{relabel_log, FeaturizationTable};
use pbpm_core::hypermodel::{build_model, HyperParams, Model, RunStatus, TrainConfig, Trainer, TuneObjective};
use pbpm_core::pseudo_embed::{write_embedding_matrix, BinningConfig, DurationUnit, EmbeddingConfig, FittedEmbeddings};
use pbpm_core::synthgen::Profile;
use pbpm_core::tuner::{check_objective, hyperband, HyperbandConfig, ModelTrialRunner, SearchSpace};
use pbpm_core::vectorize::{encode, fit_encoders, stratified_split, AssembleConfig, EncodedDataset, Variant};

pub use workspace::Workspace;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "PBPM_OUT_DIR";

const LOG_CSV: &str = "log/log.csv";
const LOG_TOML: &str = "log/log.toml";
const TABLE_CSV: &str = "featurize/table.csv";
const EMBED_JSON: &str = "embed/config.json";

#[derive(Debug, Parser)]
#[command(name = "pbpm", version, about = "Outcome prediction for business process event logs")]
pub struct Cli {
    /// Output directory [default: $PBPM_OUT_DIR or ./pbpm-out]
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic log with a known outcome rule
    Synth(SynthArgs),
    /// Parse a CSV or XES log into the canonical layout
    Ingest(IngestArgs),
    /// Check and store the label featurization table
    Featurize(FeaturizeArgs),
    /// Choose duration binning and fit the pseudo-embeddings
    Embed(EmbedArgs),
    /// Split and encode the log for one model variant
    Encode(EncodeArgs),
    /// Train one variant with fixed hyperparameters
    Train(TrainArgs),
    /// Search hyperparameters with Hyperband
    Tune(TuneArgs),
    /// Classification report for a trained checkpoint
    Evaluate(EvaluateArgs),
    /// Side-by-side tables over all evaluated variants
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_parser = parse_profile)]
    pub profile: Profile,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Override the profile's case count
    #[arg(long)]
    pub cases: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LogFormat {
    Auto,
    Csv,
    Xes,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub log: PathBuf,
    /// TOML schema and column mapping
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum, default_value_t = LogFormat::Auto)]
    pub format: LogFormat,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    /// CSV file, or one of the bundled tables: patients, patients-extended, bpic12
    #[arg(long)]
    pub table: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BinningMode {
    /// Minutes rounded up, 5-minute cut, 24 bins
    Patients,
    Balanced,
    Total,
    ZeroNonzero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum UnitArg {
    Seconds,
    MinutesCeil,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long, value_enum, default_value_t = BinningMode::Balanced)]
    pub binning: BinningMode,
    #[arg(long, value_enum, default_value_t = UnitArg::Seconds)]
    pub unit: UnitArg,
    #[arg(long, default_value_t = 5.0)]
    pub t_cut: f64,
    #[arg(long, default_value_t = 4)]
    pub q: usize,
    #[arg(long, default_value_t = 24)]
    pub total_bins: usize,
    #[arg(long, default_value_t = 0.2)]
    pub balance_tol: f64,
    #[arg(long, default_value_t = 50)]
    pub max_iter: usize,
    /// Do not add a constant attribute when only one universal exists
    #[arg(long)]
    pub no_dummy: bool,
    #[arg(long, default_value_t = 42)]
    pub split_seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct DataArgs {
    #[arg(long, value_parser = parse_variant)]
    pub variant: Variant,
    #[arg(long, default_value_t = 42)]
    pub split_seed: u64,
    /// Slots per simultaneous group (M-B-LSTM); default: largest in training
    #[arg(long)]
    pub k_max: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    /// Accuracy for balanced classes, weighted F1 otherwise
    Auto,
    Accuracy,
    WeightedF1,
}

impl ObjectiveArg {
    fn resolve(self, ds: &EncodedDataset) -> TuneObjective {
        match self {
            ObjectiveArg::Auto => TuneObjective::for_labels(&ds.labels, ds.meta.n_classes),
            ObjectiveArg::Accuracy => TuneObjective::Accuracy,
            ObjectiveArg::WeightedF1 => TuneObjective::WeightedF1,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Hyperparameters as JSON; otherwise a plain one-layer architecture
    #[arg(long)]
    pub hp: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub units: usize,
    #[arg(long, default_value_t = 32)]
    pub dense_units: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 31)]
    pub batch: usize,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Auto)]
    pub objective: ObjectiveArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpaceArg {
    /// Full published ranges
    Full,
    /// Narrower widths for a single CPU
    Desk,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Maximum epochs per configuration
    #[arg(long = "R", alias = "max-resource", default_value_t = 300)]
    pub max_resource: usize,
    #[arg(long, default_value_t = 3)]
    pub eta: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub max_trials: Option<usize>,
    #[arg(long, value_enum, default_value_t = SpaceArg::Full)]
    pub space: SpaceArg,
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Auto)]
    pub objective: ObjectiveArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
}

impl SplitArg {
    fn name(self) -> &'static str {
        match self {
            SplitArg::Train => "train",
            SplitArg::Val => "val",
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_parser = parse_variant)]
    pub variant: Variant,
    /// Defaults to the variant's latest train/tune checkpoint
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::Val)]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Variants to include (default: every evaluated one)
    #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
    pub variants: Vec<Variant>,
    #[arg(long, value_enum, default_value_t = SplitArg::Val)]
    pub split: SplitArg,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: pbpm_core::CoreError| e.to_string())
}

fn parse_profile(s: &str) -> std::result::Result<Profile, String> {
    s.parse().map_err(|e: pbpm_core::CoreError| e.to_string())
}

pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("pbpm-out"))
}

pub fn run(cli: Cli) -> Result<()> {
    let root = cli.out.unwrap_or_else(default_out_dir);
    let mut ws = Workspace::open(&root)?;
    match cli.command {
        Command::Synth(a) => synth(&mut ws, &a),
        Command::Ingest(a) => ingest(&mut ws, &a),
        Command::Featurize(a) => featurize(&mut ws, &a),
        Command::Embed(a) => embed(&mut ws, &a),
        Command::Encode(a) => ensure_encoded(&mut ws, &a.data).map(|_| ()),
        Command::Train(a) => train_cmd(&mut ws, &a),
        Command::Tune(a) => tune_cmd(&mut ws, &a),
        Command::Evaluate(a) => evaluate(&mut ws, &a),
        Command::Report(a) => report(&mut ws, &a),
    }
}

fn store_log(ws: &mut Workspace, log: &EventLog, stage: &str) -> Result<()> {
    let mut csv = Vec::new();
    write_csv(log, &mut csv)?;
    let cfg = LogConfig::canonical(&log.schema, log.has_end_times);
    ws.write(LOG_CSV, &csv, stage, &[])?;
    ws.write(LOG_TOML, cfg.to_toml_string().as_bytes(), stage, &[])?;
    let stats = serde_json::to_string_pretty(&log_stats(log))? + "\n";
    ws.write("log/stats.json", stats.as_bytes(), stage, &[LOG_CSV.into()])?;
    log::info!("stored {} cases", log.cases.len());
    Ok(())
}

fn synth(ws: &mut Workspace, a: &SynthArgs) -> Result<()> {
    let mut cfg = a.profile.config(a.seed);
    if let Some(n) = a.cases {
        cfg.n_cases = n;
    }
    let log = a.profile.generate(&cfg)?;
    store_log(ws, &log, "synth")?;
    println!("{} cases written to {}", log.cases.len(), ws.path(LOG_CSV).display());
    Ok(())
}

fn ingest(ws: &mut Workspace, a: &IngestArgs) -> Result<()> {
    let cfg = LogConfig::load(&a.config).with_context(|| format!("loading {}", a.config.display()))?;
    let schema = cfg.schema()?;
    let map = cfg.column_map();
    let is_xes = match a.format {
        LogFormat::Xes => true,
        LogFormat::Csv => false,
        LogFormat::Auto => a.log.extension().is_some_and(|e| e.eq_ignore_ascii_case("xes")),
    };
    let log = if is_xes {
        xes_to_eventlog(&a.log, &schema, &map)?
    } else {
        load_csv(&a.log, &schema, &map)?
    };
    log.validate()?;
    store_log(ws, &log, "ingest")?;
    println!("{} cases ingested from {}", log.cases.len(), a.log.display());
    Ok(())
}

fn load_table(spec: &str) -> Result<FeaturizationTable> {
    Ok(match spec {
        "patients" => FeaturizationTable::patients(),
        "patients-extended" => FeaturizationTable::patients_extended(),
        "bpic12" => FeaturizationTable::bpic12(),
        path => FeaturizationTable::load(Path::new(path)).with_context(|| format!("loading table {path}"))?,
    })
}

/// The stored log, relabeled when a featurization table has been stored.
fn load_log(ws: &Workspace) -> Result<EventLog> {
    if !ws.exists(LOG_CSV) {
        bail!("no log in {}; run `synth` or `ingest` first", ws.root().display());
    }
    let cfg = LogConfig::from_toml_str(&ws.read_string(LOG_TOML)?)?;
    let log = load_csv(&ws.path(LOG_CSV), &cfg.schema()?, &cfg.column_map())?;
    if ws.exists(TABLE_CSV) {
        let table = FeaturizationTable::from_csv_str(&ws.read_string(TABLE_CSV)?)?;
        return Ok(relabel_log(log, &table)?);
    }
    Ok(log)
}

fn featurize(ws: &mut Workspace, a: &FeaturizeArgs) -> Result<()> {
    let table = load_table(&a.table)?;
    let mut log = load_log(ws)?;
    for case in &mut log.cases {
        for e in &mut case.events {
            e.label = None;
        }
    }
    let log = relabel_log(log, &table)?;
    let mut rows: Vec<(String, String)> = Vec::new();
    for e in log.cases.iter().flat_map(|c| &c.events) {
        let f = e.label.as_ref().expect("relabeled");
        if !rows.iter().any(|r| r.0 == e.activity) {
            rows.push((e.activity.clone(), f.relabeled.clone()));
        }
    }
    rows.sort();
    let mut out = String::from("label\trelabeled\n");
    for (l, r) in &rows {
        out.push_str(&format!("{l}\t{r}\n"));
    }
    ws.write(TABLE_CSV, table.to_csv_string().as_bytes(), "featurize", &[])?;
    ws.write("featurize/relabeled.tsv", out.as_bytes(), "featurize", &[LOG_CSV.into(), TABLE_CSV.into()])?;
    println!("{} distinct labels featurized (k_max = {})", rows.len(), table.k_max());
    Ok(())
}

fn embedding_config(ws: &Workspace) -> Result<EmbeddingConfig> {
    if ws.exists(EMBED_JSON) {
        Ok(serde_json::from_str(&ws.read_string(EMBED_JSON)?)?)
    } else {
        Ok(EmbeddingConfig::default())
    }
}

fn embed(ws: &mut Workspace, a: &EmbedArgs) -> Result<()> {
    let unit = match a.unit {
        UnitArg::Seconds => DurationUnit::Seconds,
        UnitArg::MinutesCeil => DurationUnit::MinutesCeil,
    };
    let binning = match a.binning {
        BinningMode::Patients => BinningConfig::patients(),
        BinningMode::Balanced => BinningConfig::Balanced {
            unit,
            t_cut: a.t_cut,
            q: a.q,
            balance_tol: a.balance_tol,
            max_iter: a.max_iter,
        },
        BinningMode::Total => BinningConfig::TotalBins {
            unit,
            t_cut: a.t_cut,
            total_bins: a.total_bins,
        },
        BinningMode::ZeroNonzero => BinningConfig::ZeroNonZero,
    };
    let config = EmbeddingConfig {
        binning,
        add_dummy: !a.no_dummy,
    };
    let log = load_log(ws)?;
    let (train_idx, _) = stratified_split(&log.labels(), 0.2, a.split_seed);
    let train = log.subset(&train_idx);
    let want_cor = !log.schema.universal_positions().is_empty();
    let fitted = FittedEmbeddings::fit(&train, &config, log.has_end_times, want_cor)?;
    let cfg_json = serde_json::to_string_pretty(&config)? + "\n";
    ws.write(EMBED_JSON, cfg_json.as_bytes(), "embed", &[])?;
    let inputs = vec![LOG_CSV.to_string(), EMBED_JSON.to_string()];
    let fitted_json = serde_json::to_string_pretty(&fitted)? + "\n";
    ws.write("embed/fitted.json", fitted_json.as_bytes(), "embed", &inputs)?;
    if let Some(m) = fitted.bin_matrix(&train) {
        let mut buf = Vec::new();
        write_embedding_matrix(&m, &mut buf)?;
        ws.write("embed/bin_train.tsv", &buf, "embed", &inputs)?;
        println!("duration bins: {} tf-idf columns", m.values.ncols());
    }
    if let Some(m) = fitted.cor_matrix(&train)? {
        let mut buf = Vec::new();
        write_embedding_matrix(&m, &mut buf)?;
        ws.write("embed/cor_train.tsv", &buf, "embed", &inputs)?;
        println!("correlation: {} tf-idf columns", m.values.ncols());
    }
    Ok(())
}

fn data_dir(v: Variant) -> String {
    format!("data/{}", v.short_name())
}

fn run_dir(v: Variant) -> String {
    format!("runs/{}", v.short_name())
}

/// Encodes the log for `d.variant` unless an up-to-date encoding exists.
pub fn ensure_encoded(ws: &mut Workspace, d: &DataArgs) -> Result<(EncodedDataset, EncodedDataset)> {
    let dir = data_dir(d.variant);
    let (train_rel, val_rel, params_rel) = (format!("{dir}/train.bin"), format!("{dir}/val.bin"), format!("{dir}/params.json"));
    let mut inputs = vec![LOG_CSV.to_string(), LOG_TOML.to_string()];
    for opt in [TABLE_CSV, EMBED_JSON] {
        if ws.exists(opt) {
            inputs.push(opt.to_string());
        }
    }
    let params = serde_json::to_string_pretty(d)? + "\n";
    let params_same = ws.read_string(&params_rel).is_ok_and(|p| p == params);
    let fresh = params_same && ws.is_fresh(&train_rel, &inputs) && ws.is_fresh(&val_rel, &inputs);
    if !fresh {
        let log = load_log(ws)?;
        let cfg = AssembleConfig {
            embedding: embedding_config(ws)?,
            val_fraction: 0.2,
            k_max: d.k_max,
        };
        let (train_idx, val_idx) = stratified_split(&log.labels(), cfg.val_fraction, d.split_seed);
        let train_log = log.subset(&train_idx);
        let enc = fit_encoders(d.variant, &train_log, &cfg)?;
        let train = encode(&train_log, &enc)?;
        let val = encode(&log.subset(&val_idx), &enc)?;
        let mut buf = Vec::new();
        train.write(&mut buf)?;
        ws.write(&train_rel, &buf, "encode", &inputs)?;
        buf.clear();
        val.write(&mut buf)?;
        ws.write(&val_rel, &buf, "encode", &inputs)?;
        ws.write(&params_rel, params.as_bytes(), "encode", &[])?;
        let enc_json = serde_json::to_string(&enc)?;
        ws.write(&format!("{dir}/encoders.json"), enc_json.as_bytes(), "encode", &inputs)?;
        println!(
            "{}: {} train / {} val cases encoded",
            d.variant.display_name(),
            train.len(),
            val.len()
        );
    } else {
        log::info!("{dir} is up to date");
    }
    let train = EncodedDataset::read(&mut ws.read(&train_rel)?.as_slice())?;
    let val = EncodedDataset::read(&mut ws.read(&val_rel)?.as_slice())?;
    Ok((train, val))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BestTrialSummary {
    pub variant: Variant,
    pub trial_id: usize,
    pub hp_digest: String,
    pub objective_name: String,
    pub objective: f64,
    pub n_trials: usize,
}

fn save_model(ws: &mut Workspace, model: &Model, history: &str, stage: &str, inputs: &[String]) -> Result<()> {
    let dir = run_dir(model.variant);
    let mut buf = Vec::new();
    model.save(&mut buf)?;
    ws.write(&format!("{dir}/model.ckpt"), &buf, stage, inputs)?;
    let hp = serde_json::to_string_pretty(&model.hp)? + "\n";
    ws.write(&format!("{dir}/hp.json"), hp.as_bytes(), stage, inputs)?;
    ws.write(&format!("{dir}/history.tsv"), history.as_bytes(), stage, inputs)?;
    Ok(())
}

fn data_inputs(v: Variant) -> Vec<String> {
    let dir = data_dir(v);
    vec![format!("{dir}/train.bin"), format!("{dir}/val.bin")]
}

fn train_cmd(ws: &mut Workspace, a: &TrainArgs) -> Result<()> {
    let variant = a.data.variant;
    let (train, val) = ensure_encoded(ws, &a.data)?;
    let hp: HyperParams = match &a.hp {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => HyperParams::simple(variant, a.units, a.dense_units, a.lr, a.batch),
    };
    let mut cfg = TrainConfig::new(a.objective.resolve(&train), a.seed);
    cfg.max_epochs = a.epochs;
    cfg.patience = a.patience;
    let model = build_model(variant, &hp, &train.meta, a.seed)?;
    let mut trainer = Trainer::new(model, cfg.clone(), &train);
    trainer.train_epochs(&train, &val, a.epochs)?;
    let run = trainer.run().clone();
    if let RunStatus::Failed(reason) = &run.status {
        bail!("training failed: {reason}");
    }
    save_model(ws, trainer.best_model(), &run.history_tsv(), "train", &data_inputs(variant))?;
    println!(
        "{}: best validation {} {:.4} at epoch {} ({:?})",
        variant.display_name(),
        cfg.objective.name(),
        run.best_objective,
        run.best_epoch,
        run.status
    );
    Ok(())
}

fn tune_cmd(ws: &mut Workspace, a: &TuneArgs) -> Result<()> {
    let variant = a.data.variant;
    let (train, val) = ensure_encoded(ws, &a.data)?;
    let objective = a.objective.resolve(&train);
    check_objective(objective, &train.labels, train.meta.n_classes)?;
    let mut cfg = TrainConfig::new(objective, a.seed);
    cfg.max_epochs = a.max_resource;
    cfg.patience = a.patience;
    let runner = ModelTrialRunner {
        variant,
        train: &train,
        val: &val,
        config: cfg,
    };
    let space = match a.space {
        SpaceArg::Full => SearchSpace::full(),
        SpaceArg::Desk => SearchSpace::desk(),
    };
    let hb = HyperbandConfig {
        max_resource: a.max_resource,
        eta: a.eta,
        seed: a.seed,
        workers: a.workers.max(1),
        max_trials: a.max_trials,
    };
    let result = hyperband(&space, variant, &runner, &hb)?;
    let dir = run_dir(variant);
    let inputs = data_inputs(variant);
    ws.write(&format!("{dir}/trials.tsv"), result.trial_log().as_bytes(), "tune", &inputs)?;
    let Some(best) = result.best else {
        bail!("all {} trials failed; see {dir}/trials.tsv", result.n_trials);
    };
    let summary = BestTrialSummary {
        variant,
        trial_id: best.trial_id,
        hp_digest: best.hp.digest(),
        objective_name: objective.name().to_string(),
        objective: best.objective,
        n_trials: result.n_trials,
    };
    save_model(ws, best.state.best_model(), &best.state.run().history_tsv(), "tune", &inputs)?;
    let json = serde_json::to_string_pretty(&summary)? + "\n";
    ws.write(&format!("{dir}/best.json"), json.as_bytes(), "tune", &inputs)?;
    println!(
        "{}: best trial {} of {} ({}) validation {} {:.4}",
        variant.display_name(),
        summary.trial_id,
        summary.n_trials,
        summary.hp_digest,
        summary.objective_name,
        summary.objective
    );
    Ok(())
}

fn evaluate(ws: &mut Workspace, a: &EvaluateArgs) -> Result<()> {
    let dir = run_dir(a.variant);
    let ckpt = a.checkpoint.clone().unwrap_or_else(|| ws.path(&format!("{dir}/model.ckpt")));
    let bytes = std::fs::read(&ckpt).with_context(|| format!("reading checkpoint {}", ckpt.display()))?;
    let mut model = Model::load(&mut bytes.as_slice())?;
    if model.variant != a.variant {
        bail!(
            "checkpoint holds a {} model, not {}",
            model.variant.display_name(),
            a.variant.display_name()
        );
    }
    let data_rel = format!("{}/{}.bin", data_dir(a.variant), a.split.name());
    let ds = EncodedDataset::read(&mut ws.read(&data_rel)?.as_slice())?;
    model.check_compatible(&ds.meta)?;
    let pred = model.predict(&ds)?;
    let cm = confusion_matrix(&ds.labels, &pred.labels, ds.meta.n_classes)?;
    let report = classification_report(&cm, Some(&ds.meta.class_names))?;
    let base = format!("{dir}/report_{}", a.split.name());
    let ckpt_rel = format!("{dir}/model.ckpt");
    let mut inputs = vec![data_rel];
    if ws.exists(&ckpt_rel) && a.checkpoint.is_none() {
        inputs.push(ckpt_rel);
    }
    ws.write(&format!("{base}.json"), report.to_json()?.as_bytes(), "evaluate", &inputs)?;
    let text = report.render();
    ws.write(&format!("{base}.txt"), text.as_bytes(), "evaluate", &inputs)?;
    println!("{}", text.trim_end());
    Ok(())
}

fn report(ws: &mut Workspace, a: &ReportArgs) -> Result<()> {
    let variants: Vec<Variant> = if a.variants.is_empty() { Variant::ALL.to_vec() } else { a.variants.clone() };
    let mut reports: Vec<(String, ClassificationReport)> = Vec::new();
    let mut inputs = Vec::new();
    for v in variants {
        let rel = format!("{}/report_{}.json", run_dir(v), a.split.name());
        if !ws.exists(&rel) {
            if !a.variants.is_empty() {
                bail!("{} has not been evaluated on the {} split", v.display_name(), a.split.name());
            }
            continue;
        }
        reports.push((v.display_name().to_string(), ClassificationReport::from_json(&ws.read_string(&rel)?)?));
        inputs.push(rel);
    }
    if reports.is_empty() {
        bail!("no evaluated variants; run `evaluate` first");
    }
    let table_v = render_side_by_side(&reports);
    let table_vi = render_accuracy_table(&reports);
    ws.write("report/per_class.txt", table_v.as_bytes(), "report", &inputs)?;
    ws.write("report/accuracy.txt", table_vi.as_bytes(), "report", &inputs)?;
    println!("{}\n\n{}", table_v.trim_end(), table_vi.trim_end());
    Ok(())
}
