//! Command-line pipeline over the permafrost core library.
//!
//! Every run is driven by a [`RunConfig`] (JSON file plus flag overrides) and
//! a mandatory seed; every output file records the config hash and seed.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use permafrost_core::domain::{Dataset, ScenarioId, ScenarioSpec};
use permafrost_core::features::{build_feature_matrix, impute_missing};
use permafrost_core::io::{
    format_sig6, generate_synthetic, load_dataset, write_dataset, write_table, DatasetSummary, SynthConfig, Table,
};
use permafrost_core::risk::{
    assess_risk, classify_risk, latitudinal_profile, profile_table, risk_table, scenario_uncertainty, RiskWeights,
};
use permafrost_core::scenario::{
    hybrid_project, projection_table, read_projections, summarize_scenario, HybridConfig, ProjectionResult,
    ScenarioCatalog, ScenarioSummary, BASELINE_YEAR,
};
use permafrost_core::stacking::{
    assign_spatial_folds, audit_table, fit_stacked_ensemble, oof_table, StackedModel, StackingConfig,
};
use permafrost_core::validation::{evaluation_table, random_split_baseline, spatial_cv, temporal_cv, STACKED};
use permafrost_core::Error;

/// Latitude bin width of the risk profile (degrees).
pub const PROFILE_BIN_WIDTH: f64 = 0.5;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(Error),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Data(e) => write!(f, "{e}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(m) => CliError::Usage(m),
            other => CliError::Data(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationSettings {
    pub test_fraction: f64,
    pub min_train_years: usize,
}

impl Default for ValidationSettings {
    fn default() -> Self {
        ValidationSettings {
            test_fraction: 0.2,
            min_train_years: 8,
        }
    }
}

/// Everything a run depends on. Without `data`, the dataset is generated
/// from `synth` with the master seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub data: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Abort on invalid rows instead of dropping their location.
    pub strict_load: bool,
    pub synth: SynthConfig,
    pub stacking: StackingConfig,
    pub validation: ValidationSettings,
    pub scenarios: ScenarioCatalog,
    pub hybrid: HybridConfig,
    pub risk_weights: RiskWeights,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            data: None,
            output_dir: PathBuf::from("out"),
            strict_load: false,
            synth: SynthConfig::default(),
            stacking: StackingConfig::default(),
            validation: ValidationSettings::default(),
            scenarios: ScenarioCatalog::default(),
            hybrid: HybridConfig::default(),
            risk_weights: RiskWeights::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    /// Hash of the settings that determine results. File locations are left
    /// out so identical experiments in different directories agree.
    pub fn config_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.data = None;
        canonical.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> CliResult<()> {
        self.stacking.validate()?;
        self.scenarios.validate()?;
        self.hybrid.validate()?;
        self.risk_weights.validate()?;
        if self.data.is_none() {
            self.synth.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(name = "permafrost", version, about = "Hybrid physics/ML permafrost projection and risk pipeline")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (required here or in the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset CSV; without it the synthetic generator is used.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Reject the whole file on any invalid row.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset CSV and print its summary statistics.
    Synth(SynthArgs),
    /// Fit the stacked ensemble and write the model plus the OOF audit.
    Train(TrainArgs),
    /// Evaluate the pipeline under spatial, temporal or random splits.
    Validate(ValidateArgs),
    /// Project permafrost change under warming scenarios.
    Project(ProjectArgs),
    /// Score and classify projected locations.
    Risk(RiskArgs),
    /// Collect every CSV and JSON output into report.json.
    Report,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    locations: Option<usize>,
    /// Defaults to <out>/dataset.csv.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    /// Spatial folds (stacking and spatial CV).
    #[arg(short = 'k', long = "folds")]
    k: Option<usize>,
    /// Training rows per OOF fold before downsampling.
    #[arg(long)]
    sample_cap: Option<usize>,
    /// Leave out permafrost-fraction lag, trend and year-over-year columns.
    #[arg(long)]
    exclude_pf_history: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Defaults to <out>/model.json.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Also write the OOF prediction matrix to <out>/oof.csv.
    #[arg(long)]
    dump_oof: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Spatial,
    Temporal,
    Random,
}

impl Mode {
    fn as_str(self) -> &'static str {
        match self {
            Mode::Spatial => "spatial",
            Mode::Temporal => "temporal",
            Mode::Random => "random",
        }
    }
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long, value_enum, default_value = "spatial")]
    mode: Mode,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    min_train_years: Option<usize>,
}

/// Mixing semantics: hybrid = ml_weight·ml_delta + physics_weight·phys_delta,
/// phys_delta = −10·ΔT·w. Under RCP85 with `--physics-only --force-w 1` the
/// mean decline is 0.4·50 = 20.0 pp; adding `--physics-weight 1` makes it 50.
#[derive(Debug, Args)]
struct ProjectArgs {
    /// Model JSON; defaults to <out>/model.json.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Scenario ids (RCP26, RCP45, RCP85) or `all`.
    #[arg(long = "scenario", default_value = "all")]
    scenarios: Vec<String>,
    /// Overrides ΔT (°C) of the single selected scenario.
    #[arg(long)]
    delta_t: Option<f64>,
    /// Overrides the horizon (years) of the selected scenarios.
    #[arg(long)]
    horizon: Option<u32>,
    #[arg(long)]
    ml_weight: Option<f64>,
    #[arg(long)]
    physics_weight: Option<f64>,
    /// Use this sensitivity multiplier everywhere instead of the tier table.
    #[arg(long)]
    force_w: Option<f64>,
    /// Take the ML delta as 0; mixing weights are unchanged.
    #[arg(long)]
    physics_only: bool,
    /// Allow positive hybrid deltas under warming.
    #[arg(long)]
    allow_gain: bool,
}

#[derive(Debug, Args)]
struct RiskArgs {
    /// Projection CSV; defaults to <out>/projections.csv.
    #[arg(long)]
    projections: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the selected command.
pub fn run<I, T>(args: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            return Err(CliError::Usage(e.to_string().trim_end().to_string()));
        }
    };
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    if cli.data.is_some() {
        cfg.data = cli.data;
    }
    cfg.strict_load |= cli.strict;

    match cli.command {
        Command::Synth(a) => {
            if let Some(n) = a.locations {
                cfg.synth.n_locations = n;
            }
            cmd_synth(&Context::new(cfg)?, a.output)
        }
        Command::Train(a) => {
            a.pipeline.apply(&mut cfg);
            cmd_train(&Context::new(cfg)?, a.model, a.dump_oof)
        }
        Command::Validate(a) => {
            a.pipeline.apply(&mut cfg);
            if let Some(f) = a.test_fraction {
                cfg.validation.test_fraction = f;
            }
            if let Some(m) = a.min_train_years {
                cfg.validation.min_train_years = m;
            }
            cmd_validate(&Context::new(cfg)?, a.mode)
        }
        Command::Project(a) => cmd_project(cfg, a),
        Command::Risk(a) => cmd_risk(&Context::new(cfg)?, a.projections),
        Command::Report => cmd_report(&Context::new(cfg)?),
    }
}

impl PipelineArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(k) = self.k {
            cfg.stacking.k = k;
        }
        if let Some(c) = self.sample_cap {
            cfg.stacking.sample_cap = c;
        }
        cfg.stacking.exclude_pf_history |= self.exclude_pf_history;
    }
}

/// A validated configuration with its provenance line.
struct Context {
    cfg: RunConfig,
    seed: u64,
    provenance: String,
}

impl Context {
    fn new(mut cfg: RunConfig) -> CliResult<Self> {
        let seed = cfg
            .seed
            .ok_or_else(|| CliError::Usage("a seed is required: pass --seed or set \"seed\" in the config".into()))?;
        cfg.synth.seed = seed;
        cfg.validate()?;
        let provenance = format!("config_hash={} seed={seed}", cfg.config_hash());
        Ok(Context { cfg, seed, provenance })
    }

    fn out(&self, name: &str) -> CliResult<PathBuf> {
        let dir = &self.cfg.output_dir;
        fs::create_dir_all(dir).map_err(|e| CliError::Data(Error::Io {
            path: dir.clone(),
            source: e,
        }))?;
        Ok(dir.join(name))
    }

    fn dataset(&self) -> CliResult<Dataset> {
        let raw = match &self.cfg.data {
            Some(path) => {
                let (ds, stats) = load_dataset(path, self.cfg.strict_load)?;
                if stats.dropped_rows > 0 {
                    println!(
                        "loader dropped {} rows ({} locations) failing validation",
                        stats.dropped_rows, stats.dropped_locations
                    );
                }
                ds
            }
            None => generate_synthetic(&self.cfg.synth)?,
        };
        Ok(impute_missing(&raw)?)
    }

    fn write_table(&self, name: &str, table: Table) -> CliResult<PathBuf> {
        let path = self.out(name)?;
        write_table(&path, &table.with_provenance(self.provenance.clone()))?;
        Ok(path)
    }

    fn write_json<S: Serialize>(&self, name: &str, value: &S) -> CliResult<PathBuf> {
        let mut v = serde_json::to_value(value).map_err(|e| CliError::Internal(e.to_string()))?;
        match &mut v {
            Value::Object(map) => {
                map.insert("provenance".into(), Value::String(self.provenance.clone()));
            }
            _ => return Err(CliError::Internal("JSON outputs must be objects".into())),
        }
        let path = self.out(name)?;
        let text = serde_json::to_string_pretty(&v).map_err(|e| CliError::Internal(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| CliError::Data(Error::Io {
            path: path.clone(),
            source: e,
        }))?;
        Ok(path)
    }
}

fn cmd_synth(ctx: &Context, output: Option<PathBuf>) -> CliResult<()> {
    let dataset = generate_synthetic(&ctx.cfg.synth)?;
    let path = match output {
        Some(p) => p,
        None => ctx.out("dataset.csv")?,
    };
    write_dataset(&path, &dataset, Some(&ctx.provenance))?;
    let s = DatasetSummary::of(&dataset);
    ctx.write_json("synth_summary.json", &s)?;
    println!("wrote {} ({} rows, {} locations)", path.display(), s.rows, s.locations);
    println!(
        "mean_pf={:.2} median_pf={:.2} corr_temperature_pf={:.4} slope_62_68={}",
        s.mean_pf,
        s.median_pf,
        s.corr_temperature_pf,
        s.slope_62_68.map_or("n/a".to_string(), |v| format!("{v:.2}"))
    );
    Ok(())
}

fn cmd_train(ctx: &Context, model_path: Option<PathBuf>, dump_oof: bool) -> CliResult<()> {
    let dataset = ctx.dataset()?;
    let features = ctx.cfg.stacking.prepare(build_feature_matrix(&dataset)?);
    let fit = fit_stacked_ensemble(&features, &ctx.cfg.stacking, ctx.seed)?;
    let audit = fit.oof.audit(&features.rows);
    let audit_path = ctx.write_table("oof_audit.csv", audit_table(&audit))?;
    if let Some(a) = audit.iter().find(|a| a.shared_locations > 0) {
        return Err(CliError::Internal(format!(
            "fold {} trained on {} of its own locations",
            a.fold, a.shared_locations
        )));
    }
    if dump_oof {
        let keys: Vec<_> = features.rows.iter().map(|r| r.location).collect();
        let folds = assign_spatial_folds(&keys, ctx.cfg.stacking.k)?.row_folds(&features.rows)?;
        ctx.write_table("oof.csv", oof_table(&features, &fit.oof, &folds))?;
    }
    let mut model = fit.model;
    model.provenance = ctx.provenance.clone();
    let path = match model_path {
        Some(p) => p,
        None => ctx.out("model.json")?,
    };
    model.save(&path)?;

    let m = &model.metadata;
    println!("wrote {} and {}", path.display(), audit_path.display());
    println!("rows={} locations={} folds={} sample_cap={}", m.n_rows, m.n_locations, m.k, m.sample_cap);
    for (name, rmse) in fit.oof.learner_names.iter().zip(&m.base_oof_rmse) {
        println!("oof_rmse {name}={rmse:.4}");
    }
    println!("oof_rmse {STACKED}={:.4}", m.stacked_oof_rmse);
    println!(
        "meta intercept={:.4} weights={:?}",
        model.meta.intercept(),
        model.meta.coefficients().iter().map(|c| format_sig6(*c)).collect::<Vec<_>>()
    );
    println!("oof audit: 0 shared locations in {} folds", audit.len());
    Ok(())
}

fn cmd_validate(ctx: &Context, mode: Mode) -> CliResult<()> {
    let dataset = ctx.dataset()?;
    let cfg = &ctx.cfg;
    let evaluations = match mode {
        Mode::Spatial => {
            let report = spatial_cv(&dataset, cfg.stacking.k, &cfg.stacking, ctx.seed)?;
            let mut t = Table::new(&["fold", "train_locations", "test_locations", "shared_locations", "inner_shared_locations"]);
            for a in &report.audits {
                t.push(vec![
                    a.fold.into(),
                    a.train_locations.into(),
                    a.test_locations.into(),
                    a.shared_locations.into(),
                    a.inner_shared_locations.into(),
                ]);
            }
            ctx.write_table("audit_spatial.csv", t)?;
            if report.audits.iter().any(|a| a.shared_locations + a.inner_shared_locations > 0) {
                return Err(CliError::Internal("spatial CV shares locations across a split".into()));
            }
            report.evaluations
        }
        Mode::Temporal => {
            let report = temporal_cv(&dataset, cfg.validation.min_train_years, &cfg.stacking, ctx.seed)?;
            let mut t = Table::new(&["test_year", "min_train_year", "max_train_year", "train_rows", "test_rows"]);
            for a in &report.audits {
                t.push(vec![
                    a.test_year.into(),
                    a.min_train_year.into(),
                    a.max_train_year.into(),
                    a.train_rows.into(),
                    a.test_rows.into(),
                ]);
            }
            ctx.write_table("audit_temporal.csv", t)?;
            report.evaluations
        }
        Mode::Random => random_split_baseline(&dataset, cfg.validation.test_fraction, &cfg.stacking, ctx.seed)?.evaluations,
    };
    let path = ctx.write_table(&format!("metrics_{}.csv", mode.as_str()), evaluation_table(&evaluations))?;
    println!("wrote {}", path.display());
    for e in evaluations.iter().filter(|e| e.split == "pooled" || mode != Mode::Spatial) {
        println!(
            "{} {} {}: r2={:.4} rmse={:.3} mae={:.3} mape={:.2}",
            e.protocol, e.split, e.model, e.metrics.r2, e.metrics.rmse, e.metrics.mae, e.metrics.mape
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct ScenarioReport {
    arctic_delta_t: f64,
    horizon_years: u32,
    #[serde(flatten)]
    summary: ScenarioSummary,
}

#[derive(Serialize)]
struct ProjectionSummary {
    hybrid: HybridConfig,
    scenarios: Vec<ScenarioReport>,
}

fn selected_scenarios(catalog: &ScenarioCatalog, names: &[String]) -> CliResult<Vec<ScenarioSpec>> {
    if names.iter().any(|n| n.eq_ignore_ascii_case("all")) {
        let mut all = catalog.scenarios.clone();
        all.sort_by_key(|s| s.id);
        return Ok(all);
    }
    let mut ids = names.iter().map(|n| n.parse::<ScenarioId>()).collect::<Result<Vec<_>, _>>()?;
    ids.sort();
    ids.dedup();
    ids.iter().map(|&id| Ok(*catalog.get(id)?)).collect()
}

fn cmd_project(mut cfg: RunConfig, a: ProjectArgs) -> CliResult<()> {
    let h = &mut cfg.hybrid;
    if let Some(w) = a.ml_weight {
        h.ml_weight = w;
    }
    if let Some(w) = a.physics_weight {
        h.physics_weight = w;
    }
    if a.force_w.is_some() {
        h.force_w = a.force_w;
    }
    h.physics_only |= a.physics_only;
    h.allow_gain |= a.allow_gain;
    let mut specs = selected_scenarios(&cfg.scenarios, &a.scenarios)?;
    if let Some(dt) = a.delta_t {
        if specs.len() != 1 {
            return Err(CliError::Usage("--delta-t needs exactly one --scenario".into()));
        }
        specs[0].arctic_delta_t = dt;
    }
    if let Some(hz) = a.horizon {
        for s in &mut specs {
            s.horizon_years = hz;
        }
    }
    // The run is described by the scenarios it actually projects.
    cfg.scenarios = ScenarioCatalog { scenarios: specs.clone() };
    let ctx = Context::new(cfg)?;

    let model_path = match a.model {
        Some(p) => p,
        None => ctx.out("model.json")?,
    };
    let model = StackedModel::load(&model_path)?;
    let dataset = ctx.dataset()?;
    let mut all = Vec::new();
    let mut reports = Vec::new();
    for spec in &specs {
        let results = hybrid_project(&model, &dataset, spec, &ctx.cfg.hybrid)?;
        let summary = summarize_scenario(&results)?;
        println!(
            "{}: dT={} mean_decline={:.3} median_decline={:.3} share>=5={:.4} share>=10={:.4} share>20={:.4}",
            spec.id,
            spec.arctic_delta_t,
            summary.mean_decline,
            summary.median_decline,
            summary.share_decline_ge_5,
            summary.share_decline_ge_10,
            summary.share_decline_gt_20
        );
        reports.push(ScenarioReport {
            arctic_delta_t: spec.arctic_delta_t,
            horizon_years: spec.horizon_years,
            summary,
        });
        all.extend(results);
    }
    let path = ctx.write_table("projections.csv", projection_table(&all))?;
    ctx.write_json(
        "projection_summary.json",
        &ProjectionSummary {
            hybrid: ctx.cfg.hybrid.clone(),
            scenarios: reports,
        },
    )?;
    println!("wrote {}", path.display());
    Ok(())
}

fn location_label(lat: f64, lon: f64) -> (String, String) {
    (format_sig6(lat), format_sig6(lon))
}

#[derive(Serialize)]
struct ClassSummary {
    scenario: ScenarioId,
    n_locations: usize,
    low: usize,
    medium: usize,
    high: usize,
    cut_low: f64,
    cut_high: f64,
    flag_pf50: usize,
    flag_tm2: usize,
    flag_d20: usize,
}

#[derive(Serialize)]
struct UncertaintyReport {
    scenarios: Vec<permafrost_core::risk::ScenarioUncertainty>,
}

#[derive(Serialize)]
struct RiskSummary {
    weights: RiskWeights,
    scenarios: Vec<ClassSummary>,
}

fn cmd_risk(ctx: &Context, projections: Option<PathBuf>) -> CliResult<()> {
    let path = match projections {
        Some(p) => p,
        None => ctx.out("projections.csv")?,
    };
    let mut results: Vec<ProjectionResult> = read_projections(&path)?;
    if results.is_empty() {
        return Err(CliError::Data(Error::EmptyInput("projection file has no rows")));
    }
    let dataset = ctx.dataset()?;
    let t_base: HashMap<(String, String), f64> = dataset
        .observations()
        .filter(|o| o.year == BASELINE_YEAR)
        .filter_map(|o| o.temperature().map(|t| (location_label(o.location.lat, o.location.lon), t)))
        .collect();
    for r in &mut results {
        r.t_base = t_base
            .get(&location_label(r.location.lat, r.location.lon))
            .copied()
            .unwrap_or(f64::NAN);
    }
    let assessments = assess_risk(&results, &ctx.cfg.risk_weights)?;
    let risk_path = ctx.write_table("risk.csv", risk_table(&assessments))?;

    let mut classes = Vec::new();
    for id in ScenarioId::ALL {
        let subset: Vec<_> = assessments.iter().filter(|a| a.scenario == id).copied().collect();
        if subset.is_empty() {
            continue;
        }
        let bins = latitudinal_profile(&subset, PROFILE_BIN_WIDTH)?;
        ctx.write_table(&format!("profile_{id}.csv"), profile_table(&bins))?;
        let scores: Vec<f64> = subset.iter().map(|a| a.score).collect();
        let c = classify_risk(&scores)?;
        let [low, medium, high] = c.counts();
        let count = |f: fn(&permafrost_core::risk::RiskAssessment) -> bool| subset.iter().filter(|a| f(a)).count();
        println!(
            "{id}: low={low} medium={medium} high={high} cut_low={:.4} cut_high={:.4}",
            c.cut_low, c.cut_high
        );
        classes.push(ClassSummary {
            scenario: id,
            n_locations: subset.len(),
            low,
            medium,
            high,
            cut_low: c.cut_low,
            cut_high: c.cut_high,
            flag_pf50: count(|a| a.flag_pf50),
            flag_tm2: count(|a| a.flag_tm2),
            flag_d20: count(|a| a.flag_d20),
        });
    }
    ctx.write_json(
        "risk_summary.json",
        &RiskSummary {
            weights: ctx.cfg.risk_weights.clone(),
            scenarios: classes,
        },
    )?;
    ctx.write_json(
        "uncertainty_quantiles.json",
        &UncertaintyReport {
            scenarios: scenario_uncertainty(&results)?,
        },
    )?;
    println!("wrote {}", risk_path.display());
    Ok(())
}

#[derive(Serialize)]
struct CsvEntry {
    file: String,
    provenance: Option<String>,
    columns: Vec<String>,
    rows: usize,
}

#[derive(Serialize)]
struct Report {
    csv: Vec<CsvEntry>,
    json: serde_json::Map<String, Value>,
    model: Option<Value>,
}

fn cmd_report(ctx: &Context) -> CliResult<()> {
    let dir = &ctx.cfg.output_dir;
    let io_err = |path: &Path, e| CliError::Data(Error::Io {
        path: path.to_path_buf(),
        source: e,
    });
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    names.sort();
    let mut report = Report {
        csv: Vec::new(),
        json: serde_json::Map::new(),
        model: None,
    };
    for name in names {
        let path = dir.join(&name);
        if name.ends_with(".csv") {
            let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            let mut lines = text.lines().peekable();
            let provenance = lines
                .next_if(|l| l.starts_with('#'))
                .map(|l| l.trim_start_matches('#').trim().to_string());
            let columns = lines.next().map_or_else(Vec::new, |h| h.split(',').map(str::to_string).collect());
            report.csv.push(CsvEntry {
                file: name,
                provenance,
                columns,
                rows: lines.filter(|l| !l.is_empty()).count(),
            });
        } else if name == "model.json" {
            let model = StackedModel::load(&path)?;
            report.model = Some(serde_json::json!({
                "format_version": model.format_version,
                "manifest_hash": model.manifest_hash,
                "meta_coefficients": model.meta.coefficients(),
                "meta_intercept": model.meta.intercept(),
                "metadata": model.metadata,
                "provenance": model.provenance,
            }));
        } else if name.ends_with(".json") && name != "report.json" {
            let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            let value: Value = serde_json::from_str(&text).map_err(|e| CliError::Data(Error::Serde(e)))?;
            report.json.insert(name, value);
        }
    }
    let path = ctx.write_json("report.json", &report)?;
    println!("wrote {} ({} CSV files, {} JSON files)", path.display(), report.csv.len(), report.json.len());
    Ok(())
}
