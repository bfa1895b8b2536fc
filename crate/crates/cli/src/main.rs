//! Command-line front end: cohort synthesis, featurization, training,
//! LOSO evaluation, Shapley attribution, stress screening/adjustment, and
//! the six-experiment runner.

use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use bandboost_core::dsp::PipelineConfig;
use bandboost_core::evaluate::loso;
use bandboost_core::explain::{aggregate_importance, tree_shap_batch, write_shap_csv};
use bandboost_core::features::{build_feature_table, FeatureTable};
use bandboost_core::gbt::GbtModel;
use bandboost_core::ingest::load_manifest;
use bandboost_core::stressguard::{adjust, screen, stress_coefficient, StressAdjustment, StressReport};
use bandboost_core::synthgen::{synth_cohort, CohortSpec};
use bandboost_core::Error;

use bandboost_cli::config::{CliResult, ExperimentConfig, GbtSetting};
use bandboost_cli::experiment::{self, CONTROL_LABEL};
use bandboost_cli::report::{emit_report, importance_svg, ExperimentReport, SVG_TOP_N};

#[derive(Parser)]
#[command(
    name = "bandboost",
    version,
    about = "EEG band-power classification: synthetic cohorts, boosted trees, \
             Shapley attribution, and stress-confound experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic EEG cohort (EDF recordings plus manifest.json).
    Synth {
        /// Cohort spec JSON (classes, band powers, stress fractions, seed).
        #[arg(long)]
        spec: PathBuf,
        /// Output directory for the recordings and manifest.
        #[arg(long)]
        out: PathBuf,
    },
    /// Condition recordings from a manifest and extract band-power features.
    Features {
        /// Dataset manifest JSON.
        #[arg(long)]
        manifest: PathBuf,
        /// Output feature CSV.
        #[arg(long)]
        out: PathBuf,
        /// Pipeline config JSON (defaults match the study settings).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a boosted-tree model on a feature CSV.
    Train {
        /// Input feature CSV.
        #[arg(long)]
        features: PathBuf,
        /// Output model JSON.
        #[arg(long)]
        out: PathBuf,
        /// Fixed training parameters JSON.
        #[arg(long, conflicts_with = "grid")]
        params: Option<PathBuf>,
        /// Hyperparameter grid JSON, resolved by 4-fold subject CV.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Leave-one-subject-out evaluation of a feature CSV.
    Loso {
        #[arg(long)]
        features: PathBuf,
        /// Output directory (loso.json, confusion.csv).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, conflicts_with = "grid")]
        params: Option<PathBuf>,
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Per-epoch Shapley attributions and an importance ranking.
    Shap {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Output directory (shap.csv, importance.csv, importance.svg).
        #[arg(long)]
        out: PathBuf,
    },
    /// Flag subjects whose aggregated stress probability exceeds a threshold.
    StressScreen {
        /// Binary stress model JSON.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = bandboost_core::stressguard::DEFAULT_STRESS_THRESHOLD)]
        threshold: f64,
        /// Output stress report JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Subtract stress band offsets from selected subjects' features.
    StressAdjust {
        /// Feature CSV to correct.
        #[arg(long)]
        features: PathBuf,
        /// Labeled stress cohort CSV (label 0 calm, others stressed) the
        /// offsets are estimated from.
        #[arg(long)]
        stress_features: PathBuf,
        /// Comma-separated subject ids to adjust.
        #[arg(long, conflicts_with = "screen_report", required_unless_present = "screen_report")]
        subjects: Option<String>,
        /// Stress report JSON; its flagged subjects are adjusted.
        #[arg(long)]
        screen_report: Option<PathBuf>,
        /// Output adjusted feature CSV.
        #[arg(long)]
        out: PathBuf,
        /// Optional audit JSON recording coefficients and subjects.
        #[arg(long)]
        audit: Option<PathBuf>,
    },
    /// Run one of the six predefined experiments from a config JSON.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-emit the CSV/SVG artifacts of a saved report.json.
    Report {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value = serde_json::from_str(&text).map_err(|e| Error::MalformedJson {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(value)
}

fn setting_from_flags(params: Option<PathBuf>, grid: Option<PathBuf>) -> CliResult<GbtSetting> {
    match (params, grid) {
        (Some(p), _) => Ok(GbtSetting::Params(read_json(&p)?)),
        (None, Some(g)) => Ok(GbtSetting::Grid(read_json(&g)?)),
        (None, None) => Ok(GbtSetting::Params(Default::default())),
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Synth { spec, out } => {
            let spec: CohortSpec = read_json(&spec)?;
            let manifest = synth_cohort(&spec, &out)?;
            println!(
                "wrote {} ({} recordings)",
                out.join("manifest.json").display(),
                manifest.entries.len()
            );
        }
        Command::Features { manifest, out, config } => {
            let pipeline: PipelineConfig = match config {
                Some(path) => read_json(&path)?,
                None => PipelineConfig::default(),
            };
            pipeline.validate()?;
            let manifest = load_manifest(&manifest)?;
            let table = build_feature_table(&manifest, &pipeline)?;
            table.save_csv(&out)?;
            println!(
                "wrote {} ({} epochs, {} features)",
                out.display(),
                table.rows.len(),
                table.n_features()
            );
        }
        Command::Train { features, out, params, grid, seed } => {
            let table = FeatureTable::load_csv(&features)?;
            let setting = setting_from_flags(params, grid)?;
            let (chosen, score) = experiment::resolve_params(&table, &setting, seed)?;
            let model = experiment::fit_model(&table, &chosen)?;
            model.save_json(&out)?;
            match score {
                Some(s) => println!("wrote {} (grid winner, cv score {s:.4})", out.display()),
                None => println!("wrote {}", out.display()),
            }
        }
        Command::Loso { features, out, params, grid, seed } => {
            let table = FeatureTable::load_csv(&features)?;
            let setting = setting_from_flags(params, grid)?;
            let (chosen, _) = experiment::resolve_params(&table, &setting, seed)?;
            let result = loso(&table, &chosen, seed)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            result.save_json(&out.join("loso.json"))?;
            result.save_confusion_csv(&out.join("confusion.csv"))?;
            let macro_auc = result
                .macro_auc
                .map(|a| format!("{a:.4}"))
                .unwrap_or_else(|| "undefined".into());
            println!(
                "wrote {} (accuracy {:.4}, macro AUC {macro_auc})",
                out.join("loso.json").display(),
                result.accuracy
            );
        }
        Command::Shap { model, features, out } => {
            let model = GbtModel::load_json(&model)?;
            let table = FeatureTable::load_csv(&features)?;
            let shap = tree_shap_batch(&model, &table.values_matrix())?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let shap_path = out.join("shap.csv");
            let file = std::fs::File::create(&shap_path).map_err(|e| Error::io(&shap_path, e))?;
            write_shap_csv(BufWriter::new(file), &table, &shap)?;
            let importance = aggregate_importance(&shap, &table.feature_names)?;
            importance.save_csv(&out.join("importance.csv"))?;
            let svg_path = out.join("importance.svg");
            std::fs::write(&svg_path, importance_svg(&importance, SVG_TOP_N))
                .map_err(|e| Error::io(&svg_path, e))?;
            println!("wrote {}", shap_path.display());
            println!("wrote {}", out.join("importance.csv").display());
            println!("wrote {}", svg_path.display());
        }
        Command::StressScreen { model, features, threshold, out } => {
            let model = GbtModel::load_json(&model)?;
            let table = FeatureTable::load_csv(&features)?;
            let report = screen(&model, &table, threshold)?;
            report.save_json(&out)?;
            println!(
                "wrote {} ({}/{} subjects flagged)",
                out.display(),
                report.n_flagged(),
                report.subjects.len()
            );
        }
        Command::StressAdjust {
            features,
            stress_features,
            subjects,
            screen_report,
            out,
            audit,
        } => {
            let table = FeatureTable::load_csv(&features)?;
            let stress = FeatureTable::load_csv(&stress_features)?;
            let labels = stress.subject_labels();
            let stressed =
                stress.filter_subjects(|s| labels.get(s).copied() != Some(CONTROL_LABEL));
            let calm = stress.filter_subjects(|s| labels.get(s).copied() == Some(CONTROL_LABEL));
            let coefficients = stress_coefficient(&stressed, &calm)?;
            let targets: Vec<String> = match (subjects, screen_report) {
                (Some(list), _) => list
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect(),
                (None, Some(path)) => read_json::<StressReport>(&path)?.flagged_subjects(),
                (None, None) => unreachable!("clap requires one of the two"),
            };
            let adjusted = adjust(&table, &coefficients, &targets)?;
            adjusted.save_csv(&out)?;
            if let Some(audit_path) = audit {
                let record = StressAdjustment {
                    feature_names: table.feature_names.clone(),
                    coefficients,
                    adjusted_subjects: targets.clone(),
                };
                record.save_json(&audit_path)?;
                println!("wrote {}", audit_path.display());
            }
            println!("wrote {} ({} subjects adjusted)", out.display(), targets.len());
        }
        Command::Experiment { config, out } => {
            let mut config = ExperimentConfig::load(&config)?;
            if let Some(out) = out {
                config.out_dir = out;
            }
            let report = experiment::run_experiment(&config)?;
            let files = emit_report(&report, &config.out_dir)?;
            for file in &files {
                println!("wrote {}", file.display());
            }
            let macro_auc = report
                .loso
                .macro_auc
                .map(|a| format!("{a:.4}"))
                .unwrap_or_else(|| "undefined".into());
            println!(
                "experiment {}: {} subjects, accuracy {:.4}, macro AUC {macro_auc}",
                report.experiment_id,
                report.subjects.len(),
                report.loso.accuracy
            );
        }
        Command::Report { report, out } => {
            let report = ExperimentReport::load(&report)?;
            for file in emit_report(&report, &out)? {
                println!("wrote {}", file.display());
            }
        }
    }
    Ok(())
}
