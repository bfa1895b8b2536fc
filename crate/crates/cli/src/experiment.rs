//! The six-experiment runner: cohort assembly recipes, stress screening,
//! band adjustment, LOSO evaluation, and attribution for the final model.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use bandboost_core::dsp::PipelineConfig;
use bandboost_core::evaluate::loso;
use bandboost_core::explain::{aggregate_importance, tree_shap_batch};
use bandboost_core::features::{build_feature_table, FeatureTable};
use bandboost_core::gbt::cv::grid_search_cv;
use bandboost_core::gbt::{train, GbtModel, GbtParams};
use bandboost_core::ingest::load_manifest;
use bandboost_core::stressguard::{adjust, screen, stress_coefficient, StressReport};
use bandboost_core::Error;

use crate::config::{
    AdjustmentSource, CliError, CliResult, ExperimentConfig, ExperimentId, GbtSetting,
};
use crate::report::{ExperimentReport, StressSection};

/// Label 0 is the control class in every manifest; anything else is a case.
pub const CONTROL_LABEL: u32 = 0;

fn load_role(path: &Path, pipeline: &PipelineConfig) -> CliResult<FeatureTable> {
    let manifest = load_manifest(path)?;
    Ok(build_feature_table(&manifest, pipeline)?)
}

/// Merge two feature tables, refusing subject-id collisions (these would
/// silently leak one dataset's epochs into the other's LOSO folds).
fn merge_disjoint(mut left: FeatureTable, right: &FeatureTable) -> CliResult<FeatureTable> {
    let seen: HashSet<String> = left.subjects().into_iter().collect();
    for subject in right.subjects() {
        if seen.contains(&subject) {
            return Err(CliError::Core(Error::DuplicateSubject(subject)));
        }
    }
    left.merge(right)?;
    Ok(left)
}

fn cases_only(table: &FeatureTable) -> FeatureTable {
    let labels = table.subject_labels();
    table.filter_subjects(|s| labels.get(s).copied() != Some(CONTROL_LABEL))
}

fn controls_only(table: &FeatureTable) -> FeatureTable {
    let labels = table.subject_labels();
    table.filter_subjects(|s| labels.get(s).copied() == Some(CONTROL_LABEL))
}

/// Draw `n` subjects from the external pool without replacement (seeded);
/// a pool of size <= n is used whole, in manifest order.
fn select_controls(pool: &FeatureTable, n: usize, seed: u64) -> FeatureTable {
    let subjects = pool.subjects();
    if subjects.len() <= n {
        return pool.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, subjects.len(), n).into_vec();
    picked.sort_unstable();
    let keep: HashSet<&str> = picked.iter().map(|&i| subjects[i].as_str()).collect();
    pool.filter_subjects(|s| keep.contains(s))
}

/// Fixed parameters pass through; a grid is resolved by 4-fold subject-level
/// cross-validation on the given table.
pub fn resolve_params(
    table: &FeatureTable,
    setting: &GbtSetting,
    seed: u64,
) -> CliResult<(GbtParams, Option<f64>)> {
    match setting {
        GbtSetting::Params(p) => Ok((p.clone(), None)),
        GbtSetting::Grid(grid) => {
            let result = grid_search_cv(
                &table.values_matrix(),
                &table.labels(),
                &table.row_subjects(),
                grid,
                4,
                seed,
            )?;
            Ok((result.best_params, Some(result.best_score)))
        }
    }
}

pub fn fit_model(table: &FeatureTable, params: &GbtParams) -> CliResult<GbtModel> {
    let mut model = train(&table.values_matrix(), &table.labels(), params, None)?;
    model.set_feature_names(&table.feature_names)?;
    Ok(model)
}

/// Train the binary stress screener on the labeled stress cohort, using the
/// same parameter policy as the main model.
fn train_stress_model(
    stress: &FeatureTable,
    setting: &GbtSetting,
    seed: u64,
) -> CliResult<GbtModel> {
    let (params, _) = resolve_params(stress, setting, seed)?;
    fit_model(stress, &params)
}

/// Stress offset per feature. `stress_dataset` contrasts the labeled groups
/// of the stress cohort; `cohort_screen` contrasts flagged vs unflagged
/// controls inside the experiment cohort itself.
fn coefficients_for(
    source: AdjustmentSource,
    stress_table: &FeatureTable,
    cohort: &FeatureTable,
    report: &StressReport,
) -> CliResult<Vec<f64>> {
    match source {
        AdjustmentSource::StressDataset => {
            let labels = stress_table.subject_labels();
            let stressed =
                stress_table.filter_subjects(|s| labels.get(s).copied() != Some(CONTROL_LABEL));
            let calm =
                stress_table.filter_subjects(|s| labels.get(s).copied() == Some(CONTROL_LABEL));
            Ok(stress_coefficient(&stressed, &calm)?)
        }
        AdjustmentSource::CohortScreen => {
            let flagged: HashSet<String> = report.flagged_subjects().into_iter().collect();
            let controls = controls_only(cohort);
            let stressed = controls.filter_subjects(|s| flagged.contains(s));
            let calm = controls.filter_subjects(|s| !flagged.contains(s));
            Ok(stress_coefficient(&stressed, &calm)?)
        }
    }
}

/// Cases from both case cohorts plus externally sourced controls, the shared
/// starting point of experiments 3-5.
fn external_cohort(
    rest: &FeatureTable,
    task: &FeatureTable,
    external: &FeatureTable,
    seed: u64,
) -> CliResult<FeatureTable> {
    let cases = merge_disjoint(cases_only(rest), &cases_only(task))?;
    let n_cases = cases.subjects().len();
    let controls = select_controls(&controls_only(external), n_cases, seed);
    merge_disjoint(cases, &controls)
}

struct Assembly {
    cohort: FeatureTable,
    stress: Option<StressSection>,
}

fn assemble(config: &ExperimentConfig) -> CliResult<Assembly> {
    let pipeline = &config.pipeline;
    let id = config.experiment_id;
    let role = |name| -> CliResult<FeatureTable> { load_role(config.role_path(name)?, pipeline) };

    match id {
        ExperimentId::RestBinary => Ok(Assembly {
            cohort: role("rest")?,
            stress: None,
        }),
        ExperimentId::TaskBinary => Ok(Assembly {
            cohort: role("task")?,
            stress: None,
        }),
        ExperimentId::MergedMulticlass => {
            let rest = role("rest")?;
            let task = role("task")?;
            Ok(Assembly {
                cohort: merge_disjoint(rest, &task)?,
                stress: None,
            })
        }
        ExperimentId::ExternalControls => {
            let rest = role("rest")?;
            let task = role("task")?;
            let external = role("external_controls")?;
            Ok(Assembly {
                cohort: external_cohort(&rest, &task, &external, config.seed)?,
                stress: None,
            })
        }
        ExperimentId::ScreenAndExclude | ExperimentId::AdjustAndRetain => {
            let rest = role("rest")?;
            let task = role("task")?;
            let external = role("external_controls")?;
            let stress = role("stress")?;
            let cohort =
                external_cohort(&rest, &task, &external, config.seed)?;

            let model = train_stress_model(&stress, &config.gbt, config.seed)?;
            let report = screen(&model, &cohort, config.stress_threshold)?;

            // Exclusion and adjustment act on the control arm only. The
            // whole cohort is screened for the report, but dropping flagged
            // case subjects would shrink and bias the very classes under
            // evaluation, and the correction coefficient describes the
            // control group's stress shift, not a case profile.
            let control_ids: HashSet<String> =
                controls_only(&cohort).subjects().into_iter().collect();
            let flagged_controls: Vec<String> = report
                .flagged_subjects()
                .into_iter()
                .filter(|s| control_ids.contains(s))
                .collect();

            if id == ExperimentId::ScreenAndExclude {
                let drop: HashSet<String> = flagged_controls.iter().cloned().collect();
                let kept = cohort.filter_subjects(|s| !drop.contains(s));
                Ok(Assembly {
                    cohort: kept,
                    stress: Some(StressSection {
                        screen: report,
                        excluded_subjects: flagged_controls,
                        adjusted_subjects: Vec::new(),
                        selected_controls: Vec::new(),
                        coefficients: None,
                    }),
                })
            } else {
                let coefficients = coefficients_for(
                    config.adjustment_source,
                    &stress,
                    &cohort,
                    &report,
                )?;
                let adjusted = adjust(&cohort, &coefficients, &flagged_controls)?;
                Ok(Assembly {
                    cohort: adjusted,
                    stress: Some(StressSection {
                        screen: report,
                        excluded_subjects: Vec::new(),
                        adjusted_subjects: flagged_controls,
                        selected_controls: Vec::new(),
                        coefficients: Some(coefficients),
                    }),
                })
            }
        }
        ExperimentId::CalmControlPool => {
            let rest = role("rest")?;
            let task = role("task")?;
            let external = role("external_controls")?;
            let stress = role("stress")?;

            let cases = merge_disjoint(cases_only(&rest), &cases_only(&task))?;
            let pool = controls_only(&external);
            let candidates = merge_disjoint(cases.clone(), &pool)?;

            let model = train_stress_model(&stress, &config.gbt, config.seed)?;
            let report = screen(&model, &candidates, config.stress_threshold)?;
            let flagged: HashSet<String> = report.flagged_subjects().into_iter().collect();

            let kept_cases = cases.filter_subjects(|s| !flagged.contains(s));
            let n_controls = kept_cases.subjects().len();

            let pool_ids: HashSet<String> = pool.subjects().into_iter().collect();
            let selected: Vec<String> = report
                .calmest_first()
                .into_iter()
                .filter(|s| pool_ids.contains(s) && !flagged.contains(s))
                .take(n_controls)
                .collect();
            if selected.len() < n_controls {
                return Err(CliError::BadConfig(format!(
                    "external pool has only {} calm controls, need {}",
                    selected.len(),
                    n_controls
                )));
            }
            let chosen: HashSet<String> = selected.iter().cloned().collect();
            let controls = pool.filter_subjects(|s| chosen.contains(s));
            let excluded: Vec<String> = cases
                .subjects()
                .into_iter()
                .filter(|s| flagged.contains(s))
                .collect();
            Ok(Assembly {
                cohort: merge_disjoint(kept_cases, &controls)?,
                stress: Some(StressSection {
                    screen: report,
                    excluded_subjects: excluded,
                    adjusted_subjects: Vec::new(),
                    selected_controls: selected,
                    coefficients: None,
                }),
            })
        }
    }
}

/// Union of the class-name maps of every role the experiment loads.
fn class_names(config: &ExperimentConfig) -> CliResult<BTreeMap<u32, String>> {
    let mut merged = BTreeMap::new();
    for role in ["rest", "task", "external_controls"] {
        if let Ok(path) = config.role_path(role) {
            let manifest = load_manifest(path)?;
            merged.extend(manifest.class_names.clone());
        }
    }
    Ok(merged)
}

pub fn run_experiment(config: &ExperimentConfig) -> CliResult<ExperimentReport> {
    config.validate()?;
    let assembly = assemble(config)?;
    let cohort = &assembly.cohort;

    let (params, grid_score) = resolve_params(cohort, &config.gbt, config.seed)?;
    let result = loso(cohort, &params, config.seed)?;

    // One model fit on the full cohort supplies the attribution ranking.
    let model = fit_model(cohort, &params)?;
    let shap = tree_shap_batch(&model, &cohort.values_matrix())?;
    let importance = aggregate_importance(&shap, &cohort.feature_names)?;

    let generated_at_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);

    let names: BTreeMap<u32, String> = class_names(config)?
        .into_iter()
        .filter(|(label, _)| result.classes.contains(label))
        .collect();

    Ok(ExperimentReport {
        experiment_id: config.experiment_id,
        seed: config.seed,
        config_hash: config.hash(),
        generated_at_unix,
        class_names: names,
        subjects: cohort.subjects(),
        params,
        grid_score,
        loso: result,
        importance,
        stress: assembly.stress,
    })
}
