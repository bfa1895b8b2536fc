//! Experiment report structure and artifact emission (JSON, CSV, SVG).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use bandboost_core::evaluate::LosoResult;
use bandboost_core::explain::ImportanceRanking;
use bandboost_core::gbt::GbtParams;
use bandboost_core::stressguard::StressReport;
use bandboost_core::Error;

use crate::config::{CliResult, ExperimentId};

/// How many features the importance chart shows.
pub const SVG_TOP_N: usize = 10;

/// Everything a run produces, in one serializable record. Identical config
/// and seed reproduce this byte for byte except `generated_at_unix`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment_id: ExperimentId,
    pub seed: u64,
    /// SHA-256 of the canonical config JSON.
    pub config_hash: String,
    /// Wall-clock timestamp only; excluded from any reproducibility check.
    pub generated_at_unix: u64,
    pub class_names: BTreeMap<u32, String>,
    pub subjects: Vec<String>,
    /// Parameters the final model actually used (grid winner if searched).
    pub params: GbtParams,
    /// Mean cross-validation AUC of the grid winner, when a grid ran.
    pub grid_score: Option<f64>,
    pub loso: LosoResult,
    pub importance: ImportanceRanking,
    pub stress: Option<StressSection>,
}

/// Screening and correction details for experiments 4-6.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressSection {
    pub screen: StressReport,
    /// Subjects dropped from the cohort (experiments 4 and 6).
    pub excluded_subjects: Vec<String>,
    /// Subjects whose features were corrected in place (experiment 5).
    pub adjusted_subjects: Vec<String>,
    /// Controls drawn calmest-first from the external pool (experiment 6).
    pub selected_controls: Vec<String>,
    /// Per-feature offsets subtracted from adjusted subjects.
    pub coefficients: Option<Vec<f64>>,
}

impl ExperimentReport {
    pub fn load(path: &Path) -> CliResult<ExperimentReport> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report = serde_json::from_str(&text).map_err(|e| Error::MalformedJson {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(report)
    }
}

/// Write report.json, confusion.csv, importance.csv, importance.svg, and
/// (when screening ran) stress_report.json. Returns the paths written.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> CliResult<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let report_path = dir.join("report.json");
    let text = serde_json::to_string_pretty(report).expect("report serialization cannot fail");
    std::fs::write(&report_path, text).map_err(|e| Error::io(&report_path, e))?;
    written.push(report_path);

    let confusion_path = dir.join("confusion.csv");
    report.loso.save_confusion_csv(&confusion_path)?;
    written.push(confusion_path);

    let importance_path = dir.join("importance.csv");
    report.importance.save_csv(&importance_path)?;
    written.push(importance_path);

    let svg_path = dir.join("importance.svg");
    let svg = importance_svg(&report.importance, SVG_TOP_N);
    std::fs::write(&svg_path, svg).map_err(|e| Error::io(&svg_path, e))?;
    written.push(svg_path);

    if let Some(stress) = &report.stress {
        let stress_path = dir.join("stress_report.json");
        let text = serde_json::to_string_pretty(stress).expect("serialization cannot fail");
        std::fs::write(&stress_path, text).map_err(|e| Error::io(&stress_path, e))?;
        written.push(stress_path);
    }
    Ok(written)
}

fn xml_escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

/// Horizontal bar chart of the top-`n` features by overall mean |phi|,
/// exactly one `<rect>` per plotted feature, fixed 800x600 canvas.
pub fn importance_svg(importance: &ImportanceRanking, n: usize) -> String {
    let ranked = importance.ranked_overall();
    let bars: Vec<&(String, f64)> = ranked.iter().take(n).collect();
    let max = bars
        .iter()
        .map(|(_, v)| *v)
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);

    let top = 70.0;
    let bottom = 580.0;
    let pitch = (bottom - top) / bars.len().max(1) as f64;
    let bar_h = (pitch * 0.6).min(30.0);
    let label_x = 230.0;
    let bar_x = 240.0;
    let bar_span = 480.0;

    let mut svg = String::new();
    svg.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    svg.push_str(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"600\" \
         viewBox=\"0 0 800 600\">\n",
    );
    svg.push_str("  <title>Feature importance</title>\n");
    svg.push_str(
        "  <text x=\"400\" y=\"36\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"20\">Top features by mean |SHAP value|</text>\n",
    );
    svg.push_str("  <g font-family=\"monospace\" font-size=\"14\">\n");
    for (i, (name, value)) in bars.iter().enumerate() {
        let y = top + i as f64 * pitch + (pitch - bar_h) / 2.0;
        let text_y = y + bar_h / 2.0 + 5.0;
        let width = (value / max) * bar_span;
        writeln!(
            svg,
            "    <text x=\"{label_x}\" y=\"{text_y:.1}\" text-anchor=\"end\">{}</text>",
            xml_escape(name)
        )
        .expect("writing to a String cannot fail");
        writeln!(
            svg,
            "    <rect x=\"{bar_x}\" y=\"{y:.1}\" width=\"{width:.2}\" height=\"{bar_h:.1}\" \
             fill=\"#4878a8\"/>"
        )
        .expect("writing to a String cannot fail");
        writeln!(
            svg,
            "    <text x=\"{:.1}\" y=\"{text_y:.1}\">{value:.4}</text>",
            bar_x + width + 8.0
        )
        .expect("writing to a String cannot fail");
    }
    svg.push_str("  </g>\n</svg>\n");
    svg
}
