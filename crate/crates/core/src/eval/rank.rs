//! Method ranking and the consolidated separability report.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryError {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub method: String,
    /// Absent when the page has no labels for both scored classes or the run failed.
    pub score: Option<f64>,
    pub channel: Option<usize>,
    pub params_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<EntryError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityReport {
    pub page: String,
    pub metric: String,
    pub classes: [u8; 2],
    pub note: String,
    pub entries: Vec<ReportEntry>,
    pub ranking: Vec<String>,
}

const NOTE: &str = "Fisher criterion (mu_a - mu_b)^2 / (var_a + var_b + 1e-12) on the best output \
channel, population variances (divisor n), capped at 1e12; a quantitative stand-in for visual \
judgement of undertext/overtext separability.";

impl SeparabilityReport {
    /// Entries keep their given order; the ranking covers scored entries only.
    pub fn new(page: impl Into<String>, classes: [u8; 2], entries: Vec<ReportEntry>) -> Self {
        let scored: Vec<(String, f64)> =
            entries.iter().filter_map(|e| e.score.map(|s| (e.method.clone(), s))).collect();
        SeparabilityReport {
            page: page.into(),
            metric: "fisher".into(),
            classes,
            note: NOTE.into(),
            ranking: rank_methods(&scored),
            entries,
        }
    }
}

/// Method names by descending score, ties in lexicographic order.
pub fn rank_methods(scores: &[(String, f64)]) -> Vec<String> {
    let mut v: Vec<&(String, f64)> = scores.iter().collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.into_iter().map(|(m, _)| m.clone()).collect()
}
