use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::attribution::{ClusterExplanation, GlobalShap, ImportanceReport};
use super::charts::{self, escape, sector_color};
use super::ExplainError;
use crate::cluster::ClusterOutput;
use crate::cvi::CviResult;
use crate::lvi::{lvi_timeseries_payload, ForecastResult, LviSeries, ReferenceCheck};

pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Notice {
    pub code: String,
    pub message: String,
}

/// Everything the report renders, in one serializable document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub version: u32,
    pub catalog_fingerprint: String,
    /// Display label per indicator id.
    pub feature_labels: BTreeMap<String, String>,
    pub cvi: Option<CviResult>,
    pub cluster: Option<ClusterOutput>,
    pub lvi_series: Option<Vec<LviSeries>>,
    pub lvi_forecast: Option<Vec<ForecastResult>>,
    pub importance: Option<ImportanceReport>,
    pub shap_global: Option<GlobalShap>,
    pub cluster_shap: Option<ClusterExplanation>,
    pub reference_checks: Vec<ReferenceCheck>,
    pub notices: Vec<Notice>,
}

impl Bundle {
    pub fn missing_stages(&self) -> Vec<String> {
        [
            ("cvi", self.cvi.is_none()),
            ("cluster", self.cluster.is_none()),
            ("lvi.series", self.lvi_series.is_none()),
            ("lvi.forecast", self.lvi_forecast.is_none()),
            ("importance", self.importance.is_none()),
            ("shap.global", self.shap_global.is_none()),
            ("shap.clusters", self.cluster_shap.is_none()),
        ]
        .into_iter()
        .filter(|s| s.1)
        .map(|s| s.0.to_string())
        .collect()
    }

    fn label(&self, id: &str) -> String {
        self.feature_labels.get(id).cloned().unwrap_or_else(|| id.to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ExplainError> {
        let b: Bundle = serde_json::from_str(text).map_err(|e| ExplainError::Bundle(e.to_string()))?;
        if b.version != BUNDLE_VERSION {
            return Err(ExplainError::Bundle(format!(
                "bundle version {} is not {BUNDLE_VERSION}",
                b.version
            )));
        }
        Ok(b)
    }
}

/// Notices that accompany every report: the forecast error protocol, the
/// attribution caveat and one entry per flagged reference check.
pub fn standard_notices(checks: &[ReferenceCheck]) -> Vec<Notice> {
    let mut out = vec![
        Notice {
            code: "lvi-training-mse".into(),
            message: "Forecast errors are training MSE over the observed census years. With four points no holdout is possible, so they measure fit rather than forecast skill.".into(),
        },
        Notice {
            code: "sector-attribution-scale".into(),
            message: "Sector attributions come from one-vs-rest surrogate forests on membership. Compare their orderings, not their absolute magnitudes.".into(),
        },
        Notice {
            code: "pooled-scaling".into(),
            message: "Indicators are min-max scaled over all census years together, so index values are comparable across years.".into(),
        },
    ];
    for c in checks.iter().filter(|c| c.flagged) {
        out.push(Notice {
            code: c.code.clone(),
            message: format!(
                "{} reference series: the least-squares forecast for the next census is {:.3}, while the reported value is {:.2} (difference {:+.3}).",
                c.sector, c.linear_forecast, c.reference, c.difference
            ),
        });
    }
    out
}

const STYLE: &str = "body{font-family:sans-serif;max-width:1100px;margin:1em auto;color:#222}\
section{margin:1.5em 0}h2{border-bottom:1px solid #ccc}.grid{display:flex;flex-wrap:wrap;gap:1em}\
.notice{background:#fff4e0;border-left:4px solid #e6a000;padding:.4em .8em;margin:.4em 0}\
table{border-collapse:collapse}td,th{border:1px solid #ddd;padding:2px 6px;font-size:12px}";

fn fmt_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [a] => a.clone(),
        [a, b] => format!("{a} and {b}"),
        [rest @ .., last] => format!("{} and {last}", rest.join(", ")),
    }
}

/// Renders the full HTML report. Output depends only on `bundle`.
pub fn generate_report(bundle: &Bundle) -> Result<String, ExplainError> {
    let missing = bundle.missing_stages();
    if !missing.is_empty() {
        return Err(ExplainError::IncompleteInputs(missing));
    }
    let (Some(cvi), Some(cluster), Some(series), Some(forecasts), Some(imp), Some(gshap), Some(cshap)) = (
        &bundle.cvi,
        &bundle.cluster,
        &bundle.lvi_series,
        &bundle.lvi_forecast,
        &bundle.importance,
        &bundle.shap_global,
        &bundle.cluster_shap,
    ) else {
        unreachable!("completeness checked above");
    };

    let mut h = String::new();
    let _ = write!(
        h,
        "<!DOCTYPE html>\n<html lang=\"en\"><head><meta charset=\"utf-8\"><title>Urban vitality report {}</title><style>{STYLE}</style></head><body>\n",
        cvi.year
    );
    let _ = writeln!(
        h,
        "<h1>Urban vitality report</h1><p>Census year {}, {} dissemination areas, catalog <code>{}</code>.</p>",
        cvi.year,
        cvi.das.len(),
        escape(&bundle.catalog_fingerprint)
    );

    // CVI
    let values = cvi.values();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let _ = writeln!(
        h,
        "<section id=\"cvi\"><h2>Current Vitality Index</h2>{}<p>Mean CVI is {mean:.3}, ranging from {:.3} to {:.3} over eight equal-width classes.</p></section>",
        charts::histogram(&cvi.histogram),
        cvi.histogram.min,
        cvi.histogram.max
    );

    // importance
    let labelled = |ids: &[String], v: &[f64]| -> Vec<(String, f64)> {
        let mut items: Vec<(String, f64)> = ids.iter().map(|i| bundle.label(i)).zip(v.iter().copied()).collect();
        items.sort_by(|a, b| b.1.total_cmp(&a.1));
        items
    };
    let top3: Vec<String> = imp.forest_ranking.iter().take(3).map(|i| bundle.label(i)).collect();
    let corr = imp
        .rank_correlation
        .map_or_else(|| "undefined".to_string(), |r| format!("{r:.3}"));
    let _ = writeln!(
        h,
        "<section id=\"importance\"><h2>Indicator importance</h2><div class=\"grid\"><div><h3>Random forest</h3>{}</div><div><h3>Gradient boosting</h3>{}</div></div><p>The forest ranks {} highest. Spearman correlation between the forest and boosted rankings is {corr}.</p></section>",
        charts::bars(&labelled(&imp.feature_ids, &imp.forest_importance), "#2171b5", "Forest importance"),
        charts::bars(&labelled(&imp.feature_ids, &imp.boosted_importance), "#6baed6", "Boosted importance"),
        escape(&fmt_list(&top3))
    );

    // SHAP violins
    h.push_str("<section id=\"shap\"><h2>SHAP attributions</h2>\n");
    let global: Vec<(String, Vec<f64>, Vec<f64>)> = gshap
        .violin
        .iter()
        .map(|v| (bundle.label(&v.feature), v.shap.clone(), v.feature_values.clone()))
        .collect();
    let _ = writeln!(
        h,
        "<div class=\"violin\" data-scope=\"global\"><h3>CVI forest</h3>{}</div>",
        charts::strips(&global, "CVI SHAP values")
    );
    for s in &cshap.sectors {
        let rows: Vec<(String, Vec<f64>, Vec<f64>)> = cshap
            .feature_ids
            .iter()
            .enumerate()
            .map(|(j, id)| {
                (
                    bundle.label(id),
                    s.phi.iter().map(|r| r[j]).collect(),
                    cluster.points.iter().map(|p| p[j]).collect(),
                )
            })
            .collect();
        let _ = writeln!(
            h,
            "<div class=\"violin\" data-scope=\"sector\" data-sector=\"{0}\"><h3>{0} membership</h3>{1}</div>",
            escape(&s.sector),
            charts::strips(&rows, &format!("{} SHAP values", s.sector))
        );
    }
    h.push_str("</section>\n");

    // clusters
    h.push_str("<section id=\"clusters\"><h2>Sectors</h2><div class=\"grid\">");
    let axes: Vec<String> = cluster.radar.axes.iter().map(|a| bundle.label(a)).collect();
    for (i, r) in cluster.radar.sectors.iter().enumerate() {
        let _ = write!(
            h,
            "<div class=\"radar\"><h3>{} ({} DAs, dispersion {:.3})</h3>{}</div>",
            escape(&r.name),
            r.members.len(),
            r.dispersion,
            charts::radar(&axes, &r.polylines, &r.centroid, sector_color(i), &r.name)
        );
    }
    let _ = write!(
        h,
        "</div><h3>Silhouette</h3>{}<p>Mean silhouette is {:.4}.</p>",
        charts::silhouette_strip(&cluster.silhouette.per_cluster, &cluster.sector_names),
        cluster.silhouette.mean
    );
    let negative = cluster.negative_das();
    if negative.is_empty() {
        h.push_str("<p id=\"negative-silhouette\">No DA has a negative silhouette.</p>");
    } else {
        let _ = write!(
            h,
            "<p id=\"negative-silhouette\">DAs with a negative silhouette, possibly closer to another sector: {}.</p>",
            escape(&negative.join(", "))
        );
    }
    h.push_str("<h3>Membership drivers</h3><ul>");
    for s in &cshap.sectors {
        if s.degenerate {
            let _ = write!(
                h,
                "<li>{}: membership is constant, so no driver can be attributed.</li>",
                escape(&s.sector)
            );
            continue;
        }
        let top: Vec<&(String, f64)> = s.mean_abs.iter().take(3).collect();
        let rest: Vec<String> = top[1..]
            .iter()
            .map(|(f, v)| format!("{} ({v:.3})", escape(&bundle.label(f))))
            .collect();
        let _ = write!(
            h,
            "<li>{}: membership is driven most by <strong class=\"top-driver\" data-sector=\"{}\" data-feature=\"{}\">{}</strong> (mean |SHAP| {:.3})",
            escape(&s.sector),
            escape(&s.sector),
            escape(&top[0].0),
            escape(&bundle.label(&top[0].0)),
            top[0].1
        );
        if !rest.is_empty() {
            let _ = write!(h, ", then {}", fmt_list(&rest));
        }
        h.push_str(".</li>");
    }
    h.push_str("</ul></section>\n");

    // LVI
    let lines = lvi_timeseries_payload(series, forecasts);
    let _ = write!(
        h,
        "<section id=\"lvi\"><h2>Long-Term Vitality Index</h2>{}<ul>",
        charts::lvi_lines(&lines)
    );
    for f in forecasts {
        let sel = f.selected();
        let mut others: Vec<String> = f
            .forecast
            .iter()
            .filter(|(k, _)| **k != f.selected_model)
            .map(|(k, m)| format!("{} {:.2e}", k.name(), m.mse))
            .collect();
        others.sort();
        let _ = write!(
            h,
            "<li class=\"model-selection\">{}: {} selected with training MSE {:.2e}{}; its {} forecast is {:.3}{}.</li>",
            escape(&f.sector),
            f.selected_model.name(),
            sel.mse,
            if others.is_empty() {
                String::new()
            } else {
                format!(" (others: {})", others.join(", "))
            },
            f.target_year,
            sel.prediction,
            if sel.clamped { ", clamped to the index range" } else { "" }
        );
    }
    h.push_str("</ul><table><tr><th>Sector</th>");
    let years: Vec<u16> = series.first().map(|s| s.points.iter().map(|p| p.0).collect()).unwrap_or_default();
    for y in &years {
        let _ = write!(h, "<th>{y}</th>");
    }
    h.push_str("</tr>");
    for s in series {
        let _ = write!(h, "<tr><td>{}</td>", escape(&s.sector));
        for p in &s.points {
            let _ = write!(h, "<td>{:.4}</td>", p.1);
        }
        h.push_str("</tr>");
    }
    h.push_str("</table></section>\n");

    // notices
    h.push_str("<section id=\"notices\"><h2>Notices</h2>");
    for n in &bundle.notices {
        let _ = write!(
            h,
            "<div class=\"notice\" data-code=\"{}\">{}</div>",
            escape(&n.code),
            escape(&n.message)
        );
    }
    h.push_str("</section>\n</body></html>\n");
    Ok(h)
}
