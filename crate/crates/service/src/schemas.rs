//! JSON schemas shipped with the service, one per endpoint body plus the
//! snapshot manifest.

pub const CHOROPLETH: &str = include_str!("../schemas/choropleth.schema.json");
pub const DA: &str = include_str!("../schemas/da.schema.json");
pub const HEALTH: &str = include_str!("../schemas/health.schema.json");
pub const HISTOGRAM: &str = include_str!("../schemas/histogram.schema.json");
pub const CLUSTERS: &str = include_str!("../schemas/clusters.schema.json");
pub const IMPORTANCE: &str = include_str!("../schemas/importance.schema.json");
pub const SHAP_GLOBAL: &str = include_str!("../schemas/shap_global.schema.json");
pub const SHAP_CLUSTERS: &str = include_str!("../schemas/shap_clusters.schema.json");
pub const LVI: &str = include_str!("../schemas/lvi.schema.json");
pub const PROBLEM: &str = include_str!("../schemas/problem.schema.json");
pub const MANIFEST: &str = include_str!("../schemas/manifest.schema.json");

/// JSON endpoints and the schema their bodies follow. `/api/das/{id}` is
/// listed with a placeholder id; `/api/report` returns HTML and has none.
pub const ENDPOINTS: [(&str, &str); 9] = [
    ("/api/health", HEALTH),
    ("/api/das", CHOROPLETH),
    ("/api/das/{id}", DA),
    ("/api/cvi/histogram", HISTOGRAM),
    ("/api/clusters", CLUSTERS),
    ("/api/importance", IMPORTANCE),
    ("/api/shap/global", SHAP_GLOBAL),
    ("/api/shap/clusters", SHAP_CLUSTERS),
    ("/api/lvi", LVI),
];
