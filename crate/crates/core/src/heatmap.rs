//! Per-centroid improvement export for map rendering.
//!
//! The CSV carries one row per centroid with baseline and improved
//! accessibility, the delta, and a flag marking membership in the
//! baseline's worst-`q` set (renderers blank everything else). A GeoJSON
//! mirror with planar kilometer coordinates can be written alongside.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::accessibility::{worst_quantile_set, AccessibilityReport};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::territory::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow<S> {
    pub centroid_id: u32,
    pub x_km: S,
    pub y_km: S,
    pub acc_baseline: S,
    pub acc_improved: S,
    pub delta: S,
    pub in_worst_q: bool,
}

/// Rows for every centroid, ascending by id. The worst-`q` flag is taken
/// from the baseline report, so the highlighted set is the one the
/// optimizer was asked to improve.
pub fn heatmap_rows<S: Scalar>(
    s: &Scenario<S>,
    baseline: &AccessibilityReport<S>,
    improved: &AccessibilityReport<S>,
    q: f64,
) -> Result<Vec<HeatmapRow<S>>> {
    if baseline.per_centroid.len() != improved.per_centroid.len()
        || !baseline
            .per_centroid
            .keys()
            .eq(improved.per_centroid.keys())
    {
        return Err(Error::InvalidScenario(
            "baseline and improved reports cover different centroid sets".into(),
        ));
    }
    let worst = worst_quantile_set(&baseline.per_centroid, q);
    let mut rows = Vec::with_capacity(s.centroids.len());
    for c in &s.centroids {
        let base = *baseline.per_centroid.get(&c.id).ok_or_else(|| {
            Error::InvalidScenario(format!("report missing centroid {}", c.id.0))
        })?;
        let imp = improved.per_centroid[&c.id];
        rows.push(HeatmapRow {
            centroid_id: c.id.0,
            x_km: c.location.x,
            y_km: c.location.y,
            acc_baseline: base,
            acc_improved: imp,
            delta: imp - base,
            in_worst_q: worst.binary_search(&c.id).is_ok(),
        });
    }
    rows.sort_by_key(|r| r.centroid_id);
    Ok(rows)
}

/// Write the heatmap as UTF-8 CSV with a header row and `.` decimal
/// separator. Values round-trip exactly through [`read_heatmap_csv`].
pub fn export_heatmap<S: Scalar>(
    s: &Scenario<S>,
    baseline: &AccessibilityReport<S>,
    improved: &AccessibilityReport<S>,
    q: f64,
    path: &Path,
) -> Result<()> {
    let rows = heatmap_rows(s, baseline, improved, q)?;
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Read back a heatmap CSV.
pub fn read_heatmap_csv<S: Scalar>(path: &Path) -> Result<Vec<HeatmapRow<S>>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        rows.push(record?);
    }
    Ok(rows)
}

/// GeoJSON mirror of the heatmap: a FeatureCollection of points in planar
/// kilometer coordinates (declared in the collection metadata).
pub fn export_heatmap_geojson<S: Scalar>(
    s: &Scenario<S>,
    baseline: &AccessibilityReport<S>,
    improved: &AccessibilityReport<S>,
    q: f64,
    path: &Path,
) -> Result<()> {
    let rows = heatmap_rows(s, baseline, improved, q)?;
    let features: Vec<serde_json::Value> = rows
        .iter()
        .map(|r| {
            json!({
                "type": "Feature",
                "geometry": {
                    "type": "Point",
                    "coordinates": [r.x_km.to_f64_lossy(), r.y_km.to_f64_lossy()],
                },
                "properties": {
                    "centroid_id": r.centroid_id,
                    "acc_baseline": r.acc_baseline,
                    "acc_improved": r.acc_improved,
                    "delta": r.delta,
                    "in_worst_q": r.in_worst_q,
                },
            })
        })
        .collect();
    let doc = json!({
        "type": "FeatureCollection",
        "metadata": {
            "coordinate_system": "planar kilometers (local east, north)",
            "quantile": q,
        },
        "features": features,
    });
    fs::write(path, serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}
