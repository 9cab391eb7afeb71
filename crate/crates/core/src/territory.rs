//! The study area: a tessellated territory with centroids, points of
//! interest, metro lines and candidate bus stops, plus synthetic scenario
//! generation and JSON persistence.
//!
//! All coordinates are planar kilometers, all speeds km/h, all times
//! minutes. A [`Scenario`] is immutable after construction and safe to
//! share across threads.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::sub_seed;
use crate::scalar::Scalar;

/// Planar location in kilometers (east, north).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point<S> {
    #[serde(rename = "x_km")]
    pub x: S,
    #[serde(rename = "y_km")]
    pub y: S,
}

impl<S: Scalar> Point<S> {
    pub fn new(x: S, y: S) -> Self {
        Point { x, y }
    }

    /// Euclidean distance in kilometers.
    pub fn distance(&self, other: &Point<S>) -> S {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Travel time in minutes to cover the straight-line distance between two
/// points at `speed_kmh`.
pub fn euclidean_minutes<S: Scalar>(a: Point<S>, b: Point<S>, speed_kmh: S) -> S {
    debug_assert!(speed_kmh > S::zero(), "speed must be positive");
    S::of(60.0) * a.distance(&b) / speed_kmh
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CentroidId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PoiId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StopId(pub u32);

/// Center of a tessellation tile; the origin points at which accessibility
/// is measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Centroid<S> {
    pub id: CentroidId,
    pub location: Point<S>,
}

/// Destination amenity. `weight` counts amenities aggregated at this
/// location (1 for a single amenity).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Poi<S> {
    pub id: PoiId,
    pub location: Point<S>,
    pub weight: S,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopKind {
    /// Fixed metro station; never assigned to a designed bus line.
    Metro,
    /// Candidate stop available to the bus line design.
    BusCandidate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stop<S> {
    pub id: StopId,
    pub location: Point<S>,
    pub kind: StopKind,
}

/// Fixed metro line: an ordered station sequence with a known headway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetroLine<S> {
    pub id: u32,
    pub stops: Vec<StopId>,
    pub headway_minutes: S,
}

/// Physical constants and problem parameters of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams<S> {
    pub walk_speed_kmh: S,
    pub bus_speed_kmh: S,
    /// Buses deployed on each designed line.
    pub fleet_per_line: u32,
    /// Accessibility horizon: travel beyond this contributes nothing.
    pub t_max_minutes: S,
    /// Number of bus lines to design.
    pub num_lines: u32,
    pub centroid_spacing_km: S,
    pub rng_seed: u64,
}

/// Immutable description of the territory and of the fixed part of the
/// public-transport network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario<S> {
    pub centroids: Vec<Centroid<S>>,
    pub pois: Vec<Poi<S>>,
    pub stops: Vec<Stop<S>>,
    pub metro_lines: Vec<MetroLine<S>>,
    pub params: ScenarioParams<S>,
}

impl<S: Scalar> Scenario<S> {
    /// Candidate stop ids in ascending order. This ordering defines the
    /// index space used by line assignments.
    pub fn candidate_ids(&self) -> Vec<StopId> {
        let mut ids: Vec<StopId> = self
            .stops
            .iter()
            .filter(|s| s.kind == StopKind::BusCandidate)
            .map(|s| s.id)
            .collect();
        ids.sort();
        ids
    }

    pub fn num_candidates(&self) -> usize {
        self.stops
            .iter()
            .filter(|s| s.kind == StopKind::BusCandidate)
            .count()
    }

    pub fn stop(&self, id: StopId) -> Option<&Stop<S>> {
        self.stops.iter().find(|s| s.id == id)
    }

    /// Lookup table from stop id to location.
    pub fn stop_locations(&self) -> HashMap<StopId, Point<S>> {
        self.stops.iter().map(|s| (s.id, s.location)).collect()
    }

    pub fn total_poi_weight(&self) -> S {
        self.pois.iter().map(|p| p.weight).sum()
    }

    /// Bounding box over every placed object (centroids, PoIs, stops).
    pub fn bounding_box(&self) -> (Point<S>, Point<S>) {
        let mut min = Point::new(S::infinity(), S::infinity());
        let mut max = Point::new(S::neg_infinity(), S::neg_infinity());
        let mut take = |p: &Point<S>| {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        };
        for c in &self.centroids {
            take(&c.location);
        }
        for p in &self.pois {
            take(&p.location);
        }
        for s in &self.stops {
            take(&s.location);
        }
        (min, max)
    }

    /// Check every structural invariant; loaded and generated scenarios
    /// must pass before use.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidScenario(msg));

        if self.centroids.is_empty() {
            return fail("scenario has no centroids".into());
        }
        let mut seen = HashSet::new();
        for c in &self.centroids {
            if !seen.insert(c.id) {
                return fail(format!("duplicate centroid id {}", c.id.0));
            }
            if !c.location.is_finite() {
                return fail(format!("centroid {} has non-finite location", c.id.0));
            }
        }
        let mut seen = HashSet::new();
        for p in &self.pois {
            if !seen.insert(p.id) {
                return fail(format!("duplicate poi id {}", p.id.0));
            }
            if !p.location.is_finite() {
                return fail(format!("poi {} has non-finite location", p.id.0));
            }
            if !(p.weight >= S::zero()) || !p.weight.is_finite() {
                return fail(format!("poi {} has invalid weight", p.id.0));
            }
        }
        let mut kinds = HashMap::new();
        for s in &self.stops {
            if kinds.insert(s.id, s.kind).is_some() {
                return fail(format!("duplicate stop id {}", s.id.0));
            }
            if !s.location.is_finite() {
                return fail(format!("stop {} has non-finite location", s.id.0));
            }
        }
        let mut seen = HashSet::new();
        for line in &self.metro_lines {
            if !seen.insert(line.id) {
                return fail(format!("duplicate metro line id {}", line.id));
            }
            if line.stops.len() < 2 {
                return fail(format!("metro line {} has fewer than 2 stops", line.id));
            }
            let mut on_line = HashSet::new();
            for sid in &line.stops {
                match kinds.get(sid) {
                    None => return fail(format!("metro line {} references unknown stop {}", line.id, sid.0)),
                    Some(StopKind::BusCandidate) => {
                        return fail(format!(
                            "metro line {} references candidate stop {}",
                            line.id, sid.0
                        ))
                    }
                    Some(StopKind::Metro) => {}
                }
                if !on_line.insert(*sid) {
                    return fail(format!("metro line {} repeats stop {}", line.id, sid.0));
                }
            }
            if !(line.headway_minutes > S::zero()) || !line.headway_minutes.is_finite() {
                return fail(format!("metro line {} has non-positive headway", line.id));
            }
        }

        let p = &self.params;
        if !(p.walk_speed_kmh > S::zero()) || !p.walk_speed_kmh.is_finite() {
            return fail("walk_speed_kmh must be positive".into());
        }
        if !(p.bus_speed_kmh > S::zero()) || !p.bus_speed_kmh.is_finite() {
            return fail("bus_speed_kmh must be positive".into());
        }
        if p.fleet_per_line < 1 {
            return fail("fleet_per_line must be at least 1".into());
        }
        if !(p.t_max_minutes > S::zero()) || !p.t_max_minutes.is_finite() {
            return fail("t_max_minutes must be positive".into());
        }
        if p.num_lines < 1 {
            return fail("num_lines must be at least 1".into());
        }
        if !(p.centroid_spacing_km > S::zero()) || !p.centroid_spacing_km.is_finite() {
            return fail("centroid_spacing_km must be positive".into());
        }
        let n_b = self.num_candidates();
        if (p.num_lines as usize) > n_b {
            return fail(format!(
                "num_lines {} exceeds candidate stop count {}",
                p.num_lines, n_b
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_scenario(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        load_scenario(path)
    }
}

/// Write a scenario as a pretty-printed UTF-8 JSON document.
pub fn save_scenario<S: Scalar>(s: &Scenario<S>, path: &Path) -> Result<()> {
    s.validate()?;
    let text = serde_json::to_string_pretty(s)?;
    fs::write(path, text)?;
    Ok(())
}

/// Load and validate a scenario JSON document. Parse errors name the
/// offending field.
pub fn load_scenario<S: Scalar>(path: &Path) -> Result<Scenario<S>> {
    let text = fs::read_to_string(path)?;
    let s: Scenario<S> = serde_json::from_str(&text)?;
    s.validate()?;
    Ok(s)
}

const DEFAULT_METRO_HEADWAY_MIN: f64 = 5.0;

/// Generate a synthetic scenario on a regular `width_cells x height_cells`
/// grid of square tiles with side `spacing_km`.
///
/// Per cell: one centroid at the cell center, one candidate bus stop at a
/// uniformly random interior location, and a PoI count drawn from the
/// matching entry of `poi_density_map` (integer part plus a Bernoulli draw
/// on the fractional part). Metro lines run between the centers of the
/// cells listed in `metro_spec`; stations shared between lines are created
/// once, allowing transfers.
///
/// The result is a pure function of the arguments: the same inputs always
/// produce the identical scenario.
pub fn generate_grid_scenario<S: Scalar>(
    width_cells: usize,
    height_cells: usize,
    spacing_km: S,
    metro_spec: &[Vec<usize>],
    poi_density_map: &[S],
    seed: u64,
) -> Result<Scenario<S>> {
    let n_cells = width_cells * height_cells;
    if n_cells == 0 {
        return Err(Error::InvalidScenario(
            "grid must contain at least one cell".into(),
        ));
    }
    if !(spacing_km > S::zero()) || !spacing_km.is_finite() {
        return Err(Error::InvalidScenario("spacing must be positive".into()));
    }
    if poi_density_map.len() != n_cells {
        return Err(Error::InvalidScenario(format!(
            "poi_density_map has {} entries for {} cells",
            poi_density_map.len(),
            n_cells
        )));
    }
    if let Some(d) = poi_density_map
        .iter()
        .find(|d| !(**d >= S::zero()) || !d.is_finite())
    {
        return Err(Error::InvalidScenario(format!(
            "poi density {} is not a nonnegative real",
            d.to_f64_lossy()
        )));
    }

    // Cells are indexed row-major: cell (row, col) -> row * width + col.
    let cell_center = |cell: usize| -> Point<S> {
        let row = cell / width_cells;
        let col = cell % width_cells;
        Point::new(
            (S::of(col as f64) + S::of(0.5)) * spacing_km,
            (S::of(row as f64) + S::of(0.5)) * spacing_km,
        )
    };

    let centroids: Vec<Centroid<S>> = (0..n_cells)
        .map(|cell| Centroid {
            id: CentroidId(cell as u32),
            location: cell_center(cell),
        })
        .collect();

    // Unit draw in the open interval (0, 1) so stops stay strictly inside
    // their cell.
    fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
        loop {
            let u: f64 = rng.gen();
            if u > 0.0 {
                return u;
            }
        }
    }

    let mut stops = Vec::with_capacity(n_cells);
    let mut stop_rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "grid-stops"));
    for cell in 0..n_cells {
        let row = cell / width_cells;
        let col = cell % width_cells;
        let x = (S::of(col as f64) + S::of(open_unit(&mut stop_rng))) * spacing_km;
        let y = (S::of(row as f64) + S::of(open_unit(&mut stop_rng))) * spacing_km;
        stops.push(Stop {
            id: StopId(cell as u32),
            location: Point::new(x, y),
            kind: StopKind::BusCandidate,
        });
    }

    let mut pois = Vec::new();
    let mut poi_rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "grid-pois"));
    for (cell, density) in poi_density_map.iter().enumerate() {
        let d = density.to_f64_lossy();
        let mut count = d.floor() as u64;
        let frac = d - d.floor();
        if frac > 0.0 && poi_rng.gen::<f64>() < frac {
            count += 1;
        }
        let row = cell / width_cells;
        let col = cell % width_cells;
        for _ in 0..count {
            let x = (S::of(col as f64) + S::of(poi_rng.gen::<f64>())) * spacing_km;
            let y = (S::of(row as f64) + S::of(poi_rng.gen::<f64>())) * spacing_km;
            pois.push(Poi {
                id: PoiId(pois.len() as u32),
                location: Point::new(x, y),
                weight: S::one(),
            });
        }
    }

    // Metro stations sit at cell centers; a cell referenced by several
    // lines yields a single shared station.
    let mut station_of_cell: BTreeMap<usize, StopId> = BTreeMap::new();
    let mut metro_lines = Vec::with_capacity(metro_spec.len());
    for (li, path) in metro_spec.iter().enumerate() {
        if path.len() < 2 {
            return Err(Error::InvalidScenario(format!(
                "metro_spec line {li} has fewer than 2 stations"
            )));
        }
        let mut line_stops = Vec::with_capacity(path.len());
        let mut seen = HashSet::new();
        for &cell in path {
            if cell >= n_cells {
                return Err(Error::InvalidScenario(format!(
                    "metro_spec line {li} references out-of-range cell {cell}"
                )));
            }
            if !seen.insert(cell) {
                return Err(Error::InvalidScenario(format!(
                    "metro_spec line {li} repeats cell {cell}"
                )));
            }
            let next_id = StopId((n_cells + station_of_cell.len()) as u32);
            let sid = *station_of_cell.entry(cell).or_insert(next_id);
            line_stops.push(sid);
        }
        metro_lines.push(MetroLine {
            id: li as u32,
            stops: line_stops,
            headway_minutes: S::of(DEFAULT_METRO_HEADWAY_MIN),
        });
    }
    for (&cell, &sid) in &station_of_cell {
        stops.push(Stop {
            id: sid,
            location: cell_center(cell),
            kind: StopKind::Metro,
        });
    }
    stops.sort_by_key(|s| s.id);

    let scenario = Scenario {
        centroids,
        pois,
        stops,
        metro_lines,
        params: ScenarioParams {
            walk_speed_kmh: S::of(4.5),
            bus_speed_kmh: S::of(28.0),
            fleet_per_line: 10,
            t_max_minutes: S::of(30.0),
            num_lines: 3.min(n_cells as u32),
            centroid_spacing_km: spacing_km,
            rng_seed: seed,
        },
    };
    scenario.validate()?;
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid(seed: u64) -> Scenario<f64> {
        generate_grid_scenario(1, 1, 1.0, &[], &[1.0], seed).unwrap()
    }

    #[test]
    fn euclidean_minutes_arithmetic() {
        let a = Point::new(0.0, 0.0);
        assert_eq!(euclidean_minutes(a, a, 4.5), 0.0);
        let b = Point::new(1.5, 0.0);
        assert_eq!(euclidean_minutes(a, b, 4.5), 20.0);
        let c = Point::new(0.0, 28.0);
        assert_eq!(euclidean_minutes(a, c, 28.0), 60.0);
    }

    #[test]
    fn smallest_grid() {
        let s = unit_grid(42);
        assert_eq!(s.centroids.len(), 1);
        assert_eq!(s.centroids[0].location, Point::new(0.5, 0.5));
        assert_eq!(s.num_candidates(), 1);
        let stop = &s.stops[0];
        assert!(stop.location.x > 0.0 && stop.location.x < 1.0);
        assert!(stop.location.y > 0.0 && stop.location.y < 1.0);
        assert_eq!(s.pois.len(), 1);
        assert_eq!(s.params.num_lines, 1);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = unit_grid(7);
        let b = unit_grid(7);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let c = unit_grid(8);
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&c).unwrap()
        );
    }

    #[test]
    fn paper_scale_grid_has_72_candidates() {
        let densities = vec![2.0; 72];
        let s: Scenario<f64> =
            generate_grid_scenario(12, 6, 1.0, &[vec![0, 2, 4], vec![24, 26]], &densities, 3)
                .unwrap();
        assert_eq!(s.num_candidates(), 72);
        assert_eq!(s.params.num_lines, 3);
        assert_eq!(s.metro_lines.len(), 2);
    }

    #[test]
    fn every_cell_contains_its_candidate_stop() {
        let s: Scenario<f64> =
            generate_grid_scenario(5, 4, 2.0, &[], &vec![0.0; 20], 11).unwrap();
        for cell in 0..20 {
            let row = cell / 5;
            let col = cell % 5;
            let stop = s.stop(StopId(cell as u32)).unwrap();
            assert!(stop.location.x > col as f64 * 2.0 && stop.location.x < (col + 1) as f64 * 2.0);
            assert!(stop.location.y > row as f64 * 2.0 && stop.location.y < (row + 1) as f64 * 2.0);
        }
    }

    #[test]
    fn shared_metro_station_is_deduplicated() {
        let s: Scenario<f64> =
            generate_grid_scenario(3, 3, 1.0, &[vec![0, 4, 8], vec![2, 4, 6]], &vec![1.0; 9], 5)
                .unwrap();
        let metro: Vec<_> = s.stops.iter().filter(|s| s.kind == StopKind::Metro).collect();
        assert_eq!(metro.len(), 5); // cells 0, 4, 8, 2, 6 with cell 4 shared
        let a = &s.metro_lines[0].stops;
        let b = &s.metro_lines[1].stops;
        assert_eq!(a[1], b[1]);
    }

    #[test]
    fn metro_spec_out_of_range_rejected() {
        let err = generate_grid_scenario::<f64>(2, 2, 1.0, &[vec![0, 9]], &[0.0; 4].to_vec(), 1)
            .unwrap_err();
        assert!(matches!(err, Error::InvalidScenario(_)));
        assert!(err.to_string().contains("out-of-range"));
    }

    #[test]
    fn roundtrip_persistence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenario.json");
        let s: Scenario<f64> =
            generate_grid_scenario(4, 3, 1.5, &[vec![0, 5, 10]], &vec![1.5; 12], 99).unwrap();
        s.save(&path).unwrap();
        let loaded = Scenario::<f64>::load(&path).unwrap();
        assert_eq!(s, loaded);
    }

    #[test]
    fn missing_field_is_named_in_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenario.json");
        let s = unit_grid(1);
        let mut v: serde_json::Value = serde_json::to_value(&s).unwrap();
        v["params"].as_object_mut().unwrap().remove("bus_speed_kmh");
        fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
        let err = Scenario::<f64>::load(&path).unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
        assert!(err.to_string().contains("bus_speed"));
    }

    #[test]
    fn negative_t_max_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenario.json");
        let mut s = unit_grid(1);
        s.params.t_max_minutes = -5.0;
        fs::write(&path, serde_json::to_string(&s).unwrap()).unwrap();
        let err = Scenario::<f64>::load(&path).unwrap_err();
        assert!(matches!(err, Error::InvalidScenario(_)));
        assert!(err.to_string().contains("t_max"));
    }

    #[test]
    fn validate_rejects_k_larger_than_candidates() {
        let mut s = unit_grid(1);
        s.params.num_lines = 2;
        assert!(s.validate().is_err());
    }

    #[test]
    fn validate_rejects_duplicate_stop_ids() {
        let mut s = unit_grid(1);
        let dup = s.stops[0];
        s.stops.push(dup);
        assert!(s.validate().is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let s: Scenario<f32> = generate_grid_scenario(2, 2, 1.0, &[], &vec![1.0f32; 4], 3).unwrap();
        assert_eq!(s.num_candidates(), 4);
        s.validate().unwrap();
    }
}
