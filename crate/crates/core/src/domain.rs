//! Shared data types: locations, observations, datasets and scenarios.

use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LAT_MIN: f64 = 60.0;
pub const LAT_MAX: f64 = 82.0;
pub const LON_MIN: f64 = 30.0;
pub const LON_MAX: f64 = 180.0;
pub const FIRST_YEAR: i32 = 2005;
pub const LAST_YEAR: i32 = 2021;

/// Grid-cell coordinates in decimal degrees. Equality is exact on the stored pair.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LocationKey {
    pub lat: f64,
    pub lon: f64,
}

impl LocationKey {
    pub fn new(lat: f64, lon: f64) -> Self {
        LocationKey { lat, lon }
    }

    pub fn in_domain(&self) -> bool {
        (LAT_MIN..=LAT_MAX).contains(&self.lat) && (LON_MIN..=LON_MAX).contains(&self.lon)
    }

    /// Ordering used for spatial fold construction: longitude, then latitude.
    pub fn cmp_lon_lat(&self, other: &Self) -> std::cmp::Ordering {
        self.lon
            .total_cmp(&other.lon)
            .then(self.lat.total_cmp(&other.lat))
    }
}

impl PartialEq for LocationKey {
    fn eq(&self, other: &Self) -> bool {
        self.lat.to_bits() == other.lat.to_bits() && self.lon.to_bits() == other.lon.to_bits()
    }
}

impl Eq for LocationKey {}

impl Hash for LocationKey {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.lat.to_bits().hash(state);
        self.lon.to_bits().hash(state);
    }
}

/// The nine climate predictors carried by every observation, in canonical column order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClimateVar {
    Temperature,
    Precipitation,
    RadiationAllSky,
    RadiationClearSky,
    Humidity,
    Dewpoint,
    Wind2m,
    Wind10m,
    Pressure,
}

impl ClimateVar {
    pub const ALL: [ClimateVar; 9] = [
        ClimateVar::Temperature,
        ClimateVar::Precipitation,
        ClimateVar::RadiationAllSky,
        ClimateVar::RadiationClearSky,
        ClimateVar::Humidity,
        ClimateVar::Dewpoint,
        ClimateVar::Wind2m,
        ClimateVar::Wind10m,
        ClimateVar::Pressure,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Column name in the canonical CSV.
    pub fn name(self) -> &'static str {
        match self {
            ClimateVar::Temperature => "temperature",
            ClimateVar::Precipitation => "precipitation",
            ClimateVar::RadiationAllSky => "radiation_allsky",
            ClimateVar::RadiationClearSky => "radiation_clearsky",
            ClimateVar::Humidity => "humidity",
            ClimateVar::Dewpoint => "dewpoint",
            ClimateVar::Wind2m => "wind2m",
            ClimateVar::Wind10m => "wind10m",
            ClimateVar::Pressure => "pressure",
        }
    }
}

/// One location-year record. Climate cells may be missing (`None`); the
/// permafrost fraction never is.
///
/// Units: temperature and dewpoint °C, precipitation mm/day, radiation W/m²,
/// humidity relative fraction in [0, 1], wind m/s, pressure kPa.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub location: LocationKey,
    pub year: i32,
    pub permafrost_fraction: f64,
    pub climate: [Option<f64>; 9],
}

impl Observation {
    pub fn get(&self, var: ClimateVar) -> Option<f64> {
        self.climate[var.index()]
    }

    pub fn set(&mut self, var: ClimateVar, value: Option<f64>) {
        self.climate[var.index()] = value;
    }

    pub fn temperature(&self) -> Option<f64> {
        self.get(ClimateVar::Temperature)
    }

    pub fn missing_count(&self) -> usize {
        self.climate.iter().filter(|c| c.is_none()).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Severity {
    /// Hard bound broken; the record is physically implausible.
    Error,
    /// Outside the historically observed range but still plausible.
    Warning,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub field: &'static str,
    pub rule: String,
    pub severity: Severity,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}: {} {}", self.field, self.rule)
    }
}

fn violation(field: &'static str, rule: impl Into<String>, severity: Severity) -> Violation {
    Violation {
        field,
        rule: rule.into(),
        severity,
    }
}

/// Checks every invariant of an observation and reports what is broken.
///
/// Hard bounds produce [`Severity::Error`]; values outside the historically
/// observed climate ranges (temperature −25…5 °C, precipitation 0.5…4 mm/day,
/// all-sky radiation 50…250 W/m²) produce [`Severity::Warning`].
pub fn validate_observation(obs: &Observation) -> Vec<Violation> {
    use ClimateVar::*;
    use Severity::{Error as E, Warning as W};

    let mut out = Vec::new();
    let pf = obs.permafrost_fraction;
    if !pf.is_finite() || !(0.0..=100.0).contains(&pf) {
        out.push(violation("permafrost_fraction", "must lie in [0, 100]", E));
    }
    if !(FIRST_YEAR..=LAST_YEAR).contains(&obs.year) {
        out.push(violation("year", format!("must lie in [{FIRST_YEAR}, {LAST_YEAR}]"), E));
    }
    let loc = obs.location;
    if !loc.lat.is_finite() || !(LAT_MIN..=LAT_MAX).contains(&loc.lat) {
        out.push(violation("lat", "must lie in [60, 82]", E));
    }
    if !loc.lon.is_finite() || !(LON_MIN..=LON_MAX).contains(&loc.lon) {
        out.push(violation("lon", "must lie in [30, 180]", E));
    }

    for var in ClimateVar::ALL {
        if let Some(v) = obs.get(var) {
            if !v.is_finite() {
                out.push(violation(var.name(), "must be finite", E));
            }
        }
    }
    let finite = |var| obs.get(var).filter(|v: &f64| v.is_finite());

    if let Some(t) = finite(Temperature) {
        if !(-60.0..=20.0).contains(&t) {
            out.push(violation("temperature", "must lie in [-60, 20]", E));
        } else if !(-25.0..=5.0).contains(&t) {
            out.push(violation("temperature", "outside observed range [-25, 5]", W));
        }
    }
    if let Some(p) = finite(Precipitation) {
        if p < 0.0 {
            out.push(violation("precipitation", "must be >= 0", E));
        } else if !(0.5..=4.0).contains(&p) {
            out.push(violation("precipitation", "outside observed range [0.5, 4]", W));
        }
    }
    let all_sky = finite(RadiationAllSky);
    let clear_sky = finite(RadiationClearSky);
    if let Some(a) = all_sky {
        if a < 0.0 {
            out.push(violation("radiation_allsky", "must be >= 0", E));
        } else if !(50.0..=250.0).contains(&a) {
            out.push(violation("radiation_allsky", "outside observed range [50, 250]", W));
        }
    }
    if let Some(c) = clear_sky {
        if c < 0.0 {
            out.push(violation("radiation_clearsky", "must be >= 0", E));
        }
    }
    if let (Some(a), Some(c)) = (all_sky, clear_sky) {
        if c < a {
            out.push(violation(
                "radiation_clearsky",
                "must be >= radiation_allsky",
                E,
            ));
        }
    }
    if let Some(h) = finite(Humidity) {
        if !(0.0..=1.0).contains(&h) {
            out.push(violation("humidity", "must lie in [0, 1]", E));
        }
    }
    for var in [Wind2m, Wind10m] {
        if let Some(w) = finite(var) {
            if w < 0.0 {
                out.push(violation(var.name(), "must be >= 0", E));
            }
        }
    }
    if let Some(p) = finite(Pressure) {
        if p <= 0.0 {
            out.push(violation("pressure", "must be > 0", E));
        }
    }
    out
}

/// All observations of one location, one per year in ascending order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocationSeries {
    pub key: LocationKey,
    pub observations: Vec<Observation>,
}

/// A complete location × year grid: every location carries the same contiguous years.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    locations: Vec<LocationSeries>,
    years: Vec<i32>,
    index: HashMap<LocationKey, usize>,
}

impl Dataset {
    /// Assembles a dataset from per-location series, enforcing the grid
    /// invariants. Observations inside each series are sorted by year.
    pub fn new(mut locations: Vec<LocationSeries>) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::EmptyInput("dataset has no locations"));
        }
        let mut index = HashMap::with_capacity(locations.len());
        for (i, series) in locations.iter_mut().enumerate() {
            if index.insert(series.key, i).is_some() {
                let year = series.observations.first().map_or(0, |o| o.year);
                return Err(Error::DuplicateKey {
                    lat: series.key.lat,
                    lon: series.key.lon,
                    year,
                });
            }
            series.observations.sort_by_key(|o| o.year);
            for pair in series.observations.windows(2) {
                if pair[0].year == pair[1].year {
                    return Err(Error::DuplicateKey {
                        lat: series.key.lat,
                        lon: series.key.lon,
                        year: pair[0].year,
                    });
                }
            }
            if series.observations.iter().any(|o| o.location != series.key) {
                return Err(Error::InvalidObservation(format!(
                    "observation filed under the wrong location ({}, {})",
                    series.key.lat, series.key.lon
                )));
            }
        }

        let years: Vec<i32> = locations[0].observations.iter().map(|o| o.year).collect();
        if years.is_empty() {
            return Err(Error::IncompleteGrid("location without observations".into()));
        }
        if years.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::IncompleteGrid(format!(
                "years are not contiguous: {years:?}"
            )));
        }
        for series in &locations {
            let same = series.observations.len() == years.len()
                && series
                    .observations
                    .iter()
                    .zip(&years)
                    .all(|(o, y)| o.year == *y);
            if !same {
                let have: Vec<i32> = series.observations.iter().map(|o| o.year).collect();
                return Err(Error::IncompleteGrid(format!(
                    "location ({}, {}) has years {:?}, expected {}..={}",
                    series.key.lat,
                    series.key.lon,
                    have,
                    years[0],
                    years[years.len() - 1]
                )));
            }
        }
        Ok(Dataset {
            locations,
            years,
            index,
        })
    }

    pub fn locations(&self) -> &[LocationSeries] {
        &self.locations
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn first_year(&self) -> i32 {
        self.years[0]
    }

    pub fn last_year(&self) -> i32 {
        self.years[self.years.len() - 1]
    }

    pub fn n_locations(&self) -> usize {
        self.locations.len()
    }

    pub fn n_observations(&self) -> usize {
        self.locations.len() * self.years.len()
    }

    pub fn location_index(&self, key: &LocationKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn series(&self, key: &LocationKey) -> Option<&LocationSeries> {
        self.location_index(key).map(|i| &self.locations[i])
    }

    /// Observation rows in location-major order.
    pub fn observations(&self) -> impl Iterator<Item = &Observation> {
        self.locations.iter().flat_map(|s| s.observations.iter())
    }

    pub fn missing_cells(&self) -> usize {
        self.observations().map(Observation::missing_count).sum()
    }

    pub fn into_locations(self) -> Vec<LocationSeries> {
        self.locations
    }

    /// Keeps only the years `<= last_year`.
    pub fn truncate_to(&self, last_year: i32) -> Result<Dataset> {
        let locations = self
            .locations
            .iter()
            .map(|s| LocationSeries {
                key: s.key,
                observations: s
                    .observations
                    .iter()
                    .filter(|o| o.year <= last_year)
                    .cloned()
                    .collect(),
            })
            .collect();
        Dataset::new(locations)
    }

    /// Dataset restricted to the given location indices, in the given order.
    pub fn subset(&self, location_indices: &[usize]) -> Result<Dataset> {
        Dataset::new(
            location_indices
                .iter()
                .map(|&i| self.locations[i].clone())
                .collect(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioId {
    #[serde(rename = "RCP26")]
    Rcp26,
    #[serde(rename = "RCP45")]
    Rcp45,
    #[serde(rename = "RCP85")]
    Rcp85,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 3] = [ScenarioId::Rcp26, ScenarioId::Rcp45, ScenarioId::Rcp85];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioId::Rcp26 => "RCP26",
            ScenarioId::Rcp45 => "RCP45",
            ScenarioId::Rcp85 => "RCP85",
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace(['.', '-', '_'], "").as_str() {
            "RCP26" => Ok(ScenarioId::Rcp26),
            "RCP45" => Ok(ScenarioId::Rcp45),
            "RCP85" => Ok(ScenarioId::Rcp85),
            _ => Err(Error::InvalidConfig(format!("unknown scenario '{s}'"))),
        }
    }
}

/// A uniform Arctic warming applied to the baseline year over a planning horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: ScenarioId,
    /// Warming in °C applied to every location.
    pub arctic_delta_t: f64,
    pub horizon_years: u32,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.arctic_delta_t.is_finite() && self.arctic_delta_t > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "{}: arctic_delta_t must be > 0",
                self.id
            )));
        }
        if self.horizon_years < 1 {
            return Err(Error::InvalidConfig(format!(
                "{}: horizon_years must be >= 1",
                self.id
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn obs(lat: f64, lon: f64, year: i32, pf: f64, t: f64) -> Observation {
        Observation {
            location: LocationKey::new(lat, lon),
            year,
            permafrost_fraction: pf,
            climate: [
                Some(t),
                Some(1.5),
                Some(150.0),
                Some(200.0),
                Some(0.8),
                Some(t - 4.0),
                Some(3.0),
                Some(4.0),
                Some(100.0),
            ],
        }
    }

    #[test]
    fn valid_observation_has_no_violations() {
        assert!(validate_observation(&obs(70.0, 100.0, 2010, 82.0, -8.0)).is_empty());
    }

    #[test]
    fn permafrost_above_100_is_one_violation() {
        let v = validate_observation(&obs(70.0, 100.0, 2010, 101.0, -8.0));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "permafrost_fraction");
        assert_eq!(v[0].severity, Severity::Error);
    }

    #[test]
    fn clear_sky_below_all_sky_is_flagged() {
        let mut o = obs(70.0, 100.0, 2010, 50.0, -8.0);
        o.set(ClimateVar::RadiationAllSky, Some(300.0));
        o.set(ClimateVar::RadiationClearSky, Some(250.0));
        let errors: Vec<_> = validate_observation(&o)
            .into_iter()
            .filter(|v| v.severity == Severity::Error)
            .collect();
        assert_eq!(errors.len(), 1);
        assert_eq!(errors[0].field, "radiation_clearsky");
    }

    #[test]
    fn warm_scenario_temperature_is_only_a_warning() {
        let v = validate_observation(&obs(70.0, 100.0, 2010, 50.0, 8.0));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].severity, Severity::Warning);
    }

    #[test]
    fn missing_cells_are_not_violations() {
        let mut o = obs(70.0, 100.0, 2010, 50.0, -3.0);
        o.set(ClimateVar::Temperature, None);
        assert!(validate_observation(&o).is_empty());
    }

    #[test]
    fn validation_is_repeatable() {
        let mut o = obs(59.0, 100.0, 2030, 120.0, -80.0);
        o.set(ClimateVar::Wind2m, Some(-1.0));
        assert_eq!(validate_observation(&o), validate_observation(&o));
        assert_eq!(validate_observation(&o).len(), 5);
    }

    #[test]
    fn dataset_rejects_duplicate_year() {
        let key = LocationKey::new(65.0, 100.0);
        let series = LocationSeries {
            key,
            observations: vec![obs(65.0, 100.0, 2010, 50.0, -3.0), obs(65.0, 100.0, 2010, 50.0, -3.0)],
        };
        assert!(matches!(Dataset::new(vec![series]), Err(Error::DuplicateKey { .. })));
    }

    #[test]
    fn dataset_rejects_ragged_grid() {
        let a = LocationSeries {
            key: LocationKey::new(65.0, 100.0),
            observations: vec![obs(65.0, 100.0, 2020, 50.0, -3.0), obs(65.0, 100.0, 2021, 50.0, -3.0)],
        };
        let b = LocationSeries {
            key: LocationKey::new(66.0, 100.0),
            observations: vec![obs(66.0, 100.0, 2020, 50.0, -3.0)],
        };
        assert!(matches!(Dataset::new(vec![a, b]), Err(Error::IncompleteGrid(_))));
    }

    #[test]
    fn truncation_keeps_grid() {
        let mk = |lat| LocationSeries {
            key: LocationKey::new(lat, 100.0),
            observations: (2005..=2010).map(|y| obs(lat, 100.0, y, 50.0, -3.0)).collect(),
        };
        let ds = Dataset::new(vec![mk(65.0), mk(70.0)]).unwrap();
        let t = ds.truncate_to(2007).unwrap();
        assert_eq!(t.years(), &[2005, 2006, 2007]);
        assert_eq!(t.n_observations(), 6);
    }

    #[test]
    fn scenario_ids_parse_loosely() {
        assert_eq!("rcp8.5".parse::<ScenarioId>().unwrap(), ScenarioId::Rcp85);
        assert_eq!("RCP26".parse::<ScenarioId>().unwrap(), ScenarioId::Rcp26);
        assert!("rcp60".parse::<ScenarioId>().is_err());
    }
}
