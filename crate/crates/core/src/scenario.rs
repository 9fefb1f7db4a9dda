//! Warming scenarios applied to the baseline year and the hybrid ML/physics
//! projection of permafrost change.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, LocationKey, ScenarioId, ScenarioSpec};
use crate::error::{Error, Result};
use crate::features::{build_features_with, col, FeatureMatrix, FeatureStats, refresh_temperature_terms};
use crate::io::{read_records, record_f64, Table};
use crate::stacking::StackedModel;
use crate::stats;

pub const BASELINE_YEAR: i32 = 2021;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioCatalog {
    pub scenarios: Vec<ScenarioSpec>,
}

impl Default for ScenarioCatalog {
    fn default() -> Self {
        let spec = |id, dt| ScenarioSpec {
            id,
            arctic_delta_t: dt,
            horizon_years: 10,
        };
        ScenarioCatalog {
            scenarios: vec![
                spec(ScenarioId::Rcp26, 1.5),
                spec(ScenarioId::Rcp45, 3.0),
                spec(ScenarioId::Rcp85, 5.0),
            ],
        }
    }
}

impl ScenarioCatalog {
    pub fn get(&self, id: ScenarioId) -> Result<&ScenarioSpec> {
        self.scenarios
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::InvalidConfig(format!("scenario {id} is not in the catalog")))
    }

    /// Every listed scenario must be valid and warming must grow with forcing.
    pub fn validate(&self) -> Result<()> {
        for s in &self.scenarios {
            s.validate()?;
        }
        let mut sorted = self.scenarios.clone();
        sorted.sort_by_key(|s| s.id);
        if sorted.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(Error::InvalidConfig("scenario listed twice".into()));
        }
        if sorted.windows(2).any(|w| w[0].arctic_delta_t >= w[1].arctic_delta_t) {
            return Err(Error::InvalidConfig(
                "arctic_delta_t must increase strictly from RCP26 to RCP85".into(),
            ));
        }
        Ok(())
    }
}

/// Piecewise-constant multiplier on the per-degree physical response, by
/// baseline temperature. `weights[i]` applies when exactly `i` bounds lie
/// strictly below the temperature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityTable {
    pub bounds: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Default for SensitivityTable {
    fn default() -> Self {
        SensitivityTable {
            bounds: vec![-10.0, -5.0, -2.0, 0.0],
            weights: vec![0.2, 0.5, 1.0, 1.5, 1.25],
        }
    }
}

impl SensitivityTable {
    pub fn weight(&self, t_base: f64) -> f64 {
        self.weights[self.bounds.iter().filter(|&&b| b < t_base).count()]
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.bounds.len() + 1 {
            return Err(Error::InvalidConfig("sensitivity table needs one more weight than bounds".into()));
        }
        if self.bounds.windows(2).any(|w| w[0] >= w[1]) || self.bounds.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidConfig("sensitivity bounds must be finite and increasing".into()));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidConfig("sensitivity weights must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Sensitivity multiplier under the default tier table.
pub fn physical_sensitivity_weight(t_base: f64) -> f64 {
    SensitivityTable::default().weight(t_base)
}

/// Physical permafrost change (pp) under the default table and −10 pp/°C.
pub fn physical_delta(t_base: f64, delta_t: f64) -> f64 {
    HybridConfig::default().physical_delta(t_base, delta_t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridConfig {
    pub ml_weight: f64,
    pub physics_weight: f64,
    /// Physical response in pp per °C before the sensitivity multiplier.
    pub per_degree: f64,
    pub sensitivity: SensitivityTable,
    /// Replaces the tier table with a constant multiplier.
    pub force_w: Option<f64>,
    /// Drops the ML term (its delta is taken as 0); the mixing weights still apply.
    pub physics_only: bool,
    /// Lets the hybrid delta turn positive under warming.
    pub allow_gain: bool,
}

impl Default for HybridConfig {
    fn default() -> Self {
        HybridConfig {
            ml_weight: 0.6,
            physics_weight: 0.4,
            per_degree: -10.0,
            sensitivity: SensitivityTable::default(),
            force_w: None,
            physics_only: false,
            allow_gain: false,
        }
    }
}

impl HybridConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("ml_weight", self.ml_weight), ("physics_weight", self.physics_weight)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0")));
            }
        }
        if !self.per_degree.is_finite() {
            return Err(Error::InvalidConfig("per_degree must be finite".into()));
        }
        if let Some(w) = self.force_w {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidConfig("force_w must be finite and >= 0".into()));
            }
        }
        self.sensitivity.validate()
    }

    pub fn weight(&self, t_base: f64) -> f64 {
        self.force_w.unwrap_or_else(|| self.sensitivity.weight(t_base))
    }

    pub fn physical_delta(&self, t_base: f64, delta_t: f64) -> f64 {
        self.per_degree * delta_t * self.weight(t_base)
    }

    /// Mixes the two deltas; under warming the result is capped at 0 unless gains are allowed.
    pub fn combine(&self, ml_delta: f64, phys_delta: f64, delta_t: f64) -> f64 {
        let mixed = self.ml_weight * ml_delta + self.physics_weight * phys_delta;
        if delta_t > 0.0 && !self.allow_gain {
            mixed.min(0.0)
        } else {
            mixed
        }
    }
}

/// Baseline-year feature rows (full manifest) with the dataset statistics of the model.
pub fn baseline_features(dataset: &Dataset, stats: &FeatureStats) -> Result<FeatureMatrix> {
    if !dataset.years().contains(&BASELINE_YEAR) {
        return Err(Error::MissingBaseline(BASELINE_YEAR));
    }
    let all = build_features_with(&dataset.truncate_to(BASELINE_YEAR)?, stats)?;
    let rows: Vec<usize> = (0..all.n_rows()).filter(|&i| all.rows[i].year == BASELINE_YEAR).collect();
    Ok(all.select_rows(&rows))
}

/// Moves baseline rows to the horizon year under a linear warming ramp.
/// Targets stay the baseline permafrost fraction.
pub fn perturb_baseline(baseline: &FeatureMatrix, delta_t: f64, horizon_years: u32) -> Result<FeatureMatrix> {
    if !(delta_t.is_finite() && delta_t >= 0.0) {
        return Err(Error::InvalidConfig(format!("delta_t {delta_t} must be finite and >= 0")));
    }
    if baseline.names.len() != crate::features::N_FEATURES {
        return Err(Error::InvalidConfig("scenario rows need the full feature manifest".into()));
    }
    let h = f64::from(horizon_years.max(1));
    let ramp = |back: f64| delta_t * (h - back).max(0.0) / h;
    let year = BASELINE_YEAR + horizon_years as i32;
    let mut x = baseline.x.clone();
    for i in 0..x.n_rows() {
        let row = x.row_mut(i);
        row[col::TEMPERATURE] += delta_t;
        row[col::TEMP_LAG1] += ramp(1.0);
        row[col::TEMP_LAG2] += ramp(2.0);
        row[col::YEARS_SINCE_START] = f64::from(year - baseline.stats.study_start);
        refresh_temperature_terms(row);
    }
    let rows = baseline.rows.iter().map(|r| crate::features::RowKey { year, ..*r }).collect();
    Ok(FeatureMatrix::assemble(
        baseline.names.clone(),
        x,
        baseline.target.clone(),
        rows,
        baseline.stats,
    ))
}

/// One row per location at the scenario horizon; targets hold the baseline fraction.
pub fn build_scenario_features(dataset: &Dataset, scenario: &ScenarioSpec, stats: &FeatureStats) -> Result<FeatureMatrix> {
    perturb_baseline(&baseline_features(dataset, stats)?, scenario.arctic_delta_t, scenario.horizon_years)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub location: LocationKey,
    pub scenario: ScenarioId,
    pub baseline_pf: f64,
    /// Baseline-year mean annual temperature (°C).
    pub t_base: f64,
    pub ml_delta: f64,
    pub phys_delta: f64,
    pub hybrid_delta: f64,
    pub projected_pf: f64,
    pub sigma: f64,
}

impl ProjectionResult {
    pub fn decline(&self) -> f64 {
        -self.hybrid_delta
    }
}

pub fn hybrid_project(
    model: &StackedModel,
    dataset: &Dataset,
    scenario: &ScenarioSpec,
    config: &HybridConfig,
) -> Result<Vec<ProjectionResult>> {
    config.validate()?;
    let baseline = baseline_features(dataset, &model.feature_stats)?;
    let perturbed = perturb_baseline(&baseline, scenario.arctic_delta_t, scenario.horizon_years)?;
    let estimates = model.predict_matrix(&perturbed.select_columns(&model.feature_names)?.x)?;
    let dt = scenario.arctic_delta_t;
    Ok(estimates
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let baseline_pf = baseline.target[i];
            let t_base = baseline.x.get(i, col::TEMPERATURE);
            let ml_delta = if config.physics_only { 0.0 } else { e.mean - baseline_pf };
            let phys_delta = config.physical_delta(t_base, dt);
            let hybrid_delta = config.combine(ml_delta, phys_delta, dt);
            ProjectionResult {
                location: baseline.rows[i].location,
                scenario: scenario.id,
                baseline_pf,
                t_base,
                ml_delta,
                phys_delta,
                hybrid_delta,
                projected_pf: (baseline_pf + hybrid_delta).clamp(0.0, 100.0),
                sigma: e.sigma,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario: ScenarioId,
    pub n_locations: usize,
    pub mean_decline: f64,
    pub median_decline: f64,
    pub share_decline_ge_5: f64,
    pub share_decline_ge_10: f64,
    pub share_decline_gt_20: f64,
    pub mean_sigma: f64,
}

pub fn summarize_scenario(results: &[ProjectionResult]) -> Result<ScenarioSummary> {
    let first = results.first().ok_or(Error::EmptyInput("no projections to summarize"))?;
    let declines: Vec<f64> = results.iter().map(ProjectionResult::decline).collect();
    let n = declines.len() as f64;
    let share = |f: &dyn Fn(f64) -> bool| declines.iter().filter(|&&d| f(d)).count() as f64 / n;
    let sigmas: Vec<f64> = results.iter().map(|r| r.sigma).collect();
    Ok(ScenarioSummary {
        scenario: first.scenario,
        n_locations: results.len(),
        mean_decline: stats::mean(&declines),
        median_decline: stats::median(&declines),
        share_decline_ge_5: share(&|d| d >= 5.0),
        share_decline_ge_10: share(&|d| d >= 10.0),
        share_decline_gt_20: share(&|d| d > 20.0),
        mean_sigma: stats::mean(&sigmas),
    })
}

pub const PROJECTION_HEADER: [&str; 9] = [
    "lat",
    "lon",
    "scenario",
    "baseline_pf",
    "ml_delta",
    "phys_delta",
    "hybrid_delta",
    "projected_pf",
    "sigma",
];

pub fn projection_table(results: &[ProjectionResult]) -> Table {
    let mut t = Table::new(&PROJECTION_HEADER);
    for r in results {
        t.push(vec![
            r.location.lat.into(),
            r.location.lon.into(),
            r.scenario.as_str().into(),
            r.baseline_pf.into(),
            r.ml_delta.into(),
            r.phys_delta.into(),
            r.hybrid_delta.into(),
            r.projected_pf.into(),
            r.sigma.into(),
        ]);
    }
    t
}

/// Reads a projection CSV. Baseline temperatures are not stored there and come back as NaN.
pub fn read_projections(path: &Path) -> Result<Vec<ProjectionResult>> {
    read_records(path, &PROJECTION_HEADER)?
        .iter()
        .map(|rec| {
            let f = |i: usize| record_f64(path, rec, i, PROJECTION_HEADER[i]);
            Ok(ProjectionResult {
                location: LocationKey::new(f(0)?, f(1)?),
                scenario: rec[2].parse()?,
                baseline_pf: f(3)?,
                t_base: f64::NAN,
                ml_delta: f(4)?,
                phys_delta: f(5)?,
                hybrid_delta: f(6)?,
                projected_pf: f(7)?,
                sigma: f(8)?,
            })
        })
        .collect()
}
