//! Imputation and the fixed 38-column feature manifest.
//!
//! Every feature of a row is computed from that location's observations at
//! the row year or earlier, plus two dataset-level statistics frozen in
//! [`FeatureStats`]. Truncating a dataset after year `Y` therefore leaves all
//! rows up to `Y` unchanged as long as the same statistics are used.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{ClimateVar, Dataset, LocationKey, LocationSeries, LAT_MIN, LON_MIN};
use crate::error::{Error, Result};
use crate::io::{Cell, Table};
use crate::matrix::Matrix;
use crate::stats;

pub const N_FEATURES: usize = 38;

/// Ordered feature names.
pub const MANIFEST: [&str; N_FEATURES] = [
    "temperature",
    "precipitation",
    "radiation_allsky",
    "radiation_clearsky",
    "humidity",
    "dewpoint",
    "wind2m",
    "wind10m",
    "pressure",
    "lat_norm",
    "lon_norm",
    "years_since_start",
    "temp_lag1",
    "temp_lag2",
    "precip_lag1",
    "precip_lag2",
    "rad_lag1",
    "rad_lag2",
    "humid_lag1",
    "humid_lag2",
    "above_freezing",
    "risk_zone",
    "tdd_proxy",
    "fdd_proxy",
    "sw_energy_allsky",
    "sw_energy_clearsky",
    "cloud_attenuation",
    "dewpoint_depression",
    "wind_shear",
    "pressure_anomaly",
    "pf_trend_loc",
    "temp_trend_loc",
    "temp_yoy",
    "precip_yoy",
    "pf_yoy",
    "pf_lag1",
    "pf_lag2",
    "temp_x_radiation",
];

/// Zero-based column positions in [`MANIFEST`].
pub mod col {
    pub const TEMPERATURE: usize = 0;
    pub const PRECIPITATION: usize = 1;
    pub const RADIATION_ALLSKY: usize = 2;
    pub const RADIATION_CLEARSKY: usize = 3;
    pub const HUMIDITY: usize = 4;
    pub const DEWPOINT: usize = 5;
    pub const WIND2M: usize = 6;
    pub const WIND10M: usize = 7;
    pub const PRESSURE: usize = 8;
    pub const LAT_NORM: usize = 9;
    pub const LON_NORM: usize = 10;
    pub const YEARS_SINCE_START: usize = 11;
    pub const TEMP_LAG1: usize = 12;
    pub const TEMP_LAG2: usize = 13;
    pub const PRECIP_LAG1: usize = 14;
    pub const PRECIP_LAG2: usize = 15;
    pub const RAD_LAG1: usize = 16;
    pub const RAD_LAG2: usize = 17;
    pub const HUMID_LAG1: usize = 18;
    pub const HUMID_LAG2: usize = 19;
    pub const ABOVE_FREEZING: usize = 20;
    pub const RISK_ZONE: usize = 21;
    pub const TDD_PROXY: usize = 22;
    pub const FDD_PROXY: usize = 23;
    pub const SW_ENERGY_ALLSKY: usize = 24;
    pub const SW_ENERGY_CLEARSKY: usize = 25;
    pub const CLOUD_ATTENUATION: usize = 26;
    pub const DEWPOINT_DEPRESSION: usize = 27;
    pub const WIND_SHEAR: usize = 28;
    pub const PRESSURE_ANOMALY: usize = 29;
    pub const PF_TREND_LOC: usize = 30;
    pub const TEMP_TREND_LOC: usize = 31;
    pub const TEMP_YOY: usize = 32;
    pub const PRECIP_YOY: usize = 33;
    pub const PF_YOY: usize = 34;
    pub const PF_LAG1: usize = 35;
    pub const PF_LAG2: usize = 36;
    pub const TEMP_X_RADIATION: usize = 37;
}

/// Columns derived from the permafrost-fraction history, which can be
/// excluded for sensitivity analysis.
pub const PF_HISTORY_COLUMNS: [usize; 4] = [col::PF_TREND_LOC, col::PF_YOY, col::PF_LAG1, col::PF_LAG2];

/// W/m² to MJ/m²/day.
const WATTS_TO_MJ_PER_DAY: f64 = 0.0864;

/// Stable fingerprint of an ordered list of column names.
pub fn manifest_hash<S: AsRef<str>>(names: &[S]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for name in names {
        for b in name.as_ref().bytes().chain(std::iter::once(b',')) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

/// Annual-mean thawing and freezing degree-day proxies (°C·day).
pub fn degree_day_proxies(temperature: f64) -> (f64, f64) {
    (temperature.max(0.0) * 365.0, (-temperature).max(0.0) * 365.0)
}

/// `(above_freezing, risk_zone)`: `T > 0` and `-2 < T <= 0` as 0/1 flags.
pub fn threshold_indicators(temperature: f64) -> (f64, f64) {
    let above = temperature > 0.0;
    let risk = temperature > -2.0 && temperature <= 0.0;
    (f64::from(u8::from(above)), f64::from(u8::from(risk)))
}

/// OLS slope per year over the pairs with `year <= upto_year`.
///
/// Returns 0 when fewer than three pairs are usable, and an error when none are.
pub fn location_trend(series: &[(i32, f64)], upto_year: i32) -> Result<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = series
        .iter()
        .filter(|(y, _)| *y <= upto_year)
        .map(|&(y, v)| (f64::from(y), v))
        .unzip();
    if xs.is_empty() {
        return Err(Error::EmptyInput("no observations up to the trend year"));
    }
    if xs.len() < 3 {
        return Ok(0.0);
    }
    Ok(stats::ols_slope(&xs, &ys).unwrap_or(0.0))
}

fn domain_medians(dataset: &Dataset) -> Result<[f64; 9]> {
    let mut out = [0.0; 9];
    for var in ClimateVar::ALL {
        let present: Vec<f64> = dataset.observations().filter_map(|o| o.get(var)).collect();
        if present.is_empty() {
            return Err(Error::EmptyInput("climate variable missing everywhere"));
        }
        out[var.index()] = stats::median(&present);
    }
    Ok(out)
}

/// Fills missing climate cells per location: carry the previous year forward,
/// else the location's series median, else the dataset-wide median.
pub fn impute_missing(dataset: &Dataset) -> Result<Dataset> {
    if dataset.missing_cells() == 0 {
        return Ok(dataset.clone());
    }
    let fallback = domain_medians(dataset)?;
    let locations = dataset
        .locations()
        .iter()
        .map(|series| {
            let mut series = series.clone();
            for var in ClimateVar::ALL {
                let present: Vec<f64> = series.observations.iter().filter_map(|o| o.get(var)).collect();
                let series_median = if present.is_empty() {
                    fallback[var.index()]
                } else {
                    stats::median(&present)
                };
                let mut previous: Option<f64> = None;
                for obs in &mut series.observations {
                    match obs.get(var) {
                        Some(v) => previous = Some(v),
                        None => obs.set(var, Some(previous.unwrap_or(series_median))),
                    }
                }
            }
            series
        })
        .collect();
    Dataset::new(locations)
}

/// Dataset-level quantities frozen at fit time and reused for any later
/// feature construction (hold-out folds, truncated windows, scenarios).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub pressure_mean: f64,
    pub study_start: i32,
}

impl FeatureStats {
    pub fn fit(dataset: &Dataset) -> Result<Self> {
        let pressures: Vec<f64> = dataset
            .observations()
            .map(|o| o.get(ClimateVar::Pressure))
            .collect::<Option<Vec<_>>>()
            .ok_or(Error::EmptyInput("pressure missing; impute before fitting features"))?;
        Ok(FeatureStats {
            pressure_mean: stats::mean(&pressures),
            study_start: dataset.first_year(),
        })
    }
}

/// Identifies which observation a feature row came from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RowKey {
    pub location: LocationKey,
    /// Position of the location in the source dataset.
    pub location_index: usize,
    pub year: i32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub x: Matrix,
    /// Permafrost fraction of each row (pp).
    pub target: Vec<f64>,
    pub rows: Vec<RowKey>,
    /// Dataset-level statistics the columns were built with.
    pub stats: FeatureStats,
    pub column_means: Vec<f64>,
    pub column_sds: Vec<f64>,
}

impl FeatureMatrix {
    pub(crate) fn assemble(names: Vec<String>, x: Matrix, target: Vec<f64>, rows: Vec<RowKey>, stats: FeatureStats) -> Self {
        let (column_means, column_sds) = (0..x.n_cols())
            .map(|j| {
                let c = x.column(j);
                (stats::mean(&c), stats::population_sd(&c))
            })
            .unzip();
        FeatureMatrix {
            names,
            x,
            target,
            rows,
            stats,
            column_means,
            column_sds,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.x.n_rows()
    }

    pub fn manifest_hash(&self) -> String {
        manifest_hash(&self.names)
    }

    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix::assemble(
            self.names.clone(),
            self.x.select_rows(indices),
            indices.iter().map(|&i| self.target[i]).collect(),
            indices.iter().map(|&i| self.rows[i]).collect(),
            self.stats,
        )
    }

    /// Keeps the named columns in the given order.
    pub fn select_columns(&self, names: &[String]) -> Result<FeatureMatrix> {
        let idx = names
            .iter()
            .map(|n| {
                self.names.iter().position(|m| m == n).ok_or_else(|| Error::ManifestMismatch {
                    expected: n.clone(),
                    actual: self.names.join(","),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureMatrix::assemble(
            names.to_vec(),
            self.x.select_cols(&idx),
            self.target.clone(),
            self.rows.clone(),
            self.stats,
        ))
    }

    /// Drops the columns at the given manifest positions.
    pub fn without_columns(&self, drop: &[usize]) -> FeatureMatrix {
        let keep: Vec<String> = self
            .names
            .iter()
            .enumerate()
            .filter(|(i, _)| !drop.contains(i))
            .map(|(_, n)| n.clone())
            .collect();
        self.select_columns(&keep).expect("kept names come from self")
    }

    /// Debug dump with the manifest as header.
    pub fn to_table(&self) -> Table {
        let mut header = vec!["lat".to_string(), "lon".to_string(), "year".to_string()];
        header.extend(self.names.iter().cloned());
        header.push("permafrost_fraction".to_string());
        let mut table = Table::new(&header);
        for (i, key) in self.rows.iter().enumerate() {
            let mut row: Vec<Cell> = vec![key.location.lat.into(), key.location.lon.into(), key.year.into()];
            row.extend(self.x.row(i).iter().map(|&v| Cell::Float(v)));
            row.push(self.target[i].into());
            table.push(row);
        }
        table
    }
}

fn value(series: &LocationSeries, t: usize, var: ClimateVar) -> Result<f64> {
    let obs = &series.observations[t];
    obs.get(var).ok_or(Error::MissingValue {
        field: var.name(),
        lat: obs.location.lat,
        lon: obs.location.lon,
        year: obs.year,
    })
}

/// Recomputes every column that is a pure function of the row's current
/// temperature and other same-row inputs.
pub(crate) fn refresh_temperature_terms(row: &mut [f64]) {
    let t = row[col::TEMPERATURE];
    let (above, risk) = threshold_indicators(t);
    let (tdd, fdd) = degree_day_proxies(t);
    row[col::ABOVE_FREEZING] = above;
    row[col::RISK_ZONE] = risk;
    row[col::TDD_PROXY] = tdd;
    row[col::FDD_PROXY] = fdd;
    row[col::DEWPOINT_DEPRESSION] = t - row[col::DEWPOINT];
    row[col::TEMP_YOY] = t - row[col::TEMP_LAG1];
    row[col::TEMP_X_RADIATION] = t * row[col::RADIATION_ALLSKY];
}

fn location_rows(series: &LocationSeries, stats: &FeatureStats) -> Result<Vec<[f64; N_FEATURES]>> {
    use ClimateVar::*;
    let n = series.observations.len();
    let series_of = |var| -> Result<Vec<f64>> { (0..n).map(|t| value(series, t, var)).collect() };
    let temp = series_of(Temperature)?;
    let precip = series_of(Precipitation)?;
    let rad = series_of(RadiationAllSky)?;
    let clear = series_of(RadiationClearSky)?;
    let humid = series_of(Humidity)?;
    let dew = series_of(Dewpoint)?;
    let wind2 = series_of(Wind2m)?;
    let wind10 = series_of(Wind10m)?;
    let pressure = series_of(Pressure)?;
    let pf: Vec<f64> = series.observations.iter().map(|o| o.permafrost_fraction).collect();
    let years: Vec<i32> = series.observations.iter().map(|o| o.year).collect();
    let pf_pairs: Vec<(i32, f64)> = years.iter().copied().zip(pf.iter().copied()).collect();
    let temp_pairs: Vec<(i32, f64)> = years.iter().copied().zip(temp.iter().copied()).collect();

    let lat_norm = (series.key.lat - LAT_MIN) / 22.0;
    let lon_norm = (series.key.lon - LON_MIN) / 150.0;

    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let l1 = t.saturating_sub(1);
        let l2 = t.saturating_sub(2);
        let year = years[t];
        let trend = |pairs: &[(i32, f64)]| -> Result<f64> {
            if t == 0 {
                Ok(0.0)
            } else {
                location_trend(pairs, year - 1)
            }
        };

        let mut r = [0.0; N_FEATURES];
        r[col::TEMPERATURE] = temp[t];
        r[col::PRECIPITATION] = precip[t];
        r[col::RADIATION_ALLSKY] = rad[t];
        r[col::RADIATION_CLEARSKY] = clear[t];
        r[col::HUMIDITY] = humid[t];
        r[col::DEWPOINT] = dew[t];
        r[col::WIND2M] = wind2[t];
        r[col::WIND10M] = wind10[t];
        r[col::PRESSURE] = pressure[t];
        r[col::LAT_NORM] = lat_norm;
        r[col::LON_NORM] = lon_norm;
        r[col::YEARS_SINCE_START] = f64::from(year - stats.study_start);
        r[col::TEMP_LAG1] = temp[l1];
        r[col::TEMP_LAG2] = temp[l2];
        r[col::PRECIP_LAG1] = precip[l1];
        r[col::PRECIP_LAG2] = precip[l2];
        r[col::RAD_LAG1] = rad[l1];
        r[col::RAD_LAG2] = rad[l2];
        r[col::HUMID_LAG1] = humid[l1];
        r[col::HUMID_LAG2] = humid[l2];
        r[col::SW_ENERGY_ALLSKY] = rad[t] * WATTS_TO_MJ_PER_DAY;
        r[col::SW_ENERGY_CLEARSKY] = clear[t] * WATTS_TO_MJ_PER_DAY;
        r[col::CLOUD_ATTENUATION] = if clear[t] == 0.0 { 0.0 } else { 1.0 - rad[t] / clear[t] };
        r[col::WIND_SHEAR] = wind10[t] - wind2[t];
        r[col::PRESSURE_ANOMALY] = pressure[t] - stats.pressure_mean;
        r[col::PF_TREND_LOC] = trend(&pf_pairs)?;
        r[col::TEMP_TREND_LOC] = trend(&temp_pairs)?;
        r[col::PRECIP_YOY] = precip[t] - precip[l1];
        r[col::PF_YOY] = pf[l1] - pf[l2];
        r[col::PF_LAG1] = pf[l1];
        r[col::PF_LAG2] = pf[l2];
        refresh_temperature_terms(&mut r);
        out.push(r);
    }
    Ok(out)
}

/// Builds the feature matrix with statistics frozen from another dataset
/// (typically the training window).
pub fn build_features_with(dataset: &Dataset, stats: &FeatureStats) -> Result<FeatureMatrix> {
    let per_location: Vec<Vec<[f64; N_FEATURES]>> = dataset
        .locations()
        .par_iter()
        .map(|s| location_rows(s, stats))
        .collect::<Result<_>>()?;

    let n = dataset.n_observations();
    let mut data = Vec::with_capacity(n * N_FEATURES);
    let mut target = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    for (li, (series, feats)) in dataset.locations().iter().zip(per_location).enumerate() {
        for (obs, r) in series.observations.iter().zip(feats) {
            data.extend_from_slice(&r);
            target.push(obs.permafrost_fraction);
            rows.push(RowKey {
                location: series.key,
                location_index: li,
                year: obs.year,
            });
        }
    }
    let x = Matrix::new(n, N_FEATURES, data)?;
    Ok(FeatureMatrix::assemble(
        MANIFEST.iter().map(|s| s.to_string()).collect(),
        x,
        target,
        rows,
        *stats,
    ))
}

/// Builds the 38-column feature matrix of an imputed dataset, fitting the
/// dataset-level statistics on the same data.
pub fn build_feature_matrix(dataset: &Dataset) -> Result<FeatureMatrix> {
    let stats = FeatureStats::fit(dataset)?;
    build_features_with(dataset, &stats)
}
