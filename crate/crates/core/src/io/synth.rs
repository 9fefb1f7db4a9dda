//! Synthetic location × year grids with the statistical shape of the
//! pan-Arctic permafrost record: a temperature-driven logistic permafrost
//! fraction, ~0.5 °C/° latitudinal cooling, ~10 W/m²/° radiation decline,
//! a mild warming trend and persistent local heterogeneity.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{
    ClimateVar, Dataset, LocationKey, LocationSeries, Observation, FIRST_YEAR, LAST_YEAR, LAT_MAX,
    LAT_MIN, LON_MAX, LON_MIN,
};
use crate::error::{Error, Result};
use crate::io::format_sig6;
use crate::rng::substream;
use crate::stats;

/// Roughness length (m) used to derive 2 m wind from 10 m wind with a log profile.
const ROUGHNESS_M: f64 = 0.03;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_locations: usize,
    pub first_year: i32,
    pub last_year: i32,
    pub seed: u64,
    /// °C per year.
    pub warming_trend: f64,
    /// Interannual temperature noise, °C.
    pub noise_sd_temp: f64,
    /// Interannual permafrost-fraction noise, pp.
    pub noise_sd_pf: f64,
    pub logistic_center: f64,
    pub logistic_width: f64,
    /// Baseline temperature at 60°N on the western (30°E) and eastern (180°E) edges.
    pub t0_west: f64,
    pub t0_east: f64,
    /// Persistent per-location temperature offset, °C.
    pub location_temp_sd: f64,
    /// Scale of the persistent one-sided local permafrost deficit (water
    /// bodies, taliks), in pp at full permafrost cover.
    pub heterogeneity_sd: f64,
    /// Fraction of climate cells masked as missing.
    pub missing_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_locations: 5000,
            first_year: FIRST_YEAR,
            last_year: LAST_YEAR,
            seed: 42,
            warming_trend: 0.04,
            noise_sd_temp: 0.3,
            noise_sd_pf: 2.0,
            logistic_center: -3.0,
            logistic_width: 0.85,
            t0_west: -0.82,
            t0_east: -1.32,
            location_temp_sd: 0.1,
            heterogeneity_sd: 10.8,
            missing_fraction: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("synth: {m}")));
        if self.n_locations < 1 {
            return bad("n_locations must be >= 1");
        }
        if self.first_year > self.last_year {
            return bad("year range is empty");
        }
        if self.first_year < FIRST_YEAR || self.last_year > LAST_YEAR {
            return bad("years must lie within 2005..=2021");
        }
        if !(self.logistic_width > 0.0) {
            return bad("logistic_width must be > 0");
        }
        let sds = [
            self.noise_sd_temp,
            self.noise_sd_pf,
            self.location_temp_sd,
            self.heterogeneity_sd,
        ];
        if sds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("noise scales must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.missing_fraction) {
            return bad("missing_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

fn round_sig6(v: f64) -> f64 {
    format_sig6(v).parse().expect("formatted float parses")
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("finite non-negative sd")
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn generate_location(config: &SynthConfig, index: usize) -> LocationSeries {
    let mut rng = substream(config.seed, "synth", index as u64);
    let lat = (rng.random_range(LAT_MIN..=LAT_MAX) * 1e4).round() / 1e4;
    let lon = (rng.random_range(LON_MIN..=LON_MAX) * 1e3).round() / 1e3;
    let key = LocationKey::new(lat, lon);
    let dlat = lat - LAT_MIN;
    let east = (lon - LON_MIN) / (LON_MAX - LON_MIN);

    let t0 = config.t0_west + (config.t0_east - config.t0_west) * east;
    let temp_offset = normal(config.location_temp_sd).sample(&mut rng);
    let deficit = normal(config.heterogeneity_sd).sample(&mut rng).abs();
    let elevation_m = rng.random_range(0.0..600.0) + 400.0 * east;
    let pressure_base = 101.325 * (-elevation_m / 8434.0).exp();
    let precip_base = (1.2 + 0.03 * dlat + normal(0.25).sample(&mut rng)).max(0.3);
    let humidity_base = 0.72 + 0.006 * dlat + normal(0.03).sample(&mut rng);
    let wind_base = 3.5 + 0.06 * dlat + normal(0.5).sample(&mut rng);
    let wind_ratio = (2.0 / ROUGHNESS_M).ln() / (10.0 / ROUGHNESS_M).ln();

    let temp_noise = normal(config.noise_sd_temp);
    let pf_noise = normal(config.noise_sd_pf);
    let mut mask_rng = substream(config.seed, "synth-missing", index as u64);

    let observations = (config.first_year..=config.last_year)
        .map(|year| {
            let t = t0 - 0.5 * dlat
                + temp_offset
                + config.warming_trend * f64::from(year - FIRST_YEAR)
                + temp_noise.sample(&mut rng);
            let frozen =
                100.0 * sigmoid(-(t - config.logistic_center) / config.logistic_width);
            let pf = (frozen * (1.0 - deficit / 100.0) + pf_noise.sample(&mut rng)).clamp(0.0, 100.0);

            let precip = (precip_base + normal(0.2).sample(&mut rng)).max(0.05);
            let all_sky = (255.0 - 10.0 * dlat + normal(5.0).sample(&mut rng)).max(10.0);
            let cloud: f64 = rng.random_range(0.1..0.5);
            let clear_sky = all_sky / (1.0 - cloud);
            let humidity = (humidity_base + normal(0.02).sample(&mut rng)).clamp(0.3, 1.0);
            let dewpoint = t - 20.0 * (1.0 - humidity);
            let wind10 = (wind_base + normal(0.4).sample(&mut rng)).max(0.0);
            let wind2 = (wind10 * wind_ratio * (1.0 + normal(0.03).sample(&mut rng))).max(0.0);
            let pressure = pressure_base * (1.0 + normal(0.002).sample(&mut rng));

            let mut climate = [
                t, precip, all_sky, clear_sky, humidity, dewpoint, wind2, wind10, pressure,
            ]
            .map(|v| Some(round_sig6(v)));
            // Rounding may invert clear/all-sky only if they were equal; keep the ordering.
            if climate[ClimateVar::RadiationClearSky.index()] < climate[ClimateVar::RadiationAllSky.index()] {
                climate[ClimateVar::RadiationClearSky.index()] = climate[ClimateVar::RadiationAllSky.index()];
            }
            if config.missing_fraction > 0.0 {
                for cell in climate.iter_mut() {
                    if mask_rng.random::<f64>() < config.missing_fraction {
                        *cell = None;
                    }
                }
            }
            Observation {
                location: key,
                year,
                permafrost_fraction: round_sig6(pf),
                climate,
            }
        })
        .collect();
    LocationSeries { key, observations }
}

/// Generates a grid-complete synthetic dataset. Output is a pure function of
/// `config` (seed included); each location draws from its own stream.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let locations: Vec<LocationSeries> = (0..config.n_locations)
        .into_par_iter()
        .map(|i| generate_location(config, i))
        .collect();
    Dataset::new(locations)
}

/// Headline statistics used to check a dataset against the target shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub rows: usize,
    pub locations: usize,
    pub mean_pf: f64,
    pub median_pf: f64,
    /// Pearson correlation of temperature and permafrost fraction over rows with a temperature.
    pub corr_temperature_pf: f64,
    /// OLS slope of permafrost fraction on latitude over rows in 62–68°N (pp/°).
    pub slope_62_68: Option<f64>,
}

impl DatasetSummary {
    pub fn of(dataset: &Dataset) -> Self {
        let pf: Vec<f64> = dataset.observations().map(|o| o.permafrost_fraction).collect();
        let (t, pf_t): (Vec<f64>, Vec<f64>) = dataset
            .observations()
            .filter_map(|o| o.temperature().map(|t| (t, o.permafrost_fraction)))
            .unzip();
        let (lat, pf_band): (Vec<f64>, Vec<f64>) = dataset
            .observations()
            .filter(|o| (62.0..=68.0).contains(&o.location.lat))
            .map(|o| (o.location.lat, o.permafrost_fraction))
            .unzip();
        DatasetSummary {
            rows: pf.len(),
            locations: dataset.n_locations(),
            mean_pf: stats::mean(&pf),
            median_pf: stats::median(&pf),
            corr_temperature_pf: stats::pearson(&t, &pf_t),
            slope_62_68: stats::ols_slope(&lat, &pf_band),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{validate_observation, Severity};

    fn small(n: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            n_locations: n,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let a = generate_synthetic(&small(50, 3)).unwrap();
        let b = generate_synthetic(&small(50, 3)).unwrap();
        let c = generate_synthetic(&small(50, 4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn every_row_passes_hard_validation() {
        let ds = generate_synthetic(&small(300, 11)).unwrap();
        assert_eq!(ds.n_observations(), 300 * 17);
        for obs in ds.observations() {
            let errors: Vec<_> = validate_observation(obs)
                .into_iter()
                .filter(|v| v.severity == Severity::Error)
                .collect();
            assert!(errors.is_empty(), "{errors:?}");
        }
    }

    #[test]
    fn missing_injection_rate() {
        let cfg = SynthConfig {
            missing_fraction: 0.005,
            ..small(400, 5)
        };
        let ds = generate_synthetic(&cfg).unwrap();
        let cells = ds.n_observations() * 9;
        let rate = ds.missing_cells() as f64 / cells as f64;
        assert!((0.003..0.007).contains(&rate), "rate {rate}");
        assert!(ds.observations().all(|o| (0.0..=100.0).contains(&o.permafrost_fraction)));
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(generate_synthetic(&small(0, 1)).is_err());
        let cfg = SynthConfig {
            logistic_width: 0.0,
            ..small(5, 1)
        };
        assert!(generate_synthetic(&cfg).is_err());
        let cfg = SynthConfig {
            first_year: 2010,
            last_year: 2009,
            ..small(5, 1)
        };
        assert!(generate_synthetic(&cfg).is_err());
    }
}
