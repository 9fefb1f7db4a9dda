//! Composite risk scores, quantile-cut classes, latitude profiles and
//! uncertainty summaries over scenario projections.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{LocationKey, ScenarioId, LAT_MAX, LAT_MIN};
use crate::error::{Error, Result};
use crate::io::Table;
use crate::scenario::ProjectionResult;
use crate::stats;

pub const LOW_QUANTILE: f64 = 0.60;
pub const HIGH_QUANTILE: f64 = 0.85;
pub const SIGMA_QUANTILES: [f64; 4] = [0.25, 0.50, 0.75, 0.95];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiskWeights {
    pub decline: f64,
    pub vulnerability: f64,
    pub uncertainty: f64,
}

impl Default for RiskWeights {
    fn default() -> Self {
        RiskWeights {
            decline: 0.5,
            vulnerability: 0.3,
            uncertainty: 0.2,
        }
    }
}

impl RiskWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.decline, self.vulnerability, self.uncertainty];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidConfig("risk weights must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Population range of one factor; a collapsed range normalizes to 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorRange {
    pub min: f64,
    pub max: f64,
}

impl FactorRange {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("factor range of no values"));
        }
        Ok(FactorRange {
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }

    pub fn normalize(&self, x: f64) -> f64 {
        if self.max > self.min {
            ((x - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskNorms {
    pub decline: FactorRange,
    pub sigma: FactorRange,
}

pub fn risk_score(decline: f64, projected_pf: f64, sigma: f64, norms: &RiskNorms, weights: &RiskWeights) -> f64 {
    weights.decline * norms.decline.normalize(decline)
        + weights.vulnerability * (1.0 - projected_pf / 100.0).clamp(0.0, 1.0)
        + weights.uncertainty * norms.sigma.normalize(sigma)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskClass {
    Low,
    Medium,
    High,
}

impl RiskClass {
    pub fn as_str(self) -> &'static str {
        match self {
            RiskClass::Low => "low",
            RiskClass::Medium => "medium",
            RiskClass::High => "high",
        }
    }
}

impl fmt::Display for RiskClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub classes: Vec<RiskClass>,
    pub cut_low: f64,
    pub cut_high: f64,
}

impl Classification {
    /// Low, medium and high counts.
    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for class in &self.classes {
            c[*class as usize] += 1;
        }
        c
    }
}

pub fn classify_risk(scores: &[f64]) -> Result<Classification> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("no scores to classify"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("risk scores"));
    }
    let sorted = stats::sorted(scores);
    let cut_low = stats::quantile_sorted(&sorted, LOW_QUANTILE);
    let cut_high = stats::quantile_sorted(&sorted, HIGH_QUANTILE);
    let classes = scores
        .iter()
        .map(|&s| {
            if s <= cut_low {
                RiskClass::Low
            } else if s > cut_high {
                RiskClass::High
            } else {
                RiskClass::Medium
            }
        })
        .collect();
    Ok(Classification {
        classes,
        cut_low,
        cut_high,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskAssessment {
    pub location: LocationKey,
    pub scenario: ScenarioId,
    pub score: f64,
    pub class: RiskClass,
    pub decline: f64,
    pub projected_pf: f64,
    pub sigma: f64,
    /// Projected fraction below 50 pp.
    pub flag_pf50: bool,
    /// Baseline temperature above −2 °C.
    pub flag_tm2: bool,
    /// Decline above 20 pp.
    pub flag_d20: bool,
}

/// Scores and classifies each scenario separately, keeping input order.
pub fn assess_risk(results: &[ProjectionResult], weights: &RiskWeights) -> Result<Vec<RiskAssessment>> {
    weights.validate()?;
    if results.is_empty() {
        return Err(Error::EmptyInput("no projections to assess"));
    }
    let mut out: Vec<Option<RiskAssessment>> = vec![None; results.len()];
    for id in ScenarioId::ALL {
        let idx: Vec<usize> = (0..results.len()).filter(|&i| results[i].scenario == id).collect();
        if idx.is_empty() {
            continue;
        }
        let declines: Vec<f64> = idx.iter().map(|&i| results[i].decline()).collect();
        let sigmas: Vec<f64> = idx.iter().map(|&i| results[i].sigma).collect();
        let norms = RiskNorms {
            decline: FactorRange::of(&declines)?,
            sigma: FactorRange::of(&sigmas)?,
        };
        let scores: Vec<f64> = idx
            .iter()
            .map(|&i| {
                let r = &results[i];
                risk_score(r.decline(), r.projected_pf, r.sigma, &norms, weights)
            })
            .collect();
        let classification = classify_risk(&scores)?;
        for (k, &i) in idx.iter().enumerate() {
            let r = &results[i];
            out[i] = Some(RiskAssessment {
                location: r.location,
                scenario: id,
                score: scores[k],
                class: classification.classes[k],
                decline: r.decline(),
                projected_pf: r.projected_pf,
                sigma: r.sigma,
                flag_pf50: r.projected_pf < 50.0,
                flag_tm2: r.t_base > -2.0,
                flag_d20: r.decline() > 20.0,
            });
        }
    }
    Ok(out.into_iter().map(|a| a.expect("every scenario is covered")).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileBin {
    pub lat_start: f64,
    pub count: usize,
    pub high_count: usize,
    /// 0 for empty bins, which are marked by `empty`.
    pub high_risk_proportion: f64,
    pub empty: bool,
}

/// Half-open latitude bins from the southern domain edge; the northern edge
/// falls into the last bin.
pub fn latitudinal_profile(assessments: &[RiskAssessment], bin_width: f64) -> Result<Vec<ProfileBin>> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::InvalidConfig(format!("bin width {bin_width} must be > 0")));
    }
    let n_bins = ((LAT_MAX - LAT_MIN) / bin_width).ceil() as usize;
    let mut bins: Vec<ProfileBin> = (0..n_bins)
        .map(|i| ProfileBin {
            lat_start: LAT_MIN + i as f64 * bin_width,
            count: 0,
            high_count: 0,
            high_risk_proportion: 0.0,
            empty: true,
        })
        .collect();
    for a in assessments {
        let raw = ((a.location.lat - LAT_MIN) / bin_width).floor();
        let i = (raw.max(0.0) as usize).min(n_bins - 1);
        bins[i].count += 1;
        bins[i].high_count += usize::from(a.class == RiskClass::High);
    }
    for b in &mut bins {
        if b.count > 0 {
            b.empty = false;
            b.high_risk_proportion = b.high_count as f64 / b.count as f64;
        }
    }
    Ok(bins)
}

/// Linear-interpolation quantiles of the ensemble spread.
pub fn uncertainty_quantiles(sigmas: &[f64], qs: &[f64]) -> Result<Vec<f64>> {
    if sigmas.is_empty() {
        return Err(Error::EmptyInput("no sigma values"));
    }
    if qs.iter().any(|q| !(0.0..=1.0).contains(q)) {
        return Err(Error::InvalidConfig("quantile levels must lie in [0, 1]".into()));
    }
    let sorted = stats::sorted(sigmas);
    Ok(qs.iter().map(|&q| stats::quantile_sorted(&sorted, q)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioUncertainty {
    pub scenario: ScenarioId,
    pub levels: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Sigma quantiles for every scenario present.
pub fn scenario_uncertainty(results: &[ProjectionResult]) -> Result<Vec<ScenarioUncertainty>> {
    ScenarioId::ALL
        .iter()
        .filter_map(|&id| {
            let sigmas: Vec<f64> = results.iter().filter(|r| r.scenario == id).map(|r| r.sigma).collect();
            (!sigmas.is_empty()).then(|| {
                Ok(ScenarioUncertainty {
                    scenario: id,
                    levels: SIGMA_QUANTILES.to_vec(),
                    sigma: uncertainty_quantiles(&sigmas, &SIGMA_QUANTILES)?,
                })
            })
        })
        .collect()
}

pub const RISK_HEADER: [&str; 11] = [
    "lat",
    "lon",
    "scenario",
    "score",
    "class",
    "decline",
    "projected_pf",
    "sigma",
    "flag_pf50",
    "flag_tm2",
    "flag_d20",
];

pub fn risk_table(assessments: &[RiskAssessment]) -> Table {
    let mut t = Table::new(&RISK_HEADER);
    for a in assessments {
        t.push(vec![
            a.location.lat.into(),
            a.location.lon.into(),
            a.scenario.as_str().into(),
            a.score.into(),
            a.class.as_str().into(),
            a.decline.into(),
            a.projected_pf.into(),
            a.sigma.into(),
            a.flag_pf50.into(),
            a.flag_tm2.into(),
            a.flag_d20.into(),
        ]);
    }
    t
}

pub fn profile_table(bins: &[ProfileBin]) -> Table {
    let mut t = Table::new(&["lat_bin_start", "count", "high_risk_proportion"]);
    for b in bins {
        t.push(vec![b.lat_start.into(), b.count.into(), b.high_risk_proportion.into()]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_norms() -> RiskNorms {
        RiskNorms {
            decline: FactorRange { min: 0.0, max: 40.0 },
            sigma: FactorRange { min: 0.0, max: 10.0 },
        }
    }

    #[test]
    fn score_extremes_and_midpoint() {
        let w = RiskWeights::default();
        let n = unit_norms();
        assert!((risk_score(40.0, 0.0, 10.0, &n, &w) - 1.0).abs() < 1e-12);
        assert_eq!(risk_score(0.0, 100.0, 0.0, &n, &w), 0.0);
        assert!((risk_score(20.0, 50.0, 5.0, &n, &w) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn collapsed_range_contributes_nothing() {
        let r = FactorRange::of(&[3.0, 3.0]).unwrap();
        assert_eq!(r.normalize(3.0), 0.0);
    }

    #[test]
    fn hundred_uniform_scores() {
        let scores: Vec<f64> = (0..100).map(f64::from).collect();
        let c = classify_risk(&scores).unwrap();
        assert_eq!(c.counts(), [60, 25, 15]);
    }

    #[test]
    fn equal_scores_are_all_low() {
        let c = classify_risk(&[0.3; 17]).unwrap();
        assert_eq!(c.counts(), [17, 0, 0]);
        assert!(classify_risk(&[]).is_err());
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(uncertainty_quantiles(&[4.0, 1.0, 3.0, 2.0], &[0.5]).unwrap(), vec![2.5]);
        assert_eq!(uncertainty_quantiles(&[0.0; 5], &SIGMA_QUANTILES).unwrap(), vec![0.0; 4]);
        assert!(uncertainty_quantiles(&[], &[0.5]).is_err());
    }

    fn assessed(lat: f64, class: RiskClass) -> RiskAssessment {
        RiskAssessment {
            location: LocationKey::new(lat, 100.0),
            scenario: ScenarioId::Rcp85,
            score: 0.0,
            class,
            decline: 0.0,
            projected_pf: 0.0,
            sigma: 0.0,
            flag_pf50: false,
            flag_tm2: false,
            flag_d20: false,
        }
    }

    #[test]
    fn separated_profile() {
        let a = vec![
            assessed(60.2, RiskClass::High),
            assessed(60.2, RiskClass::High),
            assessed(75.0, RiskClass::Low),
            assessed(82.0, RiskClass::Medium),
        ];
        let bins = latitudinal_profile(&a, 0.5).unwrap();
        assert_eq!(bins.len(), 44);
        assert_eq!((bins[0].count, bins[0].high_risk_proportion), (2, 1.0));
        assert_eq!((bins[30].lat_start, bins[30].count, bins[30].high_risk_proportion), (75.0, 1, 0.0));
        assert_eq!(bins[43].count, 1);
        assert!(bins[1].empty);
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 4);
    }
}
