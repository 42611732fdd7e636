use std::path::Path;
use std::str::FromStr;

use gazesal::config::Config;
use gazesal::ingest::OutlierPolicy;
use gazesal::metrics::Measure;
use gazesal::saliency::SdVariant;
use gazesal::{Error, Result};

const KEYS: [&str; 10] = [
    "threshold_trackloss",
    "min_fixation_ms",
    "sd_multiplier",
    "sd_variant",
    "measure",
    "agg",
    "condition",
    "seed",
    "rounds",
    "k_shots",
];

/// Defaults after applying the optional config file.
#[derive(Debug, Clone)]
pub struct Settings {
    pub threshold_trackloss: f64,
    pub outliers: OutlierPolicy,
    pub sd_variant: SdVariant,
    pub measure: Measure,
    pub agg: String,
    pub condition: String,
    pub seed: u64,
    pub rounds: usize,
    pub k_shots: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            threshold_trackloss: 0.5,
            outliers: OutlierPolicy::default(),
            sd_variant: SdVariant::Population,
            measure: Measure::Dt,
            agg: "zscore".into(),
            condition: "all".into(),
            seed: 0,
            rounds: 5,
            k_shots: 1,
        }
    }
}

pub fn parse_sd_multiplier(raw: &str) -> Result<Option<f64>> {
    if raw.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    match raw.parse::<f64>() {
        Ok(k) if k.is_finite() && k > 0.0 => Ok(Some(k)),
        _ => Err(Error::InvalidInput(format!("sd multiplier `{raw}` must be a positive number or `none`"))),
    }
}

pub fn parse_flag<T>(name: &str, raw: &str) -> Result<T>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    raw.parse().map_err(|e| Error::InvalidInput(format!("--{name}: {e}")))
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut s = Settings::default();
        let Some(path) = path else { return Ok(s) };
        let cfg = Config::load(path)?;
        cfg.check_keys(&KEYS)?;
        if let Some(v) = cfg.get_parsed("threshold_trackloss")? {
            s.threshold_trackloss = v;
        }
        if let Some(v) = cfg.get_parsed("min_fixation_ms")? {
            s.outliers.min_duration_ms = v;
        }
        if let Some(v) = cfg.get("sd_multiplier") {
            s.outliers.sd_multiplier = parse_sd_multiplier(v)?;
        }
        if let Some(v) = cfg.get_parsed("sd_variant")? {
            s.sd_variant = v;
        }
        if let Some(v) = cfg.get_parsed("measure")? {
            s.measure = v;
        }
        if let Some(v) = cfg.get("agg") {
            s.agg = v.to_string();
        }
        if let Some(v) = cfg.get("condition") {
            s.condition = v.to_string();
        }
        if let Some(v) = cfg.get_parsed("seed")? {
            s.seed = v;
        }
        if let Some(v) = cfg.get_parsed("rounds")? {
            s.rounds = v;
        }
        if let Some(v) = cfg.get_parsed("k_shots")? {
            s.k_shots = v;
        }
        Ok(s)
    }
}
