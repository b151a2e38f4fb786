//! Scenario configuration: the JSON schema, its defaults, and validation.
//!
//! Every key is optional; a missing key takes the default listed on
//! [`ScenarioConfig::default`]. Unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::units::{Bandwidth, Price};

/// Inclusive `[lo, hi]` range in kbps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KbpsRange(pub f64, pub f64);

impl KbpsRange {
    pub fn lo(&self) -> f64 {
        self.0
    }

    pub fn hi(&self) -> f64 {
        self.1
    }

    pub fn mid(&self) -> f64 {
        (self.0 + self.1) / 2.0
    }

    /// Maps `u ∈ [0, 1)` onto the range, quantized to 0.1 kbps.
    pub fn sample(&self, u: f64) -> Bandwidth {
        Bandwidth::from_kbps(self.0 + u * (self.1 - self.0))
    }

    fn check(&self, key: &str) -> Result<(), ConfigError> {
        if !(self.0.is_finite() && self.1.is_finite()) || self.0 <= 0.0 {
            return Err(ConfigError::invalid(key, "bounds must be finite and positive"));
        }
        if self.0 > self.1 {
            return Err(ConfigError::invalid(key, "min must not exceed max"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassConfig {
    pub share: f64,
    pub reference_price: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Proposed,
    Baseline,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Proposed => "proposed",
            Mode::Baseline => "baseline",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "proposed" => Ok(Mode::Proposed),
            "baseline" => Ok(Mode::Baseline),
            other => Err(ConfigError::invalid(
                "modes",
                format!("unknown mode `{other}` (expected proposed or baseline)"),
            )),
        }
    }
}

/// Parses a comma separated mode list such as `proposed,baseline`.
pub fn parse_modes(s: &str) -> Result<Vec<Mode>, ConfigError> {
    let modes = s
        .split(',')
        .filter(|m| !m.trim().is_empty())
        .map(Mode::from_str)
        .collect::<Result<Vec<_>, _>>()?;
    if modes.is_empty() {
        return Err(ConfigError::invalid("modes", "at least one mode is required"));
    }
    Ok(modes)
}

/// Inclusive seed range written `A..B`, or a single seed `A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedRange {
    pub first: u64,
    pub last: u64,
}

impl SeedRange {
    pub fn iter(&self) -> impl Iterator<Item = u64> {
        self.first..=self.last
    }

    pub fn len(&self) -> usize {
        (self.last - self.first + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl FromStr for SeedRange {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ConfigError::invalid("seeds", format!("expected `A..B` or `A`, got `{s}`"));
        let (first, last) = match s.split_once("..") {
            Some((a, b)) => (
                a.trim().parse().map_err(|_| bad())?,
                b.trim().parse().map_err(|_| bad())?,
            ),
            None => {
                let v = s.trim().parse().map_err(|_| bad())?;
                (v, v)
            }
        };
        if first > last {
            return Err(ConfigError::invalid("seeds", "range start exceeds end"));
        }
        Ok(SeedRange { first, last })
    }
}

impl fmt::Display for SeedRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.first, self.last)
    }
}

impl Serialize for SeedRange {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SeedRange {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Single(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Single(v) => Ok(SeedRange { first: v, last: v }),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Parameters a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKey {
    /// Midpoint of the upload range; the range is scaled about zero so its
    /// lo/hi ratio is preserved.
    UploadMid,
    /// Downstream count; the upstream count scales by the same factor.
    NetworkSize,
    NUpstream,
    NDownstream,
    Degree,
    /// Share of class 1, taken from (or returned to) the last class.
    Q1Share,
}

impl SweepKey {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepKey::UploadMid => "upload_mid",
            SweepKey::NetworkSize => "network_size",
            SweepKey::NUpstream => "n_upstream",
            SweepKey::NDownstream => "n_downstream",
            SweepKey::Degree => "degree",
            SweepKey::Q1Share => "q1_share",
        }
    }
}

impl FromStr for SweepKey {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim() {
            "upload_mid" => SweepKey::UploadMid,
            "network_size" => SweepKey::NetworkSize,
            "n_upstream" => SweepKey::NUpstream,
            "n_downstream" => SweepKey::NDownstream,
            "degree" => SweepKey::Degree,
            "q1_share" => SweepKey::Q1Share,
            other => {
                return Err(ConfigError::invalid(
                    "sweep",
                    format!("unknown sweep key `{other}`"),
                ))
            }
        })
    }
}

/// `KEY=LO..HI:STEP` or `KEY=V1,V2,...`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub key: SweepKey,
    pub values: Vec<f64>,
}

impl FromStr for Sweep {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |why: &str| ConfigError::invalid("sweep", format!("`{s}`: {why}"));
        let (key, spec) = s.split_once('=').ok_or_else(|| bad("expected KEY=SPEC"))?;
        let key: SweepKey = key.parse()?;
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad("not a number"));
        let values = if let Some((range, step)) = spec.split_once(':') {
            let (lo, hi) = range.split_once("..").ok_or_else(|| bad("expected LO..HI:STEP"))?;
            let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
            if !(step > 0.0) || lo > hi {
                return Err(bad("step must be positive and LO <= HI"));
            }
            let n = ((hi - lo) / step + 1e-9).floor() as usize;
            (0..=n).map(|i| lo + step * i as f64).collect()
        } else {
            spec.split(',').map(num).collect::<Result<Vec<_>, _>>()?
        };
        if values.is_empty() {
            return Err(bad("no values"));
        }
        Ok(Sweep { key, values })
    }
}

impl fmt::Display for Sweep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}=", self.key.as_str())?;
        for (i, v) in self.values.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl Serialize for Sweep {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Sweep {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_upstream: usize,
    pub n_downstream: usize,
    /// Distinct upstreams each downstream connects to.
    pub degree: usize,
    pub upload_range: KbpsRange,
    pub download_range: KbpsRange,
    pub link_range: KbpsRange,
    pub layer_rates: Vec<f64>,
    pub classes: Vec<ClassConfig>,
    pub modes: Vec<Mode>,
    pub seeds: SeedRange,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    pub out: PathBuf,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_upstream: 250,
            n_downstream: 500,
            degree: 4,
            upload_range: KbpsRange(256.0, 2048.0),
            download_range: KbpsRange(256.0, 1024.0),
            link_range: KbpsRange(256.0, 1024.0),
            layer_rates: vec![200.0, 100.0, 100.0, 100.0, 100.0, 100.0],
            classes: vec![
                ClassConfig { share: 0.10, reference_price: 4 },
                ClassConfig { share: 0.30, reference_price: 2 },
                ClassConfig { share: 0.60, reference_price: 1 },
            ],
            modes: vec![Mode::Proposed, Mode::Baseline],
            seeds: SeedRange { first: 1, last: 1 },
            sweep: None,
            out: PathBuf::from("results"),
        }
    }
}

impl ScenarioConfig {
    /// Reads, parses and validates a JSON config file.
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.upload_range.check("upload_range")?;
        self.download_range.check("download_range")?;
        self.link_range.check("link_range")?;
        if self.n_upstream == 0 {
            return Err(ConfigError::invalid("n_upstream", "must be at least 1"));
        }
        if self.degree == 0 {
            return Err(ConfigError::invalid("degree", "must be at least 1"));
        }
        if self.degree > self.n_upstream {
            return Err(ConfigError::invalid(
                "degree",
                format!(
                    "connectivity degree {} exceeds the {} upstream peers",
                    self.degree, self.n_upstream
                ),
            ));
        }
        if self.layer_rates.is_empty() {
            return Err(ConfigError::invalid("layer_rates", "at least one layer is required"));
        }
        for (k, &r) in self.layer_rates.iter().enumerate() {
            if !(r.is_finite() && Bandwidth::from_kbps(r).units() > 0) {
                return Err(ConfigError::invalid(
                    "layer_rates",
                    format!("rate of layer {k} must be positive, got {r}"),
                ));
            }
        }
        if self.classes.is_empty() {
            return Err(ConfigError::invalid("classes", "at least one class is required"));
        }
        let mut sum = 0.0;
        for (i, c) in self.classes.iter().enumerate() {
            if !(0.0..=1.0).contains(&c.share) {
                return Err(ConfigError::invalid(
                    "classes",
                    format!("share of class {} must lie in [0, 1]", i + 1),
                ));
            }
            if c.reference_price == 0 {
                return Err(ConfigError::invalid(
                    "classes",
                    format!("reference_price of class {} must be positive", i + 1),
                ));
            }
            if i > 0 && c.reference_price >= self.classes[i - 1].reference_price {
                return Err(ConfigError::invalid(
                    "classes",
                    "reference prices must strictly decrease from class 1 downwards",
                ));
            }
            sum += c.share;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ConfigError::invalid(
                "classes",
                format!("shares must sum to 1, got {sum}"),
            ));
        }
        if self.modes.is_empty() {
            return Err(ConfigError::invalid("modes", "at least one mode is required"));
        }
        if let Some(sweep) = &self.sweep {
            for &v in &sweep.values {
                self.with_sweep_value(sweep.key, v)?;
            }
        }
        Ok(())
    }

    pub fn layer_bandwidths(&self) -> Vec<Bandwidth> {
        self.layer_rates.iter().map(|&r| Bandwidth::from_kbps(r)).collect()
    }

    pub fn max_reference_price(&self) -> Price {
        self.classes
            .iter()
            .filter_map(|c| Price::new(c.reference_price))
            .max()
            .unwrap_or(Price::ONE)
    }

    /// Copy of this config with one sweep parameter applied and validated.
    pub fn with_sweep_value(&self, key: SweepKey, value: f64) -> Result<Self, ConfigError> {
        let mut cfg = self.clone();
        cfg.sweep = None;
        let count = |v: f64| -> Result<usize, ConfigError> {
            if v < 0.0 || v.fract() != 0.0 {
                return Err(ConfigError::invalid(
                    "sweep",
                    format!("{} needs non-negative integers, got {v}", key.as_str()),
                ));
            }
            Ok(v as usize)
        };
        match key {
            SweepKey::UploadMid => {
                if !(value > 0.0) {
                    return Err(ConfigError::invalid("sweep", "upload_mid must be positive"));
                }
                let scale = value / self.upload_range.mid();
                cfg.upload_range =
                    KbpsRange(self.upload_range.lo() * scale, self.upload_range.hi() * scale);
            }
            SweepKey::NetworkSize => {
                let n = count(value)?;
                let ratio = self.n_upstream as f64 / self.n_downstream.max(1) as f64;
                cfg.n_downstream = n;
                cfg.n_upstream = ((n as f64 * ratio).round() as usize).max(self.degree);
            }
            SweepKey::NUpstream => cfg.n_upstream = count(value)?,
            SweepKey::NDownstream => cfg.n_downstream = count(value)?,
            SweepKey::Degree => cfg.degree = count(value)?,
            SweepKey::Q1Share => {
                let last = cfg.classes.len() - 1;
                if last == 0 {
                    return Err(ConfigError::invalid("sweep", "q1_share needs at least two classes"));
                }
                let delta = value - cfg.classes[0].share;
                cfg.classes[0].share = value;
                cfg.classes[last].share -= delta;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Expands the optional sweep into `(sweep value, config)` points.
    pub fn sweep_points(&self) -> Result<Vec<(Option<f64>, ScenarioConfig)>, ConfigError> {
        match &self.sweep {
            None => Ok(vec![(None, self.clone())]),
            Some(sweep) => sweep
                .values
                .iter()
                .map(|&v| Ok((Some(v), self.with_sweep_value(sweep.key, v)?)))
                .collect(),
        }
    }
}
