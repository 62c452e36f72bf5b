//! Run configuration: a flat table of named keys with defaults, overridden by
//! a `key = value` file and then by `--set` pairs.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use way_core::annotate::AnnotateConfig;
use way_core::geo::GridSpec;
use way_core::pipeline::RepresentConfig;
use way_core::refine::{RefineConfig, SogAverage};
use way_core::synth::{NoiseProfile, WorldSpec};
use way_core::train::TrainConfig;
use way_core::way::{Preset, WayConfig};

/// Bad command-line input or configuration; exits with the usage code.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("synth.ports", "20"),
    ("synth.partners", "4"),
    ("synth.vessels", "50"),
    ("synth.voyages", "500"),
    ("synth.mean_interval_minutes", "20"),
    ("synth.max_interval_days", "2"),
    ("synth.speed_min_knots", "8"),
    ("synth.speed_max_knots", "20"),
    ("synth.locode_rate", "0.1"),
    ("synth.noise.typo", "0.3"),
    ("synth.noise.sentinel", "0.05"),
    ("synth.noise.teleport", "0.02"),
    ("ports.boundary_alpha", "1.8"),
    ("annotate.match_threshold", "0.75"),
    ("annotate.max_ngram", "3"),
    ("annotate.max_gap_days", "3"),
    ("annotate.moving_sog_knots", "1"),
    ("refine.eps", "0.15"),
    ("refine.min_pts", "4"),
    ("refine.max_passes", "5"),
    ("refine.sog_average", "pair"),
    ("refine.max_gap_days", "3"),
    ("represent.grid_cell", "1"),
    ("represent.sample_mean", "5"),
    ("model.preset", "base"),
    ("model.ports", "auto"),
    ("model.ship_types", "100"),
    ("model.dropout", "0.3"),
    ("train.batch_size", "32"),
    ("train.epochs", "30"),
    ("train.lr", "0.0001"),
    ("train.gradient_dropout", "true"),
    ("infer.top_k", "5"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: DEFAULTS.iter().map(|&(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl RunConfig {
    /// Defaults, then the optional file, then overrides in order.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> anyhow::Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            for (i, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| usage(format!("{}:{}: expected key = value", path.display(), i + 1)))?;
                cfg.set(k.trim(), v.trim())
                    .map_err(|e| usage(format!("{}:{}: {e}", path.display(), i + 1)))?;
            }
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| usage(format!("override '{o}' must be key=value")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> anyhow::Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(usage(format!("unknown config key '{key}'"))),
        }
    }

    /// The keys under the given prefixes, for stage manifests.
    pub fn section(&self, prefixes: &[&str]) -> BTreeMap<String, String> {
        self.values
            .iter()
            .filter(|(k, _)| k.as_str() == "seed" || prefixes.iter().any(|p| k.starts_with(p)))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn get<T: FromStr>(&self, key: &str) -> anyhow::Result<T>
    where
        T::Err: fmt::Display,
    {
        let raw = &self.values[key];
        raw.parse()
            .map_err(|e| usage(format!("config key '{key}': cannot parse '{raw}': {e}")))
    }

    pub fn seed(&self) -> anyhow::Result<u64> {
        self.get("seed")
    }

    pub fn world_spec(&self) -> anyhow::Result<WorldSpec> {
        let spec = WorldSpec {
            seed: self.seed()?,
            ports: self.get("synth.ports")?,
            partners: self.get("synth.partners")?,
            vessels: self.get("synth.vessels")?,
            voyages: self.get("synth.voyages")?,
            mean_interval_minutes: self.get("synth.mean_interval_minutes")?,
            max_interval_days: self.get("synth.max_interval_days")?,
            speed_knots: (self.get("synth.speed_min_knots")?, self.get("synth.speed_max_knots")?),
            locode_rate: self.get("synth.locode_rate")?,
            noise: NoiseProfile {
                typo_rate: self.get("synth.noise.typo")?,
                sentinel_rate: self.get("synth.noise.sentinel")?,
                teleport_rate: self.get("synth.noise.teleport")?,
            },
            ..WorldSpec::default()
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn boundary_alpha(&self) -> anyhow::Result<f64> {
        let alpha: f64 = self.get("ports.boundary_alpha")?;
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(usage(format!("ports.boundary_alpha must be positive, got {alpha}")));
        }
        Ok(alpha)
    }

    pub fn annotate(&self) -> anyhow::Result<AnnotateConfig> {
        Ok(AnnotateConfig {
            match_threshold: self.get("annotate.match_threshold")?,
            max_ngram: self.get("annotate.max_ngram")?,
            max_gap_days: self.get("annotate.max_gap_days")?,
            moving_sog_knots: self.get("annotate.moving_sog_knots")?,
        })
    }

    pub fn refine(&self) -> anyhow::Result<RefineConfig> {
        let sog_average = match self.values["refine.sog_average"].as_str() {
            "pair" => SogAverage::Pair,
            "segment" => SogAverage::Segment,
            other => return Err(usage(format!("refine.sog_average must be pair or segment, got '{other}'"))),
        };
        Ok(RefineConfig {
            eps: self.get("refine.eps")?,
            min_pts: self.get("refine.min_pts")?,
            max_passes: self.get("refine.max_passes")?,
            sog_average,
            max_gap_days: self.get("refine.max_gap_days")?,
        })
    }

    pub fn represent(&self) -> anyhow::Result<RepresentConfig> {
        let config = RepresentConfig {
            grid: GridSpec::new(self.get("represent.grid_cell")?)?,
            sample_mean: self.get("represent.sample_mean")?,
            seed: self.seed()?,
        };
        config.validate()?;
        Ok(config)
    }

    /// Model shape; `auto` port vocabulary takes the supplied data bound.
    pub fn model(&self, data_ports: usize) -> anyhow::Result<WayConfig> {
        let preset: Preset = self.get("model.preset")?;
        let ports = match self.values["model.ports"].as_str() {
            "auto" => data_ports,
            _ => self.get("model.ports")?,
        };
        let config = WayConfig {
            dropout: self.get("model.dropout")?,
            ..WayConfig::preset(preset, ports, self.get("model.ship_types")?)
        };
        config.validate()?;
        Ok(config)
    }

    pub fn train(&self) -> anyhow::Result<TrainConfig> {
        Ok(TrainConfig {
            batch_size: self.get("train.batch_size")?,
            epochs: self.get("train.epochs")?,
            lr: self.get("train.lr")?,
            gd_enabled: self.get("train.gradient_dropout")?,
            seed: self.seed()?,
        })
    }
}
