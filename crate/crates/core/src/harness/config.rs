//! Flat `key = value` configuration with `#` comments and dotted keys.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grouping::PartitionMethod;
use crate::reconcile::{Operator, ReconcileConfig};
use crate::render::LossConfig;
use crate::sampler::{SamplerConfig, SamplerKind};
use crate::scene::BlockKind;
use crate::train::{AdamConfig, TrainConfig};

/// Every key the harness understands. `<block>` stands for a block name.
pub const KNOWN_KEYS: &[&str] = &[
    "scene.seed",
    "scene.n",
    "scene.extent",
    "scene.perturb",
    "cams.seed",
    "cams.n_near",
    "cams.n_far",
    "cams.test_near",
    "cams.test_far",
    "cams.r_near_min",
    "cams.r_near_max",
    "cams.r_far_min",
    "cams.r_far_max",
    "cams.lateral",
    "cams.f",
    "cams.width",
    "cams.height",
    "iterations",
    "eval_every",
    "seed",
    "lr.<block>",
    "adam.beta1",
    "adam.beta2",
    "adam.eps",
    "sampler",
    "ema_beta",
    "topk",
    "temperature",
    "partition",
    "partition.p",
    "reconciler",
    "cagrad_c",
    "epsilon",
    "tau",
    "conf_beta",
    "r_ref",
    "d.<block>",
    "dispatch.<block>",
    "loss.lambda",
    "loss.window",
    "loss.sigma",
    "target_noise",
    "arms",
    "seeds",
    "diagnose.sweep",
    "diagnose.sweep_views",
    "diagnose.mid_iter",
];

fn is_known(key: &str) -> bool {
    KNOWN_KEYS.iter().any(|k| match k.strip_suffix("<block>") {
        Some(prefix) => key
            .strip_prefix(prefix)
            .is_some_and(|b| BlockKind::from_name(b).is_some()),
        None => *k == key,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected 'key = value', got '{line}'"),
            })?;
            cfg.set(k.trim(), v.trim()).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        Config::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !is_known(key) {
            return Err(Error::config(format!("unknown key '{key}'")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override '{kv}' is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| Error::config(format!("bad value '{v}' for '{key}': {e}"))),
        }
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str, default: &[T]) -> Result<Vec<T>>
    where
        T::Err: Display,
        T: Clone,
    {
        match self.values.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse()
                        .map_err(|e| Error::config(format!("bad list item '{s}' for '{key}': {e}")))
                })
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    fn block_map(&self, prefix: &str, default: [f64; 5]) -> Result<[f64; 5]> {
        let mut out = default;
        for kind in BlockKind::ALL {
            out[kind.index()] = self.get(&format!("{prefix}.{}", kind.name()), default[kind.index()])?;
        }
        Ok(out)
    }

    pub fn sampler_config(&self) -> Result<SamplerConfig> {
        let d = SamplerConfig::default();
        let kind = match self.get_str("sampler") {
            None => d.kind,
            Some(s) => SamplerKind::from_name(s).ok_or_else(|| Error::config(format!("unknown sampler '{s}'")))?,
        };
        let cfg = SamplerConfig {
            kind,
            ema_beta: self.get("ema_beta", d.ema_beta)?,
            topk: self.get("topk", d.topk)?,
            temperature: self.get("temperature", d.temperature)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn operator(&self, name: &str) -> Result<Operator> {
        Operator::from_name(name, self.get("cagrad_c", 0.5)?, self.get("tau", -0.1)?)
            .ok_or_else(|| Error::config(format!("unknown reconciler '{name}'")))
    }

    pub fn reconcile_config(&self) -> Result<ReconcileConfig> {
        let d = ReconcileConfig::default();
        let operator = match self.get_str("reconciler") {
            None => d.operator,
            Some(s) => self.operator(s)?,
        };
        // Blocks without a `dispatch.<block>` key fall back to `reconciler`.
        let mut dispatch = BTreeMap::new();
        for kind in BlockKind::ALL {
            if let Some(name) = self.get_str(&format!("dispatch.{}", kind.name())) {
                dispatch.insert(kind, self.operator(name)?);
            }
        }
        if !dispatch.is_empty() {
            for kind in BlockKind::ALL {
                dispatch.entry(kind).or_insert(operator);
            }
        }
        let cfg = ReconcileConfig {
            operator,
            epsilon: self.get("epsilon", d.epsilon)?,
            d_map: self.block_map("d", d.d_map)?,
            r_ref: self.get("r_ref", d.r_ref)?,
            dispatch: (!dispatch.is_empty()).then_some(dispatch),
            conf_beta: self.get("conf_beta", d.conf_beta)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn partition_method(&self) -> Result<PartitionMethod> {
        match self.get_str("partition").unwrap_or("median") {
            "median" => Ok(PartitionMethod::MedianRadial),
            "percentile" => Ok(PartitionMethod::Percentile(self.get("partition.p", 50.0)?)),
            "kmeans" => Ok(PartitionMethod::KMeans2),
            other => Err(Error::config(format!("unknown partition method '{other}'"))),
        }
    }

    pub fn loss_config(&self) -> Result<LossConfig> {
        let d = LossConfig::default();
        let cfg = LossConfig {
            lambda_ssim: self.get("loss.lambda", d.lambda_ssim)?,
            ssim_window: self.get("loss.window", d.ssim_window)?,
            ssim_sigma: self.get("loss.sigma", d.ssim_sigma)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let ad = AdamConfig::default();
        let cfg = TrainConfig {
            iterations: self.get("iterations", d.iterations)?,
            lr: self.block_map("lr", d.lr)?,
            adam: AdamConfig {
                beta1: self.get("adam.beta1", ad.beta1)?,
                beta2: self.get("adam.beta2", ad.beta2)?,
                eps: self.get("adam.eps", ad.eps)?,
            },
            sampler: self.sampler_config()?,
            reconcile: self.reconcile_config()?,
            partition: self.partition_method()?,
            eval_every: self.get("eval_every", d.eval_every)?,
            seed: self.get("seed", d.seed)?,
            loss: self.loss_config()?,
            target_noise: self.get("target_noise", d.target_noise)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
