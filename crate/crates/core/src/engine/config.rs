use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contrastive::{NegativeMethod, TripletConfig};
use crate::schedule::NoiseSchedule;
use crate::{Error, Result};

/// Training hyperparameters.
///
/// Text form is one `key = value` per line; `#` starts a comment. Recognised keys:
/// `lr`, `batch_size`, `epochs`, `hidden` (three comma-separated widths),
/// `emb_dim`, `lambda_c`, `lambda_d`, `margin`, `negative_method`, `seed`,
/// `timesteps`, `beta_start`, `beta_end`, `per_row_t`, `log_every`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub hidden: [usize; 3],
    pub emb_dim: usize,
    pub lambda_c: f64,
    pub lambda_d: f64,
    pub margin: f64,
    pub negative_method: NegativeMethod,
    pub seed: u64,
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub per_row_t: bool,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-3,
            batch_size: 500,
            epochs: 2000,
            hidden: [64, 128, 256],
            emb_dim: 16,
            lambda_c: 0.2,
            lambda_d: 0.2,
            margin: 1.0,
            negative_method: NegativeMethod::Method3,
            seed: 0,
            timesteps: 50,
            beta_start: 1e-5,
            beta_end: 2e-2,
            per_row_t: false,
            log_every: 100,
        }
    }
}

pub const CONFIG_KEYS: [&str; 15] = [
    "lr",
    "batch_size",
    "epochs",
    "hidden",
    "emb_dim",
    "lambda_c",
    "lambda_d",
    "margin",
    "negative_method",
    "seed",
    "timesteps",
    "beta_start",
    "beta_end",
    "per_row_t",
    "log_every",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size < 2 {
            return bad(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            ));
        }
        if self.hidden.contains(&0) || self.emb_dim == 0 || !self.emb_dim.is_multiple_of(2) {
            return bad("hidden widths must be positive and emb_dim a positive even number".into());
        }
        for (k, v) in [("lambda_c", self.lambda_c), ("lambda_d", self.lambda_d)] {
            if !(v.is_finite() && (0.0..1.0).contains(&v)) {
                return bad(format!("{k} must lie in [0, 1), got {v}"));
            }
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return bad(format!("margin must be non-negative, got {}", self.margin));
        }
        if self.log_every == 0 {
            return bad("log_every must be positive".into());
        }
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.timesteps, self.beta_start, self.beta_end)
    }

    pub fn triplet(&self) -> TripletConfig {
        TripletConfig {
            margin: self.margin,
            lambda_c: self.lambda_c,
            lambda_d: self.lambda_d,
            method: self.negative_method,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim() {
            "lr" => self.lr = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "hidden" => {
                let parts: Vec<usize> = value
                    .split(',')
                    .map(|p| parse(key, p))
                    .collect::<Result<_>>()?;
                self.hidden = parts.try_into().map_err(|_| {
                    Error::Config(format!("hidden needs three widths, got {value:?}"))
                })?;
            }
            "emb_dim" => self.emb_dim = parse(key, value)?,
            "lambda_c" => self.lambda_c = parse(key, value)?,
            "lambda_d" => self.lambda_d = parse(key, value)?,
            "margin" => self.margin = parse(key, value)?,
            "negative_method" => self.negative_method = value.parse()?,
            "seed" => self.seed = parse(key, value)?,
            "timesteps" => self.timesteps = parse(key, value)?,
            "beta_start" => self.beta_start = parse(key, value)?,
            "beta_end" => self.beta_end = parse(key, value)?,
            "per_row_t" => self.per_row_t = parse(key, value)?,
            "log_every" => self.log_every = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults.
    pub fn parse_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_kv(&text)
    }

    /// Applies `CODI_<KEY>` overrides from `env` (e.g. `CODI_LR=2e-5`).
    pub fn apply_env<I, K, V>(&mut self, env: I) -> Result<()>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let vars: BTreeMap<String, String> = env
            .into_iter()
            .map(|(k, v)| (k.as_ref().to_string(), v.as_ref().to_string()))
            .collect();
        for key in CONFIG_KEYS {
            if let Some(v) = vars.get(&format!("CODI_{}", key.to_ascii_uppercase())) {
                self.set(key, v)?;
            }
        }
        self.validate()
    }

    pub fn to_kv(&self) -> String {
        let h = self.hidden;
        format!(
            "lr = {}\nbatch_size = {}\nepochs = {}\nhidden = {},{},{}\nemb_dim = {}\nlambda_c = {}\nlambda_d = {}\n\
             margin = {}\nnegative_method = {}\nseed = {}\ntimesteps = {}\nbeta_start = {}\nbeta_end = {}\n\
             per_row_t = {}\nlog_every = {}\n",
            self.lr,
            self.batch_size,
            self.epochs,
            h[0],
            h[1],
            h[2],
            self.emb_dim,
            self.lambda_c,
            self.lambda_d,
            self.margin,
            self.negative_method,
            self.seed,
            self.timesteps,
            self.beta_start,
            self.beta_end,
            self.per_row_t,
            self.log_every
        )
    }
}
