use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::config::{kv_pairs, parse_bool, parse_list, parse_num, KEYS};
use crate::model::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    SgdMomentum,
    AdamLike,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::SgdMomentum => "sgd_momentum",
            OptimizerKind::AdamLike => "adam_like",
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd_momentum" => Ok(OptimizerKind::SgdMomentum),
            "adam_like" => Ok(OptimizerKind::AdamLike),
            _ => Err(Error::Config(format!("unknown optimizer `{}`", s))),
        }
    }
}

/// Scalar type for a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(Error::Config(format!("precision must be f32 or f64, got `{}`", s))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub total_iters: u64,
    pub warmup_iters: u64,
    pub base_lr: f64,
    pub decay_points: Vec<u64>,
    pub decay_factor: f64,
    pub batch_size: usize,
    /// LR patch side in pixels.
    pub patch: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// 0 disables periodic checkpoints (a final one is always written).
    pub checkpoint_every: u64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
    /// Random dihedral augmentation of each patch.
    pub augment: bool,
}

pub const TRAIN_KEYS: [&str; 12] = [
    "total_iters",
    "warmup_iters",
    "base_lr",
    "decay_points",
    "decay_factor",
    "batch_size",
    "patch",
    "seed",
    "optimizer",
    "checkpoint_every",
    "clip_norm",
    "augment",
];

impl Default for TrainConfig {
    /// The published schedule: 250k iterations, 10k warm-up, 5e-4 halved at
    /// 150k/200k/225k/240k, batch 16 of 64×64 patches.
    fn default() -> Self {
        TrainConfig {
            total_iters: 250_000,
            warmup_iters: 10_000,
            base_lr: 5e-4,
            decay_points: vec![150_000, 200_000, 225_000, 240_000],
            decay_factor: 0.5,
            batch_size: 16,
            patch: 64,
            seed: 0,
            optimizer: OptimizerKind::AdamLike,
            checkpoint_every: 5000,
            clip_norm: 1.0,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.total_iters == 0 {
            return err("total_iters must be positive".into());
        }
        if self.warmup_iters >= self.total_iters {
            return err(format!("warmup_iters {} must be below total_iters {}", self.warmup_iters, self.total_iters));
        }
        if self.decay_points.windows(2).any(|p| p[1] <= p[0]) {
            return err(format!("decay_points must be strictly ascending, got {:?}", self.decay_points));
        }
        if self.decay_points.iter().any(|&p| p >= self.total_iters) {
            return err(format!("decay_points must lie below total_iters {}", self.total_iters));
        }
        if self.batch_size == 0 || self.patch == 0 {
            return err("batch_size and patch must be positive".into());
        }
        if !(self.base_lr >= 0.0) || !(self.decay_factor > 0.0) || !(self.clip_norm >= 0.0) {
            return err("base_lr and clip_norm must be >= 0 and decay_factor > 0".into());
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "total_iters" => self.total_iters = parse_num(key, value)?,
            "warmup_iters" => self.warmup_iters = parse_num(key, value)?,
            "base_lr" => self.base_lr = parse_num(key, value)?,
            "decay_points" => self.decay_points = parse_list(key, value)?,
            "decay_factor" => self.decay_factor = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "patch" => self.patch = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, value)?,
            "clip_norm" => self.clip_norm = parse_num(key, value)?,
            "augment" => self.augment = parse_bool(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{}`", key))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let points: Vec<String> = self.decay_points.iter().map(u64::to_string).collect();
        let mut s = String::new();
        let _ = writeln!(s, "total_iters = {}", self.total_iters);
        let _ = writeln!(s, "warmup_iters = {}", self.warmup_iters);
        let _ = writeln!(s, "base_lr = {}", self.base_lr);
        let _ = writeln!(s, "decay_points = {}", points.join(", "));
        let _ = writeln!(s, "decay_factor = {}", self.decay_factor);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "patch = {}", self.patch);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "optimizer = {}", self.optimizer.as_str());
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        let _ = writeln!(s, "clip_norm = {}", self.clip_norm);
        let _ = writeln!(s, "augment = {}", self.augment);
        s
    }
}

/// Linear warm-up from 0, then `base_lr · factor^(#decay points ≤ t)`.
pub fn lr_at(cfg: &TrainConfig, t: u64) -> f64 {
    if t < cfg.warmup_iters {
        return cfg.base_lr * t as f64 / cfg.warmup_iters as f64;
    }
    let passed = cfg.decay_points.iter().filter(|&&p| p <= t).count();
    cfg.base_lr * cfg.decay_factor.powi(passed as i32)
}

/// Everything one config file holds: architecture, schedule and precision.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub precision: Precision,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { model: ModelConfig::paper(), train: TrainConfig::default(), precision: Precision::F32 }
    }
}

impl RunConfig {
    /// Parses a `key = value` file. Model keys, training keys and
    /// `precision` may appear in any order; anything else is rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut run = RunConfig::default();
        for (key, value) in kv_pairs(text)? {
            if KEYS.contains(&key.as_str()) {
                run.model.set(&key, &value)?;
            } else if TRAIN_KEYS.contains(&key.as_str()) {
                run.train.set(&key, &value)?;
            } else if key == "precision" {
                run.precision = value.parse()?;
            } else {
                return Err(Error::Config(format!("unknown key `{}`", key)));
            }
        }
        run.model.validate()?;
        run.train.validate()?;
        Ok(run)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {}", path.display(), m)),
            other => other,
        })
    }

    pub fn to_text(&self) -> String {
        let p = match self.precision {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        };
        format!("{}{}precision = {}\n", self.model.to_text(), self.train.to_text(), p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_schedule_points() {
        let c = TrainConfig::default();
        assert_eq!(lr_at(&c, 0), 0.0);
        assert_eq!(lr_at(&c, 10_000), 5e-4);
        assert!((lr_at(&c, 200_000) - 1.25e-4).abs() < 1e-18);
        assert!((lr_at(&c, 5_000) - 2.5e-4).abs() < 1e-18);
        assert_eq!(lr_at(&c, 149_999), 5e-4);
        assert_eq!(lr_at(&c, 250_000), 5e-4 / 16.0);
    }

    #[test]
    fn run_config_round_trip() {
        let mut r = RunConfig::default();
        r.model = ModelConfig::tiny();
        r.train.total_iters = 100;
        r.train.warmup_iters = 5;
        r.train.decay_points = vec![50, 80];
        r.precision = Precision::F64;
        assert_eq!(RunConfig::parse(&r.to_text()).unwrap(), r);
    }

    #[test]
    fn rejects_unknown_and_inconsistent() {
        assert!(RunConfig::parse("bogus = 1").unwrap_err().to_string().contains("bogus"));
        assert!(RunConfig::parse("total_iters = 10\nwarmup_iters = 10").is_err());
        assert!(RunConfig::parse("total_iters = 10\nwarmup_iters = 1\ndecay_points = 5, 3").is_err());
        assert!(RunConfig::parse("precision = f16").is_err());
    }
}
