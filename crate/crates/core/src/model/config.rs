use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How each expert picks its tokens inside a window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SelectionStrategy {
    /// Top-k of the router scores.
    ContentAware,
    /// k distinct indices from a seeded generator.
    Random,
    /// The first k tokens in row-major order.
    Sequential,
}

impl SelectionStrategy {
    pub const ALL: [SelectionStrategy; 3] =
        [SelectionStrategy::ContentAware, SelectionStrategy::Random, SelectionStrategy::Sequential];

    pub fn as_str(self) -> &'static str {
        match self {
            SelectionStrategy::ContentAware => "content_aware",
            SelectionStrategy::Random => "random",
            SelectionStrategy::Sequential => "sequential",
        }
    }
}

impl FromStr for SelectionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "content_aware" => Ok(SelectionStrategy::ContentAware),
            "random" => Ok(SelectionStrategy::Random),
            "sequential" => Ok(SelectionStrategy::Sequential),
            _ => Err(Error::Config(format!("unknown selection_strategy `{}`", s))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub n_blocks: usize,
    pub n_layers: usize,
    pub channels: usize,
    pub base_window: usize,
    pub ratios: Vec<f64>,
    pub sparsity: Vec<usize>,
    pub n_experts: usize,
    pub expert_dim: usize,
    pub scale: usize,
    pub use_norm: bool,
    pub use_gate: bool,
    pub glu_expand: f64,
    pub cab_reduction: usize,
    pub cab_compress: usize,
    pub selection_strategy: SelectionStrategy,
}

pub const KEYS: [&str; 15] = [
    "n_blocks",
    "n_layers",
    "channels",
    "base_window",
    "ratios",
    "sparsity",
    "n_experts",
    "expert_dim",
    "scale",
    "use_norm",
    "use_gate",
    "glu_expand",
    "cab_reduction",
    "cab_compress",
    "selection_strategy",
];

impl Default for ModelConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl ModelConfig {
    /// Four blocks of six layers, 60 channels, 8 experts, ×4.
    pub fn paper() -> Self {
        ModelConfig {
            n_blocks: 4,
            n_layers: 6,
            channels: 60,
            base_window: 8,
            ratios: vec![0.5, 1.0, 2.0, 4.0, 6.0, 8.0],
            sparsity: vec![1, 1, 2, 4, 8, 12],
            n_experts: 8,
            expert_dim: 60,
            scale: 4,
            use_norm: true,
            use_gate: true,
            glu_expand: 2.0,
            cab_reduction: 4,
            cab_compress: 3,
            selection_strategy: SelectionStrategy::ContentAware,
        }
    }

    /// The light variant: four experts.
    pub fn light() -> Self {
        ModelConfig { n_experts: 4, ..Self::paper() }
    }

    /// One block of three layers at width 16; small enough to train in minutes.
    pub fn tiny() -> Self {
        ModelConfig {
            n_blocks: 1,
            n_layers: 3,
            channels: 16,
            base_window: 4,
            ratios: vec![1.0, 2.0, 4.0],
            sparsity: vec![1, 2, 4],
            n_experts: 2,
            expert_dim: 16,
            scale: 2,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.n_blocks == 0 || self.n_layers == 0 {
            return err("n_blocks and n_layers must be positive".into());
        }
        if self.channels == 0 || self.n_experts == 0 || self.expert_dim == 0 || self.base_window == 0 {
            return err("channels, n_experts, expert_dim and base_window must be positive".into());
        }
        if self.ratios.len() != self.n_layers || self.sparsity.len() != self.n_layers {
            return err(format!(
                "ratios ({}) and sparsity ({}) must both have n_layers = {} entries",
                self.ratios.len(),
                self.sparsity.len(),
                self.n_layers
            ));
        }
        for i in 0..self.n_layers {
            self.window_size(i)?;
        }
        if self.sparsity.iter().any(|&s| s == 0) {
            return err("sparsity entries must be >= 1".into());
        }
        if self.sparsity.windows(2).any(|p| p[1] < p[0]) {
            return err(format!("sparsity must be non-decreasing, got {:?}", self.sparsity));
        }
        if !matches!(self.scale, 2 | 4) {
            return err(format!("scale must be 2 or 4, got {}", self.scale));
        }
        if !(self.glu_expand > 0.0) || self.glu_hidden() == 0 {
            return err(format!("glu_expand {} gives no hidden channels", self.glu_expand));
        }
        if self.cab_reduction == 0 || self.channels % self.cab_reduction != 0 {
            return err(format!(
                "channels {} not divisible by cab_reduction {}",
                self.channels, self.cab_reduction
            ));
        }
        if self.cab_compress == 0 {
            return err("cab_compress must be positive".into());
        }
        Ok(())
    }

    /// `ratio_i · base_window`, which must be a positive integer.
    pub fn window_size(&self, layer: usize) -> Result<usize> {
        let ratio = *self
            .ratios
            .get(layer)
            .ok_or_else(|| Error::Config(format!("layer {} out of range", layer)))?;
        let ws = ratio * self.base_window as f64;
        let rounded = ws.round();
        if !(ws > 0.0) || (ws - rounded).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "ratio {} × base_window {} = {} is not a positive integer",
                ratio, self.base_window, ws
            )));
        }
        Ok(rounded as usize)
    }

    pub fn window_sizes(&self) -> Result<Vec<usize>> {
        (0..self.n_layers).map(|i| self.window_size(i)).collect()
    }

    /// Selected tokens per expert: `floor(n / ρ_i)`, at least 1.
    pub fn tokens_selected(&self, layer: usize, n: usize) -> usize {
        (n / self.sparsity[layer]).max(1)
    }

    /// Feature maps are padded once to a multiple of this.
    pub fn pad_unit(&self) -> Result<usize> {
        Ok(self.window_sizes()?.into_iter().max().unwrap_or(1))
    }

    pub fn glu_hidden(&self) -> usize {
        (self.glu_expand * self.channels as f64).round() as usize
    }

    pub fn cab_hidden(&self) -> usize {
        (self.channels / self.cab_compress).max(1)
    }

    pub fn se_hidden(&self) -> usize {
        self.channels / self.cab_reduction
    }

    /// Parses `key = value` lines; `#` starts a comment. Missing keys keep
    /// their [`ModelConfig::paper`] value.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::paper();
        for (key, value) in kv_pairs(text)? {
            cfg.set(&key, &value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub(crate) fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "n_blocks" => self.n_blocks = parse_num(key, value)?,
            "n_layers" => self.n_layers = parse_num(key, value)?,
            "channels" => self.channels = parse_num(key, value)?,
            "base_window" => self.base_window = parse_num(key, value)?,
            "ratios" => self.ratios = parse_list(key, value)?,
            "sparsity" => self.sparsity = parse_list(key, value)?,
            "n_experts" => self.n_experts = parse_num(key, value)?,
            "expert_dim" => self.expert_dim = parse_num(key, value)?,
            "scale" => self.scale = parse_num(key, value)?,
            "use_norm" => self.use_norm = parse_bool(key, value)?,
            "use_gate" => self.use_gate = parse_bool(key, value)?,
            "glu_expand" => self.glu_expand = parse_num(key, value)?,
            "cab_reduction" => self.cab_reduction = parse_num(key, value)?,
            "cab_compress" => self.cab_compress = parse_num(key, value)?,
            "selection_strategy" => self.selection_strategy = value.parse()?,
            _ => return Err(Error::Config(format!("unknown key `{}`", key))),
        }
        Ok(())
    }

    /// Canonical text form; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let join = |v: Vec<String>| v.join(", ");
        let mut s = String::new();
        let _ = writeln!(s, "n_blocks = {}", self.n_blocks);
        let _ = writeln!(s, "n_layers = {}", self.n_layers);
        let _ = writeln!(s, "channels = {}", self.channels);
        let _ = writeln!(s, "base_window = {}", self.base_window);
        let _ = writeln!(s, "ratios = {}", join(self.ratios.iter().map(|r| r.to_string()).collect()));
        let _ = writeln!(s, "sparsity = {}", join(self.sparsity.iter().map(|r| r.to_string()).collect()));
        let _ = writeln!(s, "n_experts = {}", self.n_experts);
        let _ = writeln!(s, "expert_dim = {}", self.expert_dim);
        let _ = writeln!(s, "scale = {}", self.scale);
        let _ = writeln!(s, "use_norm = {}", self.use_norm);
        let _ = writeln!(s, "use_gate = {}", self.use_gate);
        let _ = writeln!(s, "glu_expand = {}", self.glu_expand);
        let _ = writeln!(s, "cab_reduction = {}", self.cab_reduction);
        let _ = writeln!(s, "cab_compress = {}", self.cab_compress);
        let _ = writeln!(s, "selection_strategy = {}", self.selection_strategy.as_str());
        s
    }
}

/// Splits config text into trimmed `(key, value)` pairs.
pub(crate) fn kv_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
        let key = k.trim().to_string();
        if out.iter().any(|(existing, _): &(String, String)| *existing == key) {
            return Err(Error::Config(format!("line {}: duplicate key `{}`", lineno + 1, key)));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

pub(crate) fn parse_num<N: FromStr>(key: &str, value: &str) -> Result<N> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{}`: cannot parse `{}`", key, value)))
}

pub(crate) fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "on" => Ok(true),
        "false" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("`{}`: expected a boolean, got `{}`", key, value))),
    }
}

pub(crate) fn parse_list<N: FromStr>(key: &str, value: &str) -> Result<Vec<N>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}
