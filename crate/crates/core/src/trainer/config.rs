use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataio::NormScope;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Environment variable that replaces the configured seed list, as a
/// comma-separated list of integers.
pub const SEED_ENV: &str = "CSTGNN_SEED";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Learned graph, both loss terms.
    #[default]
    Full,
    /// Learned graph, neural loss term only.
    CausalFree,
    /// Fixed neighbour graph; the graph-learning weights are never updated.
    StaticGraph,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::CausalFree, Variant::StaticGraph];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::CausalFree => "causal_free",
            Variant::StaticGraph => "static_graph",
        }
    }

    pub fn uses_causal_loss(self) -> bool {
        self != Variant::CausalFree
    }

    /// Parameters this variant never updates.
    pub fn is_frozen(self, param: &str) -> bool {
        self == Variant::StaticGraph && param.starts_with("mobility.")
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant {s:?}")))
    }
}

/// Where the loss compares forecasts with observations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpace {
    #[default]
    Normalized,
    /// Person counts.
    Raw,
}

/// Training hyperparameters plus layer sizes. Every field has a default, so
/// a config file only needs the keys it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub t_obs: usize,
    pub t_pre: usize,
    pub lr: f64,
    pub max_epochs_per_horizon: usize,
    pub patience: usize,
    /// Windows per update, reshuffled every epoch; `None` uses every
    /// training window in one update.
    pub batch_size: Option<usize>,
    pub seeds: Vec<u64>,
    pub variant: Variant,
    pub loss_space: LossSpace,
    pub norm_scope: NormScope,
    pub ratios: [f64; 3],
    pub embed_dim: usize,
    pub tcn_dim: usize,
    pub tcn_kernel: usize,
    pub tcn_dilation: usize,
    pub hidden: usize,
    pub gcn_layers: usize,
    pub window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::new(1, 7);
        Self {
            t_obs: 7,
            t_pre: 7,
            lr: 1e-4,
            max_epochs_per_horizon: 200,
            patience: 10,
            batch_size: Some(8),
            seeds: (0..5).collect(),
            variant: Variant::Full,
            loss_space: LossSpace::Normalized,
            norm_scope: NormScope::Global,
            ratios: [0.6, 0.2, 0.2],
            embed_dim: m.embed_dim,
            tcn_dim: m.tcn_dim,
            tcn_kernel: m.tcn_kernel,
            tcn_dilation: m.tcn_dilation,
            hidden: m.hidden,
            gcn_layers: m.gcn_layers,
            window: m.window,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.t_pre == 0 || self.t_obs == 0 {
            return bad(format!("t_obs and t_pre must be positive, got {} and {}", self.t_obs, self.t_pre));
        }
        if self.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        if self.patience == 0 || self.patience > self.max_epochs_per_horizon {
            return bad(format!(
                "patience {} must lie in 1..={}",
                self.patience, self.max_epochs_per_horizon
            ));
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        self.model(1).validate()
    }

    pub fn model(&self, regions: usize) -> ModelConfig {
        ModelConfig {
            regions,
            t_pre: self.t_pre,
            embed_dim: self.embed_dim,
            tcn_dim: self.tcn_dim,
            tcn_kernel: self.tcn_kernel,
            tcn_dilation: self.tcn_dilation,
            hidden: self.hidden,
            gcn_layers: self.gcn_layers,
            window: self.window,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::InvalidArgument(msg) => Error::InvalidArgument(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Replaces `seeds` when the seed variable is set.
    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<()> {
        let Some(value) = value else { return Ok(()) };
        let seeds = value
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::InvalidArgument(format!("{SEED_ENV}={value:?} is not a seed list")))
            })
            .collect::<Result<Vec<_>>>()?;
        if seeds.is_empty() {
            return Err(Error::InvalidArgument(format!("{SEED_ENV} is empty")));
        }
        self.seeds = seeds;
        Ok(())
    }

    pub fn apply_seed_env(&mut self) -> Result<()> {
        let value = std::env::var(SEED_ENV).ok();
        self.apply_seed_override(value.as_deref())
    }
}
