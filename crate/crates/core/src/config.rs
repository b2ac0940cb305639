//! Training configuration: one flat `key = value` file fully determines a
//! run. CLI `--set` pairs and `BASKETREC_*` environment variables override
//! file values key by key.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const ENV_PREFIX: &str = "BASKETREC_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Optimizer::Sgd => write!(f, "sgd"),
            Optimizer::Adam => write!(f, "adam"),
        }
    }
}

impl FromStr for Optimizer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(Error::Config(format!("unknown optimizer {other:?} (expected sgd or adam)"))),
        }
    }
}

/// Every scalar hyperparameter and ablation flag of a training run.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TrainConfig {
    /// Embedding width d.
    pub embedding_dim: usize,
    /// Propagation depth K (both views).
    pub num_layers: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Overall edge drop rate p for augmentation.
    pub drop_rate: f64,
    /// Score balance r between the user and the basket term.
    pub score_balance: f64,
    /// InfoNCE temperature tau.
    pub temperature: f64,
    /// Weight of the cross-behavior contrastive term.
    pub alpha_cross: f64,
    /// Weight of the within-behavior contrastive term.
    pub alpha_within: f64,
    /// L2 weight lambda on batch-touched base rows.
    pub l2_weight: f64,
    pub seed: u64,
    /// Evaluate on the held-out split every this many epochs (0 = never);
    /// when active, the checkpoint keeps the best-scoring tables.
    pub eval_every: usize,
    /// K used for the in-training evaluation above.
    pub eval_k: usize,
    pub optimizer: Optimizer,
    /// Basket-hypergraph view on/off.
    pub use_hypergraph: bool,
    /// Consistency-aware augmentation vs uniform random edge dropping.
    pub use_ca_augmentation: bool,
    /// Cross-behavior contrastive fusion on/off.
    pub use_cl_fusion: bool,
    /// Score items by the unweighted sum of both dot products.
    pub additive_score: bool,
    /// Drop the positive term from the InfoNCE denominator.
    pub exclude_positive_in_denominator: bool,
    /// Feed both views from one shared layer-0 item table.
    pub shared_item_base: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            embedding_dim: 64,
            num_layers: 2,
            learning_rate: 5e-4,
            batch_size: 1024,
            epochs: 100,
            drop_rate: 0.1,
            score_balance: 0.1,
            temperature: 0.2,
            alpha_cross: 0.1,
            alpha_within: 0.1,
            l2_weight: 1e-4,
            seed: 42,
            eval_every: 0,
            eval_k: 20,
            optimizer: Optimizer::Sgd,
            use_hypergraph: true,
            use_ca_augmentation: true,
            use_cl_fusion: true,
            additive_score: false,
            exclude_positive_in_denominator: false,
            shared_item_base: true,
        }
    }
}

macro_rules! config_fields {
    ($macro:ident) => {
        $macro!(
            (embedding_dim, usize),
            (num_layers, usize),
            (learning_rate, f64),
            (batch_size, usize),
            (epochs, usize),
            (drop_rate, f64),
            (score_balance, f64),
            (temperature, f64),
            (alpha_cross, f64),
            (alpha_within, f64),
            (l2_weight, f64),
            (seed, u64),
            (eval_every, usize),
            (eval_k, usize),
            (optimizer, Optimizer),
            (use_hypergraph, bool),
            (use_ca_augmentation, bool),
            (use_cl_fusion, bool),
            (additive_score, bool),
            (exclude_positive_in_denominator, bool),
            (shared_item_base, bool)
        );
    };
}

impl TrainConfig {
    /// Render as the flat `key = value` file format (stable key order, full
    /// float precision, so parse(render(c)) == c).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        macro_rules! emit {
            ($(($field:ident, $ty:ty)),*) => {
                $( out.push_str(&format!("{} = {}\n", stringify!($field), self.$field)); )*
            };
        }
        config_fields!(emit);
        out
    }

    /// Parse the flat format on top of the defaults. Lines are `key = value`;
    /// `#` starts a comment; blank lines are ignored.
    pub fn from_text(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Set one field by name from its string form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        macro_rules! apply {
            ($(($field:ident, $ty:ty)),*) => {
                match key {
                    $( stringify!($field) => {
                        self.$field = value.parse::<$ty>().map_err(|_| {
                            Error::Config(format!("cannot parse {value:?} for key {key}"))
                        })?;
                        return Ok(());
                    } )*
                    _ => {}
                }
            };
        }
        config_fields!(apply);
        Err(Error::Config(format!("unknown config key {key:?}")))
    }

    /// Apply `BASKETREC_<KEY>` overrides from an explicit variable iterator.
    pub fn apply_env_from<I>(&mut self, vars: I) -> Result<Vec<String>>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut applied = Vec::new();
        for (name, value) in vars {
            if let Some(key) = name.strip_prefix(ENV_PREFIX) {
                let key = key.to_ascii_lowercase();
                self.set(&key, &value)?;
                applied.push(key);
            }
        }
        applied.sort();
        Ok(applied)
    }

    /// Apply overrides from the process environment.
    pub fn apply_env(&mut self) -> Result<Vec<String>> {
        self.apply_env_from(std::env::vars())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.embedding_dim < 1 || self.num_layers < 1 || self.batch_size < 1 || self.epochs < 1 {
            return fail("embedding_dim, num_layers, batch_size and epochs must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return fail(format!("drop_rate must be in [0, 1), got {}", self.drop_rate));
        }
        if !(0.0..=1.0).contains(&self.score_balance) {
            return fail(format!("score_balance must be in [0, 1], got {}", self.score_balance));
        }
        if !(self.temperature > 0.0) {
            return fail(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.alpha_cross < 0.0 || self.alpha_within < 0.0 || self.l2_weight < 0.0 {
            return fail("alpha_cross, alpha_within and l2_weight must be >= 0".into());
        }
        if self.use_cl_fusion && !self.use_hypergraph {
            return fail("use_cl_fusion requires use_hypergraph".into());
        }
        if self.eval_k < 1 {
            return fail("eval_k must be >= 1".into());
        }
        Ok(())
    }

    /// Does any contrastive term contribute to the loss?
    pub fn cross_active(&self) -> bool {
        self.use_cl_fusion && self.alpha_cross > 0.0
    }

    pub fn within_active(&self) -> bool {
        self.alpha_within > 0.0
    }

    pub fn augmentation_active(&self) -> bool {
        self.cross_active() || self.within_active()
    }
}

/// The named ablation bundles exposed as `--preset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Full,
    LightgcnOnly,
    NoCa,
    NoFusion,
    RandomAug,
    Additive,
}

impl Preset {
    pub const ALL: [Preset; 6] =
        [Preset::Full, Preset::LightgcnOnly, Preset::NoCa, Preset::NoFusion, Preset::RandomAug, Preset::Additive];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Full => "full",
            Preset::LightgcnOnly => "lightgcn-only",
            Preset::NoCa => "no-ca",
            Preset::NoFusion => "no-fusion",
            Preset::RandomAug => "random-aug",
            Preset::Additive => "additive",
        }
    }

    pub fn apply(&self, cfg: &mut TrainConfig) {
        match self {
            Preset::Full => {}
            Preset::LightgcnOnly => {
                cfg.use_hypergraph = false;
                cfg.use_cl_fusion = false;
                cfg.alpha_cross = 0.0;
                cfg.alpha_within = 0.0;
                cfg.score_balance = 0.0;
            }
            Preset::NoCa => cfg.alpha_within = 0.0,
            Preset::NoFusion => {
                cfg.use_cl_fusion = false;
                cfg.alpha_cross = 0.0;
            }
            Preset::RandomAug => cfg.use_ca_augmentation = false,
            Preset::Additive => cfg.additive_score = true,
        }
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .iter()
            .find(|p| p.name() == s)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown preset {s:?}")))
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}
