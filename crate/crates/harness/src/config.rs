use std::path::{Path, PathBuf};

use datagrad_core::hypergrad::{CgConfig, HessianSamples};
use datagrad_core::learner::{Activation, NewtonConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

/// Weights over the bins of one parameter. Bins are numbered from 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weights {
    Uniform,
    OneHot(usize),
    /// `bin` holds `mass`, the rest share `1 - mass` evenly.
    Dominant { bin: usize, mass: f64 },
    Explicit(Vec<f64>),
}

impl Weights {
    pub fn resolve(&self, k: usize) -> Result<Vec<f64>> {
        let w = match self {
            Weights::Uniform => vec![1.0 / k as f64; k],
            Weights::OneHot(b) => {
                check_bin(*b, k)?;
                (0..k).map(|i| if i == *b { 1.0 } else { 0.0 }).collect()
            }
            Weights::Dominant { bin, mass } => {
                check_bin(*bin, k)?;
                if !(*mass > 0.0 && *mass <= 1.0) || k < 2 {
                    return Err(HarnessError::Config(format!("dominant mass {mass} not in (0, 1]")));
                }
                let rest = (1.0 - mass) / (k - 1) as f64;
                (0..k).map(|i| if i == *bin { *mass } else { rest }).collect()
            }
            Weights::Explicit(w) => {
                if w.len() != k {
                    return Err(HarnessError::Config(format!("{} weights for {k} bins", w.len())));
                }
                w.clone()
            }
        };
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(HarnessError::Config("weights must be non-negative".into()));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(HarnessError::Config(format!("weights sum to {total}, not 1")));
        }
        Ok(w)
    }
}

fn check_bin(b: usize, k: usize) -> Result<()> {
    if b >= k {
        return Err(HarnessError::Config(format!("bin {b} out of range for k = {k}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RendererKind {
    Analytic,
    /// Random-feature field fitted to the analytic scene.
    Neural,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Image side in pixels.
    pub size: usize,
    /// Number of bar classes.
    pub classes: usize,
    pub renderer: RendererKind,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            size: 8,
            classes: 2,
            renderer: RendererKind::Analytic,
        }
    }
}

/// A binned rendering parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinnedParam {
    pub bins: usize,
    pub range: [f64; 2],
    /// Distribution of the test images.
    pub test: Weights,
    /// Starting training distribution.
    pub init: Weights,
    #[serde(default = "yes")]
    pub trainable: bool,
}

impl BinnedParam {
    fn validate(&self, what: &str) -> Result<()> {
        if self.bins < 2 {
            return Err(HarnessError::Config(format!("{what}: need at least 2 bins")));
        }
        if !(self.range[1] > self.range[0]) {
            return Err(HarnessError::Config(format!("{what}: empty range")));
        }
        self.test.resolve(self.bins)?;
        self.init.resolve(self.bins)?;
        Ok(())
    }
}

fn default_pose() -> BinnedParam {
    BinnedParam {
        bins: 4,
        range: [0.0, 360.0],
        test: Weights::OneHot(0),
        init: Weights::Uniform,
        trainable: true,
    }
}

/// Lighting as a mixture of known `(brightness, directional, radial)` embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightingConfig {
    pub embeddings: Vec<Vec<f64>>,
    /// Embedding the test images are rendered under.
    pub test: usize,
    pub init: Weights,
    #[serde(default = "yes")]
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default = "tanh")]
    pub activation: Activation,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    /// Seed of the initial weights, shared by every method.
    #[serde(default)]
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: Vec::new(),
            activation: Activation::Tanh,
            weight_decay: default_wd(),
            init_seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Sgd,
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InnerConfig {
    pub solver: SolverKind,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub newton: NewtonConfig,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            solver: SolverKind::Exact,
            epochs: 2,
            lr: 1e-2,
            batch_size: 10,
            newton: NewtonConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuterConfig {
    pub budget: usize,
    pub lr: f64,
    pub momentum: f64,
    pub tau: f64,
    /// Training images per class and iteration.
    pub per_class: usize,
    pub patches: usize,
    #[serde(default)]
    pub cg: CgConfig,
    pub hessian_samples: HessianSamples,
    pub warm_start_theta: bool,
    /// Measure iteration time. Off by default so logs stay byte-identical.
    pub record_wall_time: bool,
}

impl Default for OuterConfig {
    fn default() -> Self {
        Self {
            budget: 30,
            lr: 0.3,
            momentum: 0.5,
            tau: 0.1,
            per_class: 40,
            patches: 4,
            cg: CgConfig::default(),
            hessian_samples: HessianSamples::Same,
            warm_start_theta: true,
            record_wall_time: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Test images per class.
    pub test_per_class: usize,
    /// Training images per class for the final model of every method.
    pub train_per_class: usize,
    /// Seed of the test set, shared by every run.
    pub test_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            test_per_class: 100,
            train_per_class: 50,
            test_seed: 1_000_003,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default = "default_pose")]
    pub pose: BinnedParam,
    #[serde(default)]
    pub zoom: Option<BinnedParam>,
    #[serde(default)]
    pub lighting: Option<LightingConfig>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub inner: InnerConfig,
    #[serde(default)]
    pub outer: OuterConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: default_seeds(),
            out: default_out(),
            scene: SceneConfig::default(),
            pose: default_pose(),
            zoom: None,
            lighting: None,
            model: ModelConfig::default(),
            inner: InnerConfig::default(),
            outer: OuterConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn yes() -> bool {
    true
}

fn tanh() -> Activation {
    Activation::Tanh
}

fn default_wd() -> f64 {
    1e-3
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` and applies `key=value` overrides (dotted keys, TOML values)
    /// before deserializing.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut table: toml::Table = toml::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let defaults = toml::Table::try_from(Self::default()).expect("default config serializes");
        for o in overrides {
            apply_override(&mut table, &defaults, o)?;
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Config(m.into()));
        if self.seeds.is_empty() {
            return bad("seeds must list at least one seed");
        }
        if self.scene.size < 2 || self.scene.classes < 2 {
            return bad("scene needs size >= 2 and classes >= 2");
        }
        self.pose.validate("pose")?;
        if let Some(z) = &self.zoom {
            z.validate("zoom")?;
            if !(z.range[0] > 0.0) {
                return bad("zoom range must be positive");
            }
        }
        if let Some(l) = &self.lighting {
            if l.embeddings.is_empty() || l.embeddings.iter().any(|e| e.len() != 3) {
                return bad("lighting embeddings must be 3-vectors");
            }
            if l.test >= l.embeddings.len() {
                return bad("lighting test embedding out of range");
            }
            l.init.resolve(l.embeddings.len())?;
        }
        if !(self.outer.tau > 0.0) {
            return bad("outer.tau must be positive");
        }
        if self.outer.budget == 0 || self.outer.per_class == 0 || self.outer.patches == 0 {
            return bad("outer budget, per_class and patches must be positive");
        }
        if self.eval.test_per_class == 0 || self.eval.train_per_class == 0 {
            return bad("eval sizes must be positive");
        }
        if self.inner.epochs == 0 || self.inner.batch_size == 0 || !(self.inner.lr > 0.0) {
            return bad("inner epochs, batch_size and lr must be positive");
        }
        self.outer.cg.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    /// SHA-256 of everything that defines the experiment; seeds and the
    /// output directory are left out so runs over different seeds aggregate.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.seeds.clear();
        c.out = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Sets one dotted key. Tables missing on the way are copied from `defaults`,
/// so `pose.bins=4` keeps the other default `pose` fields.
fn apply_override(table: &mut toml::Table, defaults: &toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| HarnessError::Config(format!("override `{spec}` is not key=value")))?;
    let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    let mut def = Some(defaults);
    for p in path {
        let seed = def.and_then(|d| d.get(*p)).cloned();
        def = def.and_then(|d| d.get(*p)).and_then(|v| v.as_table());
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| seed.unwrap_or_else(|| toml::Value::Table(toml::Table::new())))
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("sedes = [1]").is_err());
        assert!(ExperimentConfig::from_toml("[outer]\nbudget = 3\nlearning_rate = 1.0").is_err());
    }

    #[test]
    fn weights_must_be_valid() {
        assert!(ExperimentConfig::from_toml("[pose]\nbins = 4\nrange = [0.0, 360.0]\ntest = { one_hot = 4 }\ninit = \"uniform\"").is_err());
        assert!(Weights::Explicit(vec![0.5, 0.6]).resolve(2).is_err());
        let w = Weights::Dominant { bin: 1, mass: 0.7 }.resolve(4).unwrap();
        for (a, b) in w.iter().zip([0.1, 0.7, 0.1, 0.1]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn overrides_and_hash() {
        let a = ExperimentConfig::load(None, &["outer.budget=3".into(), "seeds=[7]".into()]).unwrap();
        assert_eq!(a.outer.budget, 3);
        assert_eq!(a.seeds, vec![7]);
        let b = ExperimentConfig::load(None, &["outer.budget=3".into(), "out=\"elsewhere\"".into()]).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig::load(None, &["outer.budget=4".into()]).unwrap();
        assert_ne!(a.hash(), c.hash());
        assert!(ExperimentConfig::load(None, &["outer.nope=1".into()]).is_err());
        assert!(ExperimentConfig::load(None, &["outer.budget".into()]).is_err());
    }

    #[test]
    fn partial_override_keeps_the_other_defaults() {
        let cfg = ExperimentConfig::load(None, &["pose.bins=6".into(), "outer.cg.damping=0.01".into()]).unwrap();
        let def = ExperimentConfig::default();
        assert_eq!(cfg.pose.bins, 6);
        assert_eq!(cfg.pose.range, def.pose.range);
        assert_eq!(cfg.pose.test, def.pose.test);
        assert_eq!(cfg.outer.cg.damping, 0.01);
        assert_eq!(cfg.outer.cg.residual_tol, def.outer.cg.residual_tol);
        assert!(ExperimentConfig::load(None, &["seeds.x=1".into()]).is_err());
    }
}
