//! Run specification: a flat TOML file whose keys mirror [`RunSpec`], with
//! `key=value` overrides applied on top.
//!
//! Precedence, lowest to highest: built-in defaults, config file, `--set`
//! overrides in command-line order.

use std::path::{Path, PathBuf};

use draftreuse_core::{EngineConfig, ModelSpec, TokenFusion};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableMode {
    /// Fit factors against the paired draft and collapse them.
    Fitted,
    /// All-zero bias: plain beam expansion.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fusion {
    Additive,
    Rmsnorm,
}

impl From<Fusion> for TokenFusion {
    fn from(f: Fusion) -> Self {
        match f {
            Fusion::Additive => TokenFusion::Additive,
            Fusion::Rmsnorm => TokenFusion::RmsNorm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    // Engine.
    pub steps: usize,
    pub branch: usize,
    pub budget: usize,
    pub resample_budget: usize,
    pub resample_threshold: usize,
    pub resample: bool,
    pub fusion: bool,
    pub draft_noise: f32,
    pub seed: u64,
    pub max_new_tokens: usize,
    pub token_fusion: Fusion,

    // Synthetic model.
    pub vocab: usize,
    pub hidden: usize,
    pub model_seed: u64,
    pub recurrence_gain: f32,
    pub input_gain: f32,
    pub head_gain: f32,
    /// Load the target from a file written by `gen-model` instead.
    pub model_path: Option<PathBuf>,

    // Token-info table.
    pub table: TableMode,
    pub table_rank: usize,
    /// Fraction of the vocabulary kept hot; the default keeps `|V|/16` for
    /// large vocabularies and everything otherwise.
    pub table_keep: Option<f64>,
    pub table_ridge: f64,
    pub fit_prompts: usize,
    pub fit_positions: usize,
    pub fit_include_root: bool,
    /// Corpus for hot-token statistics; defaults to the target's own greedy
    /// output on the fitting prompts.
    pub corpus_path: Option<PathBuf>,

    // Workload.
    pub prompt_len: usize,
    pub prompts: usize,
    pub repetitions: usize,

    // Sweep axes. Empty means "use the scalar value above".
    pub sweep_steps: Vec<usize>,
    pub sweep_branch: Vec<usize>,
    pub sweep_budget: Vec<usize>,
    pub sweep_draft_noise: Vec<f32>,

    // Outputs.
    pub out: Option<PathBuf>,
    pub event_log: Option<PathBuf>,
}

impl Default for RunSpec {
    fn default() -> Self {
        let e = EngineConfig::default();
        let m = ModelSpec::default();
        Self {
            steps: e.steps,
            branch: e.branch,
            budget: e.budget,
            resample_budget: e.resample_budget,
            resample_threshold: e.resample_threshold,
            resample: e.resample,
            fusion: e.fusion,
            draft_noise: 0.3,
            seed: 0,
            max_new_tokens: 128,
            token_fusion: Fusion::Additive,
            vocab: m.vocab,
            hidden: m.hidden,
            model_seed: m.seed,
            recurrence_gain: m.recurrence_gain,
            input_gain: m.input_gain,
            head_gain: m.head_gain,
            model_path: None,
            table: TableMode::Fitted,
            table_rank: 16,
            table_keep: None,
            table_ridge: 1e-3,
            fit_prompts: 64,
            fit_positions: 64,
            fit_include_root: false,
            corpus_path: None,
            prompt_len: 8,
            prompts: 16,
            repetitions: 1,
            sweep_steps: Vec::new(),
            sweep_branch: Vec::new(),
            sweep_budget: Vec::new(),
            sweep_draft_noise: Vec::new(),
            out: None,
            event_log: None,
        }
    }
}

impl RunSpec {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Applies one `key=value` override. The value is parsed as a TOML value,
    /// falling back to a bare string.
    pub fn set(&mut self, assignment: &str) -> Result<(), CliError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not key=value")))?;
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        let mut table = toml::Table::try_from(&*self).map_err(|e| CliError::Config(e.to_string()))?;
        if !Self::default_keys().contains(&key) {
            return Err(CliError::Config(format!("unknown key {key:?}")));
        }
        table.insert(key, parsed);
        *self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        Ok(())
    }

    fn default_keys() -> Vec<String> {
        // Optional fields are skipped by the serializer when unset, so list
        // them explicitly.
        let mut keys: Vec<String> = toml::Table::try_from(Self::default())
            .expect("default spec serializes")
            .keys()
            .cloned()
            .collect();
        for k in ["model_path", "table_keep", "corpus_path", "out", "event_log"] {
            keys.push(k.to_string());
        }
        keys
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.repetitions == 0 {
            return bad("repetitions must be >= 1");
        }
        if self.prompts == 0 || self.prompt_len == 0 {
            return bad("prompts and prompt_len must be >= 1");
        }
        if self.table == TableMode::Fitted && (self.fit_prompts == 0 || self.fit_positions == 0) {
            return bad("fit_prompts and fit_positions must be >= 1");
        }
        if let Some(q) = self.table_keep {
            if !(q > 0.0 && q <= 1.0) {
                return bad("table_keep must lie in (0, 1]");
            }
        }
        for cfg in self.grid() {
            cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            vocab: self.vocab,
            hidden: self.hidden,
            seed: self.model_seed,
            recurrence_gain: self.recurrence_gain,
            input_gain: self.input_gain,
            head_gain: self.head_gain,
        }
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            steps: self.steps,
            branch: self.branch,
            budget: self.budget,
            resample_budget: self.resample_budget,
            resample_threshold: self.resample_threshold,
            resample: self.resample,
            fusion: self.fusion,
            draft_noise: self.draft_noise,
            seed: self.seed,
            max_new_tokens: self.max_new_tokens,
            token_fusion: self.token_fusion.into(),
        }
    }

    /// Cartesian product of the sweep axes, in `steps`, `branch`, `budget`,
    /// `draft_noise` nesting order (last axis fastest).
    pub fn grid(&self) -> Vec<EngineConfig> {
        fn axis<T: Copy>(sweep: &[T], scalar: T) -> Vec<T> {
            if sweep.is_empty() {
                vec![scalar]
            } else {
                sweep.to_vec()
            }
        }
        let base = self.engine_config();
        let mut out = Vec::new();
        for &steps in &axis(&self.sweep_steps, self.steps) {
            for &branch in &axis(&self.sweep_branch, self.branch) {
                for &budget in &axis(&self.sweep_budget, self.budget) {
                    for &draft_noise in &axis(&self.sweep_draft_noise, self.draft_noise) {
                        out.push(EngineConfig {
                            steps,
                            branch,
                            budget,
                            draft_noise,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}
