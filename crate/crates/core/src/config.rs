//! Engine hyperparameters and the TOML configuration file.
//!
//! ```toml
//! prompt_set = "code"              # or list [[roles]] explicitly
//! system_prompt_file = "system.txt" # optional, overrides the set's template
//!
//! [engine]
//! alpha = 0.1
//! top_k = 3
//!
//! [engine.reward]
//! exec_penalty = { default = 5, scale = 2 }
//!
//! [[roles]]
//! name = "Programming Expert"
//! prompt_file = "prompts/pe.txt"
//! may_terminate = false
//! cost = 1.0
//!
//! [backend]
//! model = "qwen-max"
//! temperature = 0.1
//! max_tokens = 2048
//! ```
//!
//! Unknown keys are rejected. Relative paths resolve against the file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{HttpConfig, PromptError, NEXT_AVAIL_NODES, PREV_NODES};
use crate::prompts;
use crate::reward::{RewardConfig, RewardError};
use crate::types::{validate_role_set, RoleError, RoleSet, RoleSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid engine config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Role(#[from] RoleError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon0: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub top_k: usize,
    pub cold_start_episodes: u64,
    pub prune_threshold: f64,
    pub max_steps: usize,
    pub reward: RewardConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 0.9,
            epsilon0: 0.3,
            epsilon_decay: 0.95,
            epsilon_min: 0.01,
            top_k: 3,
            cold_start_episodes: 30,
            prune_threshold: -50.0,
            max_steps: 12,
            reward: RewardConfig::default(),
        }
    }
}

impl EngineConfig {
    /// Checks ranges of the learning parameters and the reward config
    /// against the role set.
    pub fn validate(&self, roles: &RoleSet) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError::Invalid(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return fail(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        for (name, v) in [("epsilon0", self.epsilon0), ("epsilon_min", self.epsilon_min)] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            return fail(format!("epsilon_decay must lie in (0, 1], got {}", self.epsilon_decay));
        }
        if self.epsilon_min > self.epsilon0 {
            return fail("epsilon_min must not exceed epsilon0".into());
        }
        if self.top_k == 0 {
            return fail("top_k must be positive".into());
        }
        if self.max_steps == 0 {
            return fail("max_steps must be positive".into());
        }
        if !self.prune_threshold.is_finite() {
            return fail("prune_threshold must be finite".into());
        }
        self.reward.validate(roles)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoleEntry {
    name: String,
    #[serde(default)]
    prompt: Option<String>,
    #[serde(default)]
    prompt_file: Option<PathBuf>,
    #[serde(default)]
    may_terminate: bool,
    #[serde(default)]
    cost: Option<f64>,
    #[serde(default)]
    description: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    prompt_set: Option<String>,
    #[serde(default)]
    system_prompt: Option<String>,
    #[serde(default)]
    system_prompt_file: Option<PathBuf>,
    #[serde(default)]
    dispatcher_prompt: Option<String>,
    #[serde(default)]
    engine: EngineConfig,
    #[serde(default)]
    roles: Vec<RoleEntry>,
    #[serde(default)]
    backend: HttpConfig,
}

/// A fully resolved configuration.
#[derive(Debug, Clone)]
pub struct Config {
    pub engine: EngineConfig,
    pub roles: RoleSet,
    pub system_prompt: String,
    pub dispatcher_prompt: String,
    pub backend: HttpConfig,
}

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = read(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml_str(&text, base).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: "<config>".into(),
            message: e.to_string(),
        })?;

        let builtin = match &file.prompt_set {
            Some(name) => Some(prompts::by_name(name).ok_or_else(|| {
                ConfigError::Invalid(format!(
                    "unknown prompt_set `{name}` (expected one of {:?})",
                    prompts::SET_NAMES
                ))
            })?),
            None => None,
        };

        let roles = if !file.roles.is_empty() {
            let mut specs = Vec::with_capacity(file.roles.len());
            for entry in file.roles {
                let prompt = match (entry.prompt, entry.prompt_file) {
                    (Some(_), Some(_)) => {
                        return Err(ConfigError::Invalid(format!(
                            "role `{}` sets both prompt and prompt_file",
                            entry.name
                        )))
                    }
                    (Some(p), None) => p,
                    (None, Some(f)) => read(&base.join(f))?,
                    (None, None) => String::new(),
                };
                specs.push(RoleSpec {
                    name: entry.name,
                    prompt,
                    may_terminate: entry.may_terminate,
                    cost: entry.cost.unwrap_or(1.0),
                    description: entry.description,
                });
            }
            validate_role_set(specs)?
        } else if let Some(set) = &builtin {
            set.roles.clone()
        } else {
            return Err(ConfigError::Invalid(
                "config defines no roles: set prompt_set or add [[roles]]".into(),
            ));
        };

        let system_prompt = match (file.system_prompt, file.system_prompt_file) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::Invalid(
                    "set only one of system_prompt and system_prompt_file".into(),
                ))
            }
            (Some(s), None) => s,
            (None, Some(f)) => read(&base.join(f))?,
            (None, None) => builtin
                .as_ref()
                .map(|b| b.system.to_string())
                .unwrap_or_else(|| prompts::code().system.to_string()),
        };
        for p in [PREV_NODES, NEXT_AVAIL_NODES] {
            if !system_prompt.contains(p) {
                return Err(PromptError::MissingPlaceholder(p).into());
            }
        }

        file.engine.validate(&roles)?;
        Ok(Self {
            engine: file.engine,
            roles,
            system_prompt,
            dispatcher_prompt: file
                .dispatcher_prompt
                .unwrap_or_else(|| prompts::DISPATCHER_PROMPT.to_string()),
            backend: file.backend,
        })
    }
}
