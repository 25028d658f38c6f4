//! Optional JSON run configuration. Every field has a command-line
//! counterpart; flags win. Relative paths are resolved against the
//! directory holding the config file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use repoport_core::markers::Strictness;
use repoport_core::{EvalMode, Technique};
use serde::{Deserialize, Serialize};

use crate::eval::BuildProfile;
use crate::gateway::{BackendConfig, ConfigError};
use crate::report::KappaScope;

/// A backend given as a spec string (`mock:...`, `openai:model@url`, a
/// config file path) or inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BackendRef {
    Spec(String),
    Inline(BackendConfig),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub tasks: Vec<PathBuf>,
    #[serde(default)]
    pub backend: Option<BackendRef>,
    #[serde(default)]
    pub techniques: Vec<Technique>,
    #[serde(default)]
    pub n_samples: Option<usize>,
    #[serde(default)]
    pub ks: Vec<u64>,
    #[serde(default)]
    pub modes: Vec<EvalMode>,
    #[serde(default)]
    pub parallelism: Option<usize>,
    #[serde(default)]
    pub run_dir: Option<PathBuf>,
    #[serde(default)]
    pub max_total_tokens: Option<u64>,
    #[serde(default)]
    pub max_wall_clock_seconds: Option<u64>,
    #[serde(default)]
    pub context_window: Option<u64>,
    #[serde(default)]
    pub dep_tool: Option<Vec<String>>,
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    #[serde(default)]
    pub build_timeout_seconds: Option<u64>,
    #[serde(default)]
    pub run_timeout_seconds: Option<u64>,
    #[serde(default)]
    pub marker_strictness: Option<Strictness>,
    #[serde(default)]
    pub kappa_over: Option<KappaScope>,
    /// Extra or replacement build profiles, keyed by profile name.
    #[serde(default)]
    pub build_profiles: BTreeMap<String, BuildProfile>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut cfg: RunConfig = crate::gateway::parse_json(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for t in &mut cfg.tasks {
            *t = base.join(&*t);
        }
        for p in [&mut cfg.run_dir, &mut cfg.templates_dir].into_iter().flatten() {
            *p = base.join(&*p);
        }
        if let Some(BackendRef::Spec(s)) = &mut cfg.backend {
            if let Some(rest) = s.strip_prefix("mock:") {
                *s = format!("mock:{}", base.join(rest).display());
            } else if !s.starts_with("openai:") {
                *s = base.join(&*s).display().to_string();
            }
        }
        if let Some(BackendRef::Inline(b)) = &mut cfg.backend {
            if let crate::gateway::BackendKind::Mock { script } = &mut b.kind {
                *script = base.join(&*script);
            }
        }
        Ok(cfg)
    }

    pub fn backend_config(&self) -> Option<Result<BackendConfig, ConfigError>> {
        self.backend.as_ref().map(|b| match b {
            BackendRef::Spec(s) => BackendConfig::parse_spec(s),
            BackendRef::Inline(c) => Ok(c.clone()),
        })
    }
}

/// Checks the cross-field rules: every manifest exists and no k exceeds
/// the sample count.
pub fn validate(tasks: &[PathBuf], ks: &[u64], n_samples: usize) -> Result<(), String> {
    for t in tasks {
        if !t.is_file() {
            return Err(format!("task manifest {} does not exist", t.display()));
        }
    }
    if let Some(k) = ks.iter().find(|&&k| k == 0 || k as usize > n_samples) {
        return Err(format!("k = {k} must lie between 1 and the sample count {n_samples}"));
    }
    Ok(())
}
