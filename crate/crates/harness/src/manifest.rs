//! Task manifests: the JSON documents describing one translation task.
//!
//! Relative paths inside a manifest (`repo_root`, `ground_truth_build_dir`)
//! are resolved against the directory containing the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use repoport_core::{FileKind, ModelId, ProgrammingModel, RelPath, RunCase, TaskError, TestSpec, TranslationTask};
use serde::{Deserialize, Serialize};

use crate::snapshot::{load_repo_snapshot, read_tree, LoadError, SnapshotSpec};

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: PathBuf, line: usize, column: usize, message: String },
    #[error("{path}: unknown programming model `{id}`; describe it with an object instead of a name")]
    UnknownModel { path: PathBuf, id: String },
    #[error("{path}: {source}")]
    Invalid { path: PathBuf, source: TaskError },
    #[error("{path}: {source}")]
    Load { path: PathBuf, source: LoadError },
}

/// A programming model given either by builtin name or in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Name(String),
    Custom(ProgrammingModel),
}

impl ModelSpec {
    pub fn resolve(&self) -> Option<ProgrammingModel> {
        match self {
            ModelSpec::Name(n) => ProgrammingModel::builtin(&ModelId::parse(n)),
            ModelSpec::Custom(m) => Some(m.clone()),
        }
    }
}

fn default_true() -> bool {
    true
}

/// On-disk form of a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskManifest {
    pub task_id: String,
    pub repo_root: PathBuf,
    pub source_model: ModelSpec,
    pub target_model: ModelSpec,
    pub cli_contract: String,
    pub build_contract: String,
    pub build_command: Vec<String>,
    pub run_cases: Vec<RunCase>,
    #[serde(default)]
    pub expected_exit_code: i32,
    /// Omitted: inferred from file names (Makefile, CMakeLists.txt, ...).
    #[serde(default)]
    pub build_files: Option<Vec<String>>,
    #[serde(default)]
    pub main_files: Vec<String>,
    #[serde(default)]
    pub ground_truth_build_dir: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub include_docs: bool,
    #[serde(default)]
    pub kind_overrides: BTreeMap<String, FileKind>,
    /// Free-form application name used when grouping error categories;
    /// defaults to the task id.
    #[serde(default)]
    pub application: Option<String>,
}

impl TaskManifest {
    pub fn parse(text: &str, path: &Path) -> Result<TaskManifest, ManifestError> {
        serde_json::from_str(text).map_err(|e| ManifestError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: strip_position(&e.to_string()),
        })
    }

    pub fn application(&self) -> &str {
        self.application.as_deref().unwrap_or(&self.task_id)
    }
}

/// serde_json appends " at line L column C"; the position is reported
/// separately.
fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

/// A loaded task plus where it came from.
#[derive(Debug, Clone)]
pub struct LoadedTask {
    pub manifest_path: PathBuf,
    pub manifest: TaskManifest,
    pub repo_root: PathBuf,
    pub task: TranslationTask,
}

pub fn load_task(path: &Path) -> Result<LoadedTask, ManifestError> {
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io { path: path.to_path_buf(), source })?;
    let manifest = TaskManifest::parse(&text, path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let repo_root = base.join(&manifest.repo_root);
    let resolve = |spec: &ModelSpec| {
        spec.resolve().ok_or_else(|| ManifestError::UnknownModel {
            path: path.to_path_buf(),
            id: match spec {
                ModelSpec::Name(n) => n.clone(),
                ModelSpec::Custom(m) => m.id.to_string(),
            },
        })
    };
    let source_model = resolve(&manifest.source_model)?;
    let target_model = resolve(&manifest.target_model)?;
    let load_err = |source| ManifestError::Load { path: path.to_path_buf(), source };
    let repo = load_repo_snapshot(
        &repo_root,
        &SnapshotSpec {
            build_files: manifest.build_files.clone(),
            main_files: manifest.main_files.clone(),
            kind_overrides: manifest.kind_overrides.clone(),
        },
    )
    .map_err(load_err)?;
    let ground_truth_build_files = match &manifest.ground_truth_build_dir {
        Some(dir) => {
            let files = read_tree(&base.join(dir)).map_err(load_err)?;
            if files.is_empty() {
                return Err(load_err(LoadError::NoFiles(base.join(dir))));
            }
            Some(files.into_iter().collect::<BTreeMap<RelPath, Vec<u8>>>())
        }
        None => None,
    };
    let task = TranslationTask {
        task_id: manifest.task_id.clone(),
        repo,
        source_model,
        target_model,
        cli_contract: manifest.cli_contract.clone(),
        build_contract: manifest.build_contract.clone(),
        test_spec: TestSpec {
            build_command: manifest.build_command.clone(),
            run_cases: manifest.run_cases.clone(),
            expected_exit_code: manifest.expected_exit_code,
        },
        ground_truth_build_files,
        include_docs: manifest.include_docs,
    };
    task.validate().map_err(|source| ManifestError::Invalid { path: path.to_path_buf(), source })?;
    Ok(LoadedTask { manifest_path: path.to_path_buf(), manifest, repo_root, task })
}
