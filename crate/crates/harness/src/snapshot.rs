//! Loading repositories from disk and writing file sets back, byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use repoport_core::{FileKind, RelPath, RepoSnapshot, SnapshotError};
use walkdir::WalkDir;

/// Files larger than this are left out of snapshots.
pub const MAX_FILE_BYTES: u64 = 1 << 20;

/// Directory names skipped while walking a repository.
pub const IGNORED_DIRS: [&str; 7] = [".git", ".hg", ".svn", "build", "_build", "CMakeFiles", ".repoport-archive"];

const IGNORED_EXTENSIONS: [&str; 5] = ["o", "obj", "a", "so", "exe"];

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("repository root {0} does not exist or is not a directory")]
    MissingRoot(PathBuf),
    #[error("no files under {0}")]
    NoFiles(PathBuf),
    #[error("manifest names `{0}`, which is not in the repository")]
    UnknownFile(String),
    #[error("bad path `{path}`: {reason}")]
    BadPath { path: String, reason: String },
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// Which files of a repository play which role.
#[derive(Debug, Clone, Default)]
pub struct SnapshotSpec {
    /// `None` infers build files from names.
    pub build_files: Option<Vec<String>>,
    pub main_files: Vec<String>,
    pub kind_overrides: BTreeMap<String, FileKind>,
}

fn rel(raw: &str) -> Result<RelPath, LoadError> {
    RelPath::new(raw).map_err(|e| LoadError::BadPath { path: raw.to_string(), reason: e.to_string() })
}

/// Every non-ignored regular file under `root` as `(relative path, bytes)`,
/// in lexicographic path order.
pub fn read_tree(root: &Path) -> Result<Vec<(RelPath, Vec<u8>)>, LoadError> {
    walk(root, true)
}

/// Every regular file under `root`, with no ignore rules or size limit.
pub fn read_all(root: &Path) -> Result<Vec<(RelPath, Vec<u8>)>, LoadError> {
    walk(root, false)
}

fn walk(root: &Path, filtered: bool) -> Result<Vec<(RelPath, Vec<u8>)>, LoadError> {
    if !root.is_dir() {
        return Err(LoadError::MissingRoot(root.to_path_buf()));
    }
    let walker = WalkDir::new(root).sort_by_file_name().into_iter().filter_entry(|e| {
        !(filtered && e.depth() > 0 && e.file_type().is_dir() && IGNORED_DIRS.contains(&e.file_name().to_string_lossy().as_ref()))
    });
    let mut out = Vec::new();
    for entry in walker {
        let entry = entry.map_err(|e| LoadError::Io {
            path: e.path().map(Path::to_path_buf).unwrap_or_else(|| root.to_path_buf()),
            source: e.into_io_error().unwrap_or_else(|| io::Error::other("filesystem loop")),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        if filtered && path.extension().is_some_and(|x| IGNORED_EXTENSIONS.contains(&x.to_string_lossy().as_ref())) {
            continue;
        }
        let meta = entry.metadata().map_err(|e| LoadError::Io { path: path.to_path_buf(), source: e.into() })?;
        if filtered && meta.len() > MAX_FILE_BYTES {
            log::warn!("skipping {} ({} bytes)", path.display(), meta.len());
            continue;
        }
        let relative = path.strip_prefix(root).expect("walkdir yields paths under root");
        let Some(raw) = relative.to_str() else {
            return Err(LoadError::BadPath { path: relative.display().to_string(), reason: "not valid UTF-8".into() });
        };
        let bytes = fs::read(path).map_err(|source| LoadError::Io { path: path.to_path_buf(), source })?;
        out.push((rel(raw)?, bytes));
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

pub fn load_repo_snapshot(root: &Path, spec: &SnapshotSpec) -> Result<RepoSnapshot, LoadError> {
    let files = read_tree(root)?;
    let build = match &spec.build_files {
        Some(list) => list.iter().map(|s| rel(s)).collect::<Result<Vec<_>, _>>()?,
        None => Vec::new(),
    };
    let main = spec.main_files.iter().map(|s| rel(s)).collect::<Result<Vec<_>, _>>()?;
    let overrides = spec
        .kind_overrides
        .iter()
        .map(|(k, v)| Ok((rel(k)?, *v)))
        .collect::<Result<BTreeMap<_, _>, LoadError>>()?;
    let name = root.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    RepoSnapshot::new(name, files, build, main, &overrides).map_err(|e| match e {
        SnapshotError::NoFiles => LoadError::NoFiles(root.to_path_buf()),
        SnapshotError::UnknownBuildFile(p) | SnapshotError::UnknownMainFile(p) => LoadError::UnknownFile(p.to_string()),
        SnapshotError::DuplicatePath(p) => LoadError::BadPath { path: p.to_string(), reason: "duplicate".into() },
    })
}

/// Writes each file under `dir`, creating parent directories. Contents are
/// written exactly as given.
pub fn write_files<'a>(dir: &Path, files: impl IntoIterator<Item = (&'a RelPath, &'a [u8])>) -> io::Result<()> {
    for (path, bytes) in files {
        let target = dir.join(path.as_str());
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&target, bytes)?;
    }
    Ok(())
}

pub fn write_snapshot(dir: &Path, repo: &RepoSnapshot) -> io::Result<()> {
    write_files(dir, repo.files().map(|f| (&f.path, f.content.as_slice())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(build: Option<&[&str]>, main: &[&str]) -> SnapshotSpec {
        SnapshotSpec {
            build_files: build.map(|b| b.iter().map(|s| s.to_string()).collect()),
            main_files: main.iter().map(|s| s.to_string()).collect(),
            kind_overrides: BTreeMap::new(),
        }
    }

    #[test]
    fn loads_and_ignores() {
        let d = tempfile::tempdir().unwrap();
        fs::create_dir_all(d.path().join("src")).unwrap();
        fs::create_dir_all(d.path().join(".git")).unwrap();
        fs::create_dir_all(d.path().join("build")).unwrap();
        fs::write(d.path().join("Makefile"), "all:\n\tg++ x\n").unwrap();
        fs::write(d.path().join("src/main.cpp"), "int main(){}\n").unwrap();
        fs::write(d.path().join(".git/HEAD"), "ref").unwrap();
        fs::write(d.path().join("build/out.txt"), "x").unwrap();
        fs::write(d.path().join("src/main.o"), "x").unwrap();
        fs::write(d.path().join("big.txt"), vec![b'a'; MAX_FILE_BYTES as usize + 1]).unwrap();
        let r = load_repo_snapshot(d.path(), &spec(Some(&["Makefile"]), &["src/main.cpp"])).unwrap();
        let paths: Vec<&str> = r.paths().map(RelPath::as_str).collect();
        assert_eq!(paths, ["Makefile", "src/main.cpp"]);
        assert!(r.is_build_file(&RelPath::new("Makefile").unwrap()));
    }

    #[test]
    fn empty_dir_is_an_error() {
        let d = tempfile::tempdir().unwrap();
        assert!(matches!(load_repo_snapshot(d.path(), &SnapshotSpec::default()), Err(LoadError::NoFiles(_))));
        assert!(matches!(
            load_repo_snapshot(&d.path().join("nope"), &SnapshotSpec::default()),
            Err(LoadError::MissingRoot(_))
        ));
    }

    #[test]
    fn unknown_manifest_file() {
        let d = tempfile::tempdir().unwrap();
        fs::write(d.path().join("a.cpp"), "x").unwrap();
        let e = load_repo_snapshot(d.path(), &spec(None, &["src/main.cpp"])).unwrap_err();
        assert!(matches!(e, LoadError::UnknownFile(p) if p == "src/main.cpp"));
    }

    #[test]
    fn tabs_survive_round_trip() {
        let d = tempfile::tempdir().unwrap();
        let bytes = b"all: a\n\tg++ -o a a.cpp \t\n\n".to_vec();
        fs::write(d.path().join("Makefile"), &bytes).unwrap();
        let r = load_repo_snapshot(d.path(), &SnapshotSpec::default()).unwrap();
        let out = tempfile::tempdir().unwrap();
        write_snapshot(out.path(), &r).unwrap();
        assert_eq!(fs::read(out.path().join("Makefile")).unwrap(), bytes);
    }
}
