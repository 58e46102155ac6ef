use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use edgeclass_core::bundle::SizeReport;
use edgeclass_core::{load_bundle, BundleError, ModelBundle, Variant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("models directory {0} does not exist or is not a directory")]
    MissingDir(PathBuf),
    #[error("no model bundles found under {0}")]
    Empty(PathBuf),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid bundle {path}: {source}")]
    Bundle {
        path: PathBuf,
        #[source]
        source: BundleError,
    },
    #[error("variant `{id}` registered twice ({first} and {second})")]
    Duplicate { id: &'static str, first: PathBuf, second: PathBuf },
    #[error("bundle {0} has no classes and cannot serve predictions")]
    NotClassifier(PathBuf),
}

#[derive(Debug, Clone)]
pub struct Entry {
    pub id: &'static str,
    pub variant: Variant,
    pub bundle: Arc<ModelBundle>,
    pub size: SizeReport,
    pub path: PathBuf,
}

/// Read-only map of variant id to loaded bundle, ordered original, fp32opt,
/// fp16, int8.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    entries: Vec<Entry>,
}

impl Registry {
    /// Loads every subdirectory of `dir` that holds a bundle manifest.
    pub fn load(dir: &Path) -> Result<Registry, RegistryError> {
        if !dir.is_dir() {
            return Err(RegistryError::MissingDir(dir.to_path_buf()));
        }
        let io = |source| RegistryError::Io {
            path: dir.to_path_buf(),
            source,
        };
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()
            .map_err(io)?;
        paths.sort();
        let mut reg = Registry::default();
        for path in paths.into_iter().filter(|p| p.join("manifest.json").is_file()) {
            let bundle = load_bundle(&path).map_err(|source| RegistryError::Bundle {
                path: path.clone(),
                source,
            })?;
            reg.insert(bundle, path)?;
        }
        if reg.entries.is_empty() {
            return Err(RegistryError::Empty(dir.to_path_buf()));
        }
        Ok(reg)
    }

    pub fn from_bundles(bundles: impl IntoIterator<Item = ModelBundle>) -> Result<Registry, RegistryError> {
        let mut reg = Registry::default();
        for b in bundles {
            let path = PathBuf::from(format!("<memory:{}>", b.variant().id()));
            reg.insert(b, path)?;
        }
        if reg.entries.is_empty() {
            return Err(RegistryError::Empty(PathBuf::from("<memory>")));
        }
        Ok(reg)
    }

    fn insert(&mut self, bundle: ModelBundle, path: PathBuf) -> Result<(), RegistryError> {
        if bundle.metadata.classes.is_empty() {
            return Err(RegistryError::NotClassifier(path));
        }
        let variant = bundle.variant();
        if let Some(prev) = self.entries.iter().find(|e| e.variant == variant) {
            return Err(RegistryError::Duplicate {
                id: variant.id(),
                first: prev.path.clone(),
                second: path,
            });
        }
        self.entries.push(Entry {
            id: variant.id(),
            variant,
            size: bundle.size(),
            bundle: Arc::new(bundle),
            path,
        });
        self.entries.sort_by_key(|e| e.variant);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
