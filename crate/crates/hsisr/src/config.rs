use std::path::{Path, PathBuf};

use hsisr_core::deadleaves::DeadLeavesConfig;
use hsisr_core::degrade::PsfConfig;
use hsisr_core::metrics::PatchGrid;
use hsisr_core::unmix::UnmixConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CoreContext, PipelineError, Result};

/// Pipeline configuration, read from JSON.
///
/// Relative paths are resolved against the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub work_dir: PathBuf,
    /// High-resolution reference cube. Needed by `degrade`, `baseline`,
    /// `eval`, and by `reconstruct` when scores are wanted.
    #[serde(default)]
    pub hr_cube: Option<PathBuf>,
    /// Low-resolution input; defaults to `hsi_lr.npy` in the work dir.
    #[serde(default)]
    pub lr_cube: Option<PathBuf>,
    /// Super-resolved abundances from the external model.
    #[serde(default)]
    pub a_sr: Option<PathBuf>,
    /// Cube scored by `eval`; defaults to `hsi_sr.npy` in the work dir.
    #[serde(default)]
    pub estimate: Option<PathBuf>,
    /// Divide the reference cube by its global maximum when loading it.
    #[serde(default = "yes")]
    pub normalize: bool,
    pub unmix: UnmixConfig,
    #[serde(default)]
    pub deadleaves: DeadLeavesConfig,
    #[serde(default)]
    pub psf: PsfConfig,
    #[serde(default = "default_corpus_count")]
    pub corpus_count: usize,
    #[serde(default)]
    pub eval: PatchGrid,
    /// Also score the whole image, not only the patch grid.
    #[serde(default)]
    pub whole_image: bool,
    #[serde(default)]
    pub base_seed: u64,
}

fn yes() -> bool {
    true
}

fn default_corpus_count() -> usize {
    5000
}

impl PipelineConfig {
    /// A configuration with defaults everywhere except the work dir and N.
    pub fn new(work_dir: impl Into<PathBuf>, n_materials: usize) -> Self {
        Self {
            work_dir: work_dir.into(),
            hr_cube: None,
            lr_cube: None,
            a_sr: None,
            estimate: None,
            normalize: true,
            unmix: UnmixConfig::new(n_materials),
            deadleaves: DeadLeavesConfig {
                n_materials,
                ..Default::default()
            },
            psf: PsfConfig::default(),
            corpus_count: default_corpus_count(),
            eval: PatchGrid::default(),
            whole_image: false,
            base_seed: 0,
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|source| PipelineError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.work_dir);
        for p in [
            &mut self.hr_cube,
            &mut self.lr_cube,
            &mut self.a_sr,
            &mut self.estimate,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// Checks the parts of the configuration that do not depend on data.
    pub fn validate(&self) -> Result<()> {
        self.psf.validate().context(|| "psf config".into())?;
        if self.unmix.n_materials == 0 {
            return Err(PipelineError::Validation("unmix.n_materials must be positive".into()));
        }
        if self.corpus_count == 0 {
            return Err(PipelineError::Validation("corpus_count must be at least 1".into()));
        }
        if self.eval.patch == 0 || self.eval.grid == 0 {
            return Err(PipelineError::Validation("eval.patch and eval.grid must be positive".into()));
        }
        Ok(())
    }
}
