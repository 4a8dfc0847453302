//! The pipeline commands.
//!
//! Work-dir layout:
//!
//! ```text
//! hsi_lr.npy               degrade   L × h × w
//! S.npy                    unmix     L × N
//! a_lr.npy                 unmix     N × h × w
//! unmix_summary.json       unmix
//! corpus/manifest.json     synth
//! corpus/adl_hr_00000.npy  synth     N × H × W
//! corpus/adl_lr_00000.npy  synth     N × h × w
//! a_sr_bicubic.npy         reconstruct (when no external A_SR is given)
//! hsi_sr.npy               reconstruct
//! *_report.json, *_patches.csv       baseline / reconstruct / eval
//! artifacts.json           shapes and hashes of everything above
//! ```

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use hsisr_core::deadleaves::{self, DeadLeavesConfig, ValuePool};
use hsisr_core::degrade::{self, Boundary, PsfConfig};
use hsisr_core::metrics::{self, MetricsReport, PatchEvaluation, PatchGrid};
use hsisr_core::tensor::Tensor;
use hsisr_core::unmix::{self, UnmixConfig};
use hsisr_core::{AbundanceMaps, Cube, EndmemberMatrix, HsiCube};
use serde::{Deserialize, Serialize};

use crate::artifacts::{self, ArtifactEntry, Registry, WorkDirLock};
use crate::config::PipelineConfig;
use crate::error::{CoreContext, PipelineError, Result};

pub const HSI_LR: &str = "hsi_lr.npy";
pub const ENDMEMBERS: &str = "S.npy";
pub const A_LR: &str = "a_lr.npy";
pub const A_SR_BICUBIC: &str = "a_sr_bicubic.npy";
pub const HSI_SR: &str = "hsi_sr.npy";
pub const CORPUS_DIR: &str = "corpus";
pub const CORPUS_MANIFEST: &str = "manifest.json";

pub fn corpus_hr_name(k: usize) -> String {
    format!("adl_hr_{k:05}.npy")
}

pub fn corpus_lr_name(k: usize) -> String {
    format!("adl_lr_{k:05}.npy")
}

/// How a network output on the `scale`-multiple grid maps back onto the
/// reference grid.
pub const CROP_CONVENTION: &str =
    "super-resolved tensors larger than the reference grid by less than `scale` pixels per axis are cropped to it, keeping the top-left corner";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradeSummary {
    pub hr_shape: Vec<usize>,
    pub lr_shape: Vec<usize>,
    pub hr_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnmixSummary {
    pub input_shape: Vec<usize>,
    pub endmembers_shape: Vec<usize>,
    pub abundances_shape: Vec<usize>,
    /// Flat pixel index of every selected endmember.
    pub endmember_pixels: Vec<usize>,
    pub condition_number: f64,
    pub max_abs_residual: f64,
    pub rms_residual: f64,
    pub nonneg_clip: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub index: usize,
    pub seed: u64,
    pub hr: String,
    pub hr_sha256: String,
    pub lr: String,
    pub lr_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub count: usize,
    pub base_seed: u64,
    pub deadleaves: DeadLeavesConfig,
    pub psf: PsfConfig,
    pub hr_shape: Vec<usize>,
    pub lr_shape: Vec<usize>,
    pub crop_convention: String,
    /// Input file name → SHA-256 of its bytes.
    pub inputs: std::collections::BTreeMap<String, String>,
    pub files: Vec<CorpusEntry>,
}

/// Metric conventions echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub psnr_peak: f64,
    pub sam_units: String,
    pub ergas_factor: String,
    pub scale: usize,
    pub boundary: Boundary,
    pub normalized_reference: bool,
    pub patch: usize,
    pub grid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub command: String,
    pub conventions: Conventions,
    #[serde(flatten)]
    pub patches: PatchEvaluation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub whole_image: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructSummary {
    pub a_sr_source: String,
    pub a_sr_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub cropped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<EvaluationReport>,
}

#[derive(Serialize)]
struct CsvRow {
    patch: usize,
    row: usize,
    col: usize,
    mpsnr: f64,
    msam: f64,
    mergas: f64,
    n_pixels_skipped_sam: usize,
}

fn cube_of(t: Tensor, what: &str, path: &Path) -> Result<Cube> {
    match t {
        Tensor::Cube(c) => Ok(c),
        Tensor::Endmembers(s) => Err(PipelineError::Validation(format!(
            "{} should hold a rank-3 {what}, found a {}x{} matrix",
            path.display(),
            s.bands(),
            s.materials()
        ))),
    }
}

pub struct Pipeline {
    cfg: PipelineConfig,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn work_path(&self, name: &str) -> PathBuf {
        self.cfg.work_dir.join(name)
    }

    fn scale(&self) -> usize {
        self.cfg.psf.scale
    }

    fn conventions(&self) -> Conventions {
        Conventions {
            psnr_peak: metrics::PSNR_PEAK,
            sam_units: "degrees".into(),
            ergas_factor: "100/scale".into(),
            scale: self.scale(),
            boundary: self.cfg.psf.boundary,
            normalized_reference: self.cfg.normalize,
            patch: self.cfg.eval.patch,
            grid: self.cfg.eval.grid,
        }
    }

    /// Reads a work-dir artifact, checking it against the registry first.
    fn read_registered(&self, registry: &Registry, name: &str) -> Result<artifacts::Loaded> {
        let path = self.work_path(name);
        if !path.exists() {
            return Err(PipelineError::Validation(format!(
                "{} not found; run the command that produces it first",
                path.display()
            )));
        }
        let loaded = artifacts::read_tensor(&path)?;
        if let Some(entry) = registry.artifacts.get(name) {
            let shape = loaded.tensor.shape();
            if entry.shape != shape {
                return Err(PipelineError::Validation(format!(
                    "{name} has shape {shape:?}, registry recorded {:?}",
                    entry.shape
                )));
            }
            if entry.sha256 != loaded.sha256 {
                return Err(PipelineError::Validation(format!(
                    "{name} changed since it was written (hash mismatch)"
                )));
            }
        }
        Ok(loaded)
    }

    fn write_registered(&self, registry: &mut Registry, name: &str, t: &Tensor) -> Result<ArtifactEntry> {
        let entry = artifacts::write_tensor(&self.work_path(name), t)?;
        registry.artifacts.insert(name.to_string(), entry.clone());
        Ok(entry)
    }

    /// The high-resolution reference, normalised if configured.
    pub fn reference(&self) -> Result<(HsiCube, String)> {
        let path = self.cfg.hr_cube.as_ref().ok_or_else(|| {
            PipelineError::Validation("hr_cube must be set in the config for this command".into())
        })?;
        let loaded = artifacts::read_tensor(path)?;
        let cube = HsiCube::new(cube_of(loaded.tensor, "spectral cube", path)?);
        let cube = if self.cfg.normalize {
            cube.normalize_global()
                .context(|| format!("normalizing {}", path.display()))?
        } else {
            cube
        };
        Ok((cube, loaded.sha256))
    }

    fn reference_if_configured(&self) -> Result<Option<HsiCube>> {
        match self.cfg.hr_cube {
            Some(_) => self.reference().map(|(c, _)| Some(c)),
            None => Ok(None),
        }
    }

    /// A cube given by an explicit path or by a registered work-dir artifact.
    fn input_cube(&self, registry: &Registry, explicit: Option<&PathBuf>, default: &str) -> Result<HsiCube> {
        match explicit {
            Some(path) => {
                let loaded = artifacts::read_tensor(path)?;
                cube_of(loaded.tensor, "spectral cube", path).map(HsiCube::new)
            }
            None => {
                let loaded = self.read_registered(registry, default)?;
                cube_of(loaded.tensor, "spectral cube", &self.work_path(default)).map(HsiCube::new)
            }
        }
    }

    fn expect_lr_of(&self, hr: [usize; 3], lr: [usize; 3], what: &str) -> Result<()> {
        let s = self.scale();
        let want = [hr[0], hr[1].div_ceil(s), hr[2].div_ceil(s)];
        if lr != want {
            return Err(PipelineError::Validation(format!(
                "{what} has shape {lr:?}; a {hr:?} reference at scale {s} needs {want:?}"
            )));
        }
        Ok(())
    }

    /// Blur + bicubic decimation of the reference into `hsi_lr.npy`.
    pub fn cmd_degrade(&self) -> Result<DegradeSummary> {
        let _lock = WorkDirLock::acquire(&self.cfg.work_dir)?;
        let mut registry = Registry::load(&self.cfg.work_dir)?;
        let (hr, hr_sha256) = self.reference()?;
        let lr = degrade::degrade(&hr, &self.cfg.psf).context(|| "degrading the reference".into())?;
        let entry = self.write_registered(&mut registry, HSI_LR, &lr.clone().into())?;
        registry.save(&self.cfg.work_dir)?;
        Ok(DegradeSummary {
            hr_shape: hr.as_cube().shape().to_vec(),
            lr_shape: entry.shape,
            hr_sha256,
        })
    }

    /// Endmember extraction and least-squares abundances of the LR cube.
    pub fn cmd_unmix(&self) -> Result<UnmixSummary> {
        let _lock = WorkDirLock::acquire(&self.cfg.work_dir)?;
        let mut registry = Registry::load(&self.cfg.work_dir)?;
        let lr = self.input_cube(&registry, self.cfg.lr_cube.as_ref(), HSI_LR)?;
        let ucfg: &UnmixConfig = &self.cfg.unmix;
        ucfg.validate(lr.bands()).context(|| "unmix config".into())?;

        let extraction = unmix::extract_with_indices(&lr, ucfg).context(|| "extracting endmembers".into())?;
        let s = extraction.endmembers;
        let a = unmix::estimate_abundances(&lr, &s, ucfg).context(|| "estimating abundances".into())?;
        let fit = unmix::reconstruct(&s, &a).context(|| "reconstructing the LR cube".into())?;
        let (max_abs_residual, rms_residual) =
            unmix::reconstruction_error(&lr, &fit).context(|| "residual".into())?;

        let s_entry = self.write_registered(&mut registry, ENDMEMBERS, &s.clone().into())?;
        let a_entry = self.write_registered(&mut registry, A_LR, &a.into())?;
        registry.save(&self.cfg.work_dir)?;
        let summary = UnmixSummary {
            input_shape: lr.as_cube().shape().to_vec(),
            endmembers_shape: s_entry.shape,
            abundances_shape: a_entry.shape,
            endmember_pixels: extraction.pixels,
            condition_number: unmix::condition_number(&s),
            max_abs_residual,
            rms_residual,
            nonneg_clip: ucfg.nonneg_clip,
        };
        artifacts::write_json(&self.work_path("unmix_summary.json"), &summary)?;
        Ok(summary)
    }

    /// Dead-leaves corpus of (A_DL,HR, A_DL,LR) pairs plus its manifest.
    pub fn cmd_synth(&self) -> Result<CorpusManifest> {
        let _lock = WorkDirLock::acquire(&self.cfg.work_dir)?;
        let registry = Registry::load(&self.cfg.work_dir)?;
        let a_lr = self.read_registered(&registry, A_LR)?;
        let a_lr_sha = a_lr.sha256.clone();
        let a_lr = AbundanceMaps::new(cube_of(a_lr.tensor, "abundance tensor", &self.work_path(A_LR))?);

        let dl = DeadLeavesConfig {
            n_materials: a_lr.materials(),
            rng_seed: self.cfg.base_seed,
            ..self.cfg.deadleaves.clone()
        };
        dl.validate().context(|| "deadleaves config".into())?;
        let pool = ValuePool::from_abundances(&a_lr).context(|| "building the value pool".into())?;
        let psf = &self.cfg.psf;
        let hr_shape = vec![dl.n_materials, dl.out_rows, dl.out_cols];
        let lr_shape = vec![
            dl.n_materials,
            dl.out_rows.div_ceil(psf.scale),
            dl.out_cols.div_ceil(psf.scale),
        ];
        let kernel = 2 * psf.half_width() + 1;
        if kernel > 2 * dl.out_rows.min(dl.out_cols) {
            return Err(PipelineError::Validation(format!(
                "PSF kernel of {kernel} taps does not fit {}x{} synthetic maps",
                dl.out_rows, dl.out_cols
            )));
        }

        let corpus_dir = self.work_path(CORPUS_DIR);
        std::fs::create_dir_all(&corpus_dir).map_err(|e| PipelineError::io(&corpus_dir, e))?;
        let count = self.cfg.corpus_count;
        let entries: Mutex<Vec<Option<CorpusEntry>>> = Mutex::new(vec![None; count]);
        deadleaves::for_each_corpus_map(&dl, &pool, count, self.cfg.base_seed, |k, hr| {
            let lr = degrade::degrade(&hr, psf)?;
            let write = |name: &str, t: Tensor| {
                artifacts::write_tensor(&corpus_dir.join(name), &t).map_err(|e| match e {
                    PipelineError::Io { path, source } => hsisr_core::Error::Io { path, source },
                    other => hsisr_core::Error::Data(other.to_string()),
                })
            };
            let (hr_name, lr_name) = (corpus_hr_name(k), corpus_lr_name(k));
            let hr_entry = write(&hr_name, hr.into())?;
            let lr_entry = write(&lr_name, lr.into())?;
            entries.lock().expect("corpus entry lock")[k] = Some(CorpusEntry {
                index: k,
                seed: deadleaves::corpus_seed(self.cfg.base_seed, k),
                hr: hr_name,
                hr_sha256: hr_entry.sha256,
                lr: lr_name,
                lr_sha256: lr_entry.sha256,
            });
            Ok(())
        })
        .context(|| "generating the corpus".into())?;

        let files = entries
            .into_inner()
            .expect("corpus entry lock")
            .into_iter()
            .map(|e| e.expect("every corpus map was written"))
            .collect();
        let manifest = CorpusManifest {
            count,
            base_seed: self.cfg.base_seed,
            deadleaves: dl,
            psf: psf.clone(),
            hr_shape,
            lr_shape,
            crop_convention: CROP_CONVENTION.into(),
            inputs: [(A_LR.to_string(), a_lr_sha)].into_iter().collect(),
            files,
        };
        artifacts::write_json(&corpus_dir.join(CORPUS_MANIFEST), &manifest)?;
        Ok(manifest)
    }

    fn evaluate(&self, command: &str, reference: &HsiCube, estimate: &HsiCube) -> Result<EvaluationReport> {
        let scale = self.scale() as f64;
        let grid: &PatchGrid = &self.cfg.eval;
        let patches = metrics::evaluate_patches(reference, estimate, grid, scale)
            .context(|| format!("{command}: patch evaluation"))?;
        let whole_image = if self.cfg.whole_image {
            Some(metrics::evaluate(reference, estimate, scale).context(|| format!("{command}: whole-image evaluation"))?)
        } else {
            None
        };
        let report = EvaluationReport {
            command: command.into(),
            conventions: self.conventions(),
            patches,
            whole_image,
        };
        artifacts::write_json(&self.work_path(&format!("{command}_report.json")), &report)?;
        self.write_csv(&self.work_path(&format!("{command}_patches.csv")), &report.patches)?;
        Ok(report)
    }

    fn write_csv(&self, path: &Path, eval: &PatchEvaluation) -> Result<()> {
        let csv_err = |source| PipelineError::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        for (i, p) in eval.patches.iter().enumerate() {
            w.serialize(CsvRow {
                patch: i,
                row: p.row,
                col: p.col,
                mpsnr: p.report.mpsnr,
                msam: p.report.msam,
                mergas: p.report.mergas,
                n_pixels_skipped_sam: p.report.n_pixels_skipped_sam,
            })
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| PipelineError::io(path, e))
    }

    /// Bicubic upsampling of the LR cube, scored against the reference.
    pub fn cmd_baseline(&self) -> Result<EvaluationReport> {
        let _lock = WorkDirLock::acquire(&self.cfg.work_dir)?;
        let registry = Registry::load(&self.cfg.work_dir)?;
        let (hr, _) = self.reference()?;
        let lr = self.input_cube(&registry, self.cfg.lr_cube.as_ref(), HSI_LR)?;
        self.expect_lr_of(hr.as_cube().shape(), lr.as_cube().shape(), "LR cube")?;
        let up = degrade::upsample_bicubic(&lr, self.scale(), (hr.rows(), hr.cols()), self.cfg.psf.boundary)
            .context(|| "bicubic upsampling".into())?;
        self.evaluate("baseline", &hr, &up)
    }

    /// Mixes A_SR with the endmembers into `hsi_sr.npy`, scoring it when a
    /// reference is configured. Without an external A_SR the bicubic
    /// upsampling of `a_lr.npy` is used.
    pub fn cmd_reconstruct(&self) -> Result<ReconstructSummary> {
        let _lock = WorkDirLock::acquire(&self.cfg.work_dir)?;
        let mut registry = Registry::load(&self.cfg.work_dir)?;
        let s: EndmemberMatrix = match self.read_registered(&registry, ENDMEMBERS)?.tensor {
            Tensor::Endmembers(s) => s,
            Tensor::Cube(c) => {
                return Err(PipelineError::Validation(format!(
                    "{ENDMEMBERS} should be a matrix, found shape {:?}",
                    c.shape()
                )))
            }
        };
        let reference = self.reference_if_configured()?;
        if let Some(r) = &reference {
            if r.bands() != s.bands() {
                return Err(PipelineError::Validation(format!(
                    "reference has {} bands, endmembers have {}",
                    r.bands(),
                    s.bands()
                )));
            }
        }

        let (a_sr, source) = match &self.cfg.a_sr {
            Some(path) => {
                let loaded = artifacts::read_tensor(path)?;
                let a = AbundanceMaps::new(cube_of(loaded.tensor, "abundance tensor", path)?);
                (a, path.display().to_string())
            }
            None => {
                let a_lr = self.read_registered(&registry, A_LR)?;
                let a_lr = AbundanceMaps::new(cube_of(a_lr.tensor, "abundance tensor", &self.work_path(A_LR))?);
                let target = match &reference {
                    Some(r) => (r.rows(), r.cols()),
                    None => (a_lr.rows() * self.scale(), a_lr.cols() * self.scale()),
                };
                let up = degrade::upsample_bicubic(&a_lr, self.scale(), target, self.cfg.psf.boundary)
                    .context(|| "bicubic upsampling of a_lr".into())?;
                self.write_registered(&mut registry, A_SR_BICUBIC, &up.clone().into())?;
                (up, format!("bicubic({A_LR})"))
            }
        };
        if a_sr.materials() != s.materials() {
            return Err(PipelineError::Validation(format!(
                "A_SR has {} materials, endmembers have {}",
                a_sr.materials(),
                s.materials()
            )));
        }
        let a_sr_shape = a_sr.as_cube().shape().to_vec();
        let (a_sr, cropped) = match &reference {
            Some(r) => self.fit_to_grid(a_sr, r.rows(), r.cols())?,
            None => (a_sr, false),
        };

        let sr = unmix::reconstruct(&s, &a_sr).context(|| "reconstructing HSI_SR".into())?;
        // score the cube as stored, so `eval` on hsi_sr.npy gives the same numbers
        let sr = HsiCube::new(sr.as_cube().map(|v| v as f32 as f64).context(|| "HSI_SR".into())?);
        let entry = self.write_registered(&mut registry, HSI_SR, &sr.clone().into())?;
        registry.save(&self.cfg.work_dir)?;
        let report = match &reference {
            Some(r) => Some(self.evaluate("reconstruct", r, &sr)?),
            None => None,
        };
        Ok(ReconstructSummary {
            a_sr_source: source,
            a_sr_shape,
            output_shape: entry.shape,
            cropped,
            report,
        })
    }

    /// Applies the top-left crop convention to a super-resolved tensor.
    fn fit_to_grid(&self, a: AbundanceMaps, rows: usize, cols: usize) -> Result<(AbundanceMaps, bool)> {
        let s = self.scale();
        let ok = |have: usize, want: usize| have >= want && have - want < s;
        if !ok(a.rows(), rows) || !ok(a.cols(), cols) {
            return Err(PipelineError::Validation(format!(
                "A_SR grid {}x{} cannot be mapped onto the {rows}x{cols} reference ({CROP_CONVENTION})",
                a.rows(),
                a.cols()
            )));
        }
        if a.rows() == rows && a.cols() == cols {
            return Ok((a, false));
        }
        let cropped = a
            .as_cube()
            .crop(0, 0, rows, cols)
            .context(|| "cropping A_SR".into())?;
        Ok((AbundanceMaps::new(cropped), true))
    }

    /// Scores an arbitrary estimate cube against the reference.
    pub fn cmd_eval(&self) -> Result<EvaluationReport> {
        let _lock = WorkDirLock::acquire(&self.cfg.work_dir)?;
        let registry = Registry::load(&self.cfg.work_dir)?;
        let (hr, _) = self.reference()?;
        let est = self.input_cube(&registry, self.cfg.estimate.as_ref(), HSI_SR)?;
        if est.as_cube().shape() != hr.as_cube().shape() {
            return Err(PipelineError::Validation(format!(
                "estimate has shape {:?}, reference {:?}",
                est.as_cube().shape(),
                hr.as_cube().shape()
            )));
        }
        self.evaluate("eval", &hr, &est)
    }
}
