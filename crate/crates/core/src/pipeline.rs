//! Offline dataset synthesis.
//!
//! [`discover_samples`] pairs images with depth maps and labels,
//! [`run_batch`] synthesizes every pair on a bounded worker pool and writes
//! the output tree plus a JSON manifest:
//!
//! ```text
//! out/
//!   clean/<id>.png   clean/<id>.txt     (passthrough copies, per MixPolicy)
//!   hazy/<id>.png    hazy/<id>.txt
//!   manifest.json
//!   skipped.txt      (only when some images had no depth map)
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::codec::{self, CodecError};
use crate::depth_io::{self, DepthError, DepthFormat, DepthInterpretation, DepthSource, NormalizationPolicy};
use crate::haze::{self, HazeError, HazeParams};
use crate::labels::{self, LabelError};
use crate::raster::{Raster, Shape};
use crate::sampler::{self, SamplerConfig, SamplerError};

pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SKIP_REPORT_FILE: &str = "skipped.txt";
pub const CLEAN_DIR: &str = "clean";
pub const HAZY_DIR: &str = "hazy";

/// Failure while synthesizing one sample.
#[derive(Debug, Error)]
pub enum SampleError {
    #[error("image: {0}")]
    Image(#[from] CodecError),
    #[error("depth: {0}")]
    Depth(#[from] DepthError),
    #[error("haze: {0}")]
    Haze(#[from] HazeError),
    #[error("label {path}: {source}")]
    Label {
        path: PathBuf,
        #[source]
        source: LabelError,
    },
    #[error("image {image} and depth {depth} dimensions differ")]
    ShapeMismatch { image: Shape, depth: Shape },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no images found under {0}")]
    NoImages(PathBuf),
    #[error("sample {sample_id}: {source}")]
    Sample {
        sample_id: String,
        #[source]
        source: SampleError,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SampleError + '_ {
    move |source| SampleError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthesisMode {
    DepthBased,
    TransmissionRandomized,
    PassthroughClean,
}

/// How haze is produced for a hazy copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HazeMethod {
    /// `t = exp(−β·d)` from the depth map.
    DepthBased,
    /// One uniformly drawn transmission for the whole image.
    RandomTransmission,
}

impl From<HazeMethod> for SynthesisMode {
    fn from(m: HazeMethod) -> Self {
        match m {
            HazeMethod::DepthBased => Self::DepthBased,
            HazeMethod::RandomTransmission => Self::TransmissionRandomized,
        }
    }
}

/// Which copies of each sample the offline build emits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MixPolicy {
    /// Hazy copies only.
    HazyOnly,
    /// Clean and hazy copy of every sample.
    Combined,
    /// Every clean copy, plus a hazy copy for roughly this fraction of samples
    /// (chosen per sample by a seeded coin).
    Ratio(f64),
}

impl Default for MixPolicy {
    fn default() -> Self {
        Self::Combined
    }
}

impl MixPolicy {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            Self::Ratio(r) if !(0.0..=1.0).contains(r) => Err(format!("mix ratio must lie in [0, 1], got {r}")),
            _ => Ok(()),
        }
    }

    /// `(clean, hazy)` copies for a sample with this image seed.
    pub fn copies(&self, image_seed: u64) -> (bool, bool) {
        match *self {
            Self::HazyOnly => (false, true),
            Self::Combined => (true, true),
            Self::Ratio(r) => (true, sampler::unit_draw(sampler::derive_purpose_seed(image_seed, "mix")) < r),
        }
    }
}

impl fmt::Display for MixPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::HazyOnly => f.write_str("hazy-only"),
            Self::Combined => f.write_str("combined"),
            Self::Ratio(r) => write!(f, "ratio={r}"),
        }
    }
}

impl FromStr for MixPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let policy = match s {
            "hazy-only" => Self::HazyOnly,
            "combined" => Self::Combined,
            _ => match s.strip_prefix("ratio=") {
                Some(r) => Self::Ratio(r.parse().map_err(|_| format!("bad mix ratio {r:?}"))?),
                None => return Err(format!("unknown mix policy {s:?} (hazy-only, combined, ratio=R)")),
            },
        };
        policy.validate()?;
        Ok(policy)
    }
}

impl TryFrom<String> for MixPolicy {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<MixPolicy> for String {
    fn from(m: MixPolicy) -> Self {
        m.to_string()
    }
}

/// Everything that determines the bytes of a synthesized image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub sampler: SamplerConfig,
    pub normalization: NormalizationPolicy,
    pub depth_interpretation: DepthInterpretation,
    /// Overrides extension-based format detection.
    pub depth_format: Option<DepthFormat>,
    /// Use the depth-free random-transmission comparator for hazy copies.
    pub baseline: bool,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig::default(),
            normalization: NormalizationPolicy::default(),
            depth_interpretation: DepthInterpretation::Depth,
            depth_format: None,
            baseline: false,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.sampler.validate()?;
        self.normalization
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn method(&self) -> HazeMethod {
        if self.baseline {
            HazeMethod::RandomTransmission
        } else {
            HazeMethod::DepthBased
        }
    }

    pub fn depth_source(&self, path: &Path) -> Result<DepthSource, DepthError> {
        let src = match self.depth_format {
            Some(f) => DepthSource {
                path: path.to_path_buf(),
                format: f,
                interpretation: self.depth_interpretation,
            },
            None => DepthSource::from_path(path)?,
        };
        Ok(src.with_interpretation(self.depth_interpretation))
    }
}

/// One image/depth/label pairing; in a manifest, one emitted copy of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub image_path: PathBuf,
    pub depth_path: PathBuf,
    pub label_path: Option<PathBuf>,
    pub image_seed: u64,
    pub applied_params: Option<HazeParams>,
    pub mode: SynthesisMode,
    /// Global transmission drawn by the random-transmission comparator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_transmission: Option<f64>,
    /// Output image, relative to the output directory.
    #[serde(default)]
    pub output_image: Option<String>,
    #[serde(default)]
    pub output_label: Option<String>,
    /// Why this copy could not be produced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SampleRecord {
    /// `sample_id` without its extension, used to name outputs.
    pub fn stem(&self) -> &str {
        id_stem(&self.sample_id)
    }
}

fn id_stem(id: &str) -> &str {
    let name_start = id.rfind('/').map_or(0, |i| i + 1);
    match id[name_start..].rfind('.') {
        Some(dot) if dot > 0 => &id[..name_start + dot],
        _ => id,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discovery {
    pub records: Vec<SampleRecord>,
    /// Sample ids of images that have no depth counterpart.
    pub skipped: Vec<String>,
}

fn has_extension(path: &Path, exts: &[&str]) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| exts.iter().any(|x| x.eq_ignore_ascii_case(e)))
}

fn relative_id(root: &Path, path: &Path) -> Option<String> {
    let rel = path.strip_prefix(root).ok()?;
    let parts: Option<Vec<&str>> = rel.components().map(|c| c.as_os_str().to_str()).collect();
    Some(parts?.join("/"))
}

/// Pairs every image under `image_dir` with `depth_dir/<stem>.{pfm,f32,png}`
/// and, when present, `label_dir/<stem>.txt`. Records are sorted by id.
pub fn discover_samples(
    image_dir: &Path,
    depth_dir: &Path,
    label_dir: Option<&Path>,
    global_seed: u64,
) -> Result<Discovery, PipelineError> {
    if !image_dir.is_dir() {
        return Err(PipelineError::Io {
            path: image_dir.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "image directory not found"),
        });
    }
    let mut ids = Vec::new();
    for entry in WalkDir::new(image_dir).sort_by_file_name() {
        let entry = entry.map_err(|e| PipelineError::Io {
            path: image_dir.to_path_buf(),
            source: e.into(),
        })?;
        if entry.file_type().is_file() && has_extension(entry.path(), &IMAGE_EXTENSIONS) {
            if let Some(id) = relative_id(image_dir, entry.path()) {
                ids.push(id);
            }
        }
    }
    if ids.is_empty() {
        return Err(PipelineError::NoImages(image_dir.to_path_buf()));
    }
    ids.sort();

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for id in ids {
        let stem = id_stem(&id);
        let depth = depth_io::DepthFormat::EXTENSIONS
            .iter()
            .map(|ext| depth_dir.join(format!("{stem}.{ext}")))
            .find(|p| p.is_file());
        let Some(depth_path) = depth else {
            skipped.push(id);
            continue;
        };
        let label_path = label_dir
            .map(|d| d.join(format!("{stem}.txt")))
            .filter(|p| p.is_file());
        records.push(SampleRecord {
            image_seed: sampler::derive_image_seed(global_seed, &id),
            image_path: image_dir.join(&id),
            depth_path,
            label_path,
            applied_params: None,
            mode: SynthesisMode::DepthBased,
            baseline_transmission: None,
            output_image: None,
            output_label: None,
            error: None,
            sample_id: id,
        });
    }
    Ok(Discovery { records, skipped })
}

/// A synthesized hazy image and what produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesized {
    pub image: Raster<u8>,
    pub params: HazeParams,
    pub method: HazeMethod,
    pub baseline_transmission: Option<f64>,
}

/// Synthesizes with explicit parameters. `seed` only feeds the
/// random-transmission draw.
pub fn synthesize_with_params(
    image_path: &Path,
    depth_path: &Path,
    config: &SynthesisConfig,
    params: HazeParams,
    method: HazeMethod,
    seed: u64,
) -> Result<Synthesized, SampleError> {
    params.validate()?;
    let clean = codec::load_rgb8(image_path)?.to_working::<f64>();
    let (hazy, baseline_transmission) = match method {
        HazeMethod::DepthBased => {
            let source = config.depth_source(depth_path)?;
            let depth = depth_io::load_depth::<f64>(&source, &config.normalization)?;
            if !clean.shape().same_plane(&depth.shape()) {
                return Err(SampleError::ShapeMismatch {
                    image: clean.shape(),
                    depth: depth.shape(),
                });
            }
            let t = haze::depth_to_transmission(&depth, params.beta)?;
            (haze::compose_haze(&clean, &t, &params)?, None)
        }
        HazeMethod::RandomTransmission => {
            let out = haze::random_transmission_baseline(&clean, &params, sampler::derive_purpose_seed(seed, "baseline-t"))?;
            (out.image, Some(out.transmission))
        }
    };
    Ok(Synthesized {
        image: haze::quantize(&hazy)?,
        params,
        method,
        baseline_transmission,
    })
}

/// Samples parameters from `seed` and synthesizes.
pub fn synthesize_seeded(
    image_path: &Path,
    depth_path: &Path,
    config: &SynthesisConfig,
    seed: u64,
    method: HazeMethod,
) -> Result<Synthesized, SampleError> {
    let params = sampler::sample_params(&config.sampler, seed);
    synthesize_with_params(image_path, depth_path, config, params, method, seed)
}

/// Read depth, normalize, transmission, compose, quantize, using the
/// record's own seed.
pub fn synthesize_one(record: &SampleRecord, config: &SynthesisConfig) -> Result<(Raster<u8>, HazeParams), PipelineError> {
    synthesize_seeded(&record.image_path, &record.depth_path, config, record.image_seed, config.method())
        .map(|s| (s.image, s.params))
        .map_err(|source| PipelineError::Sample {
            sample_id: record.sample_id.clone(),
            source,
        })
}

/// Bytes served as the clean copy: the original file when it already is a
/// PNG, otherwise a PNG re-encoding.
pub fn clean_png_bytes(image_path: &Path) -> Result<Vec<u8>, SampleError> {
    let bytes = fs::read(image_path).map_err(io_err(image_path))?;
    if has_extension(image_path, &["png"]) {
        // decode once so a corrupt file fails here rather than downstream
        codec::decode_rgb8(&bytes)?;
        Ok(bytes)
    } else {
        Ok(codec::encode_png(&codec::decode_rgb8(&bytes)?)?)
    }
}

fn read_label(path: &Path) -> Result<Vec<u8>, SampleError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let text = String::from_utf8_lossy(&bytes);
    labels::parse_yolo(&text).map_err(|source| SampleError::Label {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(bytes)
}

/// Snapshot of every setting that shaped the output tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub sampler: SamplerConfig,
    pub normalization: NormalizationPolicy,
    pub depth_interpretation: DepthInterpretation,
    pub depth_format: Option<DepthFormat>,
    pub baseline: bool,
    pub mix: MixPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config: ConfigSnapshot,
    pub records: Vec<SampleRecord>,
}

impl Manifest {
    pub fn failures(&self) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(|r| r.error.is_some())
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let bytes = fs::read(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    pub manifest: Manifest,
    /// Number of samples that failed.
    pub failed_samples: usize,
}

impl BatchOutcome {
    pub fn success(&self) -> bool {
        self.failed_samples == 0
    }
}

struct Emitted {
    record: SampleRecord,
    image_bytes: Vec<u8>,
}

struct BuiltSample {
    copies: Vec<Emitted>,
    label: Option<Vec<u8>>,
}

fn build_sample(record: &SampleRecord, config: &SynthesisConfig, mix: MixPolicy) -> Result<BuiltSample, SampleError> {
    let (want_clean, want_hazy) = mix.copies(record.image_seed);
    let label = record.label_path.as_deref().map(read_label).transpose()?;
    let stem = record.stem();
    let mut out = Vec::with_capacity(2);
    let copy = |dir: &str, mode: SynthesisMode| SampleRecord {
        mode,
        output_image: Some(format!("{dir}/{stem}.png")),
        output_label: record.label_path.as_ref().map(|_| format!("{dir}/{stem}.txt")),
        ..record.clone()
    };
    if want_clean {
        out.push(Emitted {
            record: copy(CLEAN_DIR, SynthesisMode::PassthroughClean),
            image_bytes: clean_png_bytes(&record.image_path)?,
        });
    }
    if want_hazy {
        let s = synthesize_seeded(
            &record.image_path,
            &record.depth_path,
            config,
            record.image_seed,
            config.method(),
        )?;
        let mut r = copy(HAZY_DIR, s.method.into());
        r.applied_params = Some(s.params);
        r.baseline_transmission = s.baseline_transmission;
        out.push(Emitted {
            record: r,
            image_bytes: codec::encode_png(&s.image)?,
        });
    }
    Ok(BuiltSample { copies: out, label })
}

fn write_sample(out_dir: &Path, built: &BuiltSample) -> Result<(), SampleError> {
    for e in &built.copies {
        let image_rel = e.record.output_image.as_deref().expect("emitted copies name their output");
        let image_path = out_dir.join(image_rel);
        if let Some(parent) = image_path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        fs::write(&image_path, &e.image_bytes).map_err(io_err(&image_path))?;
        if let (Some(rel), Some(bytes)) = (&e.record.output_label, &built.label) {
            let p = out_dir.join(rel);
            fs::write(&p, bytes).map_err(io_err(&p))?;
        }
    }
    Ok(())
}

fn failed_copies(record: &SampleRecord, config: &SynthesisConfig, mix: MixPolicy, err: &SampleError) -> Vec<SampleRecord> {
    let (clean, hazy) = mix.copies(record.image_seed);
    let modes = [
        (clean, SynthesisMode::PassthroughClean),
        (hazy, SynthesisMode::from(config.method())),
    ];
    modes
        .into_iter()
        .filter(|(want, _)| *want)
        .map(|(_, mode)| SampleRecord {
            mode,
            error: Some(err.to_string()),
            output_image: None,
            output_label: None,
            ..record.clone()
        })
        .collect()
}

/// Synthesizes every record and writes the output tree and manifest.
///
/// A failing sample writes nothing and is recorded with its error; the rest
/// of the batch continues. Output bytes do not depend on `workers`.
pub fn run_batch(
    records: &[SampleRecord],
    skipped: &[String],
    config: &SynthesisConfig,
    mix: MixPolicy,
    out_dir: &Path,
    workers: usize,
) -> Result<BatchOutcome, PipelineError> {
    config.validate()?;
    mix.validate().map_err(PipelineError::Config)?;
    fs::create_dir_all(out_dir).map_err(|source| PipelineError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;

    let results: Vec<Result<Vec<SampleRecord>, Vec<SampleRecord>>> = pool.install(|| {
        records
            .par_iter()
            .map(|record| {
                let built = build_sample(record, config, mix).and_then(|b| write_sample(out_dir, &b).map(|_| b));
                match built {
                    Ok(b) => Ok(b.copies.into_iter().map(|e| e.record).collect()),
                    Err(err) => {
                        log::warn!("sample {} failed: {err}", record.sample_id);
                        Err(failed_copies(record, config, mix, &err))
                    }
                }
            })
            .collect()
    });

    let failed_samples = results.iter().filter(|r| r.is_err()).count();
    let mut manifest_records: Vec<SampleRecord> = results.into_iter().flat_map(|r| r.unwrap_or_else(|e| e)).collect();
    manifest_records.sort_by(|a, b| (&a.sample_id, a.mode).cmp(&(&b.sample_id, b.mode)));

    let manifest = Manifest {
        tool_version: crate::TOOL_VERSION.to_string(),
        config: ConfigSnapshot {
            sampler: config.sampler,
            normalization: config.normalization,
            depth_interpretation: config.depth_interpretation,
            depth_format: config.depth_format,
            baseline: config.baseline,
            mix,
        },
        records: manifest_records,
    };

    if !skipped.is_empty() {
        let mut text = skipped.join("\n");
        text.push('\n');
        let p = out_dir.join(SKIP_REPORT_FILE);
        fs::write(&p, text).map_err(|source| PipelineError::Io { path: p, source })?;
    }
    write_atomic(&out_dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(BatchOutcome {
        manifest,
        failed_samples,
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let tmp = path.with_extension("json.tmp");
    let wrap = |p: &Path| {
        let p = p.to_path_buf();
        move |source| PipelineError::Io { path: p, source }
    };
    fs::write(&tmp, bytes).map_err(wrap(&tmp))?;
    fs::rename(&tmp, path).map_err(wrap(path))
}
