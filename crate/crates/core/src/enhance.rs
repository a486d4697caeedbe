//! Pluggable image-enhancement stage.
//!
//! Supported kinds: identity, gamma correction, illumination-channel
//! histogram equalization, a generator-model pathway (attention map +
//! residual composition), and precomputed outputs loaded from disk.
//!
//! Generator backends hide model internals behind [`GeneratorBackend`]. A
//! flat key-value manifest declares the backend, its raw output range (the
//! adapter affine-maps raw values into `[0, 1]`), and whether the output is a
//! residual to compose or a final enhanced image.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::image::{
    compose_enhanced, concat_generator_input, illumination_map, load_image, self_regularized_map,
    GeneratorInput, ImageError, MapSelector, RasterImage,
};
use crate::kv::{self, KvError};

#[derive(Debug, Error)]
pub enum EnhanceError {
    #[error("invalid enhancer config: {0}")]
    InvalidConfig(String),
    #[error("generator model not found: {0}")]
    ModelMissing(PathBuf),
    #[error("invalid generator manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error(transparent)]
    ManifestRead(#[from] KvError),
    #[error("generator backend failed: {0}")]
    Backend(String),
    #[error("backend output length {got} does not match expected {want} ({width}x{height}x3)")]
    BackendShape {
        got: usize,
        want: usize,
        width: usize,
        height: usize,
    },
    #[error("no precomputed file for image id '{image_id}' at {path}")]
    MissingPrecomputed { image_id: String, path: PathBuf },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("non-finite loss component: {0}")]
    NonFiniteLoss(String),
}

/// What the enhancement stage does to each image.
#[derive(Debug, Clone, PartialEq)]
pub enum EnhancerKind {
    /// Pass the image through untouched.
    Identity,
    /// Per-channel power law `v -> v^gamma`.
    Gamma { gamma: f64 },
    /// Histogram equalization on the illumination channel.
    HistEqualization,
    /// Attention-guided generator: compute the illumination map, feed the
    /// image + attention map to a backend, compose the result.
    GeneratorModel { model_path: PathBuf },
    /// Load per-image outputs from `<dir>/<image_id>.png`.
    Precomputed { dir: PathBuf },
}

impl EnhancerKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Gamma { .. } => "gamma",
            Self::HistEqualization => "hist-equalization",
            Self::GeneratorModel { .. } => "generator-model",
            Self::Precomputed { .. } => "precomputed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnhancerConfig {
    pub kind: EnhancerKind,
    /// Which map multiplies the residual when composing generator or
    /// precomputed-residual output.
    pub multiply_with: MapSelector,
}

impl Default for EnhancerConfig {
    fn default() -> Self {
        Self {
            kind: EnhancerKind::Identity,
            multiply_with: MapSelector::Illumination,
        }
    }
}

impl EnhancerConfig {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), EnhanceError> {
        if let EnhancerKind::Gamma { gamma } = self.kind {
            if !(gamma.is_finite() && gamma > 0.0) {
                return Err(EnhanceError::InvalidConfig(format!(
                    "gamma must be a positive real, got {}",
                    gamma
                )));
            }
        }
        Ok(())
    }

    /// Canonical settings string; feeds the enhance-stage cache key.
    pub fn settings_string(&self) -> String {
        let kind = match &self.kind {
            EnhancerKind::Identity => "kind=identity".to_string(),
            EnhancerKind::Gamma { gamma } => format!("kind=gamma,gamma={}", gamma),
            EnhancerKind::HistEqualization => "kind=hist-equalization".to_string(),
            EnhancerKind::GeneratorModel { model_path } => {
                format!("kind=generator-model,model_path={}", model_path.display())
            }
            EnhancerKind::Precomputed { dir } => {
                format!("kind=precomputed,precomputed_dir={}", dir.display())
            }
        };
        format!("{},multiply_with={}", kind, self.multiply_with.as_str())
    }
}

/// Per-channel power law. `gamma` must be positive (validated at config
/// parse); 0 and 1 are fixed points for any gamma.
pub fn gamma_correct(img: &RasterImage, gamma: f64) -> RasterImage {
    assert!(gamma.is_finite() && gamma > 0.0, "gamma must be positive");
    let data = img
        .data()
        .iter()
        .map(|&v| v.powf(gamma).clamp(0.0, 1.0))
        .collect();
    RasterImage::new(img.width(), img.height(), data).expect("gamma keeps values in range")
}

const HIST_BINS: usize = 256;

fn hist_bin(v: f64) -> usize {
    ((v * 255.0).round() as usize).min(HIST_BINS - 1)
}

/// Histogram equalization on the illumination channel with 256 bins.
///
/// The cdf is normalized as `(cdf - cdf_min) / (count - cdf_min)`; each
/// pixel's channels rescale by `I_new / I_old` (pixels with `I_old = 0` pass
/// through, and a single-bin histogram is the identity). Rescaling the whole
/// pixel instead of equalizing channels independently avoids hue shifts.
pub fn histogram_equalize(img: &RasterImage) -> RasterImage {
    let illum = illumination_map(img);
    let mut hist = [0usize; HIST_BINS];
    for &v in illum.data() {
        hist[hist_bin(v)] += 1;
    }
    let mut cdf = [0usize; HIST_BINS];
    let mut acc = 0;
    for (i, &h) in hist.iter().enumerate() {
        acc += h;
        cdf[i] = acc;
    }
    let total = illum.data().len();
    let cdf_min = hist
        .iter()
        .position(|&h| h > 0)
        .map(|i| cdf[i])
        .unwrap_or(0);
    if total == cdf_min {
        // Degenerate single-bin histogram: equalization is the identity.
        return img.clone();
    }
    let denom = (total - cdf_min) as f64;

    let mut data = Vec::with_capacity(img.data().len());
    for (px, &i_old) in img.data().chunks_exact(3).zip(illum.data()) {
        if i_old <= 0.0 {
            data.extend_from_slice(px);
        } else {
            let i_new = (cdf[hist_bin(i_old)] - cdf_min) as f64 / denom;
            let ratio = i_new / i_old;
            for &c in px {
                data.push((c * ratio).clamp(0.0, 1.0));
            }
        }
    }
    RasterImage::new(img.width(), img.height(), data).expect("equalization keeps values in range")
}

/// Whether a backend (or precomputed directory) yields residuals to compose
/// or final enhanced images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputKind {
    #[default]
    Residual,
    Final,
}

impl OutputKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "residual" => Some(Self::Residual),
            "final" => Some(Self::Final),
            _ => None,
        }
    }
}

/// Tensor layout a model expects; stub backends ignore it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputLayout {
    /// Channels-first `[1, 4, H, W]`.
    #[default]
    Chw,
    /// Channels-last `[1, H, W, 4]`.
    Hwc,
}

impl InputLayout {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "chw" => Some(Self::Chw),
            "hwc" => Some(Self::Hwc),
            _ => None,
        }
    }
}

/// Declares a generator backend's I/O contract.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorManifest {
    pub backend: String,
    pub raw_min: f64,
    pub raw_max: f64,
    pub output_kind: OutputKind,
    pub input_layout: InputLayout,
    pub constant_value: f64,
    pub model_file: Option<PathBuf>,
}

impl Default for GeneratorManifest {
    fn default() -> Self {
        Self {
            backend: "zeros".to_string(),
            raw_min: 0.0,
            raw_max: 1.0,
            output_kind: OutputKind::Residual,
            input_layout: InputLayout::Chw,
            constant_value: 0.0,
            model_file: None,
        }
    }
}

impl GeneratorManifest {
    fn parse(path: &Path) -> Result<Self, EnhanceError> {
        let map = kv::parse_kv_file(path)?;
        let mut manifest = Self::default();
        let err = |message: String| EnhanceError::Manifest {
            path: path.to_path_buf(),
            message,
        };
        for (key, value) in &map {
            match key.as_str() {
                "backend" => manifest.backend = value.clone(),
                "raw_min" => {
                    manifest.raw_min = value
                        .parse()
                        .map_err(|_| err(format!("invalid raw_min '{}'", value)))?
                }
                "raw_max" => {
                    manifest.raw_max = value
                        .parse()
                        .map_err(|_| err(format!("invalid raw_max '{}'", value)))?
                }
                "output_kind" => {
                    manifest.output_kind = OutputKind::parse(value)
                        .ok_or_else(|| err(format!("invalid output_kind '{}'", value)))?
                }
                "input_layout" => {
                    manifest.input_layout = InputLayout::parse(value)
                        .ok_or_else(|| err(format!("invalid input_layout '{}'", value)))?
                }
                "constant_value" => {
                    manifest.constant_value = value
                        .parse()
                        .map_err(|_| err(format!("invalid constant_value '{}'", value)))?
                }
                "model_file" => {
                    let file = PathBuf::from(value);
                    let resolved = if file.is_relative() {
                        path.parent().unwrap_or(Path::new(".")).join(file)
                    } else {
                        file
                    };
                    manifest.model_file = Some(resolved);
                }
                other => return Err(err(format!("unknown manifest key '{}'", other))),
            }
        }
        if manifest.raw_max <= manifest.raw_min {
            return Err(err(format!(
                "raw range [{}, {}] is empty",
                manifest.raw_min, manifest.raw_max
            )));
        }
        Ok(manifest)
    }

    /// Affine map from the declared raw range into `[0, 1]`.
    pub fn normalize(&self, raw: f64) -> f64 {
        ((raw - self.raw_min) / (self.raw_max - self.raw_min)).clamp(0.0, 1.0)
    }
}

/// A generator backend produces a raw H×W×3 buffer (interleaved, row-major)
/// from the 4-channel input grid. Implementations must be callable from
/// multiple threads.
pub trait GeneratorBackend: Send + Sync {
    fn generate(&self, input: &GeneratorInput) -> Result<Vec<f64>, EnhanceError>;
}

struct ZerosBackend;

impl GeneratorBackend for ZerosBackend {
    fn generate(&self, input: &GeneratorInput) -> Result<Vec<f64>, EnhanceError> {
        Ok(vec![0.0; input.width() * input.height() * 3])
    }
}

/// Copies the RGB channels of the input through unchanged.
struct EchoRgbBackend;

impl GeneratorBackend for EchoRgbBackend {
    fn generate(&self, input: &GeneratorInput) -> Result<Vec<f64>, EnhanceError> {
        let mut out = Vec::with_capacity(input.width() * input.height() * 3);
        for px in input.data().chunks_exact(4) {
            out.extend_from_slice(&px[..3]);
        }
        Ok(out)
    }
}

struct ConstantBackend {
    value: f64,
}

impl GeneratorBackend for ConstantBackend {
    fn generate(&self, input: &GeneratorInput) -> Result<Vec<f64>, EnhanceError> {
        Ok(vec![self.value; input.width() * input.height() * 3])
    }
}

/// Resolves a model path to a backend and its manifest.
///
/// `stub:zeros` and `stub:echo-rgb` build stub backends with the default
/// manifest. Any other path must be a manifest file (or a model file with a
/// `<path>.manifest` sidecar) declaring `backend` and the I/O contract.
pub fn load_generator_backend(
    model_path: &Path,
) -> Result<(Box<dyn GeneratorBackend>, GeneratorManifest), EnhanceError> {
    let spec = model_path.to_string_lossy();
    match spec.as_ref() {
        "stub:zeros" => return Ok((Box::new(ZerosBackend), GeneratorManifest::default())),
        "stub:echo-rgb" => return Ok((Box::new(EchoRgbBackend), GeneratorManifest::default())),
        _ => {}
    }

    let sidecar = PathBuf::from(format!("{}.manifest", spec));
    let manifest_path = if sidecar.exists() {
        sidecar
    } else if model_path.exists() {
        model_path.to_path_buf()
    } else {
        return Err(EnhanceError::ModelMissing(model_path.to_path_buf()));
    };
    let mut manifest = GeneratorManifest::parse(&manifest_path)?;
    if manifest.model_file.is_none() && manifest_path != model_path {
        manifest.model_file = Some(model_path.to_path_buf());
    }

    let backend: Box<dyn GeneratorBackend> = match manifest.backend.as_str() {
        "zeros" => Box::new(ZerosBackend),
        "echo-rgb" => Box::new(EchoRgbBackend),
        "constant" => Box::new(ConstantBackend {
            value: manifest.constant_value,
        }),
        #[cfg(feature = "onnx")]
        "onnx" => Box::new(crate::onnx::OnnxGenerator::load(&manifest)?),
        other => {
            return Err(EnhanceError::Manifest {
                path: manifest_path,
                message: format!("unknown generator backend '{}'", other),
            })
        }
    };
    Ok((backend, manifest))
}

fn run_backend(
    backend: &dyn GeneratorBackend,
    manifest: &GeneratorManifest,
    input: &GeneratorInput,
) -> Result<RasterImage, EnhanceError> {
    let raw = backend.generate(input)?;
    let want = input.width() * input.height() * 3;
    if raw.len() != want {
        return Err(EnhanceError::BackendShape {
            got: raw.len(),
            want,
            width: input.width(),
            height: input.height(),
        });
    }
    let data: Vec<f64> = raw.into_iter().map(|v| manifest.normalize(v)).collect();
    Ok(RasterImage::new(input.width(), input.height(), data)?)
}

/// Runs a generator backend on the 4-channel grid and affine-maps its raw
/// output into `[0, 1]` per the manifest contract.
pub fn run_generator_backend(
    input: &GeneratorInput,
    model_path: &Path,
) -> Result<RasterImage, EnhanceError> {
    let (backend, manifest) = load_generator_backend(model_path)?;
    run_backend(backend.as_ref(), &manifest, input)
}

fn precomputed_output_kind(dir: &Path) -> Result<OutputKind, EnhanceError> {
    let manifest_path = dir.join("manifest");
    if !manifest_path.exists() {
        return Ok(OutputKind::Final);
    }
    let map = kv::parse_kv_file(&manifest_path)?;
    match map.get("output_kind") {
        Some(v) => OutputKind::parse(v).ok_or_else(|| EnhanceError::Manifest {
            path: manifest_path,
            message: format!("invalid output_kind '{}'", v),
        }),
        None => Ok(OutputKind::Final),
    }
}

enum EnhancerImpl {
    Identity,
    Gamma(f64),
    HistEqualization,
    Generator {
        backend: Box<dyn GeneratorBackend>,
        manifest: GeneratorManifest,
    },
    Precomputed {
        dir: PathBuf,
        output_kind: OutputKind,
    },
}

/// An enhancer instance resolved from an [`EnhancerConfig`]: backends and
/// manifests are loaded once and shared across images, so batch callers do
/// not pay a per-image model load. Safe to call from multiple threads.
pub struct Enhancer {
    inner: EnhancerImpl,
    multiply_with: MapSelector,
}

impl Enhancer {
    pub fn from_config(cfg: &EnhancerConfig) -> Result<Self, EnhanceError> {
        cfg.validate()?;
        let inner = match &cfg.kind {
            EnhancerKind::Identity => EnhancerImpl::Identity,
            EnhancerKind::Gamma { gamma } => EnhancerImpl::Gamma(*gamma),
            EnhancerKind::HistEqualization => EnhancerImpl::HistEqualization,
            EnhancerKind::GeneratorModel { model_path } => {
                let (backend, manifest) = load_generator_backend(model_path)?;
                EnhancerImpl::Generator { backend, manifest }
            }
            EnhancerKind::Precomputed { dir } => EnhancerImpl::Precomputed {
                dir: dir.clone(),
                output_kind: precomputed_output_kind(dir)?,
            },
        };
        Ok(Self {
            inner,
            multiply_with: cfg.multiply_with,
        })
    }

    /// Enhances one image. Failures (missing precomputed file, backend
    /// execution errors) are per-image: the caller records them and
    /// continues with the rest of the batch.
    pub fn enhance(&self, img: &RasterImage, image_id: &str) -> Result<RasterImage, EnhanceError> {
        match &self.inner {
            EnhancerImpl::Identity => Ok(img.clone()),
            EnhancerImpl::Gamma(gamma) => Ok(gamma_correct(img, *gamma)),
            EnhancerImpl::HistEqualization => Ok(histogram_equalize(img)),
            EnhancerImpl::Generator { backend, manifest } => {
                let illum = illumination_map(img);
                let attention = self_regularized_map(&illum);
                let grid = concat_generator_input(img, &attention)?;
                let output = run_backend(backend.as_ref(), manifest, &grid)?;
                match manifest.output_kind {
                    OutputKind::Residual => {
                        Ok(compose_enhanced(img, &output, &illum, self.multiply_with)?)
                    }
                    OutputKind::Final => Ok(output),
                }
            }
            EnhancerImpl::Precomputed { dir, output_kind } => {
                let path = dir.join(format!("{}.png", image_id));
                if !path.exists() {
                    return Err(EnhanceError::MissingPrecomputed {
                        image_id: image_id.to_string(),
                        path,
                    });
                }
                let loaded = load_image(&path)?;
                match output_kind {
                    OutputKind::Final => Ok(loaded),
                    OutputKind::Residual => {
                        let illum = illumination_map(img);
                        Ok(compose_enhanced(img, &loaded, &illum, self.multiply_with)?)
                    }
                }
            }
        }
    }
}

/// One-shot form of [`Enhancer::enhance`]: resolves the config, enhances a
/// single image, and discards the instance.
pub fn enhance(
    img: &RasterImage,
    cfg: &EnhancerConfig,
    image_id: &str,
) -> Result<RasterImage, EnhanceError> {
    Enhancer::from_config(cfg)?.enhance(img, image_id)
}

/// The four training-loss terms: self-feature-preserving (global, local) and
/// adversarial (global, local).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossComponents {
    pub sfp_global: f64,
    pub sfp_local: f64,
    pub adv_global: f64,
    pub adv_local: f64,
}

impl LossComponents {
    /// Unweighted four-term total. Non-finite components are rejected.
    pub fn total(&self) -> Result<f64, EnhanceError> {
        for (name, v) in [
            ("sfp_global", self.sfp_global),
            ("sfp_local", self.sfp_local),
            ("adv_global", self.adv_global),
            ("adv_local", self.adv_local),
        ] {
            if !v.is_finite() {
                return Err(EnhanceError::NonFiniteLoss(format!("{} = {}", name, v)));
            }
        }
        Ok(self.sfp_global + self.sfp_local + self.adv_global + self.adv_local)
    }
}
