//! Raster image and scalar map types plus the illumination / composition math.
//!
//! All pixel data is stored as `f64` in `[0, 1]`. Types are immutable after
//! construction and every operation here is a pure function, so concurrent use
//! needs no synchronization.

use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Errors produced by image loading, encoding, and composition.
#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image file not found: {0}")]
    Missing(PathBuf),
    #[error("failed to read image {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to decode image {path}: {source}")]
    Decode {
        path: PathBuf,
        source: ::image::ImageError,
    },
    #[error("failed to encode image {path}: {source}")]
    Encode {
        path: PathBuf,
        source: ::image::ImageError,
    },
    #[error("invalid image data: {0}")]
    InvalidData(String),
    #[error("dimension mismatch: input {input}, residual {residual}, map {map}")]
    DimensionMismatch {
        input: Shape,
        residual: Shape,
        map: Shape,
    },
}

/// Width × height pair used in error reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub width: usize,
    pub height: usize,
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

fn in_unit_range(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

/// An H×W×3 RGB image with intensities in `[0, 1]`.
///
/// Data is row-major and pixel-interleaved: the value of channel `c` at
/// `(x, y)` lives at index `(y * width + x) * 3 + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RasterImage {
    /// Builds an image from interleaved RGB data, validating the invariants:
    /// positive dimensions, `len == width * height * 3`, all values in `[0, 1]`.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::InvalidData(format!(
                "dimensions must be at least 1x1, got {}x{}",
                width, height
            )));
        }
        if data.len() != width * height * 3 {
            return Err(ImageError::InvalidData(format!(
                "data length {} does not match {}x{}x3 = {}",
                data.len(),
                width,
                height,
                width * height * 3
            )));
        }
        if let Some((i, &v)) = data.iter().enumerate().find(|(_, &v)| !in_unit_range(v)) {
            return Err(ImageError::InvalidData(format!(
                "intensity {} at index {} is outside [0, 1]",
                v, i
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image by evaluating `f(x, y)` for every pixel.
    /// Panics if `f` produces a value outside `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data).expect("from_fn produced invalid pixel data")
    }

    /// A width×height image with every pixel set to `rgb`.
    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn shape(&self) -> Shape {
        Shape {
            width: self.width,
            height: self.height,
        }
    }

    /// Interleaved RGB data, row-major.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// 8-bit encoding of the image; each value maps by `round(v * 255)`,
    /// rounding half away from zero.
    pub fn to_rgb8_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v * 255.0).round() as u8)
            .collect()
    }
}

/// An H×W scalar grid with values in `[0, 1]`; holds illumination components
/// and attention maps.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ScalarMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::InvalidData(format!(
                "dimensions must be at least 1x1, got {}x{}",
                width, height
            )));
        }
        if data.len() != width * height {
            return Err(ImageError::InvalidData(format!(
                "data length {} does not match {}x{} = {}",
                data.len(),
                width,
                height,
                width * height
            )));
        }
        if let Some((i, &v)) = data.iter().enumerate().find(|(_, &v)| !in_unit_range(v)) {
            return Err(ImageError::InvalidData(format!(
                "value {} at index {} is outside [0, 1]",
                v, i
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        Self::new(width, height, vec![v; width * height]).expect("invalid fill value")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn shape(&self) -> Shape {
        Shape {
            width: self.width,
            height: self.height,
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Which scalar map multiplies the residual in [`compose_enhanced`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MapSelector {
    /// Multiply the residual by the illumination component `I`.
    #[default]
    Illumination,
    /// Multiply the residual by the attention map `1 - I`.
    SelfRegularized,
}

impl MapSelector {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "illumination" => Some(Self::Illumination),
            "self-regularized" => Some(Self::SelfRegularized),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Illumination => "illumination",
            Self::SelfRegularized => "self-regularized",
        }
    }
}

/// A 4-channel H×W grid: R, G, B, attention. Row-major, pixel-interleaved,
/// so channel `c` of `(x, y)` lives at `(y * width + x) * 4 + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorInput {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GeneratorInput {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Loads a PNG or JPEG from disk; 8-bit channels map to `[0, 1]` by `v / 255`
/// and grayscale inputs are replicated across the three channels.
pub fn load_image(path: &Path) -> Result<RasterImage, ImageError> {
    if !path.exists() {
        return Err(ImageError::Missing(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|source| ImageError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let decoded = ::image::load_from_memory(&bytes).map_err(|source| ImageError::Decode {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.as_raw().iter().map(|&b| f64::from(b) / 255.0).collect();
    RasterImage::new(w as usize, h as usize, data)
}

/// Writes the image as PNG or JPEG depending on the file extension
/// (default PNG). 8-bit values round half away from zero from `v * 255`.
pub fn save_image(img: &RasterImage, path: &Path) -> Result<(), ImageError> {
    let bytes = img.to_rgb8_bytes();
    let buf: ::image::RgbImage =
        ::image::ImageBuffer::from_raw(img.width() as u32, img.height() as u32, bytes)
            .expect("buffer length matches dimensions");
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("jpg") | Some("jpeg") => ::image::ImageFormat::Jpeg,
        _ => ::image::ImageFormat::Png,
    };
    buf.save_with_format(path, format)
        .map_err(|source| ImageError::Encode {
            path: path.to_path_buf(),
            source,
        })
}

/// Per-pixel normalized illumination component: `I(p) = max(R, G, B)`.
pub fn illumination_map(img: &RasterImage) -> ScalarMap {
    let data = img
        .data()
        .chunks_exact(3)
        .map(|px| px[0].max(px[1]).max(px[2]))
        .collect();
    ScalarMap {
        width: img.width(),
        height: img.height(),
        data,
    }
}

/// Element-wise `1 - I`; highlights dark regions. Applying it twice returns
/// the input (within floating-point rounding).
pub fn self_regularized_map(illum: &ScalarMap) -> ScalarMap {
    let data = illum.data().iter().map(|&v| 1.0 - v).collect();
    ScalarMap {
        width: illum.width(),
        height: illum.height(),
        data,
    }
}

/// Multiply-add composition of a residual with the input image:
/// `B = clamp(A' * M + A)` where `M` is either `I` or `1 - I` depending on
/// the selector. All three inputs must share dimensions.
pub fn compose_enhanced(
    input: &RasterImage,
    residual: &RasterImage,
    illum: &ScalarMap,
    multiply_with: MapSelector,
) -> Result<RasterImage, ImageError> {
    if input.shape() != residual.shape() || input.shape() != illum.shape() {
        return Err(ImageError::DimensionMismatch {
            input: input.shape(),
            residual: residual.shape(),
            map: illum.shape(),
        });
    }
    let mut data = Vec::with_capacity(input.data().len());
    for (i, m) in illum.data().iter().enumerate() {
        let factor = match multiply_with {
            MapSelector::Illumination => *m,
            MapSelector::SelfRegularized => 1.0 - *m,
        };
        for c in 0..3 {
            let idx = i * 3 + c;
            let v = residual.data()[idx] * factor + input.data()[idx];
            data.push(v.clamp(0.0, 1.0));
        }
    }
    Ok(RasterImage {
        width: input.width(),
        height: input.height(),
        data,
    })
}

/// Stacks an RGB image with an attention map into the 4-channel generator
/// input grid.
pub fn concat_generator_input(
    input: &RasterImage,
    attention: &ScalarMap,
) -> Result<GeneratorInput, ImageError> {
    if input.shape() != attention.shape() {
        return Err(ImageError::DimensionMismatch {
            input: input.shape(),
            residual: input.shape(),
            map: attention.shape(),
        });
    }
    let mut data = Vec::with_capacity(input.width() * input.height() * 4);
    for (px, &a) in input.data().chunks_exact(3).zip(attention.data()) {
        data.extend_from_slice(px);
        data.push(a);
    }
    Ok(GeneratorInput {
        width: input.width(),
        height: input.height(),
        data,
    })
}
