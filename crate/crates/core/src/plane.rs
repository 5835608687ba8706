//! Single-channel planes: luminance images, noise residuals and sensor
//! fingerprints. Storage is `f32`; every reduction over a plane is carried
//! out in `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// BT.601 luma weights.
pub const BT601_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

fn check_data(height: usize, width: usize, data: &[f32]) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidPlane(format!(
            "zero-sized plane {height}x{width}"
        )));
    }
    if data.len() != height * width {
        return Err(Error::InvalidPlane(format!(
            "data length {} does not match {height}x{width}",
            data.len()
        )));
    }
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidPlane(format!(
            "non-finite value at index {pos}"
        )));
    }
    Ok(())
}

/// A single-channel image in row-major order.
///
/// Luminance planes (built with [`ImagePlane::luminance`]) hold values in
/// `[0, 1]`. Intermediate planes such as Hadamard products reuse the type
/// with unbounded values.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImagePlane {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_data(height, width, &data)?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds a plane and checks that every value lies in `[0, 1]`.
    pub fn luminance(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let plane = Self::new(height, width, data)?;
        if !plane.is_luminance() {
            return Err(Error::InvalidPlane(
                "luminance values must lie in [0, 1]".into(),
            ));
        }
        Ok(plane)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn is_luminance(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn mean(&self) -> f64 {
        mean_f64(&self.data)
    }

    pub fn variance(&self) -> f64 {
        variance_f64(&self.data)
    }

    /// Loads an 8- or 16-bit PNG and converts it to luminance.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        match img {
            image::DynamicImage::ImageLuma8(buf) => Self::luminance(
                h,
                w,
                buf.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
            ),
            image::DynamicImage::ImageLuma16(buf) => Self::luminance(
                h,
                w,
                buf.into_raw()
                    .into_iter()
                    .map(|v| v as f32 / 65535.0)
                    .collect(),
            ),
            image::DynamicImage::ImageRgb8(_) | image::DynamicImage::ImageRgba8(_) => {
                let rgb = img.to_rgb8();
                let planes = split_channels(h, w, rgb.as_raw(), |v| v as f32 / 255.0)?;
                to_luminance(&planes, BT601_WEIGHTS)
            }
            other => {
                let rgb = other.to_rgb16();
                let planes = split_channels(h, w, rgb.as_raw(), |v| v as f32 / 65535.0)?;
                to_luminance(&planes, BT601_WEIGHTS)
            }
        }
    }

    /// Writes the plane as a 16-bit grayscale PNG. Values are clamped to
    /// `[0, 1]` before quantization.
    pub fn save_png16(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let raw: Vec<u16> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
            .collect();
        let buf: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
            image::ImageBuffer::from_raw(self.width as u32, self.height as u32, raw)
                .ok_or_else(|| Error::InvalidPlane("buffer size mismatch".into()))?;
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    }
}

fn split_channels<T: Copy>(
    h: usize,
    w: usize,
    raw: &[T],
    norm: impl Fn(T) -> f32,
) -> Result<[ImagePlane; 3]> {
    let mut chans = [
        Vec::with_capacity(h * w),
        Vec::with_capacity(h * w),
        Vec::with_capacity(h * w),
    ];
    for px in raw.chunks_exact(3) {
        for c in 0..3 {
            chans[c].push(norm(px[c]));
        }
    }
    let [r, g, b] = chans;
    Ok([
        ImagePlane::new(h, w, r)?,
        ImagePlane::new(h, w, g)?,
        ImagePlane::new(h, w, b)?,
    ])
}

/// Weighted per-pixel sum of three channels.
pub fn to_luminance(channels: &[ImagePlane; 3], weights: [f64; 3]) -> Result<ImagePlane> {
    let dims = channels[0].dims();
    for c in &channels[1..] {
        if c.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                actual: c.dims(),
            });
        }
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || weights.iter().any(|w| *w < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "luminance weights must be nonnegative and sum to 1, got {weights:?}"
        )));
    }
    let data = (0..dims.0 * dims.1)
        .map(|i| {
            let v = weights[0] * channels[0].data[i] as f64
                + weights[1] * channels[1].data[i] as f64
                + weights[2] * channels[2].data[i] as f64;
            v.clamp(0.0, 1.0) as f32
        })
        .collect();
    ImagePlane::new(dims.0, dims.1, data)
}

/// Noise residual of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPlane {
    height: usize,
    width: usize,
    data: Vec<f32>,
    source_id: String,
}

impl ResidualPlane {
    pub fn new(
        height: usize,
        width: usize,
        data: Vec<f32>,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        check_data(height, width, &data)?;
        Ok(Self {
            height,
            width,
            data,
            source_id: source_id.into(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }

    /// Elementwise scaling; handy for linearity checks.
    pub fn scaled(&self, c: f32) -> Result<Self> {
        Self::new(
            self.height,
            self.width,
            self.data.iter().map(|v| v * c).collect(),
            self.source_id.clone(),
        )
    }
}

/// Per-sensor PRNU estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    pub(crate) sensor_id: String,
    pub(crate) height: usize,
    pub(crate) width: usize,
    pub(crate) data: Vec<f32>,
    pub(crate) n_images: u32,
    pub(crate) wiener_applied: bool,
    pub(crate) resolution_tag: (usize, usize),
}

impl Fingerprint {
    pub fn new(
        sensor_id: impl Into<String>,
        height: usize,
        width: usize,
        data: Vec<f32>,
        n_images: u32,
        wiener_applied: bool,
        resolution_tag: (usize, usize),
    ) -> Result<Self> {
        check_data(height, width, &data)?;
        if n_images == 0 {
            return Err(Error::InvalidArgument(
                "fingerprint must be estimated from at least one image".into(),
            ));
        }
        Ok(Self {
            sensor_id: sensor_id.into(),
            height,
            width,
            data,
            n_images,
            wiener_applied,
            resolution_tag,
        })
    }

    /// Wraps a residual as a single-image fingerprint.
    pub fn from_residual(sensor_id: impl Into<String>, res: &ResidualPlane) -> Self {
        Self {
            sensor_id: sensor_id.into(),
            height: res.height,
            width: res.width,
            data: res.data.clone(),
            n_images: 1,
            wiener_applied: false,
            resolution_tag: res.dims(),
        }
    }

    pub fn sensor_id(&self) -> &str {
        &self.sensor_id
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn n_images(&self) -> u32 {
        self.n_images
    }

    pub fn wiener_applied(&self) -> bool {
        self.wiener_applied
    }

    pub fn resolution_tag(&self) -> (usize, usize) {
        self.resolution_tag
    }
}

/// Ordered set of `(height, width)` levels used by multi-resolution scoring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionSpec {
    levels: Vec<(usize, usize)>,
}

impl ResolutionSpec {
    pub fn new(levels: Vec<(usize, usize)>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Config("at least one resolution is required".into()));
        }
        if let Some(bad) = levels.iter().find(|(h, w)| *h == 0 || *w == 0) {
            return Err(Error::Config(format!("resolution {bad:?} has a zero side")));
        }
        Ok(Self { levels })
    }

    pub fn single(h: usize, w: usize) -> Result<Self> {
        Self::new(vec![(h, w)])
    }

    /// Parses `"1024x1024,1400x1400"`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut levels = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (h, w) = part
                .split_once(['x', 'X'])
                .ok_or_else(|| Error::Config(format!("bad resolution {part:?}, want HxW")))?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad resolution {part:?}, want HxW")))
            };
            levels.push((parse(h)?, parse(w)?));
        }
        Self::new(levels)
    }

    pub fn levels(&self) -> &[(usize, usize)] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// The level with the largest side, which always gets weight 1.
    pub fn largest(&self) -> (usize, usize) {
        *self
            .levels
            .iter()
            .max_by_key(|(h, w)| (*h).max(*w))
            .expect("nonempty")
    }

    pub fn to_arg(&self) -> String {
        self.levels
            .iter()
            .map(|(h, w)| format!("{h}x{w}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

pub(crate) fn mean_f64(data: &[f32]) -> f64 {
    data.iter().map(|v| *v as f64).sum::<f64>() / data.len() as f64
}

pub(crate) fn variance_f64(data: &[f32]) -> f64 {
    let m = mean_f64(data);
    data.iter()
        .map(|v| {
            let d = *v as f64 - m;
            d * d
        })
        .sum::<f64>()
        / data.len() as f64
}
