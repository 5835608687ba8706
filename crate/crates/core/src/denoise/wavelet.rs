//! Orthogonal 2-D Daubechies-4 decomposition and the local-variance Wiener
//! shrinkage of its detail subbands.

use crate::error::{Error, Result};
use crate::local::Integral;
use crate::plane::ImagePlane;

/// Window sizes whose minimum local variance drives the shrinkage.
const WIENER_WINDOWS: [usize; 4] = [3, 5, 7, 9];

/// Daubechies wavelet with four vanishing moments (8 taps).
pub struct Db4;

impl Db4 {
    /// Scaling (low-pass) filter, unit norm.
    pub const LOW: [f64; 8] = [
        0.230_377_813_308_855_23,
        0.714_846_570_552_541_5,
        0.630_880_767_929_590_4,
        -0.027_983_769_416_983_85,
        -0.187_034_811_718_881_14,
        0.030_841_381_835_986_965,
        0.032_883_011_666_982_945,
        -0.010_597_401_784_997_278,
    ];

    /// Quadrature mirror of [`Db4::LOW`].
    pub fn high() -> [f64; 8] {
        let mut g = [0.0; 8];
        for (k, v) in g.iter_mut().enumerate() {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            *v = sign * Self::LOW[7 - k];
        }
        g
    }
}

/// Periodized single-level analysis of an even-length signal.
fn analyze(input: &[f64], approx: &mut [f64], detail: &mut [f64], high: &[f64; 8]) {
    let n = input.len();
    for i in 0..n / 2 {
        let (mut a, mut d) = (0.0, 0.0);
        for k in 0..8 {
            let v = input[(2 * i + k) % n];
            a += Db4::LOW[k] * v;
            d += high[k] * v;
        }
        approx[i] = a;
        detail[i] = d;
    }
}

/// Adjoint of [`analyze`]; exact inverse because the transform is orthogonal.
fn synthesize(approx: &[f64], detail: &[f64], out: &mut [f64], high: &[f64; 8]) {
    let n = out.len();
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n / 2 {
        for k in 0..8 {
            out[(2 * i + k) % n] += Db4::LOW[k] * approx[i] + high[k] * detail[i];
        }
    }
}

/// Rectangle of one subband inside the Mallat coefficient layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Band {
    pub level: usize,
    pub y0: usize,
    pub x0: usize,
    pub height: usize,
    pub width: usize,
}

/// Multi-level 2-D decomposition stored in the usual Mallat layout: the
/// coarsest approximation sits in the top-left corner.
#[derive(Debug, Clone)]
pub struct WaveletDecomposition {
    height: usize,
    width: usize,
    levels: usize,
    coeffs: Vec<f64>,
}

impl WaveletDecomposition {
    /// Both dimensions must be divisible by `2^levels`.
    pub fn forward(data: &[f64], height: usize, width: usize, levels: usize) -> Result<Self> {
        let block = 1usize << levels;
        if levels == 0 || height % block != 0 || width % block != 0 {
            return Err(Error::InvalidArgument(format!(
                "{height}x{width} is not divisible by 2^{levels}"
            )));
        }
        let high = Db4::high();
        let mut coeffs = data.to_vec();
        let (mut h, mut w) = (height, width);
        let mut line = vec![0.0; height.max(width)];
        let mut lo = vec![0.0; height.max(width) / 2];
        let mut hi = vec![0.0; height.max(width) / 2];
        for _ in 0..levels {
            for y in 0..h {
                let row = &mut coeffs[y * width..y * width + w];
                line[..w].copy_from_slice(row);
                analyze(&line[..w], &mut lo[..w / 2], &mut hi[..w / 2], &high);
                row[..w / 2].copy_from_slice(&lo[..w / 2]);
                row[w / 2..].copy_from_slice(&hi[..w / 2]);
            }
            for x in 0..w {
                for y in 0..h {
                    line[y] = coeffs[y * width + x];
                }
                analyze(&line[..h], &mut lo[..h / 2], &mut hi[..h / 2], &high);
                for y in 0..h / 2 {
                    coeffs[y * width + x] = lo[y];
                    coeffs[(y + h / 2) * width + x] = hi[y];
                }
            }
            h /= 2;
            w /= 2;
        }
        Ok(Self {
            height,
            width,
            levels,
            coeffs,
        })
    }

    pub fn inverse(&self) -> Vec<f64> {
        let high = Db4::high();
        let mut coeffs = self.coeffs.clone();
        let width = self.width;
        let mut line = vec![0.0; self.height.max(width)];
        let mut lo = vec![0.0; self.height.max(width) / 2];
        let mut hi = vec![0.0; self.height.max(width) / 2];
        for level in (1..=self.levels).rev() {
            let h = self.height >> (level - 1);
            let w = self.width >> (level - 1);
            for x in 0..w {
                for y in 0..h / 2 {
                    lo[y] = coeffs[y * width + x];
                    hi[y] = coeffs[(y + h / 2) * width + x];
                }
                synthesize(&lo[..h / 2], &hi[..h / 2], &mut line[..h], &high);
                for y in 0..h {
                    coeffs[y * width + x] = line[y];
                }
            }
            for y in 0..h {
                let row = &mut coeffs[y * width..y * width + w];
                lo[..w / 2].copy_from_slice(&row[..w / 2]);
                hi[..w / 2].copy_from_slice(&row[w / 2..]);
                synthesize(&lo[..w / 2], &hi[..w / 2], &mut line[..w], &high);
                row.copy_from_slice(&line[..w]);
            }
        }
        coeffs
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// The three detail subbands of every level, finest first.
    pub fn detail_bands(&self) -> Vec<Band> {
        let mut bands = Vec::with_capacity(3 * self.levels);
        for level in 1..=self.levels {
            let hh = self.height >> level;
            let hw = self.width >> level;
            for (y0, x0) in [(0, hw), (hh, 0), (hh, hw)] {
                bands.push(Band {
                    level,
                    y0,
                    x0,
                    height: hh,
                    width: hw,
                });
            }
        }
        bands
    }

    pub fn band(&self, band: Band) -> Vec<f64> {
        let mut out = Vec::with_capacity(band.height * band.width);
        for y in band.y0..band.y0 + band.height {
            out.extend_from_slice(&self.coeffs[y * self.width + band.x0..][..band.width]);
        }
        out
    }

    fn set_band(&mut self, band: Band, values: &[f64]) {
        for (r, y) in (band.y0..band.y0 + band.height).enumerate() {
            self.coeffs[y * self.width + band.x0..][..band.width]
                .copy_from_slice(&values[r * band.width..][..band.width]);
        }
    }
}

/// Local-variance Wiener shrinkage of one subband: each coefficient is
/// scaled by `s / (s + noise)` where `s` is the smallest of the windowed
/// signal-variance estimates `max(0, mean(c²) - noise)`.
pub(crate) fn shrink_band(values: &[f64], height: usize, width: usize, noise_variance: f64) -> Vec<f64> {
    if noise_variance == 0.0 {
        return values.to_vec();
    }
    let energy = Integral::new(height, width, |i| values[i] * values[i]);
    let mut out = Vec::with_capacity(values.len());
    for y in 0..height {
        for x in 0..width {
            let mut signal = f64::INFINITY;
            for win in WIENER_WINDOWS {
                let r = win / 2;
                let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(height));
                let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(width));
                let n = ((y1 - y0) * (x1 - x0)) as f64;
                let est = (energy.sum(y0, y1, x0, x1) / n - noise_variance).max(0.0);
                signal = signal.min(est);
            }
            out.push(values[y * width + x] * signal / (signal + noise_variance));
        }
    }
    out
}

/// Edge-inclusive mirror index for `i` in an extended signal of length `n`.
fn mirror(i: usize, n: usize) -> usize {
    let m = i % (2 * n);
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

/// Wavelet-domain Wiener denoiser.
///
/// The image is symmetrically extended to the next multiple of
/// `2^levels`, decomposed, its detail subbands shrunk, reconstructed and
/// cropped back. The approximation band is left untouched.
pub fn denoise_wavelet_wiener(
    image: &ImagePlane,
    levels: usize,
    noise_variance: f64,
) -> Result<ImagePlane> {
    if levels == 0 {
        return Err(Error::InvalidArgument("wavelet levels must be >= 1".into()));
    }
    if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise variance must be >= 0, got {noise_variance}"
        )));
    }
    let (h, w) = image.dims();
    let min_side = 1usize << (levels + 2);
    if h < min_side || w < min_side {
        return Err(Error::InvalidArgument(format!(
            "{h}x{w} image is too small for {levels} wavelet levels (need {min_side} per side)"
        )));
    }
    let block = 1usize << levels;
    let ph = h.div_ceil(block) * block;
    let pw = w.div_ceil(block) * block;
    let src = image.data();
    let mut padded = Vec::with_capacity(ph * pw);
    for y in 0..ph {
        let sy = mirror(y, h);
        for x in 0..pw {
            padded.push(src[sy * w + mirror(x, w)] as f64);
        }
    }

    let mut dec = WaveletDecomposition::forward(&padded, ph, pw, levels)?;
    for band in dec.detail_bands() {
        let vals = dec.band(band);
        let shrunk = shrink_band(&vals, band.height, band.width, noise_variance);
        dec.set_band(band, &shrunk);
    }
    let rec = dec.inverse();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        out.extend(rec[y * pw..y * pw + w].iter().map(|v| *v as f32));
    }
    ImagePlane::new(h, w, out)
}
