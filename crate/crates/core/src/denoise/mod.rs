//! Denoisers `D` used to extract noise residuals `R = I - D(I)`.
//!
//! Anything implementing [`Denoiser`] plugs into residual extraction; the
//! built-in choices are selected through [`DenoiserConfig`].

mod gaussian;
mod wavelet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plane::ImagePlane;

pub use gaussian::{denoise_gaussian, gaussian_kernel};
pub use wavelet::{denoise_wavelet_wiener, Db4, WaveletDecomposition};

pub trait Denoiser: Send + Sync {
    /// Must return a plane with the same dimensions as `image`.
    fn denoise(&self, image: &ImagePlane) -> Result<ImagePlane>;

    fn name(&self) -> &str;
}

/// Returns its input; residuals come out exactly zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn denoise(&self, image: &ImagePlane) -> Result<ImagePlane> {
        Ok(image.clone())
    }

    fn name(&self) -> &str {
        "identity"
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GaussianDenoiser {
    pub sigma: f64,
}

impl Denoiser for GaussianDenoiser {
    fn denoise(&self, image: &ImagePlane) -> Result<ImagePlane> {
        denoise_gaussian(image, self.sigma)
    }

    fn name(&self) -> &str {
        "gaussian"
    }
}

#[derive(Debug, Clone, Copy)]
pub struct WaveletWienerDenoiser {
    pub levels: usize,
    pub noise_variance: f64,
}

impl Denoiser for WaveletWienerDenoiser {
    fn denoise(&self, image: &ImagePlane) -> Result<ImagePlane> {
        denoise_wavelet_wiener(image, self.levels, self.noise_variance)
    }

    fn name(&self) -> &str {
        "wavelet_wiener"
    }
}

/// Adapter so plain closures can act as denoisers.
pub struct FnDenoiser<F>(pub F);

impl<F> Denoiser for FnDenoiser<F>
where
    F: Fn(&ImagePlane) -> Result<ImagePlane> + Send + Sync,
{
    fn denoise(&self, image: &ImagePlane) -> Result<ImagePlane> {
        (self.0)(image)
    }

    fn name(&self) -> &str {
        "custom"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiserKind {
    WaveletWiener,
    Gaussian,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub kind: DenoiserKind,
    pub wavelet_levels: usize,
    pub noise_variance: f64,
    pub gaussian_sigma: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            kind: DenoiserKind::WaveletWiener,
            wavelet_levels: 4,
            noise_variance: 0.0009,
            gaussian_sigma: 1.0,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            DenoiserKind::WaveletWiener => {
                if self.wavelet_levels == 0 {
                    return Err(Error::Config("wavelet_levels must be >= 1".into()));
                }
                if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
                    return Err(Error::Config("noise_variance must be >= 0".into()));
                }
            }
            DenoiserKind::Gaussian => {
                if !(self.gaussian_sigma > 0.0 && self.gaussian_sigma.is_finite()) {
                    return Err(Error::Config("gaussian_sigma must be > 0".into()));
                }
            }
            DenoiserKind::Identity => {}
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn Denoiser>> {
        self.validate()?;
        Ok(match self.kind {
            DenoiserKind::WaveletWiener => Box::new(WaveletWienerDenoiser {
                levels: self.wavelet_levels,
                noise_variance: self.noise_variance,
            }),
            DenoiserKind::Gaussian => Box::new(GaussianDenoiser {
                sigma: self.gaussian_sigma,
            }),
            DenoiserKind::Identity => Box::new(IdentityDenoiser),
        })
    }
}
