//! Residual extraction and fingerprint estimation.

use crate::denoise::Denoiser;
use crate::error::{Error, Result};
use crate::local::{box_moments, median};
use crate::plane::{Fingerprint, ImagePlane, ResidualPlane};

/// Default Wiener post-filter window.
pub const DEFAULT_WIENER_WINDOW: usize = 3;

/// `R = I - D(I)`.
pub fn extract_residual(
    image: &ImagePlane,
    denoiser: &dyn Denoiser,
    source_id: impl Into<String>,
) -> Result<ResidualPlane> {
    let denoised = denoiser.denoise(image)?;
    if denoised.dims() != image.dims() {
        return Err(Error::DimensionMismatch {
            expected: image.dims(),
            actual: denoised.dims(),
        });
    }
    let data = image
        .data()
        .iter()
        .zip(denoised.data())
        .map(|(i, d)| i - d)
        .collect();
    ResidualPlane::new(image.height(), image.width(), data, source_id)
}

/// Averages residuals into a fingerprint.
///
/// Residuals are accumulated in `f64` in ascending `source_id` order (ties
/// broken by content), so the result does not depend on input order.
pub fn estimate_fingerprint(
    residuals: &[ResidualPlane],
    sensor_id: impl Into<String>,
) -> Result<Fingerprint> {
    let first = residuals
        .first()
        .ok_or(Error::EmptyInput("no residuals to average"))?;
    let dims = first.dims();
    if let Some(bad) = residuals.iter().find(|r| r.dims() != dims) {
        return Err(Error::DimensionMismatch {
            expected: dims,
            actual: bad.dims(),
        });
    }
    let mut order: Vec<&ResidualPlane> = residuals.iter().collect();
    order.sort_by(|a, b| {
        a.source_id().cmp(b.source_id()).then_with(|| {
            a.data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let mut acc = vec![0.0f64; dims.0 * dims.1];
    for r in order {
        for (a, v) in acc.iter_mut().zip(r.data()) {
            *a += *v as f64;
        }
    }
    let n = residuals.len() as f64;
    let data = acc.into_iter().map(|v| (v / n) as f32).collect();
    Fingerprint::new(
        sensor_id,
        dims.0,
        dims.1,
        data,
        residuals.len() as u32,
        false,
        dims,
    )
}

/// Adaptive spatial Wiener filter over a square window.
///
/// Each pixel becomes `m + (1 - ν/v)(x - m)` where `m`, `v` are the local
/// mean and variance; where `v <= ν` the local mean is used. When
/// `noise_variance` is `None`, ν is the median of the local variances.
pub fn wiener_postfilter(
    fp: &Fingerprint,
    window: usize,
    noise_variance: Option<f64>,
) -> Result<Fingerprint> {
    if fp.wiener_applied {
        return Err(Error::InvalidArgument(format!(
            "fingerprint {} is already Wiener filtered",
            fp.sensor_id
        )));
    }
    if window < 3 || window % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "Wiener window must be odd and >= 3, got {window}"
        )));
    }
    if let Some(nv) = noise_variance {
        if !(nv > 0.0 && nv.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be positive, got {nv}"
            )));
        }
    }
    let (h, w) = fp.dims();
    let values: Vec<f64> = fp.data.iter().map(|v| *v as f64).collect();
    let (mean, sq) = box_moments(h, w, &values, window);
    let var: Vec<f64> = mean
        .iter()
        .zip(&sq)
        .map(|(m, s)| (s - m * m).max(0.0))
        .collect();
    let nv = match noise_variance {
        Some(v) => v,
        None => median(&mut var.clone()),
    };
    let data = values
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let (m, v) = (mean[i], var[i]);
            let out = if v <= nv { m } else { m + (1.0 - nv / v) * (x - m) };
            out as f32
        })
        .collect();
    Fingerprint::new(
        fp.sensor_id.clone(),
        h,
        w,
        data,
        fp.n_images,
        true,
        fp.resolution_tag,
    )
}
