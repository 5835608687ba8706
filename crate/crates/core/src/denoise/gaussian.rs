use crate::error::{Error, Result};
use crate::plane::ImagePlane;

/// Normalized 1-D Gaussian taps over `[-ceil(3σ), ceil(3σ)]`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// Separable Gaussian blur with edge clamping.
pub fn denoise_gaussian(image: &ImagePlane, sigma: f64) -> Result<ImagePlane> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "gaussian sigma must be positive, got {sigma}"
        )));
    }
    let taps = gaussian_kernel(sigma);
    let r = (taps.len() / 2) as isize;
    let (h, w) = image.dims();
    let src = image.data();

    let mut tmp = vec![0.0f64; h * w];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let xx = (x as isize + k as isize - r).clamp(0, w as isize - 1) as usize;
                acc += t * row[xx] as f64;
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let yy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
                acc += t * tmp[yy * w + x];
            }
            out.push(acc as f32);
        }
    }
    ImagePlane::new(h, w, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nonpositive_sigma() {
        let img = ImagePlane::filled(4, 4, 0.5).unwrap();
        assert!(denoise_gaussian(&img, 0.0).is_err());
        assert!(denoise_gaussian(&img, -1.0).is_err());
    }

    #[test]
    fn constant_is_preserved() {
        let img = ImagePlane::filled(9, 7, 0.3).unwrap();
        let out = denoise_gaussian(&img, 1.7).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.3).abs() < 1e-6));
    }

    #[test]
    fn spike_reproduces_kernel() {
        let n = 15;
        let img = ImagePlane::from_fn(n, n, |y, x| if y == 7 && x == 7 { 1.0 } else { 0.0 }).unwrap();
        let sigma = 1.2f64;
        let out = denoise_gaussian(&img, sigma).unwrap();
        // direct 2-D evaluation of the normalized kernel
        let radius = (3.0 * sigma).ceil() as i64;
        let g = |d: i64| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp();
        let norm: f64 = (-radius..=radius).map(g).sum();
        for y in 0..n {
            for x in 0..n {
                let (dy, dx) = (y as i64 - 7, x as i64 - 7);
                let expected = if dy.abs() <= radius && dx.abs() <= radius {
                    g(dy) * g(dx) / (norm * norm)
                } else {
                    0.0
                };
                assert!((out.get(y, x) as f64 - expected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn small_sigma_is_near_identity_on_smooth_input() {
        let img = ImagePlane::from_fn(16, 16, |y, x| 0.2 + 0.03 * (y + x) as f32).unwrap();
        let out = denoise_gaussian(&img, 0.3).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn small_sigma_deviation_is_bounded_by_off_center_mass() {
        // For arbitrary [0,1] content the change is at most the kernel mass
        // outside the center tap.
        let img = ImagePlane::from_fn(8, 8, |y, x| ((y * 3 + x * 5) % 2) as f32).unwrap();
        let out = denoise_gaussian(&img, 0.3).unwrap();
        let taps = gaussian_kernel(0.3);
        let center = taps[taps.len() / 2];
        let bound = 1.0 - center * center;
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!(((a - b).abs() as f64) <= bound + 1e-6);
        }
    }
}
