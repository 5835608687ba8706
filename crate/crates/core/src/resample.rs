//! Geometry used by multi-resolution scoring: square reflect padding and
//! bicubic resizing.

use crate::error::{Error, Result};
use crate::plane::ImagePlane;

/// Catmull-Rom parameter of the cubic convolution kernel.
pub const CUBIC_A: f64 = -0.5;

/// Cubic convolution kernel with parameter [`CUBIC_A`].
#[inline]
pub fn cubic_weight(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Mirror index without repeating the edge sample (`d c b | a b c d | c b a`).
#[inline]
fn reflect(i: usize, n: usize) -> usize {
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Pads to a `max(h, w)` square with the original anchored top-left.
pub fn pad_reflect_square(image: &ImagePlane) -> Result<ImagePlane> {
    let (h, w) = image.dims();
    if h < 2 || w < 2 {
        return Err(Error::InvalidArgument(format!(
            "reflect padding needs at least 2 pixels per side, got {h}x{w}"
        )));
    }
    if h == w {
        return Ok(image.clone());
    }
    let side = h.max(w);
    ImagePlane::from_fn(side, side, |y, x| image.get(reflect(y, h), reflect(x, w)))
}

struct Taps {
    index: [usize; 4],
    weight: [f64; 4],
}

fn taps(dst_len: usize, src_len: usize) -> Vec<Taps> {
    let scale = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|d| {
            let center = (d as f64 + 0.5) * scale - 0.5;
            let base = center.floor();
            let t = center - base;
            let mut index = [0; 4];
            let mut weight = [0.0; 4];
            for k in 0..4 {
                let off = k as f64 - 1.0;
                let pos = base as i64 + k as i64 - 1;
                index[k] = pos.clamp(0, src_len as i64 - 1) as usize;
                weight[k] = cubic_weight(t - off);
            }
            Taps { index, weight }
        })
        .collect()
}

/// Separable bicubic resize with edge clamping.
///
/// Equal source and target dimensions return the input unchanged. Luminance
/// inputs produce outputs clamped to `[0, 1]`.
pub fn resize_bicubic(image: &ImagePlane, target: (usize, usize)) -> Result<ImagePlane> {
    let (th, tw) = target;
    if th < 4 || tw < 4 {
        return Err(Error::InvalidArgument(format!(
            "resize target must be at least 4x4, got {th}x{tw}"
        )));
    }
    if image.dims() == target {
        return Ok(image.clone());
    }
    let (h, w) = image.dims();
    let clamp = image.is_luminance();
    let src = image.data();
    let col_taps = taps(tw, w);
    let row_taps = taps(th, h);

    let mut tmp = vec![0.0f64; h * tw];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for (x, t) in col_taps.iter().enumerate() {
            tmp[y * tw + x] = (0..4).map(|k| t.weight[k] * row[t.index[k]] as f64).sum();
        }
    }
    let mut out = Vec::with_capacity(th * tw);
    for t in &row_taps {
        for x in 0..tw {
            let v: f64 = (0..4).map(|k| t.weight[k] * tmp[t.index[k] * tw + x]).sum();
            out.push(if clamp { v.clamp(0.0, 1.0) } else { v } as f32);
        }
    }
    ImagePlane::new(th, tw, out)
}

/// Brings an image to `target`: reflect-pad to square, then resize.
pub fn prepare_level(image: &ImagePlane, target: (usize, usize)) -> Result<ImagePlane> {
    let square = pad_reflect_square(image)?;
    resize_bicubic(&square, target)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_partition_of_unity() {
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            let s: f64 = (-1..=2).map(|k| cubic_weight(t - k as f64)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(cubic_weight(0.0), 1.0);
        assert_eq!(cubic_weight(1.0), 0.0);
        assert_eq!(cubic_weight(2.0), 0.0);
    }

    #[test]
    fn square_input_is_unchanged() {
        let img = ImagePlane::from_fn(3, 3, |y, x| (y * 3 + x) as f32 / 9.0).unwrap();
        assert_eq!(pad_reflect_square(&img).unwrap(), img);
    }

    #[test]
    fn wide_image_reflects_rows() {
        let img = ImagePlane::new(2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let out = pad_reflect_square(&img).unwrap();
        assert_eq!(out.dims(), (3, 3));
        assert_eq!(
            out.data(),
            &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.1, 0.2, 0.3]
        );
    }

    #[test]
    fn tall_image_reflects_columns() {
        let img = ImagePlane::new(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let out = pad_reflect_square(&img).unwrap();
        assert_eq!(out.dims(), (3, 3));
        for y in 0..3 {
            assert_eq!(out.get(y, 0), img.get(y, 0));
            assert_eq!(out.get(y, 1), img.get(y, 1));
            assert_eq!(out.get(y, 2), img.get(y, 0));
        }
    }

    #[test]
    fn long_padding_keeps_reflecting() {
        // 2 rows padded to 5: rows 0 1 0 1 0
        let img = ImagePlane::from_fn(2, 5, |y, x| (y * 5 + x) as f32 / 10.0).unwrap();
        let out = pad_reflect_square(&img).unwrap();
        for y in 0..5 {
            for x in 0..5 {
                assert_eq!(out.get(y, x), img.get(y % 2, x));
            }
        }
    }

    #[test]
    fn degenerate_dims_rejected() {
        let img = ImagePlane::filled(1, 4, 0.5).unwrap();
        assert!(pad_reflect_square(&img).is_err());
    }

    #[test]
    fn resize_identity_and_constants() {
        let img = ImagePlane::from_fn(7, 9, |y, x| ((y * 9 + x) % 5) as f32 / 5.0).unwrap();
        assert_eq!(resize_bicubic(&img, (7, 9)).unwrap(), img);
        let c = ImagePlane::filled(10, 13, 0.6).unwrap();
        for target in [(4, 4), (5, 17), (20, 26)] {
            let out = resize_bicubic(&c, target).unwrap();
            assert_eq!(out.dims(), target);
            assert!(out.data().iter().all(|v| (v - 0.6).abs() < 1e-6));
        }
        assert!(resize_bicubic(&c, (3, 8)).is_err());
    }

    #[test]
    fn ramp_downsample_matches_scalar_oracle() {
        let img = ImagePlane::from_fn(8, 8, |y, x| (y * 8 + x) as f32 / 63.0).unwrap();
        let out = resize_bicubic(&img, (4, 4)).unwrap();
        // independent 2-D evaluation of the same kernel
        let k = |x: f64| {
            let x = x.abs();
            if x <= 1.0 {
                1.5 * x.powi(3) - 2.5 * x.powi(2) + 1.0
            } else if x < 2.0 {
                -0.5 * x.powi(3) + 2.5 * x.powi(2) - 4.0 * x + 2.0
            } else {
                0.0
            }
        };
        for oy in 0..4 {
            for ox in 0..4 {
                let sy = (oy as f64 + 0.5) * 2.0 - 0.5;
                let sx = (ox as f64 + 0.5) * 2.0 - 0.5;
                let mut acc = 0.0;
                for iy in (sy.floor() as i64 - 1)..=(sy.floor() as i64 + 2) {
                    for ix in (sx.floor() as i64 - 1)..=(sx.floor() as i64 + 2) {
                        let wgt = k(sy - iy as f64) * k(sx - ix as f64);
                        let py = iy.clamp(0, 7) as usize;
                        let px = ix.clamp(0, 7) as usize;
                        acc += wgt * img.get(py, px) as f64;
                    }
                }
                let expected = acc.clamp(0.0, 1.0);
                assert!(
                    (out.get(oy, ox) as f64 - expected).abs() < 1e-6,
                    "({oy},{ox})"
                );
            }
        }
    }

    #[test]
    fn luminance_output_is_clamped() {
        // a sharp step overshoots with a negative-lobe kernel
        let img = ImagePlane::from_fn(8, 8, |_, x| if x < 4 { 0.0 } else { 1.0 }).unwrap();
        let out = resize_bicubic(&img, (8, 13)).unwrap();
        assert!(out.is_luminance());
        let signed = ImagePlane::from_fn(8, 8, |_, x| if x < 4 { -1.0 } else { 1.0 }).unwrap();
        let out = resize_bicubic(&signed, (8, 13)).unwrap();
        assert!(out.data().iter().any(|v| *v > 1.0));
    }
}
