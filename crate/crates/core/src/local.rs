//! Box-window statistics over planes. Windows are clipped at the borders:
//! each output is the mean over the in-bounds part of the window.

/// Summed-area table with a zero row and column prepended.
pub(crate) struct Integral {
    width: usize,
    table: Vec<f64>,
}

impl Integral {
    pub(crate) fn new(height: usize, width: usize, values: impl Fn(usize) -> f64) -> Self {
        let stride = width + 1;
        let mut table = vec![0.0; (height + 1) * stride];
        for y in 0..height {
            let mut row = 0.0;
            for x in 0..width {
                row += values(y * width + x);
                table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row;
            }
        }
        Self { width, table }
    }

    /// Sum over rows `y0..y1`, columns `x0..x1` (half-open).
    #[inline]
    pub(crate) fn sum(&self, y0: usize, y1: usize, x0: usize, x1: usize) -> f64 {
        let s = self.width + 1;
        self.table[y1 * s + x1] - self.table[y0 * s + x1] - self.table[y1 * s + x0]
            + self.table[y0 * s + x0]
    }
}

/// Clipped-window means of `values` and `values²` for an odd window.
pub(crate) fn box_moments(
    height: usize,
    width: usize,
    values: &[f64],
    window: usize,
) -> (Vec<f64>, Vec<f64>) {
    let r = window / 2;
    let first = Integral::new(height, width, |i| values[i]);
    let second = Integral::new(height, width, |i| values[i] * values[i]);
    let mut mean = Vec::with_capacity(values.len());
    let mut sq = Vec::with_capacity(values.len());
    for y in 0..height {
        let y0 = y.saturating_sub(r);
        let y1 = (y + r + 1).min(height);
        for x in 0..width {
            let x0 = x.saturating_sub(r);
            let x1 = (x + r + 1).min(width);
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            mean.push(first.sum(y0, y1, x0, x1) / n);
            sq.push(second.sum(y0, y1, x0, x1) / n);
        }
    }
    (mean, sq)
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
