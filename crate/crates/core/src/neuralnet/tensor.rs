//! Activation containers: single samples and batched activations.
//!
//! Layout is channel-last row-major: flat index (y * w + x) * c + ch. A batch
//! is a single (batch*h*w, c) matrix, so per-sample blocks stay contiguous
//! and conv/FC layers reduce to GEMMs.

use ndarray::{Array1, Array2};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c, data: vec![0.0; h * w * c] }
    }

    pub fn from_vec(h: usize, w: usize, c: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), h * w * c);
        Self { h, w, c, data }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, ch: usize) -> f64 {
        self.data[(y * self.w + x) * self.c + ch]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, ch: usize, v: f64) {
        self.data[(y * self.w + x) * self.c + ch] = v;
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }
}

/// Batched activations: rows ordered (sample, y, x), columns are channels.
#[derive(Debug, Clone)]
pub struct Batch3 {
    pub batch: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub a: Array2<f64>,
}

impl Batch3 {
    pub fn zeros(batch: usize, h: usize, w: usize, c: usize) -> Self {
        Self { batch, h, w, c, a: Array2::zeros((batch * h * w, c)) }
    }

    pub fn from_array(batch: usize, h: usize, w: usize, c: usize, a: Array2<f64>) -> Self {
        assert_eq!(a.dim(), (batch * h * w, c));
        Self { batch, h, w, c, a: standardize(a) }
    }

    /// Gather selected samples into one contiguous batch.
    pub fn gather(samples: &[Tensor3], indices: &[usize]) -> Self {
        assert!(!indices.is_empty());
        let (h, w, c) = samples[indices[0]].shape();
        let stride = h * w * c;
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            debug_assert_eq!(samples[i].shape(), (h, w, c));
            data.extend_from_slice(&samples[i].data);
        }
        let a = Array2::from_shape_vec((indices.len() * h * w, c), data).unwrap();
        Self { batch: indices.len(), h, w, c, a }
    }

    /// One sample's block as a Tensor3 copy.
    pub fn sample(&self, i: usize) -> Tensor3 {
        let stride = self.h * self.w;
        let rows = self.a.slice(ndarray::s![i * stride..(i + 1) * stride, ..]);
        let data: Vec<f64> = rows.iter().cloned().collect();
        Tensor3::from_vec(self.h, self.w, self.c, data)
    }
}

/// Im2col for a 3x3 stride-1 zero-padded ("same") convolution.
///
/// Output rows match the batch layout; column (dy*3+dx)*c + ch holds the
/// input value at offset (dy-1, dx-1) or zero outside the image.
pub fn im2col(input: &Batch3) -> Array2<f64> {
    let (b, h, w, c) = (input.batch, input.h, input.w, input.c);
    let src = input.a.as_slice().expect("contiguous batch");
    let mut out = Array2::<f64>::zeros((b * h * w, 9 * c));
    {
        let dst = out.as_slice_mut().unwrap();
        let row_len = 9 * c;
        for bi in 0..b {
            for y in 0..h {
                for dy in 0..3usize {
                    let sy = match (y + dy).checked_sub(1) {
                        Some(sy) if sy < h => sy,
                        _ => continue,
                    };
                    for x in 0..w {
                        let row = (bi * h + y) * w + x;
                        for dx in 0..3usize {
                            let sx = match (x + dx).checked_sub(1) {
                                Some(sx) if sx < w => sx,
                                _ => continue,
                            };
                            let s = ((bi * h + sy) * w + sx) * c;
                            let d = row * row_len + (dy * 3 + dx) * c;
                            dst[d..d + c].copy_from_slice(&src[s..s + c]);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatter-add patch gradients back onto the input grid.
pub fn col2im(cols: &Array2<f64>, batch: usize, h: usize, w: usize, c: usize) -> Array2<f64> {
    assert_eq!(cols.dim(), (batch * h * w, 9 * c));
    let src = cols.as_slice().expect("contiguous cols");
    let mut out = Array2::<f64>::zeros((batch * h * w, c));
    {
        let dst = out.as_slice_mut().unwrap();
        let row_len = 9 * c;
        for bi in 0..batch {
            for y in 0..h {
                for dy in 0..3usize {
                    let sy = match (y + dy).checked_sub(1) {
                        Some(sy) if sy < h => sy,
                        _ => continue,
                    };
                    for x in 0..w {
                        let row = (bi * h + y) * w + x;
                        for dx in 0..3usize {
                            let sx = match (x + dx).checked_sub(1) {
                                Some(sx) if sx < w => sx,
                                _ => continue,
                            };
                            let d = ((bi * h + sy) * w + sx) * c;
                            let s = row * row_len + (dy * 3 + dx) * c;
                            for ch in 0..c {
                                dst[d + ch] += src[s + ch];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Force row-major standard layout. GEMM results with a unit dimension can
/// come back column-major, which breaks the flat-slice views used everywhere.
pub fn standardize(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        let dim = a.dim();
        Array2::from_shape_vec(dim, a.iter().cloned().collect()).unwrap()
    }
}

/// Column sums as a bias-gradient helper.
pub fn column_sums(m: &Array2<f64>) -> Array1<f64> {
    m.sum_axis(ndarray::Axis(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_center_tap_is_identity() {
        let mut t = Tensor3::zeros(3, 3, 2);
        for y in 0..3 {
            for x in 0..3 {
                for ch in 0..2 {
                    t.set(y, x, ch, (y * 10 + x) as f64 + ch as f64 * 0.5);
                }
            }
        }
        let batch = Batch3::gather(&[t.clone()], &[0]);
        let cols = im2col(&batch);
        // Center tap (dy=1, dx=1) columns reproduce the input.
        for row in 0..9 {
            for ch in 0..2 {
                assert_eq!(cols[(row, (1 * 3 + 1) * 2 + ch)], batch.a[(row, ch)]);
            }
        }
        // Top-left tap of the top-left pixel is zero padding.
        assert_eq!(cols[(0, 0)], 0.0);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y.
        let mut rng = crate::numerics::RngStream::derive(1, "test/col", 0);
        let (b, h, w, c) = (2, 4, 3, 2);
        let x = Batch3::from_array(
            b,
            h,
            w,
            c,
            Array2::from_shape_fn((b * h * w, c), |_| rng.standard_normal()),
        );
        let y = Array2::from_shape_fn((b * h * w, 9 * c), |_| rng.standard_normal());
        let lhs: f64 = (&im2col(&x) * &y).sum();
        let rhs: f64 = (&x.a * &col2im(&y, b, h, w, c)).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
