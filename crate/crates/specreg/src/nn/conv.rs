//! Explicit patch extraction (im2col) turning a 2-D convolution into a
//! matrix multiply by the matricized kernel.

/// Geometry of one conv layer applied to a fixed input size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_h: usize,
    pub in_w: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.padding - self.k_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.padding - self.k_w) / self.stride + 1
    }

    /// Rows of the patch matrix: receptive-field size a*k_h*k_w.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.k_h * self.k_w
    }

    /// Number of output positions.
    pub fn num_patches(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

/// Lays out input patches as a (patch_len x num_patches) column-major-by-
/// patch matrix: column p holds the receptive field of output position p,
/// ordered channel-major, then kernel row, then kernel column.
pub fn im2col(geom: &ConvGeom, input: &[f64], out: &mut [f64]) {
    debug_assert_eq!(input.len(), geom.in_channels * geom.in_h * geom.in_w);
    debug_assert_eq!(out.len(), geom.patch_len() * geom.num_patches());
    let (oh, ow) = (geom.out_h(), geom.out_w());
    let np = oh * ow;
    let pad = geom.padding as isize;
    for c in 0..geom.in_channels {
        let chan = &input[c * geom.in_h * geom.in_w..(c + 1) * geom.in_h * geom.in_w];
        for kr in 0..geom.k_h {
            for kc in 0..geom.k_w {
                let row = (c * geom.k_h + kr) * geom.k_w + kc;
                let dst = &mut out[row * np..(row + 1) * np];
                for oy in 0..oh {
                    let iy = oy as isize * geom.stride as isize + kr as isize - pad;
                    for ox in 0..ow {
                        let ix = ox as isize * geom.stride as isize + kc as isize - pad;
                        let p = oy * ow + ox;
                        dst[p] = if iy >= 0
                            && iy < geom.in_h as isize
                            && ix >= 0
                            && ix < geom.in_w as isize
                        {
                            chan[iy as usize * geom.in_w + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col`: scatters patch-matrix gradients back onto the
/// input layout, accumulating overlaps.
pub fn col2im(geom: &ConvGeom, cols: &[f64], input_grad: &mut [f64]) {
    debug_assert_eq!(cols.len(), geom.patch_len() * geom.num_patches());
    debug_assert_eq!(input_grad.len(), geom.in_channels * geom.in_h * geom.in_w);
    let (oh, ow) = (geom.out_h(), geom.out_w());
    let np = oh * ow;
    let pad = geom.padding as isize;
    for c in 0..geom.in_channels {
        let chan = &mut input_grad[c * geom.in_h * geom.in_w..(c + 1) * geom.in_h * geom.in_w];
        for kr in 0..geom.k_h {
            for kc in 0..geom.k_w {
                let row = (c * geom.k_h + kr) * geom.k_w + kc;
                let src = &cols[row * np..(row + 1) * np];
                for oy in 0..oh {
                    let iy = oy as isize * geom.stride as isize + kr as isize - pad;
                    if iy < 0 || iy >= geom.in_h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = ox as isize * geom.stride as isize + kc as isize - pad;
                        if ix < 0 || ix >= geom.in_w as isize {
                            continue;
                        }
                        chan[iy as usize * geom.in_w + ix as usize] += src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_identity_kernel_geometry() {
        let geom = ConvGeom {
            in_channels: 1,
            out_channels: 1,
            k_h: 1,
            k_w: 1,
            stride: 1,
            padding: 0,
            in_h: 2,
            in_w: 3,
        };
        let input = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut cols = vec![0.0; geom.patch_len() * geom.num_patches()];
        im2col(&geom, &input, &mut cols);
        assert_eq!(cols, input);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y.
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(2);
        let geom = ConvGeom {
            in_channels: 2,
            out_channels: 3,
            k_h: 3,
            k_w: 3,
            stride: 2,
            padding: 1,
            in_h: 5,
            in_w: 7,
        };
        let x: Vec<f64> = (0..geom.in_channels * geom.in_h * geom.in_w)
            .map(|_| rng.gen::<f64>() - 0.5)
            .collect();
        let y: Vec<f64> = (0..geom.patch_len() * geom.num_patches())
            .map(|_| rng.gen::<f64>() - 0.5)
            .collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&geom, &x, &mut cols);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut xg = vec![0.0; x.len()];
        col2im(&geom, &y, &mut xg);
        let rhs: f64 = x.iter().zip(&xg).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
