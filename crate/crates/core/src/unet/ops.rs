//! Tensor primitives for the 3D U-Net forward pass.
//!
//! Each output channel is computed independently with a fixed summation
//! order, so results do not depend on how rayon schedules channels.

use rayon::prelude::*;

use crate::volume::{voxel_count, Shape};

/// Stack of 3D feature maps, channel-major: `data[c][z][y][x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    shape: Shape,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: usize, shape: Shape, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), channels * voxel_count(shape), "feature map layout");
        FeatureMap { channels, shape, data }
    }

    pub fn zeros(channels: usize, shape: Shape) -> Self {
        Self::new(channels, shape, vec![0.0; channels * voxel_count(shape)])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn spatial_len(&self) -> usize {
        voxel_count(self.shape)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.spatial_len();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, z: usize, y: usize, x: usize) -> f32 {
        let [_, ny, nx] = self.shape;
        self.data[((c * self.shape[0] + z) * ny + y) * nx + x]
    }

    /// Channel-wise concatenation `[self, other]`.
    pub fn concat(&self, other: &FeatureMap) -> FeatureMap {
        assert_eq!(self.shape, other.shape, "concat needs equal spatial shapes");
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        FeatureMap::new(self.channels + other.channels, self.shape, data)
    }
}

/// Same-size 3D convolution with zero padding `k / 2`.
///
/// `weight` is laid out `[out][in][kz][ky][kx]`.
pub fn conv3d(input: &FeatureMap, weight: &[f32], bias: &[f32], out_channels: usize, kernel: usize) -> FeatureMap {
    let cin = input.channels;
    let k3 = kernel * kernel * kernel;
    assert_eq!(weight.len(), out_channels * cin * k3, "conv weight size");
    assert_eq!(bias.len(), out_channels, "conv bias size");
    assert!(kernel % 2 == 1, "odd kernels only");
    let [nz, ny, nx] = input.shape;
    let plane = ny * nx;
    let n = nz * plane;
    let pad = (kernel / 2) as isize;

    let mut out = vec![0f32; out_channels * n];
    out.par_chunks_mut(n).enumerate().for_each(|(co, dst)| {
        let w_co = &weight[co * cin * k3..(co + 1) * cin * k3];
        for z in 0..nz {
            let slab = &mut dst[z * plane..(z + 1) * plane];
            slab.fill(bias[co]);
            for ci in 0..cin {
                let src = &input.data[ci * n..(ci + 1) * n];
                let w_ci = &w_co[ci * k3..(ci + 1) * k3];
                for kz in 0..kernel {
                    let sz = z as isize + kz as isize - pad;
                    if sz < 0 || sz >= nz as isize {
                        continue;
                    }
                    let src_slab = &src[sz as usize * plane..(sz as usize + 1) * plane];
                    for ky in 0..kernel {
                        let dy = ky as isize - pad;
                        let y0 = (-dy).max(0) as usize;
                        let y1 = (ny as isize - dy.max(0)).max(0) as usize;
                        for kx in 0..kernel {
                            let w = w_ci[(kz * kernel + ky) * kernel + kx];
                            if w == 0.0 {
                                continue;
                            }
                            let dx = kx as isize - pad;
                            let x0 = (-dx).max(0) as usize;
                            let x1 = (nx as isize - dx.max(0)).max(0) as usize;
                            if x0 >= x1 {
                                continue;
                            }
                            for y in y0..y1 {
                                let sy = (y as isize + dy) as usize;
                                let o = &mut slab[y * nx + x0..y * nx + x1];
                                let s0 = (sy * nx) as isize + x0 as isize + dx;
                                let s = &src_slab[s0 as usize..s0 as usize + (x1 - x0)];
                                for (a, &b) in o.iter_mut().zip(s) {
                                    *a += w * b;
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    FeatureMap::new(out_channels, input.shape, out)
}

/// 2x2x2 max pooling with stride 2. Every extent must be even.
pub fn max_pool2(input: &FeatureMap) -> FeatureMap {
    let [nz, ny, nx] = input.shape;
    assert!(nz % 2 == 0 && ny % 2 == 0 && nx % 2 == 0, "max_pool2 needs even extents, got {:?}", input.shape);
    let out_shape = [nz / 2, ny / 2, nx / 2];
    let n_in = voxel_count(input.shape);
    let n_out = voxel_count(out_shape);
    let mut out = vec![0f32; input.channels * n_out];
    out.par_chunks_mut(n_out).enumerate().for_each(|(c, dst)| {
        let src = &input.data[c * n_in..(c + 1) * n_in];
        let mut i = 0;
        for z in 0..out_shape[0] {
            for y in 0..out_shape[1] {
                for x in 0..out_shape[2] {
                    let mut m = f32::NEG_INFINITY;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            let row = ((2 * z + dz) * ny + 2 * y + dy) * nx + 2 * x;
                            m = m.max(src[row]).max(src[row + 1]);
                        }
                    }
                    dst[i] = m;
                    i += 1;
                }
            }
        }
    });
    FeatureMap::new(input.channels, out_shape, out)
}

/// Transposed convolution with kernel 2 and stride 2 (doubles every extent).
///
/// `weight` is laid out `[in][out][kz][ky][kx]`.
pub fn conv_transpose2(input: &FeatureMap, weight: &[f32], bias: &[f32], out_channels: usize) -> FeatureMap {
    let cin = input.channels;
    assert_eq!(weight.len(), cin * out_channels * 8, "transposed conv weight size");
    assert_eq!(bias.len(), out_channels, "transposed conv bias size");
    let [nz, ny, nx] = input.shape;
    let out_shape = [2 * nz, 2 * ny, 2 * nx];
    let (oy, ox) = (2 * ny, 2 * nx);
    let n_in = voxel_count(input.shape);
    let n_out = voxel_count(out_shape);

    let mut out = vec![0f32; out_channels * n_out];
    out.par_chunks_mut(n_out).enumerate().for_each(|(co, dst)| {
        dst.fill(bias[co]);
        for ci in 0..cin {
            let src = &input.data[ci * n_in..(ci + 1) * n_in];
            let w = &weight[(ci * out_channels + co) * 8..(ci * out_channels + co + 1) * 8];
            for z in 0..nz {
                for a in 0..2 {
                    for y in 0..ny {
                        let s = &src[(z * ny + y) * nx..(z * ny + y + 1) * nx];
                        for b in 0..2 {
                            let row = &mut dst[((2 * z + a) * oy + 2 * y + b) * ox..][..ox];
                            let (w0, w1) = (w[(a * 2 + b) * 2], w[(a * 2 + b) * 2 + 1]);
                            for (pair, &v) in row.chunks_exact_mut(2).zip(s) {
                                pair[0] += w0 * v;
                                pair[1] += w1 * v;
                            }
                        }
                    }
                }
            }
        }
    });
    FeatureMap::new(out_channels, out_shape, out)
}

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Per-channel normalization over the spatial extent with affine scale and
/// shift, using the biased variance and `INSTANCE_NORM_EPS`.
pub fn instance_norm(input: &mut FeatureMap, scale: &[f32], shift: &[f32]) {
    assert_eq!(scale.len(), input.channels);
    assert_eq!(shift.len(), input.channels);
    let n = input.spatial_len();
    input.data.par_chunks_mut(n).enumerate().for_each(|(c, ch)| {
        let mean = ch.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let var = ch.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + INSTANCE_NORM_EPS).sqrt();
        let (g, b) = (scale[c] as f64, shift[c] as f64);
        for v in ch.iter_mut() {
            *v = ((*v as f64 - mean) * inv * g + b) as f32;
        }
    });
}

pub fn leaky_relu(input: &mut FeatureMap, negative_slope: f32) {
    input.data.par_iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v *= negative_slope;
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, c: usize, shape: Shape) -> FeatureMap {
        let data = (0..c * voxel_count(shape)).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        FeatureMap::new(c, shape, data)
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
        (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
    }

    /// Direct-loop convolution: every output voxel sums over every input
    /// channel and tap, skipping taps that fall outside the volume.
    fn conv_oracle(input: &FeatureMap, w: &[f32], b: &[f32], cout: usize, k: usize) -> Vec<f64> {
        let [nz, ny, nx] = input.shape();
        let cin = input.channels();
        let p = (k / 2) as isize;
        let mut out = Vec::new();
        for co in 0..cout {
            for z in 0..nz as isize {
                for y in 0..ny as isize {
                    for x in 0..nx as isize {
                        let mut acc = b[co] as f64;
                        for ci in 0..cin {
                            for kz in 0..k as isize {
                                for ky in 0..k as isize {
                                    for kx in 0..k as isize {
                                        let (sz, sy, sx) = (z + kz - p, y + ky - p, x + kx - p);
                                        if sz < 0 || sy < 0 || sx < 0 || sz >= nz as isize || sy >= ny as isize || sx >= nx as isize {
                                            continue;
                                        }
                                        let wi = (((co * cin + ci) * k + kz as usize) * k + ky as usize) * k + kx as usize;
                                        acc += w[wi] as f64 * input.at(ci, sz as usize, sy as usize, sx as usize) as f64;
                                    }
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn single_conv_on_4_cube_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let input = random_map(&mut rng, 1, [4, 4, 4]);
        let w = random_vec(&mut rng, 27);
        let b = vec![0.25];
        let out = conv3d(&input, &w, &b, 1, 3);
        let expected = conv_oracle(&input, &w, &b, 1, 3);
        for (a, e) in out.data().iter().zip(&expected) {
            assert!((*a as f64 - e).abs() < 1e-5, "{a} vs {e}");
        }
    }

    #[test]
    fn conv_translation_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let shape = [6, 7, 8];
        let input = random_map(&mut rng, 2, shape);
        let w = random_vec(&mut rng, 3 * 2 * 27);
        let b = random_vec(&mut rng, 3);
        // shift by +1 along x
        let mut shifted = FeatureMap::zeros(2, shape);
        for c in 0..2 {
            for z in 0..6 {
                for y in 0..7 {
                    for x in 1..8 {
                        let i = ((c * 6 + z) * 7 + y) * 8 + x;
                        shifted.data_mut()[i] = input.at(c, z, y, x - 1);
                    }
                }
            }
        }
        let a = conv3d(&input, &w, &b, 3, 3);
        let s = conv3d(&shifted, &w, &b, 3, 3);
        // valid region: receptive field fully inside both inputs
        for c in 0..3 {
            for z in 1..5 {
                for y in 1..6 {
                    for x in 2..7 {
                        assert!((s.at(c, z, y, x) - a.at(c, z, y, x - 1)).abs() < 1e-5);
                    }
                }
            }
        }
    }

    #[test]
    fn pool_picks_block_maximum() {
        let data: Vec<f32> = (0..8).map(|i| [3.0, -1.0, 7.5, 0.0, 2.0, 7.0, -4.0, 1.0][i]).collect();
        let out = max_pool2(&FeatureMap::new(1, [2, 2, 2], data));
        assert_eq!(out.shape(), [1, 1, 1]);
        assert_eq!(out.data(), &[7.5]);
    }

    #[test]
    fn transposed_conv_single_voxel_writes_kernel() {
        let w: Vec<f32> = (0..8).map(|i| i as f32).collect();
        let out = conv_transpose2(&FeatureMap::new(1, [1, 1, 1], vec![2.0]), &w, &[1.0], 1);
        assert_eq!(out.shape(), [2, 2, 2]);
        let expected: Vec<f32> = (0..8).map(|i| 1.0 + 2.0 * i as f32).collect();
        assert_eq!(out.data(), &expected[..]);
    }

    #[test]
    fn instance_norm_standardizes() {
        let mut m = FeatureMap::new(1, [1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        instance_norm(&mut m, &[2.0], &[0.5]);
        let mean: f32 = m.data().iter().sum::<f32>() / 4.0;
        assert!((mean - 0.5).abs() < 1e-6);
        // zero input stays at the shift
        let mut z = FeatureMap::zeros(2, [2, 2, 2]);
        instance_norm(&mut z, &[1.0, 1.0], &[0.0, 0.0]);
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn leaky_relu_scales_negatives() {
        let mut m = FeatureMap::new(1, [1, 1, 3], vec![-2.0, 0.0, 3.0]);
        leaky_relu(&mut m, 0.01);
        assert_eq!(m.data(), &[-0.02, 0.0, 3.0]);
    }

    #[test]
    fn concat_stacks_channels() {
        let a = FeatureMap::new(1, [1, 1, 2], vec![1.0, 2.0]);
        let b = FeatureMap::new(2, [1, 1, 2], vec![3.0, 4.0, 5.0, 6.0]);
        let c = a.concat(&b);
        assert_eq!(c.channels(), 3);
        assert_eq!(c.channel(2), &[5.0, 6.0]);
    }
}
