//! Convolution and mean-pooling layers with their backward passes.
//!
//! "Convolution" here is valid cross-correlation; a true convolution is the
//! same operation with every kernel rotated by 180 degrees, so the learned
//! kernels simply come out flipped.

use super::spec::{ActivationSpec, ConvLayerSpec, PoolLayerSpec};
use super::CnnError;
use crate::grid::ImageGrid;

/// A stack of square maps, map-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Maps {
    pub count: usize,
    pub side: usize,
    pub data: Vec<f64>,
}

impl Maps {
    pub fn zeros(count: usize, side: usize) -> Self {
        Self {
            count,
            side,
            data: vec![0.0; count * side * side],
        }
    }

    pub fn map(&self, k: usize) -> &[f64] {
        let a = self.side * self.side;
        &self.data[k * a..(k + 1) * a]
    }

    pub fn map_mut(&mut self, k: usize) -> &mut [f64] {
        let a = self.side * self.side;
        &mut self.data[k * a..(k + 1) * a]
    }

    /// Splits a square interleaved grid into one map per channel.
    pub fn from_grid(img: &ImageGrid) -> Result<Self, CnnError> {
        let (h, w, c) = img.shape();
        if h != w {
            return Err(CnnError::ShapeMismatch {
                expected: "square input".to_string(),
                got: format!("{h}x{w}x{c}"),
            });
        }
        let mut maps = Maps::zeros(c, h);
        for (i, px) in img.data().chunks_exact(c).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                maps.data[ch * h * h + i] = v;
            }
        }
        Ok(maps)
    }
}

/// Kernel and bias storage for one convolution layer.
/// Kernels are laid out as (input i, output j, row, col).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub kernels: Vec<f64>,
    pub biases: Vec<f64>,
}

impl ConvParams {
    pub fn zeros(spec: &ConvLayerSpec) -> Self {
        Self {
            kernels: vec![0.0; spec.weight_count()],
            biases: vec![0.0; spec.n_out],
        }
    }

    #[inline]
    pub fn kernel_offset(spec: &ConvLayerSpec, i: usize, j: usize) -> usize {
        (i * spec.n_out + j) * spec.kernel * spec.kernel
    }

    pub fn kernel(&self, spec: &ConvLayerSpec, i: usize, j: usize) -> &[f64] {
        let k2 = spec.kernel * spec.kernel;
        let o = Self::kernel_offset(spec, i, j);
        &self.kernels[o..o + k2]
    }
}

/// Pre-activation accumulator and activated output of a convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvOutput {
    pub pre: Maps,
    pub post: Maps,
}

/// `post_j = f(sum_i xcorr(x_i, k_ij) + b_j)` with full input-output connectivity.
pub fn conv_forward(
    inputs: &Maps,
    layer: &ConvLayerSpec,
    params: &ConvParams,
    act: &ActivationSpec,
) -> ConvOutput {
    assert_eq!(inputs.count, layer.n_in, "conv input map count");
    assert!(inputs.side >= layer.kernel, "kernel larger than input map");
    let s = inputs.side;
    let k = layer.kernel;
    let so = s - k + 1;
    let mut pre = Maps::zeros(layer.n_out, so);
    for j in 0..layer.n_out {
        let out = pre.map_mut(j);
        out.fill(params.biases[j]);
        for i in 0..layer.n_in {
            let input = inputs.map(i);
            let kern = params.kernel(layer, i, j);
            for r in 0..k {
                for c in 0..k {
                    let w = kern[r * k + c];
                    for y in 0..so {
                        let src = &input[(y + r) * s + c..(y + r) * s + c + so];
                        let dst = &mut out[y * so..(y + 1) * so];
                        for (d, v) in dst.iter_mut().zip(src) {
                            *d += w * v;
                        }
                    }
                }
            }
        }
    }
    let post = Maps {
        count: pre.count,
        side: pre.side,
        data: pre.data.iter().map(|&v| act.apply(v)).collect(),
    };
    ConvOutput { pre, post }
}

/// Block means over non-overlapping n x n windows.
pub fn pool_forward(inputs: &Maps, layer: &PoolLayerSpec) -> Result<Maps, CnnError> {
    let n = layer.n;
    if n == 0 || !inputs.side.is_multiple_of(n) {
        return Err(CnnError::IndivisibleSide {
            side: inputs.side,
            n,
        });
    }
    let s = inputs.side;
    let so = s / n;
    let w = layer.weight();
    let mut out = Maps::zeros(inputs.count, so);
    for m in 0..inputs.count {
        let src = inputs.map(m);
        let dst = out.map_mut(m);
        for y in 0..s {
            let row = &src[y * s..(y + 1) * s];
            let drow = &mut dst[(y / n) * so..(y / n + 1) * so];
            for (x, v) in row.iter().enumerate() {
                drow[x / n] += v;
            }
        }
        for v in dst.iter_mut() {
            *v *= w;
        }
    }
    Ok(out)
}

/// Spreads each pooled gradient uniformly (x 1/n^2) over its block.
pub fn pool_backward(grad_out: &Maps, layer: &PoolLayerSpec) -> Maps {
    let n = layer.n;
    let s = grad_out.side * n;
    let w = layer.weight();
    let mut g = Maps::zeros(grad_out.count, s);
    for m in 0..grad_out.count {
        let src = grad_out.map(m);
        let dst = g.map_mut(m);
        for y in 0..s {
            for x in 0..s {
                dst[y * s + x] = src[(y / n) * grad_out.side + x / n] * w;
            }
        }
    }
    g
}

/// Given dL/d(pre-activation), accumulates kernel and bias gradients and,
/// when requested, returns dL/d(input maps).
pub fn conv_backward(
    inputs: &Maps,
    grad_pre: &Maps,
    layer: &ConvLayerSpec,
    params: &ConvParams,
    grads: &mut ConvParams,
    want_input_grad: bool,
) -> Option<Maps> {
    let s = inputs.side;
    let k = layer.kernel;
    let so = grad_pre.side;
    for j in 0..layer.n_out {
        let gj = grad_pre.map(j);
        grads.biases[j] += gj.iter().sum::<f64>();
        for i in 0..layer.n_in {
            let input = inputs.map(i);
            let off = ConvParams::kernel_offset(layer, i, j);
            for r in 0..k {
                for c in 0..k {
                    let mut acc = 0.0;
                    for y in 0..so {
                        let src = &input[(y + r) * s + c..(y + r) * s + c + so];
                        let g = &gj[y * so..(y + 1) * so];
                        acc += g.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                    }
                    grads.kernels[off + r * k + c] += acc;
                }
            }
        }
    }
    if !want_input_grad {
        return None;
    }
    let mut gin = Maps::zeros(layer.n_in, s);
    for i in 0..layer.n_in {
        let dst = gin.map_mut(i);
        for j in 0..layer.n_out {
            let gj = grad_pre.map(j);
            let kern = params.kernel(layer, i, j);
            for r in 0..k {
                for c in 0..k {
                    let w = kern[r * k + c];
                    for y in 0..so {
                        let d = &mut dst[(y + r) * s + c..(y + r) * s + c + so];
                        let g = &gj[y * so..(y + 1) * so];
                        for (dv, gv) in d.iter_mut().zip(g) {
                            *dv += w * gv;
                        }
                    }
                }
            }
        }
    }
    Some(gin)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(side: usize, f: impl Fn(usize, usize) -> f64) -> Maps {
        let mut m = Maps::zeros(1, side);
        for y in 0..side {
            for x in 0..side {
                m.data[y * side + x] = f(y, x);
            }
        }
        m
    }

    #[test]
    fn conv_output_side() {
        let layer = ConvLayerSpec {
            n_in: 1,
            n_out: 2,
            kernel: 5,
        };
        let out = conv_forward(&single(64, |_, _| 1.0), &layer, &ConvParams::zeros(&layer), &ActivationSpec::default());
        assert_eq!((out.post.count, out.post.side), (2, 60));
        assert!(out.post.data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn unit_kernel_applies_activation_elementwise() {
        let layer = ConvLayerSpec {
            n_in: 1,
            n_out: 1,
            kernel: 1,
        };
        let params = ConvParams {
            kernels: vec![1.0],
            biases: vec![0.0],
        };
        let input = single(4, |y, x| y as f64 - x as f64 * 0.5);
        let act = ActivationSpec::default();
        let out = conv_forward(&input, &layer, &params, &act);
        for (o, i) in out.post.data.iter().zip(&input.data) {
            assert_eq!(*o, act.apply(*i));
        }
    }

    #[test]
    fn conv_is_cross_correlation() {
        let layer = ConvLayerSpec {
            n_in: 1,
            n_out: 1,
            kernel: 2,
        };
        let params = ConvParams {
            kernels: vec![1.0, 2.0, 3.0, 4.0],
            biases: vec![0.5],
        };
        let input = single(3, |y, x| (y * 3 + x) as f64);
        let out = conv_forward(&input, &layer, &params, &ActivationSpec::default());
        // top-left: 0*1 + 1*2 + 3*3 + 4*4 + 0.5
        assert_eq!(out.pre.data[0], 27.5);
    }

    #[test]
    fn pre_activation_is_linear_in_input() {
        let layer = ConvLayerSpec {
            n_in: 2,
            n_out: 2,
            kernel: 3,
        };
        let params = ConvParams {
            kernels: (0..layer.weight_count()).map(|i| ((i * 7) % 5) as f64 - 2.0).collect(),
            biases: vec![0.0; 2],
        };
        let a = Maps {
            count: 2,
            side: 5,
            data: (0..50).map(|i| (i % 9) as f64).collect(),
        };
        let b = Maps {
            count: 2,
            side: 5,
            data: (0..50).map(|i| ((i * 3) % 4) as f64 - 1.0).collect(),
        };
        let sum = Maps {
            count: 2,
            side: 5,
            data: a.data.iter().zip(&b.data).map(|(x, y)| 2.0 * x + y).collect(),
        };
        let act = ActivationSpec::default();
        let pa = conv_forward(&a, &layer, &params, &act).pre;
        let pb = conv_forward(&b, &layer, &params, &act).pre;
        let ps = conv_forward(&sum, &layer, &params, &act).pre;
        for k in 0..ps.data.len() {
            assert!((ps.data[k] - (2.0 * pa.data[k] + pb.data[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_examples() {
        let layer = PoolLayerSpec { n: 2 };
        let out = pool_forward(&single(64, |y, x| (y + x) as f64), &layer).unwrap();
        assert_eq!(out.side, 32);
        let c = pool_forward(&single(6, |_, _| 3.25), &layer).unwrap();
        assert!(c.data.iter().all(|&v| v == 3.25));
        let m = pool_forward(&single(2, |y, x| (y * 2 + x + 1) as f64), &layer).unwrap();
        assert_eq!(m.data, vec![2.5]);
        assert!(matches!(
            pool_forward(&single(5, |_, _| 0.0), &layer),
            Err(CnnError::IndivisibleSide { side: 5, n: 2 })
        ));
    }

    #[test]
    fn pool_backward_spreads_evenly() {
        let g = Maps {
            count: 1,
            side: 1,
            data: vec![4.0],
        };
        let out = pool_backward(&g, &PoolLayerSpec { n: 2 });
        assert_eq!(out.data, vec![1.0; 4]);
    }

    #[test]
    fn grid_to_maps_deinterleaves() {
        let img = ImageGrid::from_fn(2, 2, 3, |y, x, c| (100 * c + 10 * y + x) as f64);
        let m = Maps::from_grid(&img).unwrap();
        assert_eq!(m.map(1), &[100.0, 101.0, 110.0, 111.0]);
        assert!(Maps::from_grid(&ImageGrid::zeros(2, 3, 1)).is_err());
    }
}
