use std::ops::{AddAssign, Mul};

use super::{Element, Tensor};
use crate::error::{Error, Result};
use crate::exec::{self, Exec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Conv2dParams {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Self {
            stride,
            padding,
            groups,
        }
    }
}

/// Resolved geometry of one convolution call.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub c_in_per_group: usize,
    pub kh: usize,
    pub kw: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub p: Conv2dParams,
}

impl ConvGeom {
    pub fn resolve(in_shape: &[usize], w_shape: &[usize], p: Conv2dParams) -> Result<Self> {
        let [n, c_in, h, w] = *in_shape else {
            return Err(Error::shape(format!("conv input must be NCHW, got {in_shape:?}")));
        };
        let [c_out, c_in_per_group, kh, kw] = *w_shape else {
            return Err(Error::shape(format!("conv weight must be OIHW, got {w_shape:?}")));
        };
        if p.stride == 0 || p.groups == 0 {
            return Err(Error::invalid("stride and groups must be positive"));
        }
        if c_in % p.groups != 0 || c_out % p.groups != 0 {
            return Err(Error::shape(format!(
                "channels in={c_in} out={c_out} not divisible by groups={}",
                p.groups
            )));
        }
        if c_in / p.groups != c_in_per_group {
            return Err(Error::shape(format!(
                "weight expects {c_in_per_group} input channels per group, input provides {}",
                c_in / p.groups
            )));
        }
        if h + 2 * p.padding < kh || w + 2 * p.padding < kw {
            return Err(Error::shape(format!(
                "kernel {kh}x{kw} larger than padded input {h}x{w} (pad {})",
                p.padding
            )));
        }
        Ok(Self {
            n,
            c_in,
            h,
            w,
            c_out,
            c_in_per_group,
            kh,
            kw,
            h_out: (h + 2 * p.padding - kh) / p.stride + 1,
            w_out: (w + 2 * p.padding - kw) / p.stride + 1,
            p,
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.c_out, self.h_out, self.w_out]
    }
}

/// Direct cross-correlation shared by the float reference and the integer kernels.
/// One output plane (n, oc) is produced per work item.
pub(crate) fn conv2d_kernel<A, B, C>(
    exec: Exec,
    g: &ConvGeom,
    input: &[A],
    weight: &[B],
    bias: Option<&[C]>,
) -> Vec<C>
where
    A: Copy + Into<C> + Sync,
    B: Copy + Into<C> + Sync,
    C: Copy + Default + AddAssign + Mul<Output = C> + Send + Sync,
{
    let plane = g.h_out * g.w_out;
    let mut out = vec![C::default(); g.n * g.c_out * plane];
    let out_per_group = g.c_out / g.p.groups;
    let pad = g.p.padding as isize;
    exec::for_each_chunk_mut(exec, &mut out, plane, |idx, dst| {
        let (b, oc) = (idx / g.c_out, idx % g.c_out);
        let ic0 = (oc / out_per_group) * g.c_in_per_group;
        let init = bias.map_or(C::default(), |bs| bs[oc]);
        dst.fill(init);
        for icg in 0..g.c_in_per_group {
            let in_plane = &input[((b * g.c_in) + ic0 + icg) * g.h * g.w..][..g.h * g.w];
            let w_base = ((oc * g.c_in_per_group) + icg) * g.kh * g.kw;
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let wv: C = weight[w_base + ky * g.kw + kx].into();
                    for oy in 0..g.h_out {
                        let iy = (oy * g.p.stride) as isize + ky as isize - pad;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let row = &in_plane[iy as usize * g.w..][..g.w];
                        let drow = &mut dst[oy * g.w_out..][..g.w_out];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * g.p.stride) as isize + kx as isize - pad;
                            if ix >= 0 && (ix as usize) < g.w {
                                *d += row[ix as usize].into() * wv;
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

/// Float reference convolution. `groups == channels` gives depthwise semantics.
pub fn conv2d_ref(
    input: &Tensor<f32>,
    weight: &Tensor<f32>,
    bias: &[f32],
    params: Conv2dParams,
) -> Result<Tensor<f32>> {
    conv2d_ref_with(Exec::default(), input, weight, bias, params)
}

pub fn conv2d_ref_with(
    exec: Exec,
    input: &Tensor<f32>,
    weight: &Tensor<f32>,
    bias: &[f32],
    params: Conv2dParams,
) -> Result<Tensor<f32>> {
    let g = ConvGeom::resolve(input.shape(), weight.shape(), params)?;
    if !bias.is_empty() && bias.len() != g.c_out {
        return Err(Error::shape(format!(
            "bias has {} entries for {} output channels",
            bias.len(),
            g.c_out
        )));
    }
    let bias = (!bias.is_empty()).then_some(bias);
    let out = conv2d_kernel(exec, &g, input.data(), weight.data(), bias);
    Tensor::new(g.out_shape(), out)
}

pub(crate) fn matmul_kernel<A, B, C>(a: &[A], b: &[B], m: usize, k: usize, n: usize) -> Vec<C>
where
    A: Copy + Into<C>,
    B: Copy + Into<C>,
    C: Copy + Default + AddAssign + Mul<Output = C>,
{
    let mut out = vec![C::default(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..][..n];
        for p in 0..k {
            let av: C = a[i * k + p].into();
            for (j, o) in row.iter_mut().enumerate() {
                *o += av * b[p * n + j].into();
            }
        }
    }
    out
}

fn dims2<T: Element>(t: &Tensor<T>) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::shape(format!("expected matrix, got {:?}", t.shape()))),
    }
}

pub fn matmul_ref(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (m, k) = dims2(a)?;
    let (k2, n) = dims2(b)?;
    if k != k2 {
        return Err(Error::shape(format!(
            "inner dimensions disagree: [{m},{k}] x [{k2},{n}]"
        )));
    }
    Tensor::new(vec![m, n], matmul_kernel::<f32, f32, f32>(a.data(), b.data(), m, k, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f32> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Textbook nested-loop convolution in f64, independent of the kernel above.
    fn conv_oracle(x: &Tensor<f32>, w: &Tensor<f32>, bias: &[f32], s: usize, p: usize, groups: usize) -> Vec<f64> {
        let (n, c, h, wd) = x.dims4().unwrap();
        let (o, cg, kh, kw) = w.dims4().unwrap();
        let ho = (h + 2 * p - kh) / s + 1;
        let wo = (wd + 2 * p - kw) / s + 1;
        let opg = o / groups;
        let mut out = vec![0f64; n * o * ho * wo];
        for b in 0..n {
            for oc in 0..o {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = bias.get(oc).copied().unwrap_or(0.0) as f64;
                        for i in 0..cg {
                            let ic = (oc / opg) * cg + i;
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * s + ky) as isize - p as isize;
                                    let ix = (ox * s + kx) as isize - p as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    let xv = x.data()[((b * c + ic) * h + iy as usize) * wd + ix as usize];
                                    let wv = w.data()[((oc * cg + i) * kh + ky) * kw + kx];
                                    acc += xv as f64 * wv as f64;
                                }
                            }
                        }
                        out[((b * o + oc) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn all_ones_3x3() {
        let x = Tensor::full(vec![1, 1, 3, 3], 1.0).unwrap();
        let w = Tensor::full(vec![1, 1, 3, 3], 1.0).unwrap();
        let y = conv2d_ref(&x, &w, &[], Conv2dParams::new(1, 0, 1)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, vec![2, 1, 5, 4]);
        let w = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d_ref(&x, &w, &[], Conv2dParams::new(1, 0, 1)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn strided_padded_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_tensor(&mut rng, vec![1, 4, 6, 6]);
        let w = rand_tensor(&mut rng, vec![8, 4, 3, 3]);
        let bias: Vec<f32> = (0..8).map(|i| i as f32 * 0.1).collect();
        let y = conv2d_ref(&x, &w, &bias, Conv2dParams::new(2, 1, 1)).unwrap();
        assert_eq!(y.shape(), &[1, 8, 3, 3]);
        for (a, b) in y.data().iter().zip(conv_oracle(&x, &w, &bias, 2, 1, 1)) {
            assert!((*a as f64 - b).abs() < 1e-5);
        }
    }

    #[test]
    fn depthwise_matches_per_channel_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (k, s) in [(3, 1), (3, 2), (5, 1), (5, 2)] {
            let x = rand_tensor(&mut rng, vec![2, 6, 9, 7]);
            let w = rand_tensor(&mut rng, vec![6, 1, k, k]);
            let y = conv2d_ref(&x, &w, &[], Conv2dParams::new(s, k / 2, 6)).unwrap();
            for (a, b) in y.data().iter().zip(conv_oracle(&x, &w, &[], s, k / 2, 6)) {
                assert!((*a as f64 - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn sequential_and_parallel_agree_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, vec![2, 8, 10, 10]);
        let w = rand_tensor(&mut rng, vec![16, 4, 3, 3]);
        let p = Conv2dParams::new(1, 1, 2);
        let a = conv2d_ref_with(Exec::Sequential, &x, &w, &[], p).unwrap();
        let b = conv2d_ref_with(Exec::Parallel, &x, &w, &[], p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::<f32>::zeros(vec![1, 3, 4, 4]).unwrap();
        let w = Tensor::<f32>::zeros(vec![4, 2, 3, 3]).unwrap();
        assert!(conv2d_ref(&x, &w, &[], Conv2dParams::new(1, 1, 1)).is_err());
        let w = Tensor::<f32>::zeros(vec![4, 3, 7, 7]).unwrap();
        assert!(conv2d_ref(&x, &w, &[], Conv2dParams::new(1, 0, 1)).is_err());
        let w = Tensor::<f32>::zeros(vec![4, 3, 1, 1]).unwrap();
        assert!(conv2d_ref(&x, &w, &[0.0; 3], Conv2dParams::new(1, 0, 1)).is_err());
    }

    #[test]
    fn matmul_cases() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(matmul_ref(&a, &eye).unwrap(), a);
        assert_eq!(matmul_ref(&eye, &a).unwrap(), a);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = rand_tensor(&mut rng, vec![5, 7]);
        let b = rand_tensor(&mut rng, vec![7, 3]);
        let c = matmul_ref(&a, &b).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let mut acc = 0f64;
                for p in 0..7 {
                    acc += a.data()[i * 7 + p] as f64 * b.data()[p * 3 + j] as f64;
                }
                assert!((c.data()[i * 3 + j] as f64 - acc).abs() < 1e-5);
            }
        }
        assert!(matmul_ref(&a, &a).is_err());
    }
}
