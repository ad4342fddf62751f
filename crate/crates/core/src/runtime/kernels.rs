use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::{Conv2dParams, Tensor};
use crate::tensor::ops::{conv2d_kernel, matmul_kernel, ConvGeom};

/// i8 × i8 → i32 convolution with the bias added into the accumulator.
pub fn int_conv2d(a: &Tensor<i8>, w: &Tensor<i8>, bias: &[i32], params: Conv2dParams) -> Result<Tensor<i32>> {
    int_conv2d_with(Exec::Sequential, a, w, bias, params)
}

pub fn int_conv2d_with(
    exec: Exec,
    a: &Tensor<i8>,
    w: &Tensor<i8>,
    bias: &[i32],
    params: Conv2dParams,
) -> Result<Tensor<i32>> {
    let g = ConvGeom::resolve(a.shape(), w.shape(), params)?;
    if !bias.is_empty() && bias.len() != g.c_out {
        return Err(Error::shape(format!("{} biases for {} filters", bias.len(), g.c_out)));
    }
    let fan_in = g.c_in_per_group * g.kh * g.kw;
    let bmax = bias.iter().map(|b| (*b as i64).abs()).max().unwrap_or(0);
    if crate::quant::accumulator_bound(fan_in, bmax) >= 1 << 31 {
        return Err(Error::invalid(format!("fan-in {fan_in} may overflow a 32-bit accumulator")));
    }
    let bias = (!bias.is_empty()).then_some(bias);
    let out = conv2d_kernel::<i8, i8, i32>(exec, &g, a.data(), w.data(), bias);
    Tensor::new(g.out_shape(), out)
}

pub fn int_matmul(a: &Tensor<i8>, b: &Tensor<i8>) -> Result<Tensor<i32>> {
    let (&[m, k], &[k2, n]) = (a.shape(), b.shape()) else {
        return Err(Error::shape(format!("expected matrices, got {:?} x {:?}", a.shape(), b.shape())));
    };
    if k != k2 {
        return Err(Error::shape(format!("inner dimensions disagree: {k} vs {k2}")));
    }
    if crate::quant::accumulator_bound(k, 0) >= 1 << 31 {
        return Err(Error::invalid(format!("inner dimension {k} may overflow a 32-bit accumulator")));
    }
    Tensor::new(vec![m, n], matmul_kernel::<i8, i8, i32>(a.data(), b.data(), m, k, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_examples() {
        let a = Tensor::new(vec![1, 1, 1, 1], vec![2i8]).unwrap();
        let w = Tensor::new(vec![1, 1, 1, 1], vec![3i8]).unwrap();
        assert_eq!(int_conv2d(&a, &w, &[4], Conv2dParams::new(1, 0, 1)).unwrap().data(), &[10]);
        let z = Tensor::<i8>::zeros(vec![1, 4, 5, 5]).unwrap();
        let w = Tensor::new(vec![8, 4, 3, 3], vec![7i8; 288]).unwrap();
        let y = int_conv2d(&z, &w, &[], Conv2dParams::new(1, 1, 1)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn matches_exact_f64_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for (groups, k, s) in [(1, 3, 1), (1, 3, 2), (8, 5, 2), (2, 1, 1)] {
            let a: Vec<i8> = (0..2 * 8 * 7 * 7).map(|_| rng.random()).collect();
            let cig = 8 / groups;
            let w: Vec<i8> = (0..8 * cig * k * k).map(|_| rng.random()).collect();
            let bias: Vec<i32> = (0..8).map(|_| rng.random_range(-1000..1000)).collect();
            let at = Tensor::new(vec![2, 8, 7, 7], a.clone()).unwrap();
            let wt = Tensor::new(vec![8, cig, k, k], w.clone()).unwrap();
            let p = Conv2dParams::new(s, k / 2, groups);
            let y = int_conv2d_with(Exec::Parallel, &at, &wt, &bias, p).unwrap();
            let ho = (7 + 2 * (k / 2) - k) / s + 1;
            for b in 0..2 {
                for o in 0..8 {
                    for oy in 0..ho {
                        for ox in 0..ho {
                            let mut acc = bias[o] as f64;
                            for i in 0..cig {
                                let ic = (o / (8 / groups)) * cig + i;
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let iy = (oy * s + ky) as isize - (k / 2) as isize;
                                        let ix = (ox * s + kx) as isize - (k / 2) as isize;
                                        if iy < 0 || ix < 0 || iy >= 7 || ix >= 7 {
                                            continue;
                                        }
                                        acc += a[((b * 8 + ic) * 7 + iy as usize) * 7 + ix as usize] as f64
                                            * w[((o * cig + i) * k + ky) * k + kx] as f64;
                                    }
                                }
                            }
                            assert_eq!(y.data()[((b * 8 + o) * ho + oy) * ho + ox] as f64, acc);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn matmul_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<i8> = (0..15).map(|_| rng.random()).collect();
        let b: Vec<i8> = (0..20).map(|_| rng.random()).collect();
        let c = int_matmul(&Tensor::new(vec![3, 5], a.clone()).unwrap(), &Tensor::new(vec![5, 4], b.clone()).unwrap())
            .unwrap();
        for i in 0..3 {
            for j in 0..4 {
                let e: i32 = (0..5).map(|p| a[i * 5 + p] as i32 * b[p * 4 + j] as i32).sum();
                assert_eq!(c.data()[i * 4 + j], e);
            }
        }
    }
}
