use crate::diag::Diagnostics;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Denominator floor for the float attention.
pub const EPS_DIV: f32 = 1e-6;

/// One head of ReLU linear attention on row-major `[tokens, d]` slices.
/// Returns the number of rows whose denominator hit the guard.
pub(crate) fn attend(q: &[f32], k: &[f32], v: &[f32], tokens: usize, d: usize, out: &mut [f32]) -> u64 {
    let mut kv = vec![0f32; d * d];
    let mut ksum = vec![0f32; d];
    for t in 0..tokens {
        let kr = &k[t * d..][..d];
        let vr = &v[t * d..][..d];
        for i in 0..d {
            let ki = kr[i].max(0.0);
            ksum[i] += ki;
            for j in 0..d {
                kv[i * d + j] += ki * vr[j];
            }
        }
    }
    let mut guarded = 0;
    for t in 0..tokens {
        let qr = &q[t * d..][..d];
        let o = &mut out[t * d..][..d];
        let mut den = 0f32;
        o.fill(0.0);
        for i in 0..d {
            let qi = qr[i].max(0.0);
            den += qi * ksum[i];
            for j in 0..d {
                o[j] += qi * kv[i * d + j];
            }
        }
        if den <= EPS_DIV {
            guarded += 1;
            den = EPS_DIV;
        }
        for x in o.iter_mut() {
            *x /= den;
        }
    }
    guarded
}

/// `ReLU(Q) (Σ_j ReLU(K_j)ᵀ V_j) / (ReLU(Q) Σ_j ReLU(K_j)ᵀ)` for one head.
pub fn relu_linear_attention(
    q: &Tensor<f32>,
    k: &Tensor<f32>,
    v: &Tensor<f32>,
    diag: &mut Diagnostics,
) -> Result<Tensor<f32>> {
    let [t, d] = *q.shape() else {
        return Err(Error::shape(format!("Q must be [tokens, d], got {:?}", q.shape())));
    };
    if k.shape() != q.shape() || v.shape() != q.shape() {
        return Err(Error::shape(format!(
            "Q {:?}, K {:?}, V {:?} must share one shape",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let mut out = vec![0f32; t * d];
    diag.guarded_rows += attend(q.data(), k.data(), v.data(), t, d, &mut out);
    Tensor::new(vec![t, d], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Row-normalised quadratic form in f64.
    fn quadratic(q: &[f32], k: &[f32], v: &[f32], t: usize, d: usize) -> Vec<f64> {
        let mut out = vec![0f64; t * d];
        for a in 0..t {
            let mut w = vec![0f64; t];
            for b in 0..t {
                w[b] = (0..d)
                    .map(|i| q[a * d + i].max(0.0) as f64 * k[b * d + i].max(0.0) as f64)
                    .sum();
            }
            let z: f64 = w.iter().sum();
            for j in 0..d {
                out[a * d + j] = (0..t).map(|b| w[b] * v[b * d + j] as f64).sum::<f64>() / z;
            }
        }
        out
    }

    fn t2(t: usize, d: usize, data: Vec<f32>) -> Tensor<f32> {
        Tensor::new(vec![t, d], data).unwrap()
    }

    #[test]
    fn single_token_returns_v() {
        let mut dg = Diagnostics::default();
        let out = relu_linear_attention(
            &t2(1, 3, vec![0.5, 1.0, 2.0]),
            &t2(1, 3, vec![1.0, 0.2, 0.3]),
            &t2(1, 3, vec![-4.0, 5.0, 6.5]),
            &mut dg,
        )
        .unwrap();
        for (a, b) in out.data().iter().zip([-4.0, 5.0, 6.5]) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(dg.guarded_rows, 0);
    }

    #[test]
    fn random_nonnegative_matches_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut r = || (0..12).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<f32>>();
        let (q, k, v) = (r(), r(), r());
        let mut dg = Diagnostics::default();
        let out = relu_linear_attention(&t2(4, 3, q.clone()), &t2(4, 3, k.clone()), &t2(4, 3, v.clone()), &mut dg)
            .unwrap();
        for (a, b) in out.data().iter().zip(quadratic(&q, &k, &v, 4, 3)) {
            assert!((*a as f64 - b).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_query_row_is_guarded() {
        let mut dg = Diagnostics::default();
        let q = t2(2, 2, vec![0.0, 0.0, 1.0, 1.0]);
        let k = t2(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let v = t2(2, 2, vec![1.0, 1.0, 2.0, 2.0]);
        let out = relu_linear_attention(&q, &k, &v, &mut dg).unwrap();
        assert_eq!(dg.guarded_rows, 1);
        assert_eq!(&out.data()[..2], &[0.0, 0.0]);
        assert!(out.data()[2..].iter().all(|x| x.is_finite()));
    }

    #[test]
    fn shape_mismatch() {
        let mut dg = Diagnostics::default();
        let a = t2(2, 2, vec![0.0; 4]);
        let b = t2(4, 1, vec![0.0; 4]);
        assert!(relu_linear_attention(&a, &b, &a, &mut dg).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn linear_equals_quadratic(t in 1usize..=64, d in 1usize..=32, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut r = || (0..t * d).map(|_| rng.random_range(0.0f32..1.0)).collect::<Vec<f32>>();
            let (q, k, v) = (r(), r(), r());
            let mut dg = Diagnostics::default();
            let out = relu_linear_attention(&t2(t, d, q.clone()), &t2(t, d, k.clone()), &t2(t, d, v.clone()), &mut dg).unwrap();
            for (a, b) in out.data().iter().zip(quadratic(&q, &k, &v, t, d)) {
                prop_assert!((*a as f64 - b).abs() <= 1e-4 * b.abs().max(1e-3));
            }
        }
    }
}
