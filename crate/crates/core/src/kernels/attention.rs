use super::tensor::{Result, Tensor, TensorError};
use crate::rng::SplitMix64;
use crate::scalar::Real;

/// Row-wise softmax of a rank-2 tensor, computed with max-subtraction.
pub fn softmax_rows<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = x.dims2("softmax_rows")?;
    if r == 0 || c == 0 {
        return Err(TensorError::DegenerateShape(x.shape().to_vec()));
    }
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let row = x.row(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        let mut total = T::zero();
        for &v in row {
            let e = (v - max).exp();
            total = total + e;
            out.push(e);
        }
        for e in &mut out[start..] {
            *e = *e / total;
        }
    }
    Ok(Tensor::from_parts(vec![r, c], out))
}

/// Single-head scaled dot-product attention `softmax(q kᵀ / √d) v`.
pub fn attention<T: Real>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, d: usize) -> Result<Tensor<T>> {
    let (_, dq) = q.dims2("attention(q)")?;
    let (m, dk) = k.dims2("attention(k)")?;
    let (mv, _) = v.dims2("attention(v)")?;
    if dq != d {
        return Err(TensorError::ShapeMismatch {
            op: "attention",
            axis: "q.cols",
            expected: d,
            found: dq,
        });
    }
    if dk != d {
        return Err(TensorError::ShapeMismatch {
            op: "attention",
            axis: "k.cols",
            expected: d,
            found: dk,
        });
    }
    if mv != m {
        return Err(TensorError::ShapeMismatch {
            op: "attention",
            axis: "v.rows",
            expected: m,
            found: mv,
        });
    }
    let inv_sqrt_d = T::one() / T::of(d as f64).sqrt();
    let logits = q.matmul_t(k)?.scale(inv_sqrt_d);
    softmax_rows(&logits)?.matmul(v)
}

/// Projection matrices for the text path (`w_q`, `w_k`, `w_v`) and the
/// separate image path (`w_k_prime`, `w_v_prime`). All are `d_model × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights<T: Real> {
    pub w_q: Tensor<T>,
    pub w_k: Tensor<T>,
    pub w_v: Tensor<T>,
    pub w_k_prime: Tensor<T>,
    pub w_v_prime: Tensor<T>,
}

/// Half-width of the uniform range used for stub weight initialization.
pub const STUB_WEIGHT_RANGE: f64 = 0.1;

impl<T: Real> AttentionWeights<T> {
    pub fn new(
        w_q: Tensor<T>,
        w_k: Tensor<T>,
        w_v: Tensor<T>,
        w_k_prime: Tensor<T>,
        w_v_prime: Tensor<T>,
    ) -> Result<Self> {
        let (dm, d) = w_q.dims2("AttentionWeights")?;
        for (axis, w) in [
            ("w_k", &w_k),
            ("w_v", &w_v),
            ("w_k_prime", &w_k_prime),
            ("w_v_prime", &w_v_prime),
        ] {
            let (r, c) = w.dims2("AttentionWeights")?;
            if r != dm {
                return Err(TensorError::ShapeMismatch {
                    op: "AttentionWeights",
                    axis,
                    expected: dm,
                    found: r,
                });
            }
            if c != d {
                return Err(TensorError::ShapeMismatch {
                    op: "AttentionWeights",
                    axis,
                    expected: d,
                    found: c,
                });
            }
        }
        Ok(Self {
            w_q,
            w_k,
            w_v,
            w_k_prime,
            w_v_prime,
        })
    }

    /// Stub initialization: one SplitMix64 stream fills `w_q, w_k, w_v,
    /// w_k_prime, w_v_prime` in that order, each row-major, with
    /// uniform(-0.1, 0.1) entries.
    pub fn from_seed(seed: u64, d_model: usize, d: usize) -> Result<Self> {
        let mut rng = SplitMix64::new(seed);
        let mut next = || {
            Tensor::from_fn(vec![d_model, d], |_| {
                T::of(rng.uniform(-STUB_WEIGHT_RANGE, STUB_WEIGHT_RANGE))
            })
        };
        let w_q = next()?;
        let w_k = next()?;
        let w_v = next()?;
        let w_k_prime = next()?;
        let w_v_prime = next()?;
        Ok(Self {
            w_q,
            w_k,
            w_v,
            w_k_prime,
            w_v_prime,
        })
    }

    pub fn d_model(&self) -> usize {
        self.w_q.rows()
    }

    /// Inner attention dimension.
    pub fn d(&self) -> usize {
        self.w_q.cols()
    }
}

/// Text-path attention term `Attention(z W_q, c W_k, c W_v)`.
pub fn text_attention<T: Real>(z: &Tensor<T>, c_text: &Tensor<T>, w: &AttentionWeights<T>) -> Result<Tensor<T>> {
    check_model_dim(z, w, "z")?;
    check_model_dim(c_text, w, "c_text")?;
    let q = z.matmul(&w.w_q)?;
    attention(&q, &c_text.matmul(&w.w_k)?, &c_text.matmul(&w.w_v)?, w.d())
}

/// Image-path attention term `Attention(z W_q, c W'_k, c W'_v)`.
pub fn image_attention<T: Real>(z: &Tensor<T>, c_img: &Tensor<T>, w: &AttentionWeights<T>) -> Result<Tensor<T>> {
    check_model_dim(z, w, "z")?;
    check_model_dim(c_img, w, "c_img")?;
    let q = z.matmul(&w.w_q)?;
    attention(&q, &c_img.matmul(&w.w_k_prime)?, &c_img.matmul(&w.w_v_prime)?, w.d())
}

/// Decoupled cross-attention: the text-path term plus an independent
/// image-path term whose keys and values come from the image features.
pub fn decoupled_cross_attention<T: Real>(
    z: &Tensor<T>,
    c_text: &Tensor<T>,
    c_img: &Tensor<T>,
    w: &AttentionWeights<T>,
) -> Result<Tensor<T>> {
    check_model_dim(z, w, "z")?;
    check_model_dim(c_text, w, "c_text")?;
    check_model_dim(c_img, w, "c_img")?;
    let q = z.matmul(&w.w_q)?;
    let d = w.d();
    let text = attention(&q, &c_text.matmul(&w.w_k)?, &c_text.matmul(&w.w_v)?, d)?;
    let image = attention(&q, &c_img.matmul(&w.w_k_prime)?, &c_img.matmul(&w.w_v_prime)?, d)?;
    text.add(&image)
}

fn check_model_dim<T: Real>(x: &Tensor<T>, w: &AttentionWeights<T>, axis: &'static str) -> Result<()> {
    let (_, c) = x.dims2("decoupled_cross_attention")?;
    if c != w.d_model() {
        return Err(TensorError::ShapeMismatch {
            op: "decoupled_cross_attention",
            axis,
            expected: w.d_model(),
            found: c,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn random(rng: &mut SplitMix64, r: usize, c: usize) -> Tensor<f64> {
        Tensor::from_fn(vec![r, c], |_| rng.uniform(-1.0, 1.0)).unwrap()
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_rows(&t(&[&[0.0, 0.0]])).unwrap().data(), &[0.5, 0.5]);
        for c in [-7.0, 0.0, 1e6] {
            let s = softmax_rows(&t(&[&[c, c, c]])).unwrap();
            for &x in s.data() {
                assert!((x - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        // e^x / Σ e^x evaluated independently for [1, 2, 3].
        let want = [0.09003057317038046, 0.24472847105479767, 0.6652409557748219];
        let got = softmax_rows(&t(&[&[1.0, 2.0, 3.0]])).unwrap();
        for (g, w) in got.data().iter().zip(want) {
            assert!((g - w).abs() < 1e-15, "{g} vs {w}");
        }
    }

    #[test]
    fn softmax_requires_rank2() {
        let v = Tensor::<f64>::zeros(vec![3]).unwrap();
        assert!(matches!(softmax_rows(&v), Err(TensorError::Rank { .. })));
    }

    #[test]
    fn single_key_returns_value_row() {
        let mut rng = SplitMix64::new(1);
        let q = random(&mut rng, 3, 4);
        let k = random(&mut rng, 1, 4);
        let v = random(&mut rng, 1, 5);
        let out = attention(&q, &k, &v, 4).unwrap();
        for i in 0..3 {
            assert_eq!(out.row(i), v.row(0));
        }
    }

    #[test]
    fn identical_keys_average_values() {
        let mut rng = SplitMix64::new(2);
        let q = random(&mut rng, 2, 3);
        let k = t(&[&[0.3, -0.1, 0.7], &[0.3, -0.1, 0.7], &[0.3, -0.1, 0.7]]);
        let v = random(&mut rng, 3, 2);
        let out = attention(&q, &k, &v, 3).unwrap();
        for j in 0..2 {
            let mean = (v.at(0, j) + v.at(1, j) + v.at(2, j)) / 3.0;
            for i in 0..2 {
                assert!((out.at(i, j) - mean).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn random_2x2_matches_scalar_evaluation() {
        let q = t(&[&[0.2, -0.4], &[1.1, 0.5]]);
        let k = t(&[&[0.3, 0.9], &[-0.7, 0.2]]);
        let v = t(&[&[1.0, 2.0], &[-3.0, 0.5]]);
        let out = attention(&q, &k, &v, 2).unwrap();
        let s = 2f64.sqrt();
        for i in 0..2 {
            let l0 = (q.at(i, 0) * k.at(0, 0) + q.at(i, 1) * k.at(0, 1)) / s;
            let l1 = (q.at(i, 0) * k.at(1, 0) + q.at(i, 1) * k.at(1, 1)) / s;
            let (e0, e1) = (l0.exp(), l1.exp());
            for j in 0..2 {
                let want = (e0 * v.at(0, j) + e1 * v.at(1, j)) / (e0 + e1);
                assert!((out.at(i, j) - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn mismatch_names_axis() {
        let q = Tensor::<f64>::zeros(vec![2, 3]).unwrap();
        let k = Tensor::<f64>::zeros(vec![4, 3]).unwrap();
        let v = Tensor::<f64>::zeros(vec![5, 2]).unwrap();
        let err = attention(&q, &k, &v, 3).unwrap_err();
        assert!(err.to_string().contains("v.rows"), "{err}");
        let err = attention(&q, &k, &v, 4).unwrap_err();
        assert!(err.to_string().contains("q.cols"), "{err}");
    }

    #[test]
    fn zero_image_features_give_text_term() {
        let w = AttentionWeights::<f64>::from_seed(5, 6, 6).unwrap();
        let mut rng = SplitMix64::new(3);
        let z = random(&mut rng, 4, 6);
        let c_text = random(&mut rng, 3, 6);
        let c_img = Tensor::zeros(vec![2, 6]).unwrap();
        let image = image_attention(&z, &c_img, &w).unwrap();
        assert!(image.data().iter().all(|&x| x == 0.0));
        let both = decoupled_cross_attention(&z, &c_text, &c_img, &w).unwrap();
        assert_eq!(both, text_attention(&z, &c_text, &w).unwrap());
    }

    #[test]
    fn shared_weights_double_the_term() {
        let base = AttentionWeights::<f64>::from_seed(8, 5, 4).unwrap();
        let w = AttentionWeights::new(
            base.w_q.clone(),
            base.w_k.clone(),
            base.w_v.clone(),
            base.w_k.clone(),
            base.w_v.clone(),
        )
        .unwrap();
        let mut rng = SplitMix64::new(4);
        let z = random(&mut rng, 3, 5);
        let c = random(&mut rng, 2, 5);
        let out = decoupled_cross_attention(&z, &c, &c, &w).unwrap();
        let single = text_attention(&z, &c, &w).unwrap();
        assert_eq!(out, single.scale(2.0));
    }

    #[test]
    fn mismatched_model_dim() {
        let w = AttentionWeights::<f64>::from_seed(0, 4, 4).unwrap();
        let z = Tensor::zeros(vec![2, 4]).unwrap();
        let c_text = Tensor::zeros(vec![2, 4]).unwrap();
        let c_img = Tensor::zeros(vec![2, 3]).unwrap();
        let err = decoupled_cross_attention(&z, &c_text, &c_img, &w).unwrap_err();
        assert!(err.to_string().contains("c_img"));
    }

    #[test]
    fn seeded_weights_are_reproducible_and_bounded() {
        let a = AttentionWeights::<f64>::from_seed(77, 3, 2).unwrap();
        let b = AttentionWeights::<f64>::from_seed(77, 3, 2).unwrap();
        assert_eq!(a, b);
        // First entry of w_q is the first SplitMix64 draw mapped to (-0.1, 0.1).
        let mut rng = SplitMix64::new(77);
        let first = -0.1 + 0.2 * ((rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64);
        assert_eq!(a.w_q.data()[0], first);
        for m in [&a.w_q, &a.w_k, &a.w_v, &a.w_k_prime, &a.w_v_prime] {
            assert!(m.data().iter().all(|x| x.abs() < 0.1));
        }
        // w_k starts where w_q ended.
        let mut rng = SplitMix64::new(77);
        for _ in 0..6 {
            rng.next_u64();
        }
        assert_eq!(a.w_k.data()[0], rng.uniform(-0.1, 0.1));
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 1..9), 1..6)) {
            let c = rows[0].len();
            let rows: Vec<Vec<f64>> = rows.into_iter().map(|mut r| { r.resize(c, 0.0); r }).collect();
            let s = softmax_rows(&Tensor::from_rows(&rows).unwrap()).unwrap();
            for i in 0..rows.len() {
                let total: f64 = s.row(i).iter().sum();
                prop_assert!((total - 1.0).abs() <= 1e-12);
                prop_assert!(s.row(i).iter().all(|&x| x >= 0.0) && s.row(i).iter().all(|&x| x <= 1.0));
            }
        }

        #[test]
        fn permutation_equivariant_in_key_value_pairs(seed in any::<u64>(), n in 1usize..5, m in 1usize..7, d in 1usize..5) {
            let mut rng = SplitMix64::new(seed);
            let q = random(&mut rng, n, d);
            let k = random(&mut rng, m, d);
            let v = random(&mut rng, m, 3);
            let mut perm: Vec<usize> = (0..m).collect();
            rng.shuffle(&mut perm);
            let kp = Tensor::from_rows(&perm.iter().map(|&i| k.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
            let vp = Tensor::from_rows(&perm.iter().map(|&i| v.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
            let a = attention(&q, &k, &v, d).unwrap();
            let b = attention(&q, &kp, &vp, d).unwrap();
            prop_assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
        }

        #[test]
        fn outputs_are_convex_combinations(seed in any::<u64>(), n in 1usize..5, m in 1usize..7) {
            let mut rng = SplitMix64::new(seed);
            let q = random(&mut rng, n, 3);
            let k = random(&mut rng, m, 3);
            let v = random(&mut rng, m, 2);
            let out = attention(&q, &k, &v, 3).unwrap();
            for j in 0..2 {
                let lo = (0..m).map(|i| v.at(i, j)).fold(f64::INFINITY, f64::min);
                let hi = (0..m).map(|i| v.at(i, j)).fold(f64::NEG_INFINITY, f64::max);
                for i in 0..n {
                    prop_assert!(out.at(i, j) >= lo - 1e-12 && out.at(i, j) <= hi + 1e-12);
                }
            }
        }

        #[test]
        fn decoupled_is_additive(seed in any::<u64>()) {
            let mut rng = SplitMix64::new(seed);
            let w = AttentionWeights::<f64>::from_seed(seed ^ 1, 4, 3).unwrap();
            let z = random(&mut rng, 3, 4);
            let ct = random(&mut rng, 2, 4);
            let ci = random(&mut rng, 5, 4);
            let both = decoupled_cross_attention(&z, &ct, &ci, &w).unwrap();
            let sum = text_attention(&z, &ct, &w).unwrap().add(&image_attention(&z, &ci, &w).unwrap()).unwrap();
            prop_assert!(both.max_abs_diff(&sum).unwrap() <= 1e-12);
        }
    }
}
