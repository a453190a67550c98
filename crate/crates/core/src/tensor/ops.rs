use super::Tensor;
use crate::error::{Error, Result};

/// Norm below which a vector is treated as zero by [`cosine_similarity`].
pub const COSINE_EPS: f64 = 1e-12;

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::shape(format!("matmul inner dims {m}x{k} · {k2}x{n}")));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Cosine similarity of two equal-length slices. Zero when either norm is
/// below [`COSINE_EPS`].
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape(format!("cosine of lengths {} and {}", u.len(), v.len())));
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    let (nu, nv) = (nu.sqrt(), nv.sqrt());
    if nu < COSINE_EPS || nv < COSINE_EPS {
        return Ok(0.0);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Indices of the `k` largest scores, highest first, ties broken by
/// ascending index. `k` is clamped to the number of scores.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let k = k.min(scores.len());
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if k < idx.len() && k > 0 {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_by(cmp);
    idx.truncate(k);
    idx
}

/// Mean over active mask positions of the squared distance between `a`
/// and `b`.
///
/// `mask` addresses positions: its shape must equal `a`'s shape or a
/// leading prefix of it, in which case each position covers the trailing
/// axes and contributes its full squared norm. Nonzero mask entries are
/// active.
pub fn masked_mse(a: &Tensor, b: &Tensor, mask: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "masked_mse operands {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let ms = mask.shape();
    if ms.len() > a.rank() || a.shape()[..ms.len()] != *ms {
        return Err(Error::shape(format!("mask {:?} does not address {:?}", ms, a.shape())));
    }
    let width = a.len() / mask.len();
    let mut total = 0.0;
    let mut active = 0usize;
    for (pos, &m) in mask.data().iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        active += 1;
        let range = pos * width..(pos + 1) * width;
        total += a.data()[range.clone()]
            .iter()
            .zip(&b.data()[range])
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>();
    }
    if active == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(total / active as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let (m, k) = a.dims2().unwrap();
        let (_, n) = b.dims2().unwrap();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
                }
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let m = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&Tensor::identity(2), &m).unwrap(), m);
        let v = Tensor::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert_eq!(matmul(&m, &v).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = seeded(3);
        let a = Tensor::randn(&[5, 7], 1.0, &mut rng);
        let b = Tensor::randn(&[7, 3], 1.0, &mut rng);
        let got = matmul(&a, &b).unwrap();
        for (g, w) in got.data().iter().zip(naive_matmul(&a, &b)) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_rejects_bad_inner_dim() {
        let a = Tensor::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &a), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn cosine_cases() {
        assert!((cosine_similarity(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let par = cosine_similarity(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert!((par - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[1e-13, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(cosine_similarity(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn top_k_cases() {
        assert_eq!(top_k(&[0.9, 0.1, 0.5], 2), vec![0, 2]);
        assert_eq!(top_k(&[0.5, 0.5, 0.5], 2), vec![0, 1]);
        assert_eq!(top_k(&[0.2, 0.7], 5), vec![1, 0]);
        assert!(top_k(&[1.0], 0).is_empty());
    }

    #[test]
    fn top_k_matches_full_sort() {
        let mut rng = seeded(11);
        let scores = crate::rng::normal_vec(&mut rng, 100);
        let mut oracle: Vec<usize> = (0..100).collect();
        oracle.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        assert_eq!(top_k(&scores, 10), oracle[..10].to_vec());
    }

    #[test]
    fn masked_mse_cases() {
        let a = Tensor::filled(&[2, 3, 4], 2.0);
        let b = Tensor::filled(&[2, 3, 4], 1.0);
        let all = Tensor::filled(&[2, 3], 1.0);
        assert_eq!(masked_mse(&a, &a, &all).unwrap(), 0.0);
        // direct summation: 6 positions × 4 channels × 1.0 / 6 positions
        assert_eq!(masked_mse(&a, &b, &all).unwrap(), 4.0);
        let none = Tensor::zeros(&[2, 3]);
        assert!(matches!(masked_mse(&a, &b, &none), Err(Error::EmptyMask)));
        // elementwise mask
        let elem = Tensor::filled(&[2, 3, 4], 1.0);
        assert_eq!(masked_mse(&a, &b, &elem).unwrap(), 1.0);
        assert!(masked_mse(&a, &b, &Tensor::zeros(&[3, 2])).is_err());
    }

    fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, n)
    }

    proptest! {
        #[test]
        fn matmul_is_associative(a in vec_strategy(6), b in vec_strategy(12), c in vec_strategy(8)) {
            let a = Tensor::new(vec![2, 3], a).unwrap();
            let b = Tensor::new(vec![3, 4], b).unwrap();
            let c = Tensor::new(vec![4, 2], c).unwrap();
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            let scale = left.max_abs().max(1.0);
            for (l, r) in left.data().iter().zip(right.data()) {
                prop_assert!((l - r).abs() <= 1e-9 * scale);
            }
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(u in vec_strategy(5), v in vec_strategy(5), s in 0.01f64..100.0) {
            let uv = cosine_similarity(&u, &v).unwrap();
            prop_assert!((uv - cosine_similarity(&v, &u).unwrap()).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&uv));
            let us: Vec<f64> = u.iter().map(|x| x * s).collect();
            let nu: f64 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nu * s.min(1.0) > 1e-9 {
                prop_assert!((uv - cosine_similarity(&us, &v).unwrap()).abs() <= 1e-12);
            }
        }

        #[test]
        fn top_k_prefix_property(scores in prop::collection::vec(-3i32..3, 1..40), k in 1usize..40) {
            // small integer range forces plenty of ties
            let s: Vec<f64> = scores.iter().map(|&v| f64::from(v)).collect();
            let a = top_k(&s, k);
            let b = top_k(&s, k + 1);
            prop_assert_eq!(&b[..a.len()], &a[..]);
            prop_assert_eq!(a, top_k(&s, k));
        }
    }
}
