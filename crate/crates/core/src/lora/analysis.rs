use crate::error::{Error, Result};
use crate::tensor::{pca, Pca, Tensor};

/// Low-dimensional view of a family of flattened weight deltas.
#[derive(Clone, Debug)]
pub struct AdapterPca {
    pub labels: Vec<String>,
    /// `n × dims`
    pub coords: Tensor,
    pub explained_ratio: Vec<f64>,
    /// `n × n` Euclidean distances between the full-dimensional deltas.
    pub distances: Tensor,
    pub fit: Pca,
}

pub fn pca_adapters(labels: &[String], deltas: &[Vec<f64>], dims: usize) -> Result<AdapterPca> {
    if deltas.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "need at least 2 deltas, got {}",
            deltas.len()
        )));
    }
    if labels.len() != deltas.len() {
        return Err(Error::shape(format!(
            "{} labels for {} deltas",
            labels.len(),
            deltas.len()
        )));
    }
    let rows = Tensor::from_rows(deltas)?;
    let fit = pca(&rows, dims)?;
    let n = deltas.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            dist[i * n + j] = deltas[i]
                .iter()
                .zip(&deltas[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
        }
    }
    Ok(AdapterPca {
        labels: labels.to_vec(),
        coords: fit.projections.clone(),
        explained_ratio: fit.explained_variance_ratio(),
        distances: Tensor::new(vec![n, n], dist)?,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lora::{additive_fuse, flat_delta, make_teachers, AdapterSet, ModelSpec, TeacherSpec, ToyModel};

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("a{i}")).collect()
    }

    #[test]
    fn scaled_family_is_collinear() {
        let v: Vec<f64> = (0..40).map(|i| (i as f64).cos()).collect();
        let family: Vec<Vec<f64>> = [1.0, 2.0, 3.5]
            .iter()
            .map(|s| v.iter().map(|x| s * x).collect())
            .collect();
        let p = pca_adapters(&labels(3), &family, 2).unwrap();
        assert_eq!(p.coords.shape(), &[3, 2]);
        assert!(p.explained_ratio[0] > 1.0 - 1e-12);
        for i in 0..3 {
            assert!(p.coords.row(i)[1].abs() < 1e-9);
        }
        assert!((p.distances.data()[1] - v.iter().map(|x| x * x).sum::<f64>().sqrt()).abs() < 1e-12);
    }

    #[test]
    fn fused_delta_projects_linearly() {
        let base = ToyModel::base(&ModelSpec::default(), 2).unwrap();
        let teachers = make_teachers(
            &base,
            &TeacherSpec {
                count: 4,
                ..TeacherSpec::default()
            },
        )
        .unwrap();
        let deltas: Vec<Vec<f64>> = teachers
            .iter()
            .map(|t| flat_delta(&base, &t.adapters).unwrap())
            .collect();
        let p = pca_adapters(&labels(4), &deltas, 2).unwrap();
        let sets: Vec<AdapterSet> = teachers.iter().map(|t| t.adapters.clone()).collect();
        let fused = additive_fuse(&base, &sets).unwrap().delta_from(&base).unwrap();
        let got = p.fit.project(&fused).unwrap();
        // C(Σv − m) = Σ C(v_i − m) + (n − 1)·C·m
        let cm = {
            let zero = vec![0.0; fused.len()];
            p.fit.project(&zero).unwrap().iter().map(|x| -x).collect::<Vec<_>>()
        };
        for d in 0..2 {
            let want: f64 = (0..4).map(|i| p.coords.row(i)[d]).sum::<f64>() + 3.0 * cm[d];
            assert!(
                (got[d] - want).abs() < 1e-9 * want.abs().max(1.0),
                "{} vs {want}",
                got[d]
            );
        }
    }

    #[test]
    fn needs_two_rows() {
        assert!(matches!(
            pca_adapters(&labels(1), &[vec![1.0, 2.0]], 1),
            Err(Error::DegenerateInput(_))
        ));
    }
}
