use super::{
    build_hypergraph, build_node_features, hgnn_backward, hgnn_forward_traced, HgnnParams, Hypergraph, LatentMask,
    MultiViewLatents,
};
use crate::error::{Error, Result};
use crate::tensor::{masked_mse, Tensor};

/// The two hypergraphs the loss propagates over, one per branch.
#[derive(Clone, Debug, PartialEq)]
pub struct MvhgStructure {
    pub graph_z: Hypergraph,
    pub graph_pred: Hypergraph,
}

impl MvhgStructure {
    /// Separate graphs from each branch's own features.
    pub fn build(z: &MultiViewLatents, z_pred: &MultiViewLatents, k: usize) -> Result<Self> {
        Ok(Self {
            graph_z: build_hypergraph(&build_node_features(z), k)?,
            graph_pred: build_hypergraph(&build_node_features(z_pred), k)?,
        })
    }

    /// Both branches share the graph built from `reference`.
    pub fn shared(reference: &MultiViewLatents, k: usize) -> Result<Self> {
        let g = build_hypergraph(&build_node_features(reference), k)?;
        Ok(Self {
            graph_z: g.clone(),
            graph_pred: g,
        })
    }
}

#[derive(Clone, Debug)]
pub struct MvhgOutput {
    pub loss: f64,
    /// Gradient with respect to the predicted latents, view by view.
    pub grad: MultiViewLatents,
    /// Number of node positions active in either mask.
    pub active: usize,
}

/// Masked feature-matching loss between HGNN-propagated ground-truth and
/// predicted latents, each branch over its own top-k hypergraph.
pub fn mvhg_loss(
    z: &MultiViewLatents,
    z_pred: &MultiViewLatents,
    masks: &LatentMask,
    masks_pred: &LatentMask,
    params: &HgnnParams,
    k: usize,
) -> Result<MvhgOutput> {
    check_shapes(z, z_pred, masks, masks_pred)?;
    let structure = MvhgStructure::build(z, z_pred, k)?;
    mvhg_loss_with_structure(z, z_pred, masks, masks_pred, params, &structure)
}

fn check_shapes(z: &MultiViewLatents, z_pred: &MultiViewLatents, m: &LatentMask, mp: &LatentMask) -> Result<()> {
    if !z.same_shape(z_pred) {
        return Err(Error::shape(format!(
            "branches differ: {} views {:?} vs {} views {:?}",
            z.n_views(),
            z.dims(),
            z_pred.n_views(),
            z_pred.dims()
        )));
    }
    if !m.matches(z) || !mp.matches(z) {
        return Err(Error::shape("mask grid does not match latents"));
    }
    Ok(())
}

/// [`mvhg_loss`] with the hypergraphs supplied, so the structure can be
/// held fixed while the latents vary.
///
/// Branch features are zeroed outside their own mask; the squared
/// difference is averaged over positions active in either mask.
pub fn mvhg_loss_with_structure(
    z: &MultiViewLatents,
    z_pred: &MultiViewLatents,
    masks: &LatentMask,
    masks_pred: &LatentMask,
    params: &HgnnParams,
    structure: &MvhgStructure,
) -> Result<MvhgOutput> {
    check_shapes(z, z_pred, masks, masks_pred)?;
    let fz = hgnn_forward_traced(&structure.graph_z, build_node_features(z).matrix(), params)?.output;
    let trace = hgnn_forward_traced(&structure.graph_pred, build_node_features(z_pred).matrix(), params)?;

    let m = masks.node_flags();
    let mp = masks_pred.node_flags();
    let fz_masked = mask_rows(&fz, &m);
    let fp_masked = mask_rows(&trace.output, &mp);
    let union: Vec<f64> = m.iter().zip(&mp).map(|(a, b)| f64::from(u8::from(*a || *b))).collect();
    let active = union.iter().filter(|&&v| v != 0.0).count();
    let union = Tensor::new(vec![union.len()], union)?;
    let loss = masked_mse(&fz_masked, &fp_masked, &union)?;

    // d/dF_pred: −(2/|M|)·m̂_v·(F'_z − F'_pred)
    let scale = -2.0 / active as f64;
    let mut grad_out = fz_masked.sub(&fp_masked)?.scale(scale);
    zero_rows(&mut grad_out, &mp);
    let grad_nodes = hgnn_backward(&structure.graph_pred, params, &trace, &grad_out)?;

    let (h, w, c) = z.dims();
    let stacked = grad_nodes.reshape(vec![z.n_views(), h, w, c])?;
    Ok(MvhgOutput {
        loss,
        grad: MultiViewLatents::from_stacked(&stacked, z_pred.labels().to_vec())?,
        active,
    })
}

fn mask_rows(x: &Tensor, flags: &[bool]) -> Tensor {
    let mut out = x.clone();
    zero_rows(&mut out, flags);
    out
}

fn zero_rows(x: &mut Tensor, flags: &[bool]) {
    let c = x.shape()[1];
    for (v, &on) in flags.iter().enumerate() {
        if !on {
            x.data_mut()[v * c..(v + 1) * c].fill(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypergraph::Activation;
    use crate::rng::seeded;
    use crate::tensor::{finite_diff_grad, relative_error};

    fn random_latents(n: usize, h: usize, w: usize, c: usize, seed: u64) -> MultiViewLatents {
        let mut rng = seeded(seed);
        MultiViewLatents::unlabeled((0..n).map(|_| Tensor::randn(&[h, w, c], 1.0, &mut rng)).collect()).unwrap()
    }

    fn perturbed(z: &MultiViewLatents, mag: f64, seed: u64) -> MultiViewLatents {
        let mut rng = seeded(seed);
        z.map_views(|_, v| v.add(&Tensor::randn(v.shape(), mag, &mut rng)).unwrap())
            .unwrap()
    }

    #[test]
    fn identical_branches_give_zero() {
        let z = random_latents(2, 4, 4, 2, 1);
        let m = LatentMask::all_active(2, 4, 4);
        let p = HgnnParams::uniform(2, 2, Activation::Relu, 3).unwrap();
        let out = mvhg_loss(&z, &z, &m, &m, &p, 3).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad.views().iter().all(|v| v.max_abs() == 0.0));
        assert_eq!(out.active, 32);
    }

    #[test]
    fn gradient_matches_finite_differences_with_frozen_structure() {
        let z = random_latents(2, 4, 4, 2, 2);
        let zp = perturbed(&z, 0.3, 5);
        let m = LatentMask::all_active(2, 4, 4);
        let p = HgnnParams::uniform(2, 2, Activation::Identity, 3).unwrap();
        let s = MvhgStructure::build(&z, &zp, 3).unwrap();
        let out = mvhg_loss_with_structure(&z, &zp, &m, &m, &p, &s).unwrap();
        let labels = zp.labels().to_vec();
        let fd = finite_diff_grad(
            |x| {
                let cand = MultiViewLatents::from_stacked(x, labels.clone()).unwrap();
                mvhg_loss_with_structure(&z, &cand, &m, &m, &p, &s).unwrap().loss
            },
            &zp.stacked(),
            1e-6,
        );
        assert!(relative_error(out.grad.stacked().data(), fd.data()) < 1e-4);
    }

    #[test]
    fn partial_masks_and_gradient() {
        let z = random_latents(2, 3, 3, 3, 7);
        let zp = perturbed(&z, 0.5, 8);
        let mut rng = seeded(9);
        let grid =
            |rng: &mut crate::rng::Rng| Tensor::randn(&[3, 3], 1.0, rng).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let m = LatentMask::from_views(&[grid(&mut rng), grid(&mut rng)]).unwrap();
        let mp = LatentMask::from_views(&[grid(&mut rng), grid(&mut rng)]).unwrap();
        let p = HgnnParams::uniform(3, 2, Activation::Relu, 4).unwrap();
        let s = MvhgStructure::build(&z, &zp, 4).unwrap();
        let out = mvhg_loss_with_structure(&z, &zp, &m, &mp, &p, &s).unwrap();
        let labels = zp.labels().to_vec();
        let fd = finite_diff_grad(
            |x| {
                let cand = MultiViewLatents::from_stacked(x, labels.clone()).unwrap();
                mvhg_loss_with_structure(&z, &cand, &m, &mp, &p, &s).unwrap().loss
            },
            &zp.stacked(),
            1e-6,
        );
        assert!(relative_error(out.grad.stacked().data(), fd.data()) < 1e-4);
    }

    #[test]
    fn monotone_in_perturbation_size() {
        let z = random_latents(2, 8, 8, 4, 10);
        let m = LatentMask::all_active(2, 8, 8);
        let p = HgnnParams::uniform(4, 2, Activation::Relu, 11).unwrap();
        let s = MvhgStructure::shared(&z, 8).unwrap();
        let loss = |mag: f64| {
            let zp = perturbed(&z, mag, 12);
            mvhg_loss_with_structure(&z, &zp, &m, &m, &p, &s).unwrap().loss
        };
        let (a, b) = (loss(1e-3), loss(2e-3));
        assert!(a > 0.0 && b > a);
    }

    #[test]
    fn errors() {
        let z = random_latents(2, 2, 2, 2, 1);
        let other = random_latents(2, 2, 3, 2, 1);
        let m = LatentMask::all_active(2, 2, 2);
        let none = LatentMask::from_views(&[Tensor::zeros(&[2, 2]), Tensor::zeros(&[2, 2])]).unwrap();
        let p = HgnnParams::uniform(2, 1, Activation::Relu, 0).unwrap();
        assert!(matches!(
            mvhg_loss(&z, &other, &m, &m, &p, 2),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(mvhg_loss(&z, &z, &none, &none, &p, 2), Err(Error::EmptyMask)));
        let wrong = LatentMask::all_active(1, 2, 2);
        assert!(matches!(
            mvhg_loss(&z, &z, &wrong, &m, &p, 2),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
