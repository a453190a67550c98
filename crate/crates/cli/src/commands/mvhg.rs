use std::path::{Path, PathBuf};

use clap::Args;
use rand::Rng;
use serde::Serialize;

use hyperview::diffusion::{ism_residual_with_grad, sds_residual, sds_surrogate, Condition, GaussianOracle};
use hyperview::hypergraph::{
    mvhg_loss, mvhg_loss_with_structure, optimize_latents, Activation, HgnnParams, LatentMask, MultiViewLatents,
    MvhgStructure, OptimizeSpec, StepRecord,
};
use hyperview::io::{read_fdt, write_fdt};
use hyperview::rng::{derive, seeded};
use hyperview::synth::EncodedScene;
use hyperview::tensor::{finite_diff_grad, relative_error};
use hyperview::{Error, Tensor};

use super::data::{mask_from_ppm, scene_for};
use crate::config::{RunConfig, TAG_GRAD, TAG_INIT, TAG_OPTIMIZE};
use crate::error::{CliError, CliResult};
use crate::report::{ensure_dir, write_records, write_rows};

#[derive(Args, Clone, Debug)]
pub struct MvhgEvalArgs {
    /// Directory of `view_*.fdt` files, or one FDT of rank 3 or 4.
    #[arg(long)]
    pub latents: PathBuf,
    /// Predicted latents, same layout as `--latents`.
    #[arg(long)]
    pub pred: PathBuf,
    /// Hyperedge size; the config's `hgnn.k` when absent.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub loss: f64,
    pub active: usize,
    pub k: usize,
    pub layer_dims: String,
    pub seed: u64,
    pub views: usize,
}

fn format_error(path: &Path, reason: impl Into<String>) -> CliError {
    CliError::Core(Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    })
}

/// Latents from a directory of `view_<label>.fdt` files (sorted by label)
/// or a single file, with masks when every view has a matching
/// `view_<label>.ppm` image beside it.
pub fn load_latents(path: &Path, cfg: &RunConfig) -> CliResult<(MultiViewLatents, Option<LatentMask>)> {
    if !path.is_dir() {
        let t = read_fdt(path)?;
        let lat = match t.rank() {
            3 => MultiViewLatents::unlabeled(vec![t]),
            4 => {
                let labels = (0..t.shape()[0]).map(|i| format!("view{i}")).collect();
                MultiViewLatents::from_stacked(&t, labels)
            }
            r => {
                return Err(format_error(
                    path,
                    format!("expected rank 3 or 4 latents, got rank {r}"),
                ))
            }
        }
        .map_err(|e| format_error(path, e.to_string()))?;
        return Ok((lat, None));
    }
    let entries = std::fs::read_dir(path).map_err(|e| CliError::io(path, e))?;
    let mut labels: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            Some(name.strip_prefix("view_")?.strip_suffix(".fdt")?.to_string())
        })
        .collect();
    labels.sort();
    if labels.is_empty() {
        return Err(format_error(path, "no view_*.fdt files"));
    }
    let views = labels
        .iter()
        .map(|l| read_fdt(path.join(format!("view_{l}.fdt"))))
        .collect::<Result<Vec<_>, _>>()?;
    let lat = MultiViewLatents::new(views, labels.clone()).map_err(|e| format_error(path, e.to_string()))?;

    let images: Vec<PathBuf> = labels.iter().map(|l| path.join(format!("view_{l}.ppm"))).collect();
    let masks = if images.iter().all(|p| p.is_file()) {
        let (h, w, _) = lat.dims();
        let grids = images
            .iter()
            .map(|p| mask_from_ppm(p, h, w, cfg))
            .collect::<CliResult<Vec<_>>>()?;
        Some(LatentMask::from_views(&grids)?)
    } else {
        None
    };
    Ok((lat, masks))
}

fn dims_string(p: &HgnnParams) -> String {
    p.dims().iter().map(ToString::to_string).collect::<Vec<_>>().join("-")
}

/// Hypergraph feature-matching loss between two latent sets.
pub fn mvhg_eval(args: &MvhgEvalArgs, cfg: &RunConfig) -> CliResult<EvalRow> {
    let (z, masks) = load_latents(&args.latents, cfg)?;
    let (mut zp, mut masks_pred) = load_latents(&args.pred, cfg)?;
    if !z.same_shape(&zp) {
        return Err(CliError::Config(format!(
            "latents are {} views of {:?} but predictions are {} views of {:?}",
            z.n_views(),
            z.dims(),
            zp.n_views(),
            zp.dims()
        )));
    }
    // align views by label when both sides name the same set
    let order: Option<Vec<usize>> = z
        .labels()
        .iter()
        .map(|l| zp.labels().iter().position(|p| p == l))
        .collect();
    if let Some(order) = order {
        zp = zp.permuted(&order)?;
        masks_pred = masks_pred.map(|m| m.permuted(&order)).transpose()?;
    }
    let (h, w, c) = z.dims();
    let masks = masks.unwrap_or_else(|| LatentMask::all_active(z.n_views(), h, w));
    let masks_pred = masks_pred.unwrap_or_else(|| masks.clone());
    let k = args.k.unwrap_or(cfg.hgnn.k);
    if k == 0 {
        return Err(CliError::Config("k must be >= 1".into()));
    }
    let params = cfg.hgnn_params(c)?;
    let out = mvhg_loss(&z, &zp, &masks, &masks_pred, &params, k)?;
    let row = EvalRow {
        loss: out.loss,
        active: out.active,
        k,
        layer_dims: dims_string(&params),
        seed: cfg.seed,
        views: z.n_views(),
    };
    write_rows(&args.report, "mvhg-eval", cfg, std::slice::from_ref(&row))?;
    Ok(row)
}

#[derive(Args, Clone, Debug)]
pub struct MvhgOptimizeArgs {
    /// Part category, or `random`.
    #[arg(long, default_value = "screw")]
    pub scene: String,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Loss trajectory CSV.
    #[arg(long)]
    pub report: PathBuf,
    /// Directory for the final latents as `view_<label>.fdt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Optimizes noisy latents of a rendered scene toward it under the
/// weighted interval-matching plus hypergraph objective, the denoiser being
/// the exact oracle for the scene's own latents.
///
/// The trajectory is written even when the run diverges.
pub fn mvhg_optimize(args: &MvhgOptimizeArgs, cfg: &RunConfig) -> CliResult<Vec<StepRecord>> {
    cfg.check_resolution(cfg.scene.resolution)?;
    let scene = scene_for(&args.scene, cfg)?;
    let encoded = EncodedScene::render(&scene, &cfg.scene.views, cfg.scene.resolution, &cfg.encoder()?)?;
    let masks = encoded.latent_masks(cfg.thresholds)?;
    let target = encoded.latents.stacked();
    let sched = cfg.schedule()?;
    let oracle = GaussianOracle::new(target.clone(), sched.clone());

    let mut rng = seeded(cfg.derived_seed(TAG_INIT));
    let init = target.add(&Tensor::randn(target.shape(), cfg.optimize.init_noise, &mut rng))?;
    let init = MultiViewLatents::from_stacked(&init, encoded.latents.labels().to_vec())?;
    let (_, _, c) = init.dims();
    let spec = OptimizeSpec {
        steps: args.steps.unwrap_or(cfg.optimize.steps),
        lr: args.lr.unwrap_or(cfg.optimize.lr),
        weights: cfg.loss,
        k: cfg.hgnn.k,
        t: cfg.optimize.t,
        delta_t: cfg.optimize.delta_t,
        seed: cfg.derived_seed(TAG_OPTIMIZE),
    };
    let result = optimize_latents(
        &init,
        &oracle,
        &Condition::text(scene.category.clone()),
        &sched,
        &cfg.hgnn_params(c)?,
        &masks,
        &spec,
    );
    match result {
        Ok(outcome) => {
            write_rows(&args.report, "mvhg-optimize", cfg, &outcome.trajectory)?;
            if let Some(dir) = &args.out {
                ensure_dir(dir)?;
                for (label, v) in outcome.latents.labels().iter().zip(outcome.latents.views()) {
                    write_fdt(dir.join(format!("view_{label}.fdt")), v)?;
                }
            }
            Ok(outcome.trajectory)
        }
        Err(Error::DivergenceDetected {
            step,
            initial,
            current,
            trajectory,
        }) => {
            write_rows(&args.report, "mvhg-optimize", cfg, &trajectory)?;
            Err(Error::DivergenceDetected {
                step,
                initial,
                current,
                trajectory,
            }
            .into())
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Args, Clone, Debug)]
pub struct GradCheckArgs {
    /// Comma-separated `NxHxWxC` sizes; the config's when absent.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<String>>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Scales the analytic hypergraph gradient by 1.01 (self-test of the checker).
    #[arg(long, hide = true)]
    pub inject_bug: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCase {
    pub case: String,
    pub kind: &'static str,
    pub size: String,
    pub k: usize,
    pub activation: String,
    pub rel_error: f64,
    pub pass: bool,
}

fn parse_size(s: &str) -> CliResult<[usize; 4]> {
    let parts: Vec<usize> = s
        .split('x')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Config(format!("size `{s}` is not NxHxWxC")))?;
    match parts[..] {
        [n, h, w, c] if n > 0 && h > 0 && w > 0 && c > 0 => Ok([n, h, w, c]),
        _ => Err(CliError::Config(format!(
            "size `{s}` is not NxHxWxC with positive entries"
        ))),
    }
}

fn random_mask(n: usize, h: usize, w: usize, rng: &mut hyperview::rng::Rng) -> CliResult<LatentMask> {
    let mut grids: Vec<Tensor> = (0..n)
        .map(|_| {
            Tensor::new(
                vec![h, w],
                (0..h * w).map(|_| f64::from(u8::from(rng.random_bool(0.7)))).collect(),
            )
        })
        .collect::<Result<_, _>>()?;
    grids[0].data_mut()[0] = 1.0;
    Ok(LatentMask::from_views(&grids)?)
}

/// Compares analytic gradients against central differences: the
/// hypergraph loss (structure frozen) for every size, `k` and activation,
/// plus the interval-matching and score-distillation gradients per size.
pub fn grad_check(args: &GradCheckArgs, cfg: &RunConfig) -> CliResult<Vec<GradCase>> {
    let gc = &cfg.grad_check;
    let sizes = args.sizes.clone().unwrap_or_else(|| gc.sizes.clone());
    let sizes = sizes.iter().map(|s| parse_size(s)).collect::<CliResult<Vec<_>>>()?;
    if gc.ks.is_empty() || gc.ks.contains(&0) {
        return Err(CliError::Config("grad_check.ks must be non-empty and positive".into()));
    }
    let sched = cfg.schedule()?;
    let (t, dt) = (cfg.optimize.t, cfg.optimize.delta_t);
    let mut cases = Vec::new();
    let root = cfg.derived_seed(TAG_GRAD);
    let mut case_seed = 0u64;

    for &[n, h, w, c] in &sizes {
        let size = format!("{n}x{h}x{w}x{c}");
        for &k in &gc.ks {
            for act in [Activation::Identity, Activation::Relu] {
                case_seed += 1;
                let mut rng = seeded(derive(root, case_seed));
                let z = Tensor::randn(&[n, h, w, c], 1.0, &mut rng);
                let zp = z.add(&Tensor::randn(z.shape(), 0.3, &mut rng))?;
                let labels: Vec<String> = (0..n).map(|i| format!("view{i}")).collect();
                let z = MultiViewLatents::from_stacked(&z, labels.clone())?;
                let zp = MultiViewLatents::from_stacked(&zp, labels.clone())?;
                let m = random_mask(n, h, w, &mut rng)?;
                let mp = random_mask(n, h, w, &mut rng)?;
                let params = HgnnParams::uniform(c, 2, act, derive(derive(root, case_seed), 1))?;
                let structure = MvhgStructure::build(&z, &zp, k)?;
                let out = mvhg_loss_with_structure(&z, &zp, &m, &mp, &params, &structure)?;
                let mut analytic = out.grad.stacked();
                if args.inject_bug {
                    analytic = analytic.scale(1.01);
                }
                let fd = finite_diff_grad(
                    |x| {
                        let cand = MultiViewLatents::from_stacked(x, labels.clone()).expect("same shape");
                        mvhg_loss_with_structure(&z, &cand, &m, &mp, &params, &structure)
                            .expect("validated inputs")
                            .loss
                    },
                    &zp.stacked(),
                    gc.step,
                );
                let act_name = match act {
                    Activation::Identity => "identity",
                    Activation::Relu => "relu",
                };
                cases.push(case(
                    format!("mvhg-{size}-k{k}-{act_name}"),
                    "mvhg",
                    &size,
                    k,
                    act_name,
                    relative_error(analytic.data(), fd.data()),
                    gc.tolerance,
                ));
            }
        }

        case_seed += 1;
        let mut rng = seeded(derive(root, case_seed));
        let mean = Tensor::randn(&[n, h, w, c], 1.0, &mut rng);
        let x0 = mean.add(&Tensor::randn(mean.shape(), 0.5, &mut rng))?;
        let eps = Tensor::randn(mean.shape(), 1.0, &mut rng);
        let oracle = GaussianOracle::new(mean, sched.clone());
        let cond = Condition::text("grad-check");

        let (_, g_ism) = ism_residual_with_grad(&x0, t, dt, &oracle, &cond, &sched, &eps)?;
        let fd = finite_diff_grad(
            |x| {
                ism_residual_with_grad(x, t, dt, &oracle, &cond, &sched, &eps)
                    .expect("validated inputs")
                    .0
            },
            &x0,
            gc.step,
        );
        cases.push(case(
            format!("ism-{size}"),
            "ism",
            &size,
            0,
            "-",
            relative_error(g_ism.data(), fd.data()),
            gc.tolerance,
        ));

        // the surrogate's exact gradient must be the SDS update direction
        let sds = sds_residual(&x0, t, &eps, &oracle, &cond, &sched)?;
        let w = sched.omega(t)?;
        let fd = finite_diff_grad(
            |x| sds_surrogate(x, &sds.residual, w).expect("same shape"),
            &x0,
            gc.step,
        );
        cases.push(case(
            format!("sds-{size}"),
            "sds",
            &size,
            0,
            "-",
            relative_error(sds.grad.data(), fd.data()),
            gc.tolerance,
        ));
    }

    if let Some(p) = &args.report {
        let rows: Vec<Vec<String>> = cases
            .iter()
            .map(|c| {
                vec![
                    c.case.clone(),
                    c.kind.to_string(),
                    c.size.clone(),
                    c.k.to_string(),
                    c.activation.clone(),
                    format!("{:e}", c.rel_error),
                    c.pass.to_string(),
                ]
            })
            .collect();
        write_records(
            p,
            "grad-check",
            cfg,
            &["case", "kind", "size", "k", "activation", "rel_error", "pass"],
            &rows,
        )?;
    }
    let failed: Vec<&GradCase> = cases.iter().filter(|c| !c.pass).collect();
    if let Some(first) = failed.first() {
        return Err(CliError::Check(format!(
            "{} of {} gradient cases exceed tolerance {:e}; first is {} with relative error {:.3e}",
            failed.len(),
            cases.len(),
            gc.tolerance,
            first.case,
            first.rel_error
        )));
    }
    Ok(cases)
}

fn case(name: String, kind: &'static str, size: &str, k: usize, act: &str, err: f64, tol: f64) -> GradCase {
    GradCase {
        case: name,
        kind,
        size: size.to_string(),
        k,
        activation: act.to_string(),
        rel_error: err,
        pass: err.is_finite() && err < tol,
    }
}
