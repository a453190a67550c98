use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use hyperview::lora::{
    additive_fuse_teachers, concept_preservation, distill as run_distill, flat_delta, generate_teacher_dataset,
    initial_student, load_adapter_set, load_model, load_teachers, make_teachers, merge, pca_adapters, save_model,
    save_teachers, with_teacher_labels, AdapterPca, DistillOutcome, LossRecord, Preservation, Teacher, ToyModel,
};
use hyperview::rng::derive;

use crate::config::{RunConfig, TAG_BASE, TAG_DATA};
use crate::error::{CliError, CliResult};
use crate::report::{ensure_dir, write_file, write_records, write_rows};

#[derive(Args, Clone, Debug)]
pub struct TeacherArgs {
    /// Number of synthetic teacher adapters.
    #[arg(long = "teachers")]
    pub count: usize,
    /// 0 gives identical adapter directions, 1 independent ones.
    #[arg(long)]
    pub divergence: Option<f64>,
}

#[derive(Args, Clone, Debug)]
pub struct DistillArgs {
    #[command(flatten)]
    pub teachers: TeacherArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Loss history CSV; `<out>/loss_history.csv` when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Clone, Debug)]
pub struct FuseArgs {
    #[command(flatten)]
    pub teachers: TeacherArgs,
    #[arg(long)]
    pub out: PathBuf,
}

/// `manifest.json` of a `distill` or `fuse` output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub method: String,
    pub model: String,
    pub teachers_dir: String,
    pub adapters: Vec<AdapterRef>,
    pub config: RunConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterRef {
    pub trigger: String,
    pub dir: String,
}

/// Base model and teachers for a run; `distill` and `fuse` with the same
/// seed and flags see the same teachers.
pub fn build_teachers(cfg: &RunConfig, args: &TeacherArgs) -> CliResult<(ToyModel, Vec<Teacher>)> {
    if args.count == 0 {
        return Err(CliError::Config("--teachers must be >= 1".into()));
    }
    let div = args.divergence.unwrap_or(cfg.teachers.divergence);
    if !(0.0..=1.0).contains(&div) {
        return Err(CliError::Config(format!("divergence {div} outside [0, 1]")));
    }
    let base = ToyModel::base(&cfg.model, cfg.derived_seed(TAG_BASE))?;
    let teachers = make_teachers(&base, &cfg.teacher_spec(args.count, Some(div)))?;
    Ok((base, teachers))
}

fn write_run(
    out: &Path,
    method: &str,
    cfg: &RunConfig,
    base: &ToyModel,
    teachers: &[Teacher],
    model: &ToyModel,
) -> CliResult<()> {
    ensure_dir(out)?;
    save_model(out.join("model"), model)?;
    save_teachers(out.join("teachers"), base, teachers)?;
    let manifest = RunManifest {
        method: method.into(),
        model: "model".into(),
        teachers_dir: "teachers".into(),
        adapters: teachers
            .iter()
            .map(|t| AdapterRef {
                trigger: t.trigger.clone(),
                dir: format!("teachers/{}", t.trigger),
            })
            .collect(),
        config: cfg.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&out.join("manifest.json"), text.as_bytes())
}

#[derive(Clone, Debug)]
pub struct DistillSummary {
    pub history: Vec<LossRecord>,
    pub student: ToyModel,
    pub preservation: Preservation,
}

/// Teachers, their datasets and the distilled student, without writing
/// anything.
pub fn run_distillation(cfg: &RunConfig, args: &TeacherArgs) -> CliResult<(ToyModel, Vec<Teacher>, DistillOutcome)> {
    let (base, teachers) = build_teachers(cfg, args)?;
    let views: Vec<&str> = cfg.dataset.views.iter().map(String::as_str).collect();
    let datasets = teachers
        .iter()
        .enumerate()
        .map(|(i, t)| {
            generate_teacher_dataset(
                &t.model,
                &t.trigger,
                &views,
                cfg.dataset.samples_per_view,
                derive(cfg.derived_seed(TAG_DATA), i as u64),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let dcfg = cfg.distill_config();
    let student = initial_student(&base, &teachers, &dcfg)?;
    let outcome = run_distill(&student, &teachers, &datasets, &dcfg)?;
    Ok((base, teachers, outcome))
}

/// Distills a student from freshly generated teachers and writes the
/// student, the teachers and the loss history.
pub fn distill(args: &DistillArgs, cfg: &RunConfig) -> CliResult<DistillSummary> {
    let (base, teachers, outcome) = run_distillation(cfg, &args.teachers)?;
    write_run(&args.out, "distilled", cfg, &base, &teachers, &outcome.student)?;
    let report = args.report.clone().unwrap_or_else(|| args.out.join("loss_history.csv"));
    write_rows(&report, "distill", cfg, &outcome.history)?;
    let preservation = concept_preservation(&outcome.student, &teachers, &cfg.probes)?;
    Ok(DistillSummary {
        history: outcome.history,
        student: outcome.student,
        preservation,
    })
}

/// Additive fusion baseline: the base plus every teacher's delta.
pub fn fuse(args: &FuseArgs, cfg: &RunConfig) -> CliResult<Preservation> {
    let (base, teachers) = build_teachers(cfg, &args.teachers)?;
    let fused = additive_fuse_teachers(&base, &teachers)?;
    write_run(&args.out, "additive", cfg, &base, &teachers, &fused)?;
    Ok(concept_preservation(&fused, &teachers, &cfg.probes)?)
}

#[derive(Args, Clone, Debug)]
pub struct AnalyzeArgs {
    /// A `distill`/`fuse` output directory, a saved model, or an adapter
    /// directory (merged onto the teachers' base).
    #[arg(long)]
    pub model: PathBuf,
    /// Directory written by `save_teachers` (the `teachers/` of a run).
    #[arg(long)]
    pub teachers_dir: PathBuf,
    /// Per-teacher preservation CSV.
    #[arg(long)]
    pub report: PathBuf,
    /// PCA coordinates CSV; `<report stem>_pca.csv` when absent.
    #[arg(long)]
    pub pca_report: Option<PathBuf>,
    /// Scatter plot of the adapter deltas and the model.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct AnalyzeSummary {
    pub preservation: Preservation,
    pub pca: AdapterPca,
}

fn manifest_kind(dir: &Path) -> CliResult<serde_json::Value> {
    let p = dir.join("manifest.json");
    let text = std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::Core(hyperview::Error::Format {
            path: p.clone(),
            reason: e.to_string(),
        })
    })
}

/// Resolves `--model` to a model sharing the teachers' base.
pub fn load_any_model(path: &Path, base: &ToyModel) -> CliResult<ToyModel> {
    let run_model = path.join("model");
    if run_model.join("manifest.json").is_file() {
        return Ok(load_model(run_model)?);
    }
    let v = manifest_kind(path)?;
    if v.get("adapters").is_some() && v.get("layers").is_none() {
        return Ok(merge(base, &load_adapter_set(path)?)?);
    }
    Ok(load_model(path)?)
}

/// Concept preservation of a model against each teacher, and a 2-D PCA of
/// the teachers' weight deltas together with the model's.
pub fn analyze(args: &AnalyzeArgs, cfg: &RunConfig) -> CliResult<AnalyzeSummary> {
    let (base, teachers) = load_teachers(&args.teachers_dir)?;
    let model = load_any_model(&args.model, &base)?;
    if !model.same_architecture(&base) {
        return Err(CliError::Config(
            "model and teachers' base differ in architecture".into(),
        ));
    }
    let model = with_teacher_labels(&model, &teachers);
    let preservation = concept_preservation(&model, &teachers, &cfg.probes)?;

    let mut rows: Vec<Vec<String>> = preservation
        .per_teacher
        .iter()
        .enumerate()
        .map(|(i, s)| vec![i.to_string(), s.to_string()])
        .collect();
    rows.push(vec!["average".into(), preservation.average.to_string()]);
    write_records(&args.report, "analyze", cfg, &["teacher_id", "score"], &rows)?;

    let mut labels: Vec<String> = teachers.iter().map(|t| t.trigger.clone()).collect();
    let mut deltas = teachers
        .iter()
        .map(|t| flat_delta(&base, &t.adapters))
        .collect::<Result<Vec<_>, _>>()?;
    labels.push("model".into());
    deltas.push(model.delta_from(&base)?);
    let pca = pca_adapters(&labels, &deltas, 2)?;

    let pca_path = args
        .pca_report
        .clone()
        .unwrap_or_else(|| sibling(&args.report, "_pca.csv"));
    let pca_rows: Vec<Vec<String>> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let r = pca.coords.row(i);
            vec![
                l.clone(),
                r[0].to_string(),
                r.get(1).copied().unwrap_or(0.0).to_string(),
            ]
        })
        .collect();
    write_records(&pca_path, "analyze", cfg, &["label", "pc1", "pc2"], &pca_rows)?;
    if let Some(svg) = &args.svg {
        write_file(svg, scatter_svg(&pca).as_bytes())?;
    }
    Ok(AnalyzeSummary { preservation, pca })
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One circle per adapter and a square for the model (the last row).
pub fn scatter_svg(pca: &AdapterPca) -> String {
    const SIZE: f64 = 480.0;
    const MARGIN: f64 = 48.0;
    let n = pca.labels.len();
    let pt = |i: usize| {
        let r = pca.coords.row(i);
        (r[0], r.get(1).copied().unwrap_or(0.0))
    };
    let (mut lo, mut hi) = ((f64::MAX, f64::MAX), (f64::MIN, f64::MIN));
    for i in 0..n {
        let (x, y) = pt(i);
        lo = (lo.0.min(x), lo.1.min(y));
        hi = (hi.0.max(x), hi.1.max(y));
    }
    let span = (hi.0 - lo.0).max(hi.1 - lo.1).max(1e-12);
    let map = |(x, y): (f64, f64)| {
        let s = (SIZE - 2.0 * MARGIN) / span;
        (MARGIN + (x - lo.0) * s, SIZE - MARGIN - (y - lo.1) * s)
    };
    let ratio = |i: usize| pca.explained_ratio.get(i).copied().unwrap_or(0.0) * 100.0;

    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{MARGIN}\" y=\"24\" font-family=\"sans-serif\" font-size=\"13\">PC1 {:.1}% / PC2 {:.1}% of delta variance</text>\n",
        ratio(0),
        ratio(1)
    );
    for i in 0..n {
        let (x, y) = map(pt(i));
        let label = escape(&pca.labels[i]);
        if i + 1 == n {
            out += &format!(
                "<rect class=\"model\" x=\"{:.2}\" y=\"{:.2}\" width=\"12\" height=\"12\" fill=\"#d62728\"><title>{label}</title></rect>\n",
                x - 6.0,
                y - 6.0
            );
        } else {
            out += &format!(
                "<circle class=\"adapter\" cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"6\" fill=\"#1f77b4\"><title>{label}</title></circle>\n"
            );
        }
        out += &format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\">{label}</text>\n",
            x + 9.0,
            y + 4.0
        );
    }
    out += "</svg>\n";
    out
}
