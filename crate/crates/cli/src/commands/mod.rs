mod data;
mod lora;
mod mvhg;

pub use data::{gen_data, GenDataArgs};
pub use lora::{
    analyze, build_teachers, distill, fuse, load_any_model, run_distillation, scatter_svg, AdapterRef, AnalyzeArgs,
    AnalyzeSummary, DistillArgs, DistillSummary, FuseArgs, RunManifest, TeacherArgs,
};
pub use mvhg::{
    grad_check, load_latents, mvhg_eval, mvhg_optimize, EvalRow, GradCase, GradCheckArgs, MvhgEvalArgs,
    MvhgOptimizeArgs,
};
