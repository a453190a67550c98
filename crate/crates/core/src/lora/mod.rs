//! Low-rank adapters on a toy text-conditioned noise predictor, naive
//! additive fusion, and two-stage distillation of several adapted teachers
//! into a single student.

mod adapter;
mod analysis;
mod distill;
mod model;
mod store;
mod teachers;

pub use adapter::{lora_delta, AdapterEntry, AdapterSet, LoraAdapter};
pub use analysis::{pca_adapters, AdapterPca};
pub use distill::{
    distill, initial_student, DistillConfig, DistillOutcome, LossRecord, NoiseTarget, Phase, RoundRobin, StudentInit,
    WeightMode,
};
pub use model::{additive_fuse, merge, Layer, ModelSpec, Nonlinearity, Stage, ToyModel, Trace, TraceGrad, VIEW_TAGS};
pub use store::{load_adapter_set, load_model, load_teachers, save_adapter_set, save_model, save_teachers, MANIFEST};
pub use teachers::{
    additive_fuse_teachers, concept_preservation, flat_delta, generate_teacher_dataset, make_teachers,
    mean_pairwise_cosine, trigger_label, with_teacher_labels, DistillDataset, Preservation, ProbeSpec, Record, Teacher,
    TeacherSpec,
};
