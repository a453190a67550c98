//! Additive fusion vs distillation on synthetic divergent teachers.
//!
//! `cargo run --release -p hyperview --example preservation_trend`

use hyperview::lora::{
    additive_fuse_teachers, concept_preservation, distill, generate_teacher_dataset, initial_student, make_teachers,
    DistillConfig, ModelSpec, ProbeSpec, TeacherSpec, ToyModel,
};

fn main() -> hyperview::Result<()> {
    let cfg = DistillConfig::default();
    let probes = ProbeSpec::default();
    println!("n  additive  distilled");
    for n in [2, 4, 6] {
        let (mut add, mut dis) = (0.0, 0.0);
        let seeds = 5;
        for seed in 0..seeds {
            let base = ToyModel::base(&ModelSpec::default(), seed)?;
            let teachers = make_teachers(
                &base,
                &TeacherSpec {
                    count: n,
                    seed,
                    ..TeacherSpec::default()
                },
            )?;
            let data = teachers
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    generate_teacher_dataset(&t.model, &t.trigger, &["front", "up"], 10, seed * 100 + i as u64)
                })
                .collect::<hyperview::Result<Vec<_>>>()?;
            let fused = additive_fuse_teachers(&base, &teachers)?;
            add += concept_preservation(&fused, &teachers, &probes)?.average;
            let cfg = DistillConfig { seed, ..cfg.clone() };
            let out = distill(&initial_student(&base, &teachers, &cfg)?, &teachers, &data, &cfg)?;
            dis += concept_preservation(&out.student, &teachers, &probes)?.average;
        }
        println!("{n}  {:.3}     {:.3}", add / seeds as f64, dis / seeds as f64);
    }
    Ok(())
}
