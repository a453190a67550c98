//! Directory layouts for adapters, models and teacher sets: factors and
//! weights as FDT files next to a JSON manifest.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adapter::{AdapterEntry, AdapterSet, LoraAdapter};
use super::model::{merge, Layer, Nonlinearity, Stage, ToyModel};
use super::teachers::Teacher;
use crate::error::{Error, Result};
use crate::io::{read_fdt, write_fdt};
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("manifest types serialize");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdapterManifest {
    name: String,
    adapters: Vec<AdapterEntry>,
}

pub fn save_adapter_set(dir: impl AsRef<Path>, set: &AdapterSet) -> Result<()> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    let mut entries = Vec::with_capacity(set.adapters.len());
    for (i, ad) in set.adapters.iter().enumerate() {
        let stem = format!("{i:02}_{}", ad.target_layer());
        let (b_file, a_file) = (format!("{stem}_B.fdt"), format!("{stem}_A.fdt"));
        write_fdt(dir.join(&b_file), ad.b())?;
        write_fdt(dir.join(&a_file), ad.a())?;
        entries.push(AdapterEntry {
            target_layer: ad.target_layer().to_string(),
            rank: ad.rank(),
            scale: ad.scale(),
            b_file,
            a_file,
        });
    }
    write_json(
        &dir.join(MANIFEST),
        &AdapterManifest {
            name: set.name.clone(),
            adapters: entries,
        },
    )
}

pub fn load_adapter_set(dir: impl AsRef<Path>) -> Result<AdapterSet> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let m: AdapterManifest = read_json(&path)?;
    let adapters = m
        .adapters
        .into_iter()
        .map(|e| {
            let ad = LoraAdapter::new(
                e.target_layer,
                read_fdt(dir.join(&e.b_file))?,
                read_fdt(dir.join(&e.a_file))?,
                e.scale,
            )?;
            if ad.rank() != e.rank {
                return Err(Error::Format {
                    path: path.clone(),
                    reason: format!("rank {} recorded, factors have {}", e.rank, ad.rank()),
                });
            }
            Ok(ad)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AdapterSet::new(m.name, adapters))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerEntry {
    name: String,
    stage: Stage,
    activation: Nonlinearity,
    file: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelManifest {
    embed_seed: u64,
    layers: Vec<LayerEntry>,
    /// Row order of `embeddings.fdt`.
    labels: Vec<String>,
}

pub fn save_model(dir: impl AsRef<Path>, model: &ToyModel) -> Result<()> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    let mut layers = Vec::new();
    for (stage, l) in model.layers() {
        let file = format!("{}.fdt", l.name);
        write_fdt(dir.join(&file), &l.weight)?;
        layers.push(LayerEntry {
            name: l.name.clone(),
            stage,
            activation: l.activation,
            file,
        });
    }
    let labels: Vec<String> = model.embeddings().keys().cloned().collect();
    let rows: Vec<Vec<f64>> = model.embeddings().values().cloned().collect();
    write_fdt(dir.join("embeddings.fdt"), &Tensor::from_rows(&rows)?)?;
    write_json(
        &dir.join(MANIFEST),
        &ModelManifest {
            embed_seed: model.embed_seed(),
            layers,
            labels,
        },
    )
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<ToyModel> {
    let dir = dir.as_ref();
    let m: ModelManifest = read_json(&dir.join(MANIFEST))?;
    let (mut text, mut unet) = (Vec::new(), Vec::new());
    for e in m.layers {
        let layer = Layer {
            weight: read_fdt(dir.join(&e.file))?,
            name: e.name,
            activation: e.activation,
        };
        match e.stage {
            Stage::Text => text.push(layer),
            Stage::Unet => unet.push(layer),
        }
    }
    let table = read_fdt(dir.join("embeddings.fdt"))?;
    if table.shape()[0] != m.labels.len() {
        return Err(Error::Format {
            path: dir.join(MANIFEST),
            reason: "label count differs from embedding rows".into(),
        });
    }
    let embeddings: BTreeMap<String, Vec<f64>> = m
        .labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| (l, table.row(i).to_vec()))
        .collect();
    ToyModel::from_layers(text, unet, embeddings, m.embed_seed)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TeacherIndex {
    triggers: Vec<String>,
}

/// Writes `base/`, one adapter directory per trigger, and `teachers.json`.
pub fn save_teachers(dir: impl AsRef<Path>, base: &ToyModel, teachers: &[Teacher]) -> Result<()> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    save_model(dir.join("base"), base)?;
    for t in teachers {
        save_adapter_set(dir.join(&t.trigger), &t.adapters)?;
    }
    write_json(
        &dir.join("teachers.json"),
        &TeacherIndex {
            triggers: teachers.iter().map(|t| t.trigger.clone()).collect(),
        },
    )
}

/// Inverse of [`save_teachers`]; teacher models are re-merged from the base.
pub fn load_teachers(dir: impl AsRef<Path>) -> Result<(ToyModel, Vec<Teacher>)> {
    let dir = dir.as_ref();
    let base = load_model(dir.join("base"))?;
    let index: TeacherIndex = read_json(&dir.join("teachers.json"))?;
    let teachers = index
        .triggers
        .into_iter()
        .map(|trigger| {
            let adapters = load_adapter_set(dir.join(&trigger))?;
            let mut model = merge(&base, &adapters)?;
            model.register_label(&trigger);
            Ok(Teacher {
                trigger,
                adapters,
                model,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((base, teachers))
}
