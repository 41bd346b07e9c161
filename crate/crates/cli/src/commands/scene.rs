use std::collections::BTreeMap;
use std::fs;

use dualfuse_core::scene::{
    assemble_scene, build_prompt, read_depth_frame, read_detections, read_lights, read_sign_db,
    write_sign_db, SceneInputs, SignDatabase, SignEntry, DEFAULT_PREAMBLE, DEFAULT_SIGN_THRESHOLD,
};
use dualfuse_eval::records::read_questions;
use serde::Deserialize;
use serde_json::json;

use super::{create_dir, file_stem_for, read_text, write_text};
use crate::error::CliError;
use crate::manifest::{beside, RunManifest};
use crate::{BuildPromptsArgs, BuildSignDbArgs};

pub fn build_prompts(a: BuildPromptsArgs) -> Result<(), CliError> {
    let detections = read_detections(&a.detections)?;

    let mut depth_files: Vec<_> = fs::read_dir(&a.depths)
        .map_err(|e| CliError::io(&a.depths, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "depth"))
        .collect();
    depth_files.sort();
    let mut depths = BTreeMap::new();
    for p in &depth_files {
        let frame = read_depth_frame(p)?;
        if depths.insert(frame.frame_id, frame).is_some() {
            return Err(CliError::Input(format!(
                "{}: second depth map for an already loaded frame",
                p.display()
            )));
        }
    }

    let signs = match (&a.signs_db, &a.signs_table) {
        (Some(m), Some(t)) => Some(read_sign_db(m, t, a.sign_threshold)?),
        _ => None,
    };
    let lights = match &a.lights {
        Some(p) => read_lights(p)?,
        None => Vec::new(),
    };
    let questions = read_questions(&a.questions)?;
    let preamble = match &a.preamble {
        Some(p) => read_text(p)?,
        None => DEFAULT_PREAMBLE.to_string(),
    };

    let inputs = SceneInputs {
        detections,
        depths,
        signs,
        lights,
    };
    let objects = assemble_scene(&inputs, a.iou_threshold)?;

    let scene = a
        .detections
        .file_stem()
        .map(|s| file_stem_for(&s.to_string_lossy()))
        .unwrap_or_else(|| "scene".into());
    let scene_dir = a.out_dir.join(&scene);
    create_dir(&scene_dir)?;

    let mut m = RunManifest::new(
        "build-prompts",
        json!({ "scene": scene, "iou_threshold": a.iou_threshold, "sign_threshold": a.sign_threshold }),
    );
    for p in [
        Some(&a.detections),
        Some(&a.depths),
        a.signs_db.as_ref(),
        a.signs_table.as_ref(),
        a.lights.as_ref(),
        Some(&a.questions),
        a.preamble.as_ref(),
    ]
    .into_iter()
    .flatten()
    {
        m.input(p)?;
    }
    for q in &questions {
        let prompt = build_prompt(&objects, &q.question, &preamble)?;
        let path = scene_dir.join(format!("{}.txt", file_stem_for(&q.question_id)));
        write_text(&path, &prompt)?;
        m.output(&path);
    }
    eprintln!(
        "{} prompts for scene {scene} in {}",
        questions.len(),
        scene_dir.display()
    );
    m.write(&scene_dir.join("manifest.json"))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SignLine {
    category: String,
    description: String,
    embeddings: Vec<Vec<f32>>,
}

pub fn build_sign_db(a: BuildSignDbArgs) -> Result<(), CliError> {
    let text = read_text(&a.embeddings)?;
    let mut entries = Vec::new();
    let mut rows = Vec::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let s: SignLine = serde_json::from_str(line).map_err(|e| {
            CliError::Input(format!("{}: line {}: {e}", a.embeddings.display(), i + 1))
        })?;
        if s.embeddings.len() != dualfuse_core::scene::VIEWS_PER_SIGN {
            return Err(CliError::Input(format!(
                "{}: line {}: expected {} embeddings per sign, found {}",
                a.embeddings.display(),
                i + 1,
                dualfuse_core::scene::VIEWS_PER_SIGN,
                s.embeddings.len()
            )));
        }
        entries.push(SignEntry {
            category: s.category,
            description: s.description,
        });
        rows.extend(s.embeddings);
    }
    let db = SignDatabase::new(entries, &rows, DEFAULT_SIGN_THRESHOLD)?;
    write_sign_db(&db, &a.out_matrix, &a.out_table)?;
    let mut m = RunManifest::new("build-sign-db", json!({ "signs": db.entries().len() }));
    m.input(&a.embeddings)?;
    m.output(&a.out_matrix);
    m.output(&a.out_table);
    m.write(&beside(&a.out_matrix))
}
