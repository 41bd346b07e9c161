use super::tracks::{is_traffic_light, TrackedObject};
use super::SceneError;

pub const DEFAULT_PREAMBLE: &str =
    "You are assisting a driver. Below is a question about the current \
driving scene, followed by the objects detected across the recent frames. Each object line gives \
the frame number, the object class, its tracking id and its depth. Depths are relative, unitless \
values normalized against a fixed reference on the vehicle hood; they are not meters. Objects with \
tracking id -1 have no identity across frames. Traffic lights carry their observed state and \
recognized traffic signs carry their category and meaning.";

pub const EMPTY_SCENE_LINE: &str = "no objects detected";

fn object_line(obj: &TrackedObject, frame_id: u32, depth: f64) -> String {
    let mut line = format!(
        "frame {frame_id}: {} (track {}) at relative depth {depth:.2}",
        obj.class_label, obj.track_id
    );
    if is_traffic_light(&obj.class_label) || obj.traffic_light_state.is_some() {
        line.push_str(", state ");
        line.push_str(obj.traffic_light_state.as_deref().unwrap_or("unknown"));
    }
    if let Some(category) = &obj.sign_category {
        line.push_str(", sign ");
        line.push_str(category);
        if let Some(desc) = &obj.sign_description {
            line.push_str(": ");
            line.push_str(desc);
        }
    }
    line
}

/// Renders the three prompt blocks: preamble, question, object lines.
///
/// Object lines are ordered by frame, then track id, then line text, so
/// the output does not depend on the order of `scene`.
pub fn build_prompt(
    scene: &[TrackedObject],
    question: &str,
    task_preamble: &str,
) -> Result<String, SceneError> {
    let question = question.trim();
    if question.is_empty() {
        return Err(SceneError::EmptyQuestion);
    }
    let mut lines: Vec<(u32, i64, String)> = scene
        .iter()
        .flat_map(|obj| {
            obj.depths.iter().map(move |s| {
                (
                    s.frame_id,
                    obj.track_id,
                    object_line(obj, s.frame_id, s.depth),
                )
            })
        })
        .collect();
    lines.sort();

    let mut out = String::new();
    out.push_str(task_preamble.trim());
    out.push_str("\n\nQuestion: ");
    out.push_str(question);
    out.push_str("\n\nObjects:\n");
    if lines.is_empty() {
        out.push_str(EMPTY_SCENE_LINE);
        out.push('\n');
    }
    for (_, _, line) in lines {
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}
