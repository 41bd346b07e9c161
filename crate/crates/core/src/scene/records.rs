//! Line-delimited JSON inputs: detections and traffic-light states.
//!
//! Detection line:
//! `{"frame_id":1,"source":"grounded","track_id":3,"class":"car","bbox":[x0,y0,x1,y1],
//!   "confidence":0.9,"mask_rle":[[start,len],...],"sign_embedding":[...]}`
//! with `track_id`, `mask_rle` and `sign_embedding` optional.
//!
//! Light line: `{"frame_id":4,"track_id":7,"state":"green"}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::detection::{BBox, Detection2D, DetectionSource, Mask};
use super::{io_err, SceneError};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionRecord {
    frame_id: u32,
    source: DetectionSource,
    #[serde(default = "untracked")]
    track_id: i64,
    class: String,
    bbox: BBox,
    confidence: f64,
    #[serde(default)]
    mask_rle: Option<Mask>,
    #[serde(default)]
    sign_embedding: Option<Vec<f32>>,
}

fn untracked() -> i64 {
    -1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightRecord {
    pub frame_id: u32,
    pub track_id: i64,
    pub state: String,
}

fn parse_lines<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<(usize, T)>, SceneError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map(|r| (i + 1, r))
                .map_err(|e| SceneError::Record {
                    line: i + 1,
                    message: e.to_string(),
                })
        })
        .collect()
}

pub fn parse_detections(text: &str) -> Result<Vec<Detection2D>, SceneError> {
    parse_lines::<DetectionRecord>(text)?
        .into_iter()
        .map(|(line, r)| {
            let record_err = |message: String| SceneError::Record { line, message };
            if !(0.0..=1.0).contains(&r.confidence) {
                return Err(record_err(format!(
                    "confidence {} outside [0, 1]",
                    r.confidence
                )));
            }
            let det = Detection2D {
                frame_id: r.frame_id,
                bbox: r.bbox,
                class_label: r.class,
                source: r.source,
                track_id: r.track_id,
                mask: r.mask_rle,
                confidence: r.confidence,
                sign_embedding: r.sign_embedding,
            };
            det.validate().map_err(|e| record_err(e.to_string()))?;
            Ok(det)
        })
        .collect()
}

pub fn parse_lights(text: &str) -> Result<Vec<LightRecord>, SceneError> {
    Ok(parse_lines(text)?.into_iter().map(|(_, r)| r).collect())
}

fn with_path(path: &Path, e: SceneError) -> SceneError {
    match e {
        SceneError::Record { line, message } => SceneError::Record {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    }
}

pub fn read_detections(path: impl AsRef<Path>) -> Result<Vec<Detection2D>, SceneError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_detections(&text).map_err(|e| with_path(path, e))
}

pub fn read_lights(path: impl AsRef<Path>) -> Result<Vec<LightRecord>, SceneError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_lights(&text).map_err(|e| with_path(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detection_lines() {
        let text = r#"{"frame_id":1,"source":"grounded","track_id":3,"class":"car","bbox":[0,0,4,2],"confidence":0.9,"mask_rle":[[5,2]]}

{"frame_id":1,"source":"detector","class":"truck","bbox":[1,0,4,2],"confidence":0.5}"#;
        let dets = parse_detections(text).unwrap();
        assert_eq!(dets.len(), 2);
        assert_eq!(dets[0].mask.as_ref().unwrap().runs, [(5, 2)]);
        assert_eq!(dets[1].track_id, -1);
        assert_eq!(dets[1].source, DetectionSource::Detector);
    }

    #[test]
    fn bad_lines_report_line_number() {
        let bad_box =
            r#"{"frame_id":1,"source":"detector","class":"car","bbox":[4,0,1,2],"confidence":0.5}"#;
        let text = format!("\n{bad_box}");
        assert!(matches!(
            parse_detections(&text),
            Err(SceneError::Record { line: 2, .. })
        ));
        let untracked =
            r#"{"frame_id":1,"source":"grounded","class":"car","bbox":[0,0,1,1],"confidence":0.5}"#;
        assert!(parse_detections(untracked).is_err());
        let extra = r#"{"frame_id":1,"source":"detector","class":"car","bbox":[0,0,1,1],"confidence":0.5,"colour":1}"#;
        assert!(parse_detections(extra).is_err());
        let conf =
            r#"{"frame_id":1,"source":"detector","class":"car","bbox":[0,0,1,1],"confidence":1.5}"#;
        assert!(parse_detections(conf).is_err());
    }

    #[test]
    fn light_lines() {
        let lights = parse_lights("{\"frame_id\":2,\"track_id\":7,\"state\":\"green\"}\n").unwrap();
        assert_eq!(
            lights,
            [LightRecord {
                frame_id: 2,
                track_id: 7,
                state: "green".into()
            }]
        );
    }
}
