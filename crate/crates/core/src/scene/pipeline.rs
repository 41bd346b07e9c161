use std::collections::BTreeMap;

use super::depth::DepthFrame;
use super::detection::{merge_detections, Detection2D, DetectionSource};
use super::records::LightRecord;
use super::signs::SignDatabase;
use super::tracks::{annotate_traffic_light, build_tracks_with_signs, TrackedObject};
use super::SceneError;

/// Everything the external perception models produced for one clip.
#[derive(Debug, Clone, Default)]
pub struct SceneInputs {
    pub detections: Vec<Detection2D>,
    pub depths: BTreeMap<u32, DepthFrame>,
    pub signs: Option<SignDatabase>,
    pub lights: Vec<LightRecord>,
}

/// Merges detections frame by frame, builds tracks, attaches the best sign
/// match per object and the latest traffic-light state per track.
pub fn assemble_scene(
    inputs: &SceneInputs,
    iou_threshold: f64,
) -> Result<Vec<TrackedObject>, SceneError> {
    let mut by_frame: BTreeMap<u32, (Vec<Detection2D>, Vec<Detection2D>)> = BTreeMap::new();
    for d in &inputs.detections {
        let slot = by_frame.entry(d.frame_id).or_default();
        match d.source {
            DetectionSource::Grounded => slot.0.push(d.clone()),
            DetectionSource::Detector => slot.1.push(d.clone()),
        }
    }
    let mut merged = Vec::with_capacity(inputs.detections.len());
    for (grounded, detector) in by_frame.values() {
        merged.extend(merge_detections(grounded, detector, iou_threshold)?);
    }

    let mut objects = build_tracks_with_signs(&merged, &inputs.depths, inputs.signs.as_ref())?;

    let mut latest: BTreeMap<i64, &LightRecord> = BTreeMap::new();
    for l in &inputs.lights {
        if latest
            .get(&l.track_id)
            .is_none_or(|p| l.frame_id >= p.frame_id)
        {
            latest.insert(l.track_id, l);
        }
    }
    for (track_id, light) in latest {
        let idx = objects
            .iter()
            .position(|o| o.track_id == track_id && track_id >= 0)
            .ok_or(SceneError::UnknownTrack { track_id })?;
        let obj = objects[idx].clone();
        objects[idx] = annotate_traffic_light(obj, &light.state)?;
    }
    Ok(objects)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::detection::BBox;
    use crate::scene::signs::{SignEntry, SIGN_EMBEDDING_DIM};

    fn frame(id: u32) -> DepthFrame {
        let mut d = vec![2.0f32; 100];
        d[90] = 1.0;
        d[99] = 3.0;
        DepthFrame::new(id, 10, 10, d, [(0, 9), (9, 9)]).unwrap()
    }

    fn det(
        frame_id: u32,
        source: DetectionSource,
        track: i64,
        class: &str,
        b: [f64; 4],
    ) -> Detection2D {
        Detection2D {
            frame_id,
            bbox: BBox::from(b),
            class_label: class.into(),
            source,
            track_id: track,
            mask: None,
            confidence: 0.9,
            sign_embedding: None,
        }
    }

    #[test]
    fn end_to_end() {
        let mut sign = det(
            2,
            DetectionSource::Detector,
            -1,
            "traffic sign",
            [6.0, 6.0, 8.0, 8.0],
        );
        let mut e = vec![0.0f32; SIGN_EMBEDDING_DIM];
        e[4] = 2.0;
        sign.sign_embedding = Some(e);
        let rows: Vec<Vec<f32>> = (0..6)
            .map(|i| {
                let mut v = vec![0.0; SIGN_EMBEDDING_DIM];
                v[i] = 1.0;
                v
            })
            .collect();
        let db = SignDatabase::new(
            vec![
                SignEntry {
                    category: "stop".into(),
                    description: "Stop".into(),
                },
                SignEntry {
                    category: "yield".into(),
                    description: "Give way".into(),
                },
            ],
            &rows,
            0.6,
        )
        .unwrap();
        let inputs = SceneInputs {
            detections: vec![
                det(
                    1,
                    DetectionSource::Grounded,
                    5,
                    "object",
                    [0.0, 0.0, 4.0, 4.0],
                ),
                det(
                    1,
                    DetectionSource::Detector,
                    -1,
                    "traffic light",
                    [0.0, 0.0, 4.0, 5.0],
                ),
                det(
                    2,
                    DetectionSource::Grounded,
                    5,
                    "object",
                    [0.0, 0.0, 4.0, 4.0],
                ),
                det(
                    2,
                    DetectionSource::Detector,
                    -1,
                    "traffic light",
                    [0.0, 0.0, 4.0, 4.0],
                ),
                sign,
            ],
            depths: [(1, frame(1)), (2, frame(2))].into_iter().collect(),
            signs: Some(db),
            lights: vec![
                LightRecord {
                    frame_id: 1,
                    track_id: 5,
                    state: "red".into(),
                },
                LightRecord {
                    frame_id: 2,
                    track_id: 5,
                    state: "green".into(),
                },
            ],
        };
        let objs = assemble_scene(&inputs, 0.35).unwrap();
        assert_eq!(objs.len(), 2);
        let sign = objs.iter().find(|o| o.track_id == -1).unwrap();
        assert_eq!(sign.sign_category.as_deref(), Some("yield"));
        let light = objs.iter().find(|o| o.track_id == 5).unwrap();
        assert_eq!(light.class_label, "traffic light");
        assert_eq!(light.traffic_light_state.as_deref(), Some("green"));
        assert_eq!(light.depths.len(), 2);
    }

    #[test]
    fn light_on_car_or_missing_track() {
        let inputs = SceneInputs {
            detections: vec![det(
                1,
                DetectionSource::Grounded,
                1,
                "car",
                [0.0, 0.0, 2.0, 2.0],
            )],
            depths: [(1, frame(1))].into_iter().collect(),
            signs: None,
            lights: vec![LightRecord {
                frame_id: 1,
                track_id: 1,
                state: "green".into(),
            }],
        };
        assert!(matches!(
            assemble_scene(&inputs, 0.35),
            Err(SceneError::NotATrafficLight { .. })
        ));
        let mut missing = inputs.clone();
        missing.lights[0].track_id = 9;
        assert!(matches!(
            assemble_scene(&missing, 0.35),
            Err(SceneError::UnknownTrack { track_id: 9 })
        ));
    }
}
