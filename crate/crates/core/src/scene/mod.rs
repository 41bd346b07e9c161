//! Scene textualization: externally produced detections, depth maps,
//! traffic-light states and sign-crop embeddings in, a three-block language
//! model prompt out.

mod depth;
mod detection;
mod pipeline;
mod prompt;
mod records;
mod signs;
mod tracks;

use thiserror::Error;

pub use depth::{normalize_depth, object_depth, read_depth_frame, write_depth_frame, DepthFrame};
pub use detection::{
    iou, merge_detections, BBox, Detection2D, DetectionSource, Mask, DEFAULT_IOU_THRESHOLD,
};
pub use pipeline::{assemble_scene, SceneInputs};
pub use prompt::{build_prompt, DEFAULT_PREAMBLE, EMPTY_SCENE_LINE};
pub use records::{parse_detections, parse_lights, read_detections, read_lights, LightRecord};
pub use signs::{
    classify_sign, read_sign_db, write_sign_db, SignDatabase, SignEntry, SignMatch,
    DEFAULT_SIGN_THRESHOLD, SIGN_EMBEDDING_DIM, VIEWS_PER_SIGN,
};
pub use tracks::{
    annotate_traffic_light, build_tracks, build_tracks_with_signs, is_traffic_light, DepthSample,
    TrackedObject,
};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("degenerate bounding box {0:?}")]
    DegenerateBox([f64; 4]),
    #[error("detections from different frames passed together: {0} and {1}")]
    FrameMismatch(u32, u32),
    #[error("grounded detection in frame {frame_id} has negative track id {track_id}")]
    UntrackedGrounded { frame_id: u32, track_id: i64 },
    #[error("invalid depth frame {frame_id}: {reason}")]
    InvalidDepth { frame_id: u32, reason: String },
    #[error("hood reference depths in frame {frame_id} are equal ({depth}); cannot normalize")]
    DegenerateReference { frame_id: u32, depth: f32 },
    #[error("pixel ({x}, {y}) lies outside the {width}x{height} frame")]
    OutsideFrame {
        x: u64,
        y: u64,
        width: u32,
        height: u32,
    },
    #[error("no depth map for frame {0}")]
    MissingDepth(u32),
    #[error("sign embedding has length {found}, expected {expected}")]
    EmbeddingDim { expected: usize, found: usize },
    #[error("sign embedding has zero norm")]
    ZeroNormEmbedding,
    #[error("duplicate detection for track {track_id} in frame {frame_id}")]
    DuplicateTrackFrame { track_id: i64, frame_id: u32 },
    #[error("traffic-light state given for object of class {class_label:?}")]
    NotATrafficLight { class_label: String },
    #[error("traffic-light state refers to unknown track {track_id}")]
    UnknownTrack { track_id: i64 },
    #[error("question must not be empty")]
    EmptyQuestion,
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> SceneError + '_ {
    move |source| SceneError::Io {
        path: path.display().to_string(),
        source,
    }
}
