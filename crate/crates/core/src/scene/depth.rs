//! Monocular relative depth maps and hood-reference normalization.
//!
//! Depth file layout (little-endian): `frame_id, width, height, p1x, p1y,
//! p2x, p2y` as u32, then `width * height` f32 values row-major.

use std::fs;
use std::path::Path;

use super::detection::Detection2D;
use super::{io_err, SceneError};

const HEADER_LEN: usize = 7 * 4;

/// Normalized distance between the two hood reference points.
const CANONICAL_REFERENCE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    pub frame_id: u32,
    pub width: u32,
    pub height: u32,
    /// Row-major relative depth, unitless.
    pub depth: Vec<f32>,
    /// Two pixels on the ego hood, `(x, y)`.
    pub reference_points: [(u32, u32); 2],
}

impl DepthFrame {
    pub fn new(
        frame_id: u32,
        width: u32,
        height: u32,
        depth: Vec<f32>,
        reference_points: [(u32, u32); 2],
    ) -> Result<Self, SceneError> {
        let frame = Self {
            frame_id,
            width,
            height,
            depth,
            reference_points,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let invalid = |reason: String| SceneError::InvalidDepth {
            frame_id: self.frame_id,
            reason,
        };
        let expected = self.width as usize * self.height as usize;
        if expected == 0 || self.depth.len() != expected {
            return Err(invalid(format!(
                "{} values for a {}x{} frame",
                self.depth.len(),
                self.width,
                self.height
            )));
        }
        if let Some(bad) = self.depth.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(invalid(format!(
                "depth value {bad} is not finite and positive"
            )));
        }
        for &(x, y) in &self.reference_points {
            if x >= self.width || y >= self.height {
                return Err(invalid(format!("reference point ({x}, {y}) outside frame")));
            }
        }
        Ok(())
    }

    pub fn at(&self, x: u32, y: u32) -> f32 {
        self.depth[y as usize * self.width as usize + x as usize]
    }

    /// Multiplies every depth value by `k`.
    pub fn scaled(&self, k: f32) -> Self {
        Self {
            depth: self.depth.iter().map(|d| d * k).collect(),
            ..self.clone()
        }
    }
}

/// Scale that maps the hood reference distance onto a fixed constant.
pub fn normalize_depth(frame: &DepthFrame) -> Result<f64, SceneError> {
    let [(x1, y1), (x2, y2)] = frame.reference_points;
    let d1 = f64::from(frame.at(x1, y1));
    let d2 = f64::from(frame.at(x2, y2));
    let baseline = (d1 - d2).abs();
    if baseline == 0.0 {
        return Err(SceneError::DegenerateReference {
            frame_id: frame.frame_id,
            depth: frame.at(x1, y1),
        });
    }
    Ok(CANONICAL_REFERENCE / baseline)
}

/// Scaled depth of a detection: mean over its mask pixels, or the
/// bounding-box center pixel when there is no (non-empty) mask.
pub fn object_depth(det: &Detection2D, frame: &DepthFrame, scale: f64) -> Result<f64, SceneError> {
    let outside = |x: u64, y: u64| SceneError::OutsideFrame {
        x,
        y,
        width: frame.width,
        height: frame.height,
    };
    let width = u64::from(frame.width);
    let total = width * u64::from(frame.height);
    if let Some(mask) = det.mask.as_ref().filter(|m| !m.is_empty()) {
        let mut sum = 0.0f64;
        let mut n = 0u64;
        for idx in mask.indices() {
            if idx >= total {
                return Err(outside(idx % width, idx / width));
            }
            sum += f64::from(frame.depth[idx as usize]);
            n += 1;
        }
        return Ok(scale * (sum / n as f64));
    }
    det.bbox.validate()?;
    let (cx, cy) = det.bbox.center_pixel();
    if cx < 0.0 || cy < 0.0 || cx >= f64::from(frame.width) || cy >= f64::from(frame.height) {
        return Err(outside(cx.max(0.0) as u64, cy.max(0.0) as u64));
    }
    Ok(scale * f64::from(frame.at(cx as u32, cy as u32)))
}

pub fn write_depth_frame(frame: &DepthFrame, path: impl AsRef<Path>) -> Result<(), SceneError> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(HEADER_LEN + frame.depth.len() * 4);
    let [(x1, y1), (x2, y2)] = frame.reference_points;
    for v in [frame.frame_id, frame.width, frame.height, x1, y1, x2, y2] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for d in &frame.depth {
        out.extend_from_slice(&d.to_le_bytes());
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_depth_frame(path: impl AsRef<Path>) -> Result<DepthFrame, SceneError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    parse_depth_frame(&bytes).map_err(|e| match e {
        SceneError::Format { what, message } => SceneError::Format {
            what,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

fn parse_depth_frame(bytes: &[u8]) -> Result<DepthFrame, SceneError> {
    if bytes.len() < HEADER_LEN {
        return Err(SceneError::Format {
            what: "depth file",
            message: format!("{} bytes is shorter than the header", bytes.len()),
        });
    }
    let header: Vec<u32> = bytes[..HEADER_LEN]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let (frame_id, width, height) = (header[0], header[1], header[2]);
    let body = &bytes[HEADER_LEN..];
    let expected = width as usize * height as usize * 4;
    if body.len() != expected {
        return Err(SceneError::Format {
            what: "depth file",
            message: format!(
                "expected {expected} data bytes for {width}x{height}, found {}",
                body.len()
            ),
        });
    }
    let depth = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    DepthFrame::new(
        frame_id,
        width,
        height,
        depth,
        [(header[3], header[4]), (header[5], header[6])],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::detection::{BBox, DetectionSource, Mask};

    fn frame(depth: Vec<f32>, w: u32, h: u32) -> DepthFrame {
        DepthFrame::new(1, w, h, depth, [(0, h - 1), (w - 1, h - 1)]).unwrap()
    }

    fn det(bbox: [f64; 4], mask: Option<Mask>) -> Detection2D {
        Detection2D {
            frame_id: 1,
            bbox: BBox::from(bbox),
            class_label: "car".into(),
            source: DetectionSource::Grounded,
            track_id: 1,
            mask,
            confidence: 1.0,
            sign_embedding: None,
        }
    }

    #[test]
    fn reference_scale() {
        let mut d = vec![1.0f32; 9];
        d[6] = 2.0;
        d[8] = 5.0;
        let f = frame(d, 3, 3);
        assert!((normalize_depth(&f).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let flat = frame(vec![4.0; 9], 3, 3);
        assert!(matches!(
            normalize_depth(&flat),
            Err(SceneError::DegenerateReference { .. })
        ));
    }

    #[test]
    fn constant_map_any_mask() {
        let f = frame(vec![2.5; 16], 4, 4);
        let m = Mask {
            runs: vec![(1, 3), (9, 2)],
        };
        assert_eq!(
            object_depth(&det([0.0, 0.0, 4.0, 4.0], Some(m)), &f, 0.5).unwrap(),
            1.25
        );
    }

    #[test]
    fn mask_mean() {
        let mut d = vec![1.0f32; 16];
        d[5] = 2.0;
        d[6] = 4.0;
        let f = frame(d, 4, 4);
        let m = Mask { runs: vec![(5, 2)] };
        assert_eq!(
            object_depth(&det([0.0, 0.0, 4.0, 4.0], Some(m)), &f, 1.0).unwrap(),
            3.0
        );
    }

    #[test]
    fn center_pixel_without_mask() {
        let mut d = vec![1.0f32; 100];
        d[5 * 10 + 6] = 7.0;
        let f = frame(d, 10, 10);
        // 3x3 box covering x 5..8, y 4..7 has center pixel (6, 5).
        let v = object_depth(&det([5.0, 4.0, 8.0, 7.0], None), &f, 2.0).unwrap();
        assert_eq!(v, 14.0);
        let empty = Some(Mask::default());
        assert_eq!(
            object_depth(&det([5.0, 4.0, 8.0, 7.0], empty), &f, 2.0).unwrap(),
            14.0
        );
    }

    #[test]
    fn outside_frame_errors() {
        let f = frame(vec![1.0; 4], 2, 2);
        assert!(object_depth(&det([5.0, 5.0, 7.0, 7.0], None), &f, 1.0).is_err());
        let m = Mask { runs: vec![(3, 2)] };
        assert!(object_depth(&det([0.0, 0.0, 1.0, 1.0], Some(m)), &f, 1.0).is_err());
    }

    #[test]
    fn power_of_two_scaling_is_exact() {
        let d: Vec<f32> = (0..64).map(|i| 0.3 + i as f32 * 0.173).collect();
        let f = frame(d, 8, 8);
        let m = Mask {
            runs: vec![(10, 5), (40, 7)],
        };
        let object = det([1.0, 1.0, 6.0, 6.0], Some(m));
        let base = object_depth(&object, &f, normalize_depth(&f).unwrap()).unwrap();
        for k in [0.125f32, 0.5, 2.0, 4.0, 1024.0] {
            let g = f.scaled(k);
            let v = object_depth(&object, &g, normalize_depth(&g).unwrap()).unwrap();
            assert_eq!(v, base, "k = {k}");
        }
        for k in [0.3f32, 3.0, 7.7] {
            let g = f.scaled(k);
            let v = object_depth(&object, &g, normalize_depth(&g).unwrap()).unwrap();
            assert!((v - base).abs() <= 1e-5 * base.abs(), "k = {k}");
        }
    }

    #[test]
    fn invalid_frames_rejected() {
        assert!(DepthFrame::new(1, 2, 2, vec![1.0; 3], [(0, 0), (1, 1)]).is_err());
        assert!(DepthFrame::new(1, 2, 2, vec![1.0, 0.0, 1.0, 1.0], [(0, 0), (1, 1)]).is_err());
        assert!(DepthFrame::new(1, 2, 2, vec![1.0; 4], [(0, 0), (2, 1)]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let f = frame((1..=12).map(|i| i as f32).collect(), 4, 3);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.depth");
        write_depth_frame(&f, &p).unwrap();
        assert_eq!(read_depth_frame(&p).unwrap(), f);
        let mut bytes = fs::read(&p).unwrap();
        bytes.pop();
        fs::write(&p, bytes).unwrap();
        assert!(matches!(
            read_depth_frame(&p),
            Err(SceneError::Format { .. })
        ));
    }
}
