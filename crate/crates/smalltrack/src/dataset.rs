//! Sequence-bundle ingestion and validation, rule-based attribute
//! computation, and benchmark-level statistics.
//!
//! A dataset root holds one subdirectory per sequence. Each bundle contains:
//!
//! * `meta.json` — `{"name", "category", "frame_rate", "manual_attributes": [...]}`
//! * `groundtruth.txt` — one line per frame, `x,y,w,h` as decimal text or the
//!   literal `absent`
//! * `absence.txt` — one line per frame: `0` present, `1` out of view, `2`
//!   full occlusion

use crate::geometry::{relative_speed, BBox};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// Reference statistics published for the TSFMO benchmark (250 sequences,
/// ~49k frames of real sports footage). Reproducing them requires the
/// original videos; they are recorded here for comparison against synthetic
/// datasets.
pub const TSFMO_AVG_TARGET_SIZE: f64 = 510.0;
/// See [`TSFMO_AVG_TARGET_SIZE`].
pub const TSFMO_AVG_RELATIVE_SPEED: f64 = 5.828;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing file {0}")]
    MissingFile(String),
    #[error("{file}:{line}: {msg}")]
    Malformed {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("{0}")]
    LengthMismatch(String),
    #[error("sequence {0}: first frame must carry a present ground-truth box")]
    AbsentFirstFrame(String),
    #[error("sequence must contain at least one frame")]
    Empty,
    #[error("dataset root {0} contains no sequence bundles")]
    EmptyDataset(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// The twelve per-sequence challenge attributes.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum Attribute {
    /// Illumination variation
    IV,
    /// Deformation
    DEF,
    /// Motion blur
    MB,
    /// Rotation
    ROT,
    /// Background clutter
    BC,
    /// Scale variation: box area ratio to the first frame outside [0.5, 2]
    SV,
    /// Out of view
    OV,
    /// Low resolution: target area below 900 px² in some frame
    LR,
    /// Aspect-ratio change: w/h ratio to the first frame outside [0.5, 2]
    ARC,
    /// Partial occlusion
    POC,
    /// Full occlusion
    FOC,
    /// Fast motion: center moves by at least half the previous frame's size
    FM,
}

impl Attribute {
    pub const ALL: [Attribute; 12] = [
        Attribute::IV,
        Attribute::DEF,
        Attribute::MB,
        Attribute::ROT,
        Attribute::BC,
        Attribute::SV,
        Attribute::OV,
        Attribute::LR,
        Attribute::ARC,
        Attribute::POC,
        Attribute::FOC,
        Attribute::FM,
    ];

    pub fn index(&self) -> usize {
        Attribute::ALL.iter().position(|a| a == self).unwrap()
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

/// Why a frame carries no ground-truth box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AbsenceKind {
    None,
    OutOfView,
    FullOcclusion,
}

/// Ground-truth annotation for a single frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub bbox: Option<BBox>,
    pub absence: AbsenceKind,
}

impl FrameAnnotation {
    pub fn present(bbox: BBox) -> Self {
        FrameAnnotation {
            bbox: Some(bbox),
            absence: AbsenceKind::None,
        }
    }

    pub fn absent(kind: AbsenceKind) -> Self {
        FrameAnnotation {
            bbox: None,
            absence: kind,
        }
    }

    pub fn is_absent(&self) -> bool {
        self.bbox.is_none()
    }
}

/// One annotated benchmark sequence.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Sequence {
    pub name: String,
    pub category: String,
    pub frames: Vec<FrameAnnotation>,
    pub manual_attributes: BTreeSet<Attribute>,
    pub frame_rate: f64,
}

impl Sequence {
    /// Builds a sequence, enforcing the non-empty / present-first-frame
    /// invariants required for tracker initialization.
    pub fn new(
        name: impl Into<String>,
        category: impl Into<String>,
        frames: Vec<FrameAnnotation>,
        manual_attributes: BTreeSet<Attribute>,
        frame_rate: f64,
    ) -> Result<Self, DatasetError> {
        let name = name.into();
        if frames.is_empty() {
            return Err(DatasetError::Empty);
        }
        if frames[0].is_absent() {
            return Err(DatasetError::AbsentFirstFrame(name));
        }
        Ok(Sequence {
            name,
            category: category.into(),
            frames,
            manual_attributes,
            frame_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Manual attributes merged with the automatically computed ones.
    pub fn resolved_attributes(&self) -> BTreeSet<Attribute> {
        let mut set = self.manual_attributes.clone();
        set.extend(compute_auto_attributes(self));
        set
    }
}

#[derive(Deserialize, Serialize)]
struct Meta {
    name: String,
    category: String,
    frame_rate: f64,
    manual_attributes: Vec<Attribute>,
}

/// Loads one sequence bundle from a directory.
pub fn load_sequence(dir: &Path) -> Result<Sequence, DatasetError> {
    let meta_path = dir.join("meta.json");
    let gt_path = dir.join("groundtruth.txt");
    let abs_path = dir.join("absence.txt");
    for p in [&meta_path, &gt_path, &abs_path] {
        if !p.is_file() {
            return Err(DatasetError::MissingFile(p.display().to_string()));
        }
    }

    let meta_text = fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
    let meta: Meta = serde_json::from_str(&meta_text).map_err(|e| DatasetError::Malformed {
        file: meta_path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })?;

    let gt_text = fs::read_to_string(&gt_path).map_err(|e| io_err(&gt_path, e))?;
    let abs_text = fs::read_to_string(&abs_path).map_err(|e| io_err(&abs_path, e))?;
    let gt_lines: Vec<&str> = gt_text.lines().collect();
    let abs_lines: Vec<&str> = abs_text.lines().collect();
    if gt_lines.len() != abs_lines.len() {
        return Err(DatasetError::LengthMismatch(format!(
            "{}: groundtruth has {} lines but absence has {}",
            dir.display(),
            gt_lines.len(),
            abs_lines.len()
        )));
    }

    let mut frames = Vec::with_capacity(gt_lines.len());
    for (i, (gt_line, abs_line)) in gt_lines.iter().zip(&abs_lines).enumerate() {
        let malformed = |file: &Path, msg: String| DatasetError::Malformed {
            file: file.display().to_string(),
            line: i + 1,
            msg,
        };
        let kind = match abs_line.trim() {
            "0" => AbsenceKind::None,
            "1" => AbsenceKind::OutOfView,
            "2" => AbsenceKind::FullOcclusion,
            other => {
                return Err(malformed(
                    &abs_path,
                    format!("expected absence code 0, 1 or 2, got {other:?}"),
                ))
            }
        };
        let gt_line = gt_line.trim();
        if gt_line == "absent" {
            frames.push(FrameAnnotation {
                bbox: None,
                absence: kind,
            });
            continue;
        }
        let bbox = parse_box_line(gt_line)
            .map_err(|msg| malformed(&gt_path, msg))?;
        if kind != AbsenceKind::None {
            return Err(malformed(
                &abs_path,
                "absence code set on a frame carrying a box".to_string(),
            ));
        }
        frames.push(FrameAnnotation::present(bbox));
    }

    Sequence::new(
        meta.name,
        meta.category,
        frames,
        meta.manual_attributes.into_iter().collect(),
        meta.frame_rate,
    )
}

/// Loads every sequence bundle under `root`, in name order.
pub fn load_dataset(root: &Path) -> Result<Vec<Sequence>, DatasetError> {
    let mut dirs: Vec<_> = fs::read_dir(root)
        .map_err(|e| io_err(root, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut sequences = Vec::new();
    for dir in dirs {
        sequences.push(load_sequence(&dir)?);
    }
    if sequences.is_empty() {
        return Err(DatasetError::EmptyDataset(root.display().to_string()));
    }
    Ok(sequences)
}

fn parse_box_line(line: &str) -> Result<BBox, String> {
    let parts: Vec<&str> = line.split(',').collect();
    if parts.len() != 4 {
        return Err(format!("expected 4 comma-separated values, got {}", parts.len()));
    }
    let mut vals = [0.0f64; 4];
    for (v, p) in vals.iter_mut().zip(&parts) {
        *v = p
            .trim()
            .parse::<f64>()
            .map_err(|e| format!("bad number {:?}: {e}", p.trim()))?;
    }
    BBox::new(vals[0], vals[1], vals[2], vals[3]).map_err(|e| e.to_string())
}

/// Writes the meta/groundtruth/absence triple for a sequence.
pub fn save_sequence(dir: &Path, seq: &Sequence) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let meta = Meta {
        name: seq.name.clone(),
        category: seq.category.clone(),
        frame_rate: seq.frame_rate,
        manual_attributes: seq.manual_attributes.iter().copied().collect(),
    };
    let meta_path = dir.join("meta.json");
    fs::write(&meta_path, serde_json::to_string_pretty(&meta).unwrap())
        .map_err(|e| io_err(&meta_path, e))?;

    let mut gt = String::new();
    let mut abs = String::new();
    for f in &seq.frames {
        match f.bbox {
            Some(b) => gt.push_str(&format!("{},{},{},{}\n", b.x, b.y, b.w, b.h)),
            None => gt.push_str("absent\n"),
        }
        let code = match f.absence {
            AbsenceKind::None => 0,
            AbsenceKind::OutOfView => 1,
            AbsenceKind::FullOcclusion => 2,
        };
        abs.push_str(&format!("{code}\n"));
    }
    let gt_path = dir.join("groundtruth.txt");
    fs::write(&gt_path, gt).map_err(|e| io_err(&gt_path, e))?;
    let abs_path = dir.join("absence.txt");
    fs::write(&abs_path, abs).map_err(|e| io_err(&abs_path, e))?;
    Ok(())
}

/// Computes the rule-based attributes {SV, LR, ARC, FM} from the geometry of
/// a sequence's present frames.
///
/// * SV — some frame's area ratio to the first frame falls outside [0.5, 2]
/// * LR — some frame's target area is below 900 px²
/// * ARC — some frame's aspect ratio, relative to the first frame's, falls
///   outside [0.5, 2]
/// * FM — across some consecutive present pair, the center moves by at least
///   half of sqrt(area) of the earlier frame
///
/// Absent frames break consecutive pairs: no FM contribution spans a gap.
pub fn compute_auto_attributes(seq: &Sequence) -> BTreeSet<Attribute> {
    let mut set = BTreeSet::new();
    let first = match seq.frames.first().and_then(|f| f.bbox) {
        Some(b) => b,
        None => return set,
    };
    let first_area = first.area();
    let first_ratio = first.aspect_ratio();

    let mut prev: Option<BBox> = None;
    for frame in &seq.frames {
        let Some(b) = frame.bbox else {
            prev = None;
            continue;
        };
        let area_ratio = b.area() / first_area;
        if !(0.5..=2.0).contains(&area_ratio) {
            set.insert(Attribute::SV);
        }
        if b.area() < 900.0 {
            set.insert(Attribute::LR);
        }
        let ar_ratio = b.aspect_ratio() / first_ratio;
        if !(0.5..=2.0).contains(&ar_ratio) {
            set.insert(Attribute::ARC);
        }
        if let Some(p) = prev {
            if p.center().distance(&b.center()) >= 0.5 * p.area().sqrt() {
                set.insert(Attribute::FM);
            }
        }
        prev = Some(b);
    }
    set
}

/// Aggregate statistics over a set of sequences.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetStats {
    /// Mean box area over all present frames, px².
    pub avg_target_size: f64,
    /// Mean relative speed over all consecutive present-present frame pairs.
    pub avg_relative_speed: f64,
    /// Number of consecutive present pairs the speed average ran over.
    pub speed_pairs: usize,
    pub num_sequences: usize,
    pub total_frames: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub avg_frames: f64,
}

/// Computes [`DatasetStats`] over a non-empty sequence list.
///
/// Relative speed is averaged over consecutive present-present pairs only;
/// gaps introduced by absent frames contribute nothing. A dataset with zero
/// such pairs reports speed 0 with `speed_pairs == 0`.
pub fn dataset_stats(sequences: &[Sequence]) -> DatasetStats {
    assert!(!sequences.is_empty(), "dataset_stats requires sequences");
    let mut area_sum = 0.0;
    let mut area_count = 0usize;
    let mut speed_sum = 0.0;
    let mut speed_pairs = 0usize;
    let mut total_frames = 0usize;
    let mut min_frames = usize::MAX;
    let mut max_frames = 0usize;

    for seq in sequences {
        total_frames += seq.len();
        min_frames = min_frames.min(seq.len());
        max_frames = max_frames.max(seq.len());
        let mut prev: Option<BBox> = None;
        for frame in &seq.frames {
            let Some(b) = frame.bbox else {
                prev = None;
                continue;
            };
            area_sum += b.area();
            area_count += 1;
            if let Some(p) = prev {
                speed_sum += relative_speed(&p, &b);
                speed_pairs += 1;
            }
            prev = Some(b);
        }
    }

    DatasetStats {
        avg_target_size: if area_count > 0 {
            area_sum / area_count as f64
        } else {
            0.0
        },
        avg_relative_speed: if speed_pairs > 0 {
            speed_sum / speed_pairs as f64
        } else {
            0.0
        },
        speed_pairs,
        num_sequences: sequences.len(),
        total_frames,
        min_frames,
        max_frames,
        avg_frames: total_frames as f64 / sequences.len() as f64,
    }
}

/// Symmetric 12x12 matrix of per-attribute sequence counts; the diagonal
/// holds the marginal count for each attribute.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeMatrix {
    pub counts: [[u32; 12]; 12],
}

impl AttributeMatrix {
    pub fn count(&self, a: Attribute, b: Attribute) -> u32 {
        self.counts[a.index()][b.index()]
    }

    /// CSV rendering with attribute names on the first row and column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("attribute");
        for a in Attribute::ALL {
            out.push(',');
            out.push_str(&a.to_string());
        }
        out.push('\n');
        for (i, a) in Attribute::ALL.iter().enumerate() {
            out.push_str(&a.to_string());
            for j in 0..12 {
                out.push_str(&format!(",{}", self.counts[i][j]));
            }
            out.push('\n');
        }
        out
    }
}

/// Counts, for every attribute pair, the sequences carrying both. Uses
/// resolved attributes (manual merged with the automatic rules).
pub fn attribute_cooccurrence(sequences: &[Sequence]) -> AttributeMatrix {
    let mut counts = [[0u32; 12]; 12];
    for seq in sequences {
        let attrs = seq.resolved_attributes();
        for a in &attrs {
            for b in &attrs {
                counts[a.index()][b.index()] += 1;
            }
        }
    }
    AttributeMatrix { counts }
}

/// Reads a results file: one `x,y,w,h` line per frame. The line count must
/// equal `expected_len`.
pub fn load_results(path: &Path, expected_len: usize) -> Result<Vec<BBox>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() != expected_len {
        return Err(DatasetError::LengthMismatch(format!(
            "{}: {} result lines for a {}-frame sequence",
            path.display(),
            lines.len(),
            expected_len
        )));
    }
    let mut boxes = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        boxes.push(parse_box_line(line.trim()).map_err(|msg| DatasetError::Malformed {
            file: path.display().to_string(),
            line: i + 1,
            msg,
        })?);
    }
    Ok(boxes)
}

/// Writes predicted boxes, one `x,y,w,h` line per frame. Float formatting is
/// shortest-round-trip, so save followed by load reproduces the exact values.
pub fn save_results(path: &Path, boxes: &[BBox]) -> Result<(), DatasetError> {
    let mut out = fs::File::create(path).map_err(|e| io_err(path, e))?;
    for b in boxes {
        writeln!(out, "{},{},{},{}", b.x, b.y, b.w, b.h).map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

/// Reads a confidence sidecar: one value per line.
pub fn load_confidences(path: &Path, expected_len: usize) -> Result<Vec<f64>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() != expected_len {
        return Err(DatasetError::LengthMismatch(format!(
            "{}: {} confidence lines for a {}-frame sequence",
            path.display(),
            lines.len(),
            expected_len
        )));
    }
    lines
        .iter()
        .enumerate()
        .map(|(i, line)| {
            line.trim().parse::<f64>().map_err(|e| DatasetError::Malformed {
                file: path.display().to_string(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Writes one confidence value per line.
pub fn save_confidences(path: &Path, values: &[f64]) -> Result<(), DatasetError> {
    let mut out = fs::File::create(path).map_err(|e| io_err(path, e))?;
    for v in values {
        writeln!(out, "{v}").map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    fn seq_from_boxes(boxes: &[Option<BBox>]) -> Sequence {
        let frames = boxes
            .iter()
            .map(|b| match b {
                Some(b) => FrameAnnotation::present(*b),
                None => FrameAnnotation::absent(AbsenceKind::FullOcclusion),
            })
            .collect();
        Sequence::new("t", "test", frames, BTreeSet::new(), 30.0).unwrap()
    }

    fn write_bundle(dir: &Path, gt: &str, abs: &str) {
        fs::create_dir_all(dir).unwrap();
        fs::write(
            dir.join("meta.json"),
            r#"{"name":"demo","category":"tennis","frame_rate":30.0,"manual_attributes":["MB","BC"]}"#,
        )
        .unwrap();
        fs::write(dir.join("groundtruth.txt"), gt).unwrap();
        fs::write(dir.join("absence.txt"), abs).unwrap();
    }

    #[test]
    fn loads_well_formed_bundle() {
        let tmp = tempdir().unwrap();
        write_bundle(
            tmp.path(),
            "10,20,30,40\nabsent\n11.5,21.5,30,40\n",
            "0\n2\n0\n",
        );
        let seq = load_sequence(tmp.path()).unwrap();
        assert_eq!(seq.len(), 3);
        assert_eq!(seq.name, "demo");
        assert_eq!(seq.frames[0].bbox, Some(bb(10.0, 20.0, 30.0, 40.0)));
        assert!(seq.frames[1].is_absent());
        assert_eq!(seq.frames[1].absence, AbsenceKind::FullOcclusion);
        assert!(seq.manual_attributes.contains(&Attribute::MB));
    }

    #[test]
    fn rejects_length_mismatch() {
        let tmp = tempdir().unwrap();
        write_bundle(tmp.path(), "10,20,30,40\n", "0\n0\n");
        assert!(matches!(
            load_sequence(tmp.path()),
            Err(DatasetError::LengthMismatch(_))
        ));
    }

    #[test]
    fn rejects_absent_first_frame() {
        let tmp = tempdir().unwrap();
        write_bundle(tmp.path(), "absent\n10,20,30,40\n", "1\n0\n");
        assert!(matches!(
            load_sequence(tmp.path()),
            Err(DatasetError::AbsentFirstFrame(_))
        ));
    }

    #[test]
    fn rejects_missing_file() {
        let tmp = tempdir().unwrap();
        fs::create_dir_all(tmp.path().join("b")).unwrap();
        assert!(matches!(
            load_sequence(&tmp.path().join("b")),
            Err(DatasetError::MissingFile(_))
        ));
    }

    #[test]
    fn sequence_roundtrip() {
        let tmp = tempdir().unwrap();
        let seq = seq_from_boxes(&[
            Some(bb(1.25, 2.5, 3.0, 4.0)),
            None,
            Some(bb(2.0, 3.0, 3.0, 4.0)),
        ]);
        save_sequence(tmp.path(), &seq).unwrap();
        let loaded = load_sequence(tmp.path()).unwrap();
        assert_eq!(loaded.frames, seq.frames);
    }

    #[test]
    fn auto_attributes_constant_30px_box_is_empty() {
        // area exactly 900 is not below 900; no motion, no scale change
        let b = bb(0.0, 0.0, 30.0, 30.0);
        let seq = seq_from_boxes(&[Some(b), Some(b), Some(b)]);
        assert!(compute_auto_attributes(&seq).is_empty());
    }

    #[test]
    fn auto_attributes_small_static_box_is_lr_only() {
        let b = bb(0.0, 0.0, 10.0, 10.0);
        let seq = seq_from_boxes(&[Some(b), Some(b)]);
        let attrs = compute_auto_attributes(&seq);
        assert_eq!(attrs, BTreeSet::from([Attribute::LR]));
    }

    #[test]
    fn auto_attributes_jump_triggers_fm() {
        // 10x10 box, 6 px center jump: 6 >= 0.5 * sqrt(100)
        let a = bb(0.0, 0.0, 10.0, 10.0);
        let b = bb(6.0, 0.0, 10.0, 10.0);
        let seq = seq_from_boxes(&[Some(a), Some(b)]);
        assert!(compute_auto_attributes(&seq).contains(&Attribute::FM));
        // 4 px jump stays below the rule
        let c = bb(4.0, 0.0, 10.0, 10.0);
        let seq2 = seq_from_boxes(&[Some(a), Some(c)]);
        assert!(!compute_auto_attributes(&seq2).contains(&Attribute::FM));
    }

    #[test]
    fn absence_gap_breaks_fm_pair() {
        let a = bb(0.0, 0.0, 10.0, 10.0);
        let far = bb(50.0, 0.0, 10.0, 10.0);
        let seq = seq_from_boxes(&[Some(a), None, Some(far)]);
        assert!(!compute_auto_attributes(&seq).contains(&Attribute::FM));
    }

    #[test]
    fn stats_two_frame_example() {
        let a = bb(0.0, 0.0, 10.0, 10.0);
        let b = bb(10.0, 0.0, 10.0, 10.0);
        let stats = dataset_stats(&[seq_from_boxes(&[Some(a), Some(b)])]);
        assert!((stats.avg_target_size - 100.0).abs() < 1e-12);
        assert!((stats.avg_relative_speed - 1.0).abs() < 1e-12);
        assert_eq!(stats.speed_pairs, 1);
        assert_eq!(stats.total_frames, 2);
    }

    #[test]
    fn stats_single_frame_sequence_reports_zero_pairs() {
        let stats = dataset_stats(&[seq_from_boxes(&[Some(bb(0.0, 0.0, 5.0, 5.0))])]);
        assert_eq!(stats.speed_pairs, 0);
        assert_eq!(stats.avg_relative_speed, 0.0);
        assert_eq!(stats.min_frames, 1);
        assert_eq!(stats.max_frames, 1);
    }

    #[test]
    fn cooccurrence_counts_pairs() {
        let b = bb(0.0, 0.0, 10.0, 10.0);
        let far = bb(30.0, 0.0, 10.0, 10.0);
        // LR from the small box, FM from the jump
        let seq = seq_from_boxes(&[Some(b), Some(far)]);
        let m = attribute_cooccurrence(&[seq]);
        assert_eq!(m.count(Attribute::FM, Attribute::LR), 1);
        assert_eq!(m.count(Attribute::FM, Attribute::FM), 1);
        assert_eq!(m.count(Attribute::LR, Attribute::LR), 1);
        assert_eq!(m.count(Attribute::IV, Attribute::IV), 0);
        assert_eq!(m.count(Attribute::IV, Attribute::FM), 0);
    }

    #[test]
    fn cooccurrence_zero_matrix_without_attributes() {
        let b = bb(0.0, 0.0, 40.0, 40.0);
        let seq = seq_from_boxes(&[Some(b), Some(b)]);
        let m = attribute_cooccurrence(&[seq]);
        assert_eq!(m.counts, [[0u32; 12]; 12]);
    }

    #[test]
    fn results_roundtrip_and_mismatch() {
        let tmp = tempdir().unwrap();
        let path = tmp.path().join("res.txt");
        let boxes = vec![bb(0.5, 1.25, 3.375, 4.0), bb(1.0, 2.0, 3.0, 4.0)];
        save_results(&path, &boxes).unwrap();
        let loaded = load_results(&path, 2).unwrap();
        assert_eq!(loaded, boxes);
        assert!(matches!(
            load_results(&path, 3),
            Err(DatasetError::LengthMismatch(_))
        ));
    }

    #[test]
    fn results_parse_decimal_lines() {
        let tmp = tempdir().unwrap();
        let path = tmp.path().join("res.txt");
        fs::write(&path, "1.5,2.25,3.0,4.125\n0,0,1,1\n").unwrap();
        let loaded = load_results(&path, 2).unwrap();
        assert_eq!(loaded[0], bb(1.5, 2.25, 3.0, 4.125));
    }

    fn arbitrary_attr_set() -> impl Strategy<Value = BTreeSet<Attribute>> {
        proptest::collection::btree_set(0usize..12, 0..6)
            .prop_map(|idxs| idxs.into_iter().map(|i| Attribute::ALL[i]).collect())
    }

    proptest! {
        #[test]
        fn cooccurrence_matrix_invariants(
            sets in proptest::collection::vec(arbitrary_attr_set(), 1..8)
        ) {
            let b = bb(0.0, 0.0, 40.0, 40.0);
            let seqs: Vec<Sequence> = sets
                .iter()
                .map(|attrs| {
                    Sequence::new(
                        "s", "c",
                        vec![FrameAnnotation::present(b)],
                        attrs.clone(),
                        30.0,
                    )
                    .unwrap()
                })
                .collect();
            let m = attribute_cooccurrence(&seqs);
            for i in 0..12 {
                for j in 0..12 {
                    prop_assert_eq!(m.counts[i][j], m.counts[j][i]);
                    prop_assert!(m.counts[i][j] <= m.counts[i][i].min(m.counts[j][j]));
                }
            }
        }

        #[test]
        fn auto_attributes_translation_invariant(
            positions in proptest::collection::vec((-40.0..40.0f64, -40.0..40.0f64), 2..10),
            w in 2.0..40.0f64,
            h in 2.0..40.0f64,
            tx in -200.0..200.0f64,
            ty in -200.0..200.0f64,
        ) {
            let boxes: Vec<Option<BBox>> = positions
                .iter()
                .map(|(x, y)| Some(bb(*x, *y, w, h)))
                .collect();
            let shifted: Vec<Option<BBox>> = positions
                .iter()
                .map(|(x, y)| Some(bb(*x + tx, *y + ty, w, h)))
                .collect();
            prop_assert_eq!(
                compute_auto_attributes(&seq_from_boxes(&boxes)),
                compute_auto_attributes(&seq_from_boxes(&shifted))
            );
        }

        #[test]
        fn stats_duplication_invariant(
            positions in proptest::collection::vec((-40.0..40.0f64, -40.0..40.0f64), 2..8),
            w in 2.0..30.0f64,
            h in 2.0..30.0f64,
        ) {
            let boxes: Vec<Option<BBox>> = positions
                .iter()
                .map(|(x, y)| Some(bb(*x, *y, w, h)))
                .collect();
            let seq = seq_from_boxes(&boxes);
            let single = dataset_stats(&[seq.clone()]);
            let doubled = dataset_stats(&[seq.clone(), seq]);
            prop_assert!((single.avg_target_size - doubled.avg_target_size).abs() < 1e-9);
            prop_assert!((single.avg_relative_speed - doubled.avg_relative_speed).abs() < 1e-9);
            prop_assert_eq!(doubled.total_frames, 2 * single.total_frames);
        }
    }
}
