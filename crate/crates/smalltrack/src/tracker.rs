//! The online tracking loop: candidate extraction from score maps, per-frame
//! matching, object-database association, target selection, and confidence.

use crate::geometry::{BBox, Point};
use crate::matcher::{
    assignment, decode_matches, Candidate, CandidateSet, MatchDecode, MatcherConfig,
    MatcherError, MatcherParams,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("sequence data holds no frames")]
    EmptyFrames,
    #[error("score map values length {got} does not match {width}x{height}")]
    MapShape {
        width: usize,
        height: usize,
        got: usize,
    },
    #[error("match index {0} out of range")]
    MatchOutOfRange(usize),
    #[error(transparent)]
    Matcher(#[from] MatcherError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

/// Target score map on a regular cell grid; `stride` is pixels per cell.
#[derive(Clone, Debug)]
pub struct ScoreMap {
    pub width: usize,
    pub height: usize,
    pub stride: f64,
    pub values: Vec<f64>,
}

impl ScoreMap {
    pub fn new(
        width: usize,
        height: usize,
        stride: f64,
        values: Vec<f64>,
    ) -> Result<Self, TrackerError> {
        if values.len() != width * height {
            return Err(TrackerError::MapShape {
                width,
                height,
                got: values.len(),
            });
        }
        assert!(stride > 0.0);
        Ok(ScoreMap {
            width,
            height,
            stride,
            values,
        })
    }

    #[inline]
    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Pixel coordinates of a cell center.
    pub fn cell_center(&self, row: usize, col: usize) -> Point {
        Point::new(
            (col as f64 + 0.5) * self.stride,
            (row as f64 + 0.5) * self.stride,
        )
    }

    pub fn image_size(&self) -> (f64, f64) {
        (
            self.width as f64 * self.stride,
            self.height as f64 * self.stride,
        )
    }
}

/// Appearance features available at one image location.
#[derive(Clone, Debug)]
pub struct FeatureEntry {
    pub pos: Point,
    pub score: f64,
    pub feat_low: Vec<f64>,
    pub feat_high: Vec<f64>,
}

/// Everything the tracker consumes for one frame.
#[derive(Clone, Debug)]
pub struct FrameData {
    pub score_map: ScoreMap,
    pub features: Vec<FeatureEntry>,
    /// Target extent (w, h) for box reporting; candidate matching never
    /// reads it. Scale estimation is outside this tracker, so the provider
    /// supplies the per-frame extent (constant in the synthetic scenes).
    pub target_extent: (f64, f64),
}

/// Thresholds of the online loop.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub matcher: MatcherConfig,
    /// Candidate threshold: `max(tau_cand_rel * peak, tau_cand_abs)`.
    pub tau_cand_rel: f64,
    pub tau_cand_abs: f64,
    /// Minimum score for an unmatched candidate to open a new object.
    pub tau_new: f64,
    /// Minimum score to re-designate a target after loss.
    pub tau_redetect: f64,
    /// Required margin over the runner-up for re-detection.
    pub delta: f64,
    /// Square non-maximum-suppression window in cells (side length).
    pub nms_window: usize,
}

impl TrackerConfig {
    pub fn new(matcher: MatcherConfig) -> Self {
        TrackerConfig {
            matcher,
            tau_cand_rel: 0.05,
            tau_cand_abs: 0.1,
            tau_new: 0.25,
            tau_redetect: 0.25,
            delta: 0.05,
            nms_window: 5,
        }
    }
}

/// Local maxima of the score map under square-window non-maximum
/// suppression, thresholded and capped at `n_max` by descending score.
/// Each candidate pulls its appearance features from the nearest entry of
/// `features`.
pub fn extract_candidates(
    map: &ScoreMap,
    features: &[FeatureEntry],
    cfg: &TrackerConfig,
) -> CandidateSet {
    let peak = map.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tau = (cfg.tau_cand_rel * peak).max(cfg.tau_cand_abs);
    let radius = (cfg.nms_window / 2) as isize;
    let feat_width = cfg.matcher.arch.feat_width;

    let mut peaks: Vec<(usize, usize, f64)> = Vec::new();
    for r in 0..map.height {
        'cell: for c in 0..map.width {
            let v = map.value(r, c);
            if v < tau {
                continue;
            }
            for dr in -radius..=radius {
                for dc in -radius..=radius {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let rr = r as isize + dr;
                    let cc = c as isize + dc;
                    if rr < 0 || cc < 0 || rr >= map.height as isize || cc >= map.width as isize
                    {
                        continue;
                    }
                    let n = map.value(rr as usize, cc as usize);
                    // ties break to the first cell in scan order
                    if n > v || (n == v && (rr as usize, cc as usize) < (r, c)) {
                        continue 'cell;
                    }
                }
            }
            peaks.push((r, c, v));
        }
    }
    peaks.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then((a.0, a.1).cmp(&(b.0, b.1))));
    peaks.truncate(cfg.matcher.arch.n_max);

    let candidates = peaks
        .into_iter()
        .map(|(r, c, v)| {
            let pos = map.cell_center(r, c);
            let (feat_low, feat_high) = nearest_features(features, &pos, feat_width);
            Candidate {
                position: pos,
                score: v.clamp(0.0, 1.0),
                feat_high,
                feat_low,
            }
        })
        .collect();
    CandidateSet::new(candidates, map.image_size())
}

fn nearest_features(
    features: &[FeatureEntry],
    pos: &Point,
    feat_width: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut best: Option<&FeatureEntry> = None;
    let mut best_d = f64::INFINITY;
    for f in features {
        let d = f.pos.distance(pos);
        if d < best_d {
            best_d = d;
            best = Some(f);
        }
    }
    match best {
        Some(f) => (f.feat_low.clone(), f.feat_high.clone()),
        None => (vec![0.0; feat_width], vec![0.0; feat_width]),
    }
}

/// One entry of the object database.
#[derive(Clone, Debug)]
pub struct TrackedObject {
    pub id: u64,
    pub last_candidate: Candidate,
    pub last_seen_frame: usize,
    pub is_target: bool,
    /// Index into the most recent frame's candidate set.
    cand_index: usize,
}

/// Registry of the objects visible in the current frame, the designated
/// target, and its confidence.
#[derive(Clone, Debug)]
pub struct ObjectDatabase {
    objects: BTreeMap<u64, TrackedObject>,
    next_id: u64,
    pub target_confidence: f64,
    pub target_box: BBox,
    /// Appearance snapshot of the target, refreshed only while the
    /// confidence stays at or above 0.5.
    target_appearance: Option<(Vec<f64>, Vec<f64>)>,
}

impl ObjectDatabase {
    pub fn objects(&self) -> impl Iterator<Item = &TrackedObject> {
        self.objects.values()
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn target(&self) -> Option<&TrackedObject> {
        self.objects.values().find(|o| o.is_target)
    }

    pub fn target_appearance(&self) -> Option<&(Vec<f64>, Vec<f64>)> {
        self.target_appearance.as_ref()
    }

    fn insert_object(&mut self, candidate: Candidate, cand_index: usize, frame: usize) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.objects.insert(
            id,
            TrackedObject {
                id,
                last_candidate: candidate,
                last_seen_frame: frame,
                is_target: false,
                cand_index,
            },
        );
        id
    }
}

/// Makes sure the first frame's candidate set carries a candidate at the
/// ground-truth location; seeds one from the annotation if extraction found
/// none nearby. Returns the set plus the target's index in it.
fn ensure_target_candidate(
    mut set: CandidateSet,
    gt: &BBox,
    features: &[FeatureEntry],
    cfg: &TrackerConfig,
    stride: f64,
) -> (CandidateSet, usize) {
    let center = gt.center();
    let radius = stride.max(0.5 * gt.area().sqrt());
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in set.candidates.iter().enumerate() {
        let d = c.position.distance(&center);
        if d <= radius && best.map_or(true, |(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    if let Some((i, _)) = best {
        return (set, i);
    }
    let (feat_low, feat_high) =
        nearest_features(features, &center, cfg.matcher.arch.feat_width);
    let synthetic = Candidate {
        position: center,
        score: 1.0,
        feat_high,
        feat_low,
    };
    if set.len() == cfg.matcher.arch.n_max {
        // evict the weakest extracted candidate to stay within the cap
        let weakest = set
            .candidates
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.score.partial_cmp(&b.1.score).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        set.candidates.remove(weakest);
    }
    set.candidates.push(synthetic);
    let idx = set.len() - 1;
    (set, idx)
}

/// Builds the database from the first frame: one object per extracted
/// candidate above `tau_new`, the one at the ground-truth location marked as
/// the target with confidence 1.
pub fn init(
    first_frame_gt: &BBox,
    first_frame: &FrameData,
    cfg: &TrackerConfig,
) -> (ObjectDatabase, CandidateSet) {
    let set = extract_candidates(&first_frame.score_map, &first_frame.features, cfg);
    let (set, target_idx) = ensure_target_candidate(
        set,
        first_frame_gt,
        &first_frame.features,
        cfg,
        first_frame.score_map.stride,
    );
    let mut db = ObjectDatabase {
        objects: BTreeMap::new(),
        next_id: 1,
        target_confidence: 1.0,
        target_box: *first_frame_gt,
        target_appearance: None,
    };
    for (i, c) in set.candidates.iter().enumerate() {
        if i == target_idx || c.score >= cfg.tau_new {
            let id = db.insert_object(c.clone(), i, 0);
            if i == target_idx {
                db.objects.get_mut(&id).unwrap().is_target = true;
                db.target_appearance = Some((c.feat_low.clone(), c.feat_high.clone()));
            }
        }
    }
    (db, set)
}

/// Applies decoded matches to the database: matched objects move to their
/// new candidate, unmatched objects are dropped, and unmatched current
/// candidates above `tau_new` open fresh objects.
pub fn associate(
    db: &mut ObjectDatabase,
    matches: &MatchDecode,
    prev_set: &CandidateSet,
    cur_set: &CandidateSet,
    frame_index: usize,
    cfg: &TrackerConfig,
) -> Result<(), TrackerError> {
    for (i, j) in &matches.pairs {
        if *i >= prev_set.len() {
            return Err(TrackerError::MatchOutOfRange(*i));
        }
        if *j >= cur_set.len() {
            return Err(TrackerError::MatchOutOfRange(*j));
        }
    }
    let mut by_prev_index: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, j) in &matches.pairs {
        by_prev_index.insert(*i, *j);
    }

    let mut consumed_cur: Vec<bool> = vec![false; cur_set.len()];
    let ids: Vec<u64> = db.objects.keys().copied().collect();
    for id in ids {
        let obj = db.objects.get_mut(&id).unwrap();
        match by_prev_index.get(&obj.cand_index) {
            Some(j) => {
                obj.cand_index = *j;
                obj.last_candidate = cur_set.candidates[*j].clone();
                obj.last_seen_frame = frame_index;
                consumed_cur[*j] = true;
            }
            None => {
                db.objects.remove(&id);
            }
        }
    }

    for (j, c) in cur_set.candidates.iter().enumerate() {
        if !consumed_cur[j] && c.score >= cfg.tau_new {
            db.insert_object(c.clone(), j, frame_index);
        }
    }
    Ok(())
}

/// Picks the target after association and computes the confidence:
/// the matched target keeps its candidate score; a lost target may be
/// re-designated from an unambiguous high-score object at half weight;
/// otherwise the last known box is reported with zero confidence.
pub fn select_target(
    db: &mut ObjectDatabase,
    target_extent: (f64, f64),
    cfg: &TrackerConfig,
) -> (BBox, f64) {
    let (w, h) = target_extent;
    if let Some(target) = db.objects.values().find(|o| o.is_target) {
        let beta = target.last_candidate.score.clamp(0.0, 1.0);
        let bbox = BBox::from_center(target.last_candidate.position, w, h).unwrap();
        let appearance = (
            target.last_candidate.feat_low.clone(),
            target.last_candidate.feat_high.clone(),
        );
        db.target_box = bbox;
        db.target_confidence = beta;
        if beta >= 0.5 {
            db.target_appearance = Some(appearance);
        }
        return (bbox, beta);
    }

    // target lost: try an unambiguous re-detection among current objects
    let mut ranked: Vec<(&u64, f64)> = db
        .objects
        .iter()
        .map(|(id, o)| (id, o.last_candidate.score))
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(b.0)));
    if let Some(&(id, best)) = ranked.first() {
        let runner_up = ranked.get(1).map_or(f64::NEG_INFINITY, |r| r.1);
        if best >= cfg.tau_redetect && best - runner_up >= cfg.delta {
            let id = *id;
            let obj = db.objects.get_mut(&id).unwrap();
            obj.is_target = true;
            let beta = (0.5 * best).clamp(0.0, 1.0);
            let bbox = BBox::from_center(obj.last_candidate.position, w, h).unwrap();
            let appearance = (
                obj.last_candidate.feat_low.clone(),
                obj.last_candidate.feat_high.clone(),
            );
            db.target_box = bbox;
            db.target_confidence = beta;
            if beta >= 0.5 {
                db.target_appearance = Some(appearance);
            }
            return (bbox, beta);
        }
    }

    db.target_confidence = 0.0;
    (db.target_box, 0.0)
}

/// Runs the full loop over a sequence: one predicted box and confidence per
/// frame, the first frame reporting the ground-truth initialization.
pub fn run_sequence(
    frames: &[FrameData],
    first_frame_gt: &BBox,
    params: &MatcherParams,
    cfg: &TrackerConfig,
) -> Result<(Vec<BBox>, Vec<f64>), TrackerError> {
    if frames.is_empty() {
        return Err(TrackerError::EmptyFrames);
    }
    let (mut db, mut prev_set) = init(first_frame_gt, &frames[0], cfg);
    let mut boxes = vec![*first_frame_gt];
    let mut betas = vec![1.0];

    for (t, frame) in frames.iter().enumerate().skip(1) {
        let cur_set = extract_candidates(&frame.score_map, &frame.features, cfg);
        let decode = if prev_set.is_empty() || cur_set.is_empty() {
            MatchDecode {
                pairs: vec![],
                unmatched_prev: (0..prev_set.len()).collect(),
                unmatched_cur: (0..cur_set.len()).collect(),
            }
        } else {
            let a = assignment(params, &cfg.matcher, &prev_set, &cur_set)?;
            decode_matches(&a, cfg.matcher.tau_match)
        };
        associate(&mut db, &decode, &prev_set, &cur_set, t, cfg)?;
        let (bbox, beta) = select_target(&mut db, frame.target_extent, cfg);
        boxes.push(bbox);
        betas.push(beta);
        prev_set = cur_set;
    }
    Ok((boxes, betas))
}
