//! Synthetic small/fast-target sequence generator.
//!
//! Scenes hold one target and a number of distractors bouncing inside the
//! image. Score maps are sums of unit-height Gaussian bumps at the object
//! centers plus optional noise. Every object owns a unique unit-norm
//! low-level appearance latent, while high-level latents are drawn from a
//! small set of shared cluster centers — distractors can look identical to
//! the target in the deep cue and only the shallow cue separates them.
//! Occlusion drops the target's bump and flags the frame absent, which is
//! what exercises the dustbin labels downstream.

use crate::dataset::{save_sequence, AbsenceKind, DatasetError, FrameAnnotation, Sequence};
use crate::geometry::{BBox, Point};
use crate::matcher::{Candidate, CandidateSet, Correspondences, TrainingPair};
use crate::tracker::{FeatureEntry, FrameData, ScoreMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// Score-map resolution in pixels per cell.
pub const STRIDE: f64 = 4.0;
/// Objects alive at once (target included); spawns stop at the cap.
pub const MAX_OBJECTS: usize = 10;

const DIRECTION_JITTER: f64 = 0.3;
// tight clusters: deep-cue vectors of cluster mates are near-identical, so
// only the shallow cue and motion can separate them
const CLUSTER_PERTURBATION: f64 = 0.05;
const FEATURE_NOISE: f64 = 0.02;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("frame index {0} out of range for correspondences")]
    FrameOutOfRange(usize),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: {msg}")]
    Malformed { file: String, msg: String },
}

fn io_err(path: &Path, source: std::io::Error) -> SimError {
    SimError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Generator settings for one sequence.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SimConfig {
    pub num_frames: usize,
    /// Square image side, pixels.
    pub image_size: f64,
    /// Target (and distractor) box side, pixels.
    pub target_size: f64,
    /// Per-frame displacement as a fraction of the target size.
    pub speed: f64,
    pub num_distractors: usize,
    /// Per-frame probability of a new distractor appearing.
    pub distractor_spawn_rate: f64,
    /// Per-frame probability the target is fully occluded (never frame 0).
    pub occlusion_probability: f64,
    /// Additive Gaussian noise on score-map cells.
    pub noise_sigma: f64,
    /// Width of both appearance vectors.
    pub feature_width: usize,
    /// Shared high-level cluster centers; objects cycle through them.
    pub high_feature_cluster_count: usize,
    pub seed: u64,
}

impl SimConfig {
    /// The standard benchmark configuration: clustered deep appearance,
    /// several distractors, fast motion.
    pub fn standard() -> Self {
        SimConfig {
            num_frames: 120,
            image_size: 256.0,
            target_size: 12.0,
            speed: 0.8,
            num_distractors: 5,
            distractor_spawn_rate: 0.02,
            occlusion_probability: 0.04,
            noise_sigma: 0.05,
            feature_width: 32,
            high_feature_cluster_count: 2,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let fail = |msg: &str| Err(SimError::InvalidConfig(msg.to_string()));
        if self.num_frames == 0 {
            return fail("num_frames must be positive");
        }
        if self.speed < 0.0 {
            return fail("speed must be non-negative");
        }
        if self.target_size < 2.0 {
            return fail("target_size must be at least 2");
        }
        if self.high_feature_cluster_count < 1 {
            return fail("high_feature_cluster_count must be at least 1");
        }
        if self.feature_width == 0 {
            return fail("feature_width must be positive");
        }
        if self.image_size < 2.0 * self.target_size {
            return fail("image_size must fit the target with room to move");
        }
        if !(0.0..=1.0).contains(&self.occlusion_probability)
            || !(0.0..=1.0).contains(&self.distractor_spawn_rate)
        {
            return fail("probabilities must lie in [0, 1]");
        }
        if self.noise_sigma < 0.0 {
            return fail("noise_sigma must be non-negative");
        }
        Ok(())
    }
}

/// One feature-table row as serialized to `features.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimCandidate {
    pub pos: [f64; 2],
    pub score: f64,
    pub feat_low: Vec<f64>,
    pub feat_high: Vec<f64>,
    pub object_id: u64,
}

/// One generated frame: score map, feature table, reporting extent.
#[derive(Clone, Debug)]
pub struct SimFrame {
    pub score_map: ScoreMap,
    pub entries: Vec<SimCandidate>,
    pub target_extent: (f64, f64),
    pub target_visible: bool,
}

impl SimFrame {
    pub fn to_frame_data(&self) -> FrameData {
        FrameData {
            score_map: self.score_map.clone(),
            features: self
                .entries
                .iter()
                .map(|e| FeatureEntry {
                    pos: Point::new(e.pos[0], e.pos[1]),
                    score: e.score,
                    feat_low: e.feat_low.clone(),
                    feat_high: e.feat_high.clone(),
                })
                .collect(),
            target_extent: self.target_extent,
        }
    }

    fn candidate_set(&self, image_size: f64) -> CandidateSet {
        CandidateSet::new(
            self.entries
                .iter()
                .map(|e| Candidate {
                    position: Point::new(e.pos[0], e.pos[1]),
                    score: e.score,
                    feat_high: e.feat_high.clone(),
                    feat_low: e.feat_low.clone(),
                })
                .collect(),
            (image_size, image_size),
        )
    }
}

/// A generated sequence bundle held in memory.
#[derive(Clone, Debug)]
pub struct SimSequence {
    pub name: String,
    pub config: SimConfig,
    pub frames: Vec<SimFrame>,
    pub gt: Sequence,
}

impl SimSequence {
    pub fn init_box(&self) -> BBox {
        self.gt.frames[0].bbox.expect("first frame is present")
    }

    pub fn frame_data(&self) -> Vec<FrameData> {
        self.frames.iter().map(|f| f.to_frame_data()).collect()
    }

    /// Ground-truth match labels between frames `t` and `t + 1`: entries
    /// sharing an object id pair up, the rest go to the dustbins.
    pub fn correspondences(&self, t: usize) -> Result<Correspondences, SimError> {
        if t + 1 >= self.frames.len() {
            return Err(SimError::FrameOutOfRange(t));
        }
        let prev = &self.frames[t].entries;
        let cur = &self.frames[t + 1].entries;
        let mut pairs = Vec::new();
        let mut prev_unmatched = Vec::new();
        let mut cur_matched = vec![false; cur.len()];
        for (i, p) in prev.iter().enumerate() {
            match cur.iter().position(|c| c.object_id == p.object_id) {
                Some(j) => {
                    pairs.push((i, j));
                    cur_matched[j] = true;
                }
                None => prev_unmatched.push(i),
            }
        }
        let cur_unmatched = (0..cur.len()).filter(|j| !cur_matched[*j]).collect();
        Ok(Correspondences {
            pairs,
            prev_unmatched,
            cur_unmatched,
        })
    }

    /// Labelled consecutive frame pairs for matcher training.
    pub fn training_pairs(&self) -> Result<Vec<TrainingPair>, SimError> {
        let mut out = Vec::new();
        for t in 0..self.frames.len().saturating_sub(1) {
            out.push(TrainingPair {
                prev: self.frames[t].candidate_set(self.config.image_size),
                cur: self.frames[t + 1].candidate_set(self.config.image_size),
                gt: self.correspondences(t)?,
            });
        }
        Ok(out)
    }
}

struct SimObject {
    id: u64,
    pos: (f64, f64),
    dir: f64,
    low: Vec<f64>,
    high: Vec<f64>,
}

fn unit_vector(rng: &mut ChaCha8Rng, width: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..width).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    for x in v.iter_mut() {
        *x /= norm;
    }
    v
}

fn clustered_vector(rng: &mut ChaCha8Rng, center: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = center
        .iter()
        .map(|c| {
            let n: f64 = StandardNormal.sample(rng);
            c + CLUSTER_PERTURBATION * n
        })
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    for x in v.iter_mut() {
        *x /= norm;
    }
    v
}

fn spawn_object(
    rng: &mut ChaCha8Rng,
    cfg: &SimConfig,
    clusters: &[Vec<f64>],
    id: u64,
) -> SimObject {
    let margin = cfg.target_size / 2.0;
    let pos = (
        rng.gen_range(margin..cfg.image_size - margin),
        rng.gen_range(margin..cfg.image_size - margin),
    );
    let dir = rng.gen_range(0.0..std::f64::consts::TAU);
    let low = unit_vector(rng, cfg.feature_width);
    let high = clustered_vector(rng, &clusters[id as usize % clusters.len()]);
    SimObject {
        id,
        pos,
        dir,
        low,
        high,
    }
}

fn step_object(rng: &mut ChaCha8Rng, cfg: &SimConfig, obj: &mut SimObject) {
    let jitter: f64 = StandardNormal.sample(rng);
    obj.dir += DIRECTION_JITTER * jitter;
    let v = cfg.speed * cfg.target_size;
    let margin = cfg.target_size / 2.0;
    let lo = margin;
    let hi = cfg.image_size - margin;
    let mut x = obj.pos.0 + v * obj.dir.cos();
    let mut y = obj.pos.1 + v * obj.dir.sin();
    let mut dx = obj.dir.cos();
    let mut dy = obj.dir.sin();
    if x < lo {
        x = 2.0 * lo - x;
        dx = -dx;
    } else if x > hi {
        x = 2.0 * hi - x;
        dx = -dx;
    }
    if y < lo {
        y = 2.0 * lo - y;
        dy = -dy;
    } else if y > hi {
        y = 2.0 * hi - y;
        dy = -dy;
    }
    // one reflection per axis per step keeps the box inside for any speed
    // the config validation admits
    obj.pos = (x.clamp(lo, hi), y.clamp(lo, hi));
    obj.dir = dy.atan2(dx);
}

fn render_map(rng: &mut ChaCha8Rng, cfg: &SimConfig, objects: &[(f64, f64)]) -> ScoreMap {
    let cells = (cfg.image_size / STRIDE).ceil() as usize;
    let mut values = vec![0.0f64; cells * cells];
    if cfg.noise_sigma > 0.0 {
        for v in values.iter_mut() {
            let n: f64 = StandardNormal.sample(rng);
            *v += cfg.noise_sigma * n;
        }
    }
    let sigma = cfg.target_size / 2.0;
    let reach = (4.0 * sigma / STRIDE).ceil() as isize;
    for (ox, oy) in objects {
        let cx = (ox / STRIDE) as isize;
        let cy = (oy / STRIDE) as isize;
        for r in (cy - reach).max(0)..=(cy + reach).min(cells as isize - 1) {
            for c in (cx - reach).max(0)..=(cx + reach).min(cells as isize - 1) {
                let px = (c as f64 + 0.5) * STRIDE;
                let py = (r as f64 + 0.5) * STRIDE;
                let d2 = (px - ox).powi(2) + (py - oy).powi(2);
                values[r as usize * cells + c as usize] +=
                    (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    ScoreMap::new(cells, cells, STRIDE, values).expect("cells match values")
}

/// Generates one sequence deterministically from the config seed.
pub fn gen_sequence(cfg: &SimConfig) -> Result<SimSequence, SimError> {
    gen_sequence_named(cfg, &format!("sim_{:016x}", cfg.seed))
}

/// [`gen_sequence`] with an explicit sequence name.
pub fn gen_sequence_named(cfg: &SimConfig, name: &str) -> Result<SimSequence, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let clusters: Vec<Vec<f64>> = (0..cfg.high_feature_cluster_count)
        .map(|_| unit_vector(&mut rng, cfg.feature_width))
        .collect();

    let mut objects: Vec<SimObject> = Vec::new();
    for id in 0..=(cfg.num_distractors as u64) {
        objects.push(spawn_object(&mut rng, cfg, &clusters, id));
    }
    let mut next_id = objects.len() as u64;

    let mut frames = Vec::with_capacity(cfg.num_frames);
    let mut gt_frames = Vec::with_capacity(cfg.num_frames);
    for t in 0..cfg.num_frames {
        let occluded = t > 0 && rng.gen::<f64>() < cfg.occlusion_probability;
        if t > 0 {
            if rng.gen::<f64>() < cfg.distractor_spawn_rate && objects.len() < MAX_OBJECTS {
                objects.push(spawn_object(&mut rng, cfg, &clusters, next_id));
                next_id += 1;
            }
            for obj in objects.iter_mut() {
                step_object(&mut rng, cfg, obj);
            }
        }

        let visible_centers: Vec<(f64, f64)> = objects
            .iter()
            .filter(|o| !(o.id == 0 && occluded))
            .map(|o| o.pos)
            .collect();
        let map = render_map(&mut rng, cfg, &visible_centers);

        let mut entries = Vec::new();
        for obj in &objects {
            if obj.id == 0 && occluded {
                continue;
            }
            let col = ((obj.pos.0 / STRIDE) as usize).min(map.width - 1);
            let row = ((obj.pos.1 / STRIDE) as usize).min(map.height - 1);
            let score = map.value(row, col).clamp(0.0, 1.0);
            let noisy = |latent: &[f64], rng: &mut ChaCha8Rng| {
                latent
                    .iter()
                    .map(|x| {
                        let n: f64 = StandardNormal.sample(rng);
                        x + FEATURE_NOISE * n
                    })
                    .collect::<Vec<f64>>()
            };
            let feat_low = noisy(&obj.low, &mut rng);
            let feat_high = noisy(&obj.high, &mut rng);
            entries.push(SimCandidate {
                pos: [obj.pos.0, obj.pos.1],
                score,
                feat_low,
                feat_high,
                object_id: obj.id,
            });
        }

        let target = &objects[0];
        gt_frames.push(if occluded {
            FrameAnnotation::absent(AbsenceKind::FullOcclusion)
        } else {
            FrameAnnotation::present(
                BBox::from_center(
                    Point::new(target.pos.0, target.pos.1),
                    cfg.target_size,
                    cfg.target_size,
                )
                .expect("positive extent"),
            )
        });
        frames.push(SimFrame {
            score_map: map,
            entries,
            target_extent: (cfg.target_size, cfg.target_size),
            target_visible: !occluded,
        });
    }

    let gt = Sequence::new(name, "synthetic", gt_frames, Default::default(), 30.0)?;
    Ok(SimSequence {
        name: name.to_string(),
        config: *cfg,
        frames,
        gt,
    })
}

/// Stable fan-out of one base seed into per-artifact seeds.
pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let eat = |h: &mut u64, b: u8| {
        *h ^= b as u64;
        *h = h.wrapping_mul(0x100000001b3);
    };
    for b in base.to_le_bytes() {
        eat(&mut h, b);
    }
    for part in parts {
        for b in part.as_bytes() {
            eat(&mut h, *b);
        }
        eat(&mut h, 0xff);
    }
    h
}

/// A dataset request: one template applied `count` times with derived seeds.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SimDatasetConfig {
    pub template: SimConfig,
    pub count: usize,
}

/// Writes `count` sequence bundles under `root`, each with the annotation
/// triple plus the sim sidecars (`sim_config.json`, `scoremaps.bin`,
/// `features.jsonl`). Returns the bundle names.
pub fn gen_dataset(
    cfg: &SimDatasetConfig,
    base_seed: u64,
    root: &Path,
) -> Result<Vec<String>, SimError> {
    fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
    let mut names = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let name = format!("sim_{i:03}");
        let mut seq_cfg = cfg.template;
        seq_cfg.seed = derive_seed(base_seed, &[&name]);
        let seq = gen_sequence_named(&seq_cfg, &name)?;
        save_bundle(&root.join(&name), &seq)?;
        names.push(name);
    }
    Ok(names)
}

/// Writes one sequence bundle: annotations plus sim sidecars.
pub fn save_bundle(dir: &Path, seq: &SimSequence) -> Result<(), SimError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    save_sequence(dir, &seq.gt)?;

    let cfg_path = dir.join("sim_config.json");
    fs::write(
        &cfg_path,
        serde_json::to_string_pretty(&seq.config).expect("config serializes"),
    )
    .map_err(|e| io_err(&cfg_path, e))?;

    let maps_path = dir.join("scoremaps.bin");
    let first = &seq.frames[0].score_map;
    let mut bytes = format!(
        "{} {} {} {}\n",
        first.width,
        first.height,
        first.stride,
        seq.frames.len()
    )
    .into_bytes();
    for frame in &seq.frames {
        for v in &frame.score_map.values {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    fs::write(&maps_path, bytes).map_err(|e| io_err(&maps_path, e))?;

    let feat_path = dir.join("features.jsonl");
    let mut out = fs::File::create(&feat_path).map_err(|e| io_err(&feat_path, e))?;
    for frame in &seq.frames {
        let line = serde_json::to_string(&frame.entries).expect("entries serialize");
        writeln!(out, "{line}").map_err(|e| io_err(&feat_path, e))?;
    }
    Ok(())
}

/// Reads a bundle written by [`save_bundle`]. Score-map values round-trip
/// through the 32-bit payload.
pub fn load_bundle(dir: &Path) -> Result<SimSequence, SimError> {
    let gt = crate::dataset::load_sequence(dir)?;

    let cfg_path = dir.join("sim_config.json");
    let cfg_text = fs::read_to_string(&cfg_path).map_err(|e| io_err(&cfg_path, e))?;
    let config: SimConfig = serde_json::from_str(&cfg_text).map_err(|e| SimError::Malformed {
        file: cfg_path.display().to_string(),
        msg: e.to_string(),
    })?;

    let maps_path = dir.join("scoremaps.bin");
    let bytes = fs::read(&maps_path).map_err(|e| io_err(&maps_path, e))?;
    let newline = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| SimError::Malformed {
            file: maps_path.display().to_string(),
            msg: "missing header line".to_string(),
        })?;
    let header = std::str::from_utf8(&bytes[..newline]).map_err(|e| SimError::Malformed {
        file: maps_path.display().to_string(),
        msg: e.to_string(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 {
        return Err(SimError::Malformed {
            file: maps_path.display().to_string(),
            msg: format!("expected 4 header fields, got {}", fields.len()),
        });
    }
    let parse_usize = |s: &str| {
        s.parse::<usize>().map_err(|e| SimError::Malformed {
            file: maps_path.display().to_string(),
            msg: e.to_string(),
        })
    };
    let width = parse_usize(fields[0])?;
    let height = parse_usize(fields[1])?;
    let stride: f64 = fields[2].parse().map_err(|e: std::num::ParseFloatError| {
        SimError::Malformed {
            file: maps_path.display().to_string(),
            msg: e.to_string(),
        }
    })?;
    let frame_count = parse_usize(fields[3])?;
    let payload = &bytes[newline + 1..];
    let per_frame = width * height;
    if payload.len() != frame_count * per_frame * 4 {
        return Err(SimError::Malformed {
            file: maps_path.display().to_string(),
            msg: format!(
                "payload holds {} bytes, expected {}",
                payload.len(),
                frame_count * per_frame * 4
            ),
        });
    }

    let feat_path = dir.join("features.jsonl");
    let feat_text = fs::read_to_string(&feat_path).map_err(|e| io_err(&feat_path, e))?;
    let feat_lines: Vec<&str> = feat_text.lines().collect();
    if feat_lines.len() != frame_count {
        return Err(SimError::Malformed {
            file: feat_path.display().to_string(),
            msg: format!(
                "{} feature lines for {} frames",
                feat_lines.len(),
                frame_count
            ),
        });
    }

    let mut frames = Vec::with_capacity(frame_count);
    for (t, line) in feat_lines.iter().enumerate() {
        let entries: Vec<SimCandidate> =
            serde_json::from_str(line).map_err(|e| SimError::Malformed {
                file: feat_path.display().to_string(),
                msg: format!("line {}: {e}", t + 1),
            })?;
        let start = t * per_frame * 4;
        let values: Vec<f64> = payload[start..start + per_frame * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let score_map = ScoreMap::new(width, height, stride, values).map_err(|e| {
            SimError::Malformed {
                file: maps_path.display().to_string(),
                msg: e.to_string(),
            }
        })?;
        let target_visible = !gt.frames.get(t).map_or(false, |f| f.is_absent());
        frames.push(SimFrame {
            score_map,
            entries,
            target_extent: (config.target_size, config.target_size),
            target_visible,
        });
    }

    Ok(SimSequence {
        name: gt.name.clone(),
        config,
        frames,
        gt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{compute_auto_attributes, dataset_stats, load_dataset, Attribute};
    use tempfile::tempdir;

    fn quiet_cfg() -> SimConfig {
        SimConfig {
            num_frames: 10,
            image_size: 128.0,
            target_size: 10.0,
            speed: 0.0,
            num_distractors: 0,
            distractor_spawn_rate: 0.0,
            occlusion_probability: 0.0,
            noise_sigma: 0.0,
            feature_width: 8,
            high_feature_cluster_count: 1,
            seed: 5,
        }
    }

    #[test]
    fn static_scene_is_constant() {
        let seq = gen_sequence(&quiet_cfg()).unwrap();
        let first = seq.gt.frames[0].bbox.unwrap();
        for f in &seq.gt.frames {
            assert_eq!(f.bbox.unwrap(), first);
        }
        for f in &seq.frames {
            assert_eq!(f.entries.len(), 1);
            assert_eq!(f.entries[0].pos, seq.frames[0].entries[0].pos);
            assert_eq!(f.entries[0].object_id, 0);
        }
    }

    #[test]
    fn same_seed_is_identical() {
        let cfg = SimConfig {
            speed: 0.9,
            num_distractors: 3,
            distractor_spawn_rate: 0.1,
            occlusion_probability: 0.1,
            noise_sigma: 0.05,
            ..quiet_cfg()
        };
        let a = gen_sequence(&cfg).unwrap();
        let b = gen_sequence(&cfg).unwrap();
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert_eq!(fa.score_map.values, fb.score_map.values);
            assert_eq!(fa.entries, fb.entries);
        }
        assert_eq!(a.gt.frames, b.gt.frames);
    }

    #[test]
    fn measured_speed_close_to_configured() {
        let cfg = SimConfig {
            num_frames: 200,
            speed: 1.0,
            target_size: 10.0,
            image_size: 256.0,
            ..quiet_cfg()
        };
        let seq = gen_sequence(&cfg).unwrap();
        let stats = dataset_stats(&[seq.gt]);
        assert!(
            (stats.avg_relative_speed - 1.0).abs() < 0.1,
            "avg speed {}",
            stats.avg_relative_speed
        );
        assert!((stats.avg_target_size - 100.0).abs() < 10.0);
    }

    #[test]
    fn boxes_stay_inside_image() {
        for seed in 0..20 {
            let cfg = SimConfig {
                num_frames: 60,
                speed: 1.5,
                occlusion_probability: 0.1,
                seed,
                ..quiet_cfg()
            };
            let seq = gen_sequence(&cfg).unwrap();
            for f in &seq.gt.frames {
                if let Some(b) = f.bbox {
                    assert!(b.x >= -1e-9 && b.y >= -1e-9);
                    assert!(b.x + b.w <= cfg.image_size + 1e-9);
                    assert!(b.y + b.h <= cfg.image_size + 1e-9);
                }
            }
        }
    }

    #[test]
    fn low_latents_separate_better_than_clustered_high() {
        let cfg = SimConfig {
            num_distractors: 4,
            high_feature_cluster_count: 2,
            feature_width: 32,
            ..quiet_cfg()
        };
        let mut low_dots = Vec::new();
        let mut high_mate_dots = Vec::new();
        let mut seed = 0;
        while low_dots.len() < 1000 {
            let seq = gen_sequence(&SimConfig { seed, ..cfg }).unwrap();
            let entries = &seq.frames[0].entries;
            for i in 0..entries.len() {
                for j in (i + 1)..entries.len() {
                    let dot = |a: &[f64], b: &[f64]| -> f64 {
                        a.iter().zip(b).map(|(x, y)| x * y).sum()
                    };
                    low_dots.push(dot(&entries[i].feat_low, &entries[j].feat_low));
                    // same cluster when ids share parity (objects cycle)
                    if entries[i].object_id % 2 == entries[j].object_id % 2 {
                        high_mate_dots.push(dot(&entries[i].feat_high, &entries[j].feat_high));
                    }
                }
            }
            seed += 1;
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&low_dots) + 0.3 < mean(&high_mate_dots),
            "low {} vs clustered high {}",
            mean(&low_dots),
            mean(&high_mate_dots)
        );
    }

    #[test]
    fn noiseless_peaks_sit_on_object_centers() {
        let cfg = SimConfig {
            num_frames: 5,
            speed: 0.7,
            ..quiet_cfg()
        };
        let seq = gen_sequence(&cfg).unwrap();
        for f in &seq.frames {
            let map = &f.score_map;
            let mut best = (0usize, 0usize, f64::NEG_INFINITY);
            for r in 0..map.height {
                for c in 0..map.width {
                    if map.value(r, c) > best.2 {
                        best = (r, c, map.value(r, c));
                    }
                }
            }
            let peak = map.cell_center(best.0, best.1);
            let center = Point::new(f.entries[0].pos[0], f.entries[0].pos[1]);
            assert!(
                peak.distance(&center) <= STRIDE,
                "peak {:?} vs center {:?}",
                peak,
                center
            );
        }
    }

    #[test]
    fn correspondences_static_scene_is_diagonal() {
        let seq = gen_sequence(&quiet_cfg()).unwrap();
        let c = seq.correspondences(0).unwrap();
        assert_eq!(c.pairs, vec![(0, 0)]);
        assert!(c.prev_unmatched.is_empty());
        assert!(c.cur_unmatched.is_empty());
        assert!(seq.correspondences(seq.frames.len() - 1).is_err());
    }

    #[test]
    fn occlusion_sends_target_to_dustbin() {
        let cfg = SimConfig {
            num_frames: 60,
            occlusion_probability: 0.5,
            seed: 11,
            ..quiet_cfg()
        };
        let seq = gen_sequence(&cfg).unwrap();
        let t = (0..seq.frames.len() - 1)
            .find(|t| seq.frames[*t].target_visible && !seq.frames[*t + 1].target_visible)
            .expect("an occlusion onset exists at this seed");
        let c = seq.correspondences(t).unwrap();
        let target_idx = seq.frames[t]
            .entries
            .iter()
            .position(|e| e.object_id == 0)
            .unwrap();
        assert!(c.prev_unmatched.contains(&target_idx));
    }

    #[test]
    fn spawned_distractor_comes_from_dustbin() {
        let cfg = SimConfig {
            num_frames: 80,
            distractor_spawn_rate: 0.4,
            seed: 3,
            ..quiet_cfg()
        };
        let seq = gen_sequence(&cfg).unwrap();
        let t = (0..seq.frames.len() - 1)
            .find(|t| seq.frames[*t + 1].entries.len() > seq.frames[*t].entries.len())
            .expect("a spawn exists at this seed");
        let c = seq.correspondences(t).unwrap();
        assert!(!c.cur_unmatched.is_empty());
    }

    #[test]
    fn dataset_bundles_load_and_flag_fm() {
        let tmp = tempdir().unwrap();
        let cfg = SimDatasetConfig {
            template: SimConfig {
                num_frames: 40,
                speed: 0.8,
                ..quiet_cfg()
            },
            count: 5,
        };
        let names = gen_dataset(&cfg, 42, tmp.path()).unwrap();
        assert_eq!(names.len(), 5);
        let sequences = load_dataset(tmp.path()).unwrap();
        assert_eq!(sequences.len(), 5);
        for seq in &sequences {
            let attrs = compute_auto_attributes(seq);
            assert!(attrs.contains(&Attribute::FM), "{} lacks FM", seq.name);
            assert!(attrs.contains(&Attribute::LR));
        }
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let cfg = SimDatasetConfig {
            template: SimConfig {
                num_frames: 12,
                speed: 0.8,
                noise_sigma: 0.05,
                num_distractors: 2,
                ..quiet_cfg()
            },
            count: 2,
        };
        let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
        gen_dataset(&cfg, 9, a.path()).unwrap();
        gen_dataset(&cfg, 9, b.path()).unwrap();
        for name in ["sim_000", "sim_001"] {
            for file in [
                "meta.json",
                "groundtruth.txt",
                "absence.txt",
                "sim_config.json",
                "scoremaps.bin",
                "features.jsonl",
            ] {
                let x = fs::read(a.path().join(name).join(file)).unwrap();
                let y = fs::read(b.path().join(name).join(file)).unwrap();
                assert_eq!(x, y, "{name}/{file} differs");
            }
        }
    }

    #[test]
    fn bundle_roundtrip_preserves_entries_and_maps() {
        let tmp = tempdir().unwrap();
        let cfg = SimConfig {
            num_frames: 8,
            noise_sigma: 0.05,
            num_distractors: 2,
            speed: 0.5,
            ..quiet_cfg()
        };
        let seq = gen_sequence_named(&cfg, "roundtrip").unwrap();
        let dir = tmp.path().join("roundtrip");
        save_bundle(&dir, &seq).unwrap();
        let loaded = load_bundle(&dir).unwrap();
        assert_eq!(loaded.name, "roundtrip");
        assert_eq!(loaded.frames.len(), seq.frames.len());
        for (a, b) in seq.frames.iter().zip(&loaded.frames) {
            assert_eq!(a.entries, b.entries);
            for (x, y) in a.score_map.values.iter().zip(&b.score_map.values) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(gen_sequence(&SimConfig {
            num_frames: 0,
            ..quiet_cfg()
        })
        .is_err());
        assert!(gen_sequence(&SimConfig {
            speed: -1.0,
            ..quiet_cfg()
        })
        .is_err());
        assert!(gen_sequence(&SimConfig {
            target_size: 1.0,
            ..quiet_cfg()
        })
        .is_err());
        assert!(gen_sequence(&SimConfig {
            high_feature_cluster_count: 0,
            ..quiet_cfg()
        })
        .is_err());
    }

    #[test]
    fn derive_seed_is_stable_and_distinct() {
        assert_eq!(derive_seed(1, &["a"]), derive_seed(1, &["a"]));
        assert_ne!(derive_seed(1, &["a"]), derive_seed(2, &["a"]));
        assert_ne!(derive_seed(1, &["a"]), derive_seed(1, &["b"]));
        assert_ne!(derive_seed(1, &["ab", "c"]), derive_seed(1, &["a", "bc"]));
    }
}
