//! Candidate association between consecutive frames.
//!
//! Each candidate carries its classifier score, image position, and two
//! appearance vectors from different representation depths. Two parallel
//! branches with identical architecture and independent weights encode and
//! embed the candidates; their scalar-product similarity matrices are fused
//! by a configurable weight and pushed through a dustbin-augmented entropic
//! assignment whose soft probabilities drive matching, the association loss,
//! and training.

use crate::geometry::Point;
use crate::tinynet::{
    adam_step, attention_graph, linear_graph, load_checkpoint, mlp_graph, save_checkpoint,
    AdamState, AttentionIds, AttentionParams, Linear, LinearIds, MlpParams, NetError, NodeId,
    Tape, Tensor2,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MatcherError {
    #[error("candidate feature width {got}, expected {expected}")]
    FeatureWidth { expected: usize, got: usize },
    #[error("{got} candidates exceed the configured maximum {limit}")]
    TooManyCandidates { limit: usize, got: usize },
    #[error("omega {0} outside [0, 1]")]
    OmegaRange(f64),
    #[error("similarity matrices must share shape")]
    ShapeMismatch,
    #[error("scores must be finite")]
    NonFiniteScores,
    #[error("entropic assignment needs at least one iteration")]
    ZeroIterations,
    #[error("cross-frame message passing needs both candidate sets non-empty")]
    MixedEmptySets,
    #[error("correspondence index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("training set holds no usable frame pairs")]
    EmptyTrainingSet,
    #[error(transparent)]
    Checkpoint(#[from] crate::tinynet::CheckpointError),
    #[error("checkpoint holds {got} values, architecture needs {expected}")]
    ParamCount { expected: usize, got: usize },
    #[error(transparent)]
    Net(#[from] NetError),
}

/// One target candidate: position, classifier score, and the two appearance
/// vectors (deeper-layer and shallower-layer cues).
#[derive(Clone, Debug)]
pub struct Candidate {
    pub position: Point,
    pub score: f64,
    pub feat_high: Vec<f64>,
    pub feat_low: Vec<f64>,
}

/// The ordered candidates of one frame plus the image extent used to
/// normalize positions before encoding.
#[derive(Clone, Debug)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
    pub image_size: (f64, f64),
}

impl CandidateSet {
    pub fn new(candidates: Vec<Candidate>, image_size: (f64, f64)) -> Self {
        assert!(image_size.0 > 0.0 && image_size.1 > 0.0);
        CandidateSet {
            candidates,
            image_size,
        }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Per-candidate codes, one row each, for the two branches.
#[derive(Clone, Debug)]
pub struct EncodedSet {
    pub codes_high: Tensor2,
    pub codes_low: Tensor2,
}

/// Final per-candidate feature representations after message passing.
#[derive(Clone, Debug)]
pub struct EmbeddingSet {
    pub emb_high: Tensor2,
    pub emb_low: Tensor2,
}

/// The two branch similarity matrices and their fused combination.
#[derive(Clone, Debug)]
pub struct SimilarityPair {
    pub s_high: Tensor2,
    pub s_low: Tensor2,
    pub fused: Tensor2,
    pub omega: f64,
}

impl SimilarityPair {
    pub fn new(s_high: Tensor2, s_low: Tensor2, omega: f64) -> Result<Self, MatcherError> {
        if s_high.shape() != s_low.shape() {
            return Err(MatcherError::ShapeMismatch);
        }
        let fused = fuse(&s_high, &s_low, omega)?;
        Ok(SimilarityPair {
            s_high,
            s_low,
            fused,
            omega,
        })
    }
}

/// Elementwise convex combination `omega * s_high + (1 - omega) * s_low`.
///
/// The endpoints short-circuit: omega = 1 returns `s_high` unchanged and
/// omega = 0 returns `s_low`, so a single-branch run is reproduced exactly.
pub fn fuse(s_high: &Tensor2, s_low: &Tensor2, omega: f64) -> Result<Tensor2, MatcherError> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(MatcherError::OmegaRange(omega));
    }
    if s_high.shape() != s_low.shape() {
        return Err(MatcherError::ShapeMismatch);
    }
    if omega == 1.0 {
        return Ok(s_high.clone());
    }
    if omega == 0.0 {
        return Ok(s_low.clone());
    }
    let mut out = s_high.clone();
    for (o, l) in out.data.iter_mut().zip(&s_low.data) {
        *o = omega * *o + (1.0 - omega) * l;
    }
    Ok(out)
}

/// Dustbin-augmented soft assignment between two frames' candidates.
/// `probs` is (N' + 1) x (N + 1); the last row and column are the dustbins.
#[derive(Clone, Debug)]
pub struct AssignmentMatrix {
    pub probs: Tensor2,
}

impl AssignmentMatrix {
    pub fn n_prev(&self) -> usize {
        self.probs.rows - 1
    }

    pub fn n_cur(&self) -> usize {
        self.probs.cols - 1
    }
}

/// Decoded hard matches plus the leftovers on both sides.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MatchDecode {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_prev: Vec<usize>,
    pub unmatched_cur: Vec<usize>,
}

/// Ground-truth correspondence labels for one frame pair, including the
/// candidates whose counterpart is missing on the other side.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Correspondences {
    pub pairs: Vec<(usize, usize)>,
    pub prev_unmatched: Vec<usize>,
    pub cur_unmatched: Vec<usize>,
}

impl Correspondences {
    /// Assignment-matrix cells for the loss: matched pairs, previous-frame
    /// candidates sent to the dustbin column, current-frame candidates drawn
    /// from the dustbin row.
    pub fn cells(
        &self,
        n_prev: usize,
        n_cur: usize,
    ) -> Result<Vec<(usize, usize)>, MatcherError> {
        let mut cells = Vec::new();
        for (i, j) in &self.pairs {
            if *i >= n_prev || *j >= n_cur {
                return Err(MatcherError::IndexOutOfRange(format!("pair ({i}, {j})")));
            }
            cells.push((*i, *j));
        }
        for i in &self.prev_unmatched {
            if *i >= n_prev {
                return Err(MatcherError::IndexOutOfRange(format!("prev {i}")));
            }
            cells.push((*i, n_cur));
        }
        for j in &self.cur_unmatched {
            if *j >= n_cur {
                return Err(MatcherError::IndexOutOfRange(format!("cur {j}")));
            }
            cells.push((n_prev, *j));
        }
        Ok(cells)
    }

    pub fn decision_count(&self) -> usize {
        2 * self.pairs.len() + self.prev_unmatched.len() + self.cur_unmatched.len()
    }
}

/// Network shape shared by both branches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatcherArch {
    /// Model width of codes and embeddings.
    pub d: usize,
    /// Width of the raw appearance vectors candidates carry.
    pub feat_width: usize,
    /// Message-passing layers, alternating self (even) and cross (odd).
    pub layers: usize,
    /// Upper bound on candidates per frame.
    pub n_max: usize,
}

impl Default for MatcherArch {
    fn default() -> Self {
        MatcherArch {
            d: 32,
            feat_width: 32,
            layers: 4,
            n_max: 16,
        }
    }
}

/// Which similarity branches contribute to the assignment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BranchMode {
    /// Both branches, fused by omega.
    Dual,
    /// Deeper-appearance branch only; omega is ignored.
    HighOnly,
}

/// Runtime configuration of the matcher.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MatcherConfig {
    pub arch: MatcherArch,
    pub omega: f64,
    pub mode: BranchMode,
    pub tau_match: f64,
    pub sinkhorn_iters_infer: usize,
    pub sinkhorn_iters_train: usize,
}

impl MatcherConfig {
    pub fn with_omega(omega: f64) -> Self {
        MatcherConfig {
            arch: MatcherArch::default(),
            omega,
            mode: BranchMode::Dual,
            tau_match: 0.2,
            sinkhorn_iters_infer: 100,
            sinkhorn_iters_train: 50,
        }
    }
}

/// One branch: appearance projection, score/position encoder, message
/// passing layers, final projection.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchParams {
    pub proj: Linear,
    pub psi: MlpParams,
    pub attn: Vec<AttentionParams>,
    pub final_proj: Linear,
}

impl BranchParams {
    fn init<R: Rng>(rng: &mut R, arch: &MatcherArch) -> Self {
        BranchParams {
            proj: Linear::init(rng, arch.feat_width, arch.d),
            psi: MlpParams::init(rng, &[3, arch.d, arch.d]),
            attn: (0..arch.layers)
                .map(|_| AttentionParams::init(rng, arch.d))
                .collect(),
            final_proj: Linear::init(rng, arch.d, arch.d),
        }
    }

    fn zeros(arch: &MatcherArch) -> Self {
        BranchParams {
            proj: Linear::zeros(arch.feat_width, arch.d),
            psi: MlpParams::new(vec![
                Linear::zeros(3, arch.d),
                Linear::zeros(arch.d, arch.d),
            ]),
            attn: (0..arch.layers)
                .map(|_| AttentionParams {
                    wq: Tensor2::zeros(arch.d, arch.d),
                    wk: Tensor2::zeros(arch.d, arch.d),
                    wv: Tensor2::zeros(arch.d, arch.d),
                    wo: Tensor2::zeros(arch.d, arch.d),
                })
                .collect(),
            final_proj: Linear::zeros(arch.d, arch.d),
        }
    }

    fn tensors(&self) -> Vec<&Tensor2> {
        let mut out = vec![&self.proj.weight, &self.proj.bias];
        for l in &self.psi.layers {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        for a in &self.attn {
            out.extend([&a.wq, &a.wk, &a.wv, &a.wo]);
        }
        out.push(&self.final_proj.weight);
        out.push(&self.final_proj.bias);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut out = vec![&mut self.proj.weight, &mut self.proj.bias];
        for l in &mut self.psi.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        for a in &mut self.attn {
            out.push(&mut a.wq);
            out.push(&mut a.wk);
            out.push(&mut a.wv);
            out.push(&mut a.wo);
        }
        out.push(&mut self.final_proj.weight);
        out.push(&mut self.final_proj.bias);
        out
    }
}

/// The full learnable state: two independent branches of identical
/// architecture plus the scalar dustbin score. Within a branch, previous-
/// and current-frame candidates share the same weights.
#[derive(Clone, Debug, PartialEq)]
pub struct MatcherParams {
    pub arch: MatcherArch,
    pub high: BranchParams,
    pub low: BranchParams,
    pub dustbin: Tensor2,
}

impl MatcherParams {
    pub fn init<R: Rng>(rng: &mut R, arch: MatcherArch) -> Self {
        MatcherParams {
            arch,
            high: BranchParams::init(rng, &arch),
            low: BranchParams::init(rng, &arch),
            dustbin: Tensor2::scalar(1.0),
        }
    }

    pub fn zeros(arch: MatcherArch) -> Self {
        MatcherParams {
            arch,
            high: BranchParams::zeros(&arch),
            low: BranchParams::zeros(&arch),
            dustbin: Tensor2::scalar(0.0),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.dustbin.data[0]
    }

    /// Canonical tensor order used for the optimizer and checkpoints.
    pub fn tensors(&self) -> Vec<&Tensor2> {
        let mut out = self.high.tensors();
        out.extend(self.low.tensors());
        out.push(&self.dustbin);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut out = self.high.tensors_mut();
        out.extend(self.low.tensors_mut());
        out.push(&mut self.dustbin);
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data.clone()).collect()
    }

    pub fn from_flat(arch: MatcherArch, values: &[f64]) -> Result<Self, MatcherError> {
        let mut params = MatcherParams::zeros(arch);
        let expected: usize = params.tensors().iter().map(|t| t.len()).sum();
        if values.len() != expected {
            return Err(MatcherError::ParamCount {
                expected,
                got: values.len(),
            });
        }
        let mut offset = 0;
        for t in params.tensors_mut() {
            let n = t.len();
            t.data.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(params)
    }
}

/// Checkpoint header: everything needed to rebuild the matcher.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch: MatcherArch,
    pub omega: f64,
    pub mode: BranchMode,
    pub seed: u64,
}

pub fn save_matcher(
    path: &Path,
    params: &MatcherParams,
    omega: f64,
    mode: BranchMode,
    seed: u64,
) -> Result<(), MatcherError> {
    let meta = CheckpointMeta {
        arch: params.arch,
        omega,
        mode,
        seed,
    };
    save_checkpoint(path, &meta, &params.flatten())?;
    Ok(())
}

pub fn load_matcher(path: &Path) -> Result<(MatcherParams, CheckpointMeta), MatcherError> {
    let (meta, values): (CheckpointMeta, Vec<f64>) = load_checkpoint(path)?;
    let params = MatcherParams::from_flat(meta.arch, &values)?;
    Ok((params, meta))
}

struct BranchNodeIds {
    proj: LinearIds,
    psi: Vec<LinearIds>,
    attn: Vec<AttentionIds>,
    final_proj: LinearIds,
}

struct RegisteredParams {
    all: Vec<NodeId>,
    high: BranchNodeIds,
    low: BranchNodeIds,
    dustbin: NodeId,
}

fn register_linear(tape: &mut Tape, l: &Linear, all: &mut Vec<NodeId>) -> LinearIds {
    let ids = LinearIds {
        weight: tape.leaf(l.weight.clone()),
        bias: tape.leaf(l.bias.clone()),
    };
    all.push(ids.weight);
    all.push(ids.bias);
    ids
}

fn register_branch(tape: &mut Tape, b: &BranchParams, all: &mut Vec<NodeId>) -> BranchNodeIds {
    let proj = register_linear(tape, &b.proj, all);
    let psi = b
        .psi
        .layers
        .iter()
        .map(|l| register_linear(tape, l, all))
        .collect();
    let attn = b
        .attn
        .iter()
        .map(|a| {
            let ids = AttentionIds {
                wq: tape.leaf(a.wq.clone()),
                wk: tape.leaf(a.wk.clone()),
                wv: tape.leaf(a.wv.clone()),
                wo: tape.leaf(a.wo.clone()),
            };
            all.extend([ids.wq, ids.wk, ids.wv, ids.wo]);
            ids
        })
        .collect();
    let final_proj = register_linear(tape, &b.final_proj, all);
    BranchNodeIds {
        proj,
        psi,
        attn,
        final_proj,
    }
}

fn register_params(tape: &mut Tape, p: &MatcherParams) -> RegisteredParams {
    let mut all = Vec::new();
    let high = register_branch(tape, &p.high, &mut all);
    let low = register_branch(tape, &p.low, &mut all);
    let dustbin = tape.leaf(p.dustbin.clone());
    all.push(dustbin);
    RegisteredParams {
        all,
        high,
        low,
        dustbin,
    }
}

/// Raw appearance and (score, normalized position) tensors for one set.
fn set_tensors(
    set: &CandidateSet,
    arch: &MatcherArch,
) -> Result<(Tensor2, Tensor2, Tensor2), MatcherError> {
    if set.len() > arch.n_max {
        return Err(MatcherError::TooManyCandidates {
            limit: arch.n_max,
            got: set.len(),
        });
    }
    let n = set.len();
    let mut high = Tensor2::zeros(n, arch.feat_width);
    let mut low = Tensor2::zeros(n, arch.feat_width);
    let mut sc = Tensor2::zeros(n, 3);
    let (iw, ih) = set.image_size;
    for (i, c) in set.candidates.iter().enumerate() {
        if c.feat_high.len() != arch.feat_width || c.feat_low.len() != arch.feat_width {
            return Err(MatcherError::FeatureWidth {
                expected: arch.feat_width,
                got: c.feat_high.len().max(c.feat_low.len()),
            });
        }
        if !c.score.is_finite() {
            return Err(MatcherError::NonFiniteScores);
        }
        high.data[i * arch.feat_width..(i + 1) * arch.feat_width]
            .copy_from_slice(&c.feat_high);
        low.data[i * arch.feat_width..(i + 1) * arch.feat_width].copy_from_slice(&c.feat_low);
        sc.set(i, 0, c.score);
        sc.set(i, 1, c.position.x / iw);
        sc.set(i, 2, c.position.y / ih);
    }
    Ok((high, low, sc))
}

/// codes = proj(raw appearance) + psi(score, normalized position)
fn encode_graph(tape: &mut Tape, ids: &BranchNodeIds, raw: NodeId, sc: NodeId) -> NodeId {
    let appearance = linear_graph(tape, ids.proj, raw);
    let positional = mlp_graph(tape, &ids.psi, sc);
    tape.add(appearance, positional)
}

/// Alternating self/cross attention with residual additions, then the final
/// linear projection. Both frames run through the same layer weights.
fn embed_graph(
    tape: &mut Tape,
    ids: &BranchNodeIds,
    prev_codes: NodeId,
    cur_codes: NodeId,
) -> (NodeId, NodeId) {
    let mut prev = prev_codes;
    let mut cur = cur_codes;
    for (layer, attn) in ids.attn.iter().enumerate() {
        if layer % 2 == 0 {
            let msg_prev = attention_graph(tape, *attn, prev, prev);
            prev = tape.add(prev, msg_prev);
            let msg_cur = attention_graph(tape, *attn, cur, cur);
            cur = tape.add(cur, msg_cur);
        } else {
            let msg_prev = attention_graph(tape, *attn, prev, cur);
            let msg_cur = attention_graph(tape, *attn, cur, prev);
            prev = tape.add(prev, msg_prev);
            cur = tape.add(cur, msg_cur);
        }
    }
    (
        linear_graph(tape, ids.final_proj, prev),
        linear_graph(tape, ids.final_proj, cur),
    )
}

/// S[i][j] = <prev row i, cur row j>
fn similarity_graph(tape: &mut Tape, prev_emb: NodeId, cur_emb: NodeId) -> NodeId {
    let cur_t = tape.transpose(cur_emb);
    tape.matmul(prev_emb, cur_t)
}

/// Log-domain entropic normalization of the augmented score matrix against
/// marginals (1, ..., 1, N) over rows and (1, ..., 1, N') over columns.
/// Returns the log-probability node.
fn sinkhorn_graph(
    tape: &mut Tape,
    augmented: NodeId,
    n_prev: usize,
    n_cur: usize,
    iters: usize,
) -> NodeId {
    assert!(iters >= 1);
    let mut log_r = Tensor2::zeros(n_prev + 1, 1);
    log_r.data[n_prev] = (n_cur as f64).ln();
    let mut log_c = Tensor2::zeros(1, n_cur + 1);
    log_c.data[n_cur] = (n_prev as f64).ln();
    let log_r = tape.leaf(log_r);
    let log_c = tape.leaf(log_c);

    let mut u = tape.leaf(Tensor2::zeros(n_prev + 1, 1));
    let mut v = tape.leaf(Tensor2::zeros(1, n_cur + 1));
    for _ in 0..iters {
        let shifted = tape.add_row(augmented, v);
        let row_lse = tape.logsumexp_rows(shifted);
        u = tape.lincomb(1.0, log_r, -1.0, row_lse);
        let shifted = tape.add_col(augmented, u);
        let col_lse = tape.logsumexp_cols(shifted);
        v = tape.lincomb(1.0, log_c, -1.0, col_lse);
    }
    let with_v = tape.add_row(augmented, v);
    tape.add_col(with_v, u)
}

struct AssignmentGraph {
    tape: Tape,
    param_ids: Vec<NodeId>,
    log_assignment: NodeId,
}

fn build_assignment_graph(
    params: &MatcherParams,
    cfg: &MatcherConfig,
    prev: &CandidateSet,
    cur: &CandidateSet,
    iters: usize,
) -> Result<AssignmentGraph, MatcherError> {
    if !(0.0..=1.0).contains(&cfg.omega) {
        return Err(MatcherError::OmegaRange(cfg.omega));
    }
    if iters == 0 {
        return Err(MatcherError::ZeroIterations);
    }
    assert!(!prev.is_empty() && !cur.is_empty());
    let arch = &params.arch;
    let (prev_high, prev_low, prev_sc) = set_tensors(prev, arch)?;
    let (cur_high, cur_low, cur_sc) = set_tensors(cur, arch)?;

    let mut tape = Tape::new();
    let reg = register_params(&mut tape, params);

    let use_high = cfg.mode == BranchMode::HighOnly || cfg.omega > 0.0;
    let use_low = cfg.mode == BranchMode::Dual && cfg.omega < 1.0;

    let branch_similarity =
        |tape: &mut Tape, ids: &BranchNodeIds, prev_raw: &Tensor2, cur_raw: &Tensor2| -> NodeId {
            let prev_raw = tape.leaf(prev_raw.clone());
            let prev_sc_id = tape.leaf(prev_sc.clone());
            let cur_raw = tape.leaf(cur_raw.clone());
            let cur_sc_id = tape.leaf(cur_sc.clone());
            let prev_codes = encode_graph(tape, ids, prev_raw, prev_sc_id);
            let cur_codes = encode_graph(tape, ids, cur_raw, cur_sc_id);
            let (prev_emb, cur_emb) = embed_graph(tape, ids, prev_codes, cur_codes);
            similarity_graph(tape, prev_emb, cur_emb)
        };

    let s_high =
        use_high.then(|| branch_similarity(&mut tape, &reg.high, &prev_high, &cur_high));
    let s_low = use_low.then(|| branch_similarity(&mut tape, &reg.low, &prev_low, &cur_low));

    let fused = match (s_high, s_low) {
        (Some(h), None) => h,
        (None, Some(l)) => l,
        (Some(h), Some(l)) => tape.lincomb(cfg.omega, h, 1.0 - cfg.omega, l),
        (None, None) => unreachable!(),
    };

    let augmented = tape.augment(fused, reg.dustbin);
    let log_assignment = sinkhorn_graph(&mut tape, augmented, prev.len(), cur.len(), iters);
    Ok(AssignmentGraph {
        tape,
        param_ids: reg.all,
        log_assignment,
    })
}

/// Assignment when one side has no candidates: every real candidate maps to
/// the dustbin with probability one.
fn degenerate_assignment(n_prev: usize, n_cur: usize) -> AssignmentMatrix {
    let mut probs = Tensor2::zeros(n_prev + 1, n_cur + 1);
    for i in 0..n_prev {
        probs.set(i, n_cur, 1.0);
    }
    for j in 0..n_cur {
        probs.set(n_prev, j, 1.0);
    }
    AssignmentMatrix { probs }
}

/// Full soft assignment between two candidate sets at inference iterations.
pub fn assignment(
    params: &MatcherParams,
    cfg: &MatcherConfig,
    prev: &CandidateSet,
    cur: &CandidateSet,
) -> Result<AssignmentMatrix, MatcherError> {
    if prev.is_empty() || cur.is_empty() {
        return Ok(degenerate_assignment(prev.len(), cur.len()));
    }
    let graph = build_assignment_graph(params, cfg, prev, cur, cfg.sinkhorn_iters_infer)?;
    let probs = graph.tape.value(graph.log_assignment).map(f64::exp);
    Ok(AssignmentMatrix { probs })
}

/// codes_high = proj_high(feat_high) + psi(s, c); codes_low likewise with the
/// low branch. Positions are normalized by the image size before entering
/// the encoder.
pub fn encode(set: &CandidateSet, params: &MatcherParams) -> Result<EncodedSet, MatcherError> {
    let arch = &params.arch;
    let (high, low, sc) = set_tensors(set, arch)?;
    let mut tape = Tape::new();
    let reg = register_params(&mut tape, params);
    let high = tape.leaf(high);
    let low = tape.leaf(low);
    let sc = tape.leaf(sc);
    let codes_high = encode_graph(&mut tape, &reg.high, high, sc);
    let codes_low = encode_graph(&mut tape, &reg.low, low, sc);
    Ok(EncodedSet {
        codes_high: tape.value(codes_high).clone(),
        codes_low: tape.value(codes_low).clone(),
    })
}

/// Message passing over both frames' codes, independently per branch.
pub fn embed(
    prev: &EncodedSet,
    cur: &EncodedSet,
    params: &MatcherParams,
) -> Result<(EmbeddingSet, EmbeddingSet), MatcherError> {
    if (prev.codes_high.rows == 0) != (cur.codes_high.rows == 0) && params.arch.layers > 0 {
        return Err(MatcherError::MixedEmptySets);
    }
    let mut tape = Tape::new();
    let reg = register_params(&mut tape, params);
    let run = |tape: &mut Tape, ids: &BranchNodeIds, p: &Tensor2, c: &Tensor2| {
        let p = tape.leaf(p.clone());
        let c = tape.leaf(c.clone());
        let (pe, ce) = embed_graph(tape, ids, p, c);
        (tape.value(pe).clone(), tape.value(ce).clone())
    };
    let (prev_high, cur_high) = run(&mut tape, &reg.high, &prev.codes_high, &cur.codes_high);
    let (prev_low, cur_low) = run(&mut tape, &reg.low, &prev.codes_low, &cur.codes_low);
    Ok((
        EmbeddingSet {
            emb_high: prev_high,
            emb_low: prev_low,
        },
        EmbeddingSet {
            emb_high: cur_high,
            emb_low: cur_low,
        },
    ))
}

/// Scalar-product similarity per branch: S[i][j] = <prev_i, cur_j>.
pub fn similarity(
    prev_emb: &EmbeddingSet,
    cur_emb: &EmbeddingSet,
) -> Result<(Tensor2, Tensor2), MatcherError> {
    if prev_emb.emb_high.cols != cur_emb.emb_high.cols
        || prev_emb.emb_low.cols != cur_emb.emb_low.cols
    {
        return Err(MatcherError::ShapeMismatch);
    }
    let s_high = prev_emb.emb_high.matmul(&cur_emb.emb_high.transpose());
    let s_low = prev_emb.emb_low.matmul(&cur_emb.emb_low.transpose());
    Ok((s_high, s_low))
}

/// Runs the dustbin-augmented entropic normalization on a fused similarity
/// matrix: augment with the dustbin score, alternate row/column updates in
/// the log domain, exponentiate.
pub fn sinkhorn_assign(
    fused: &Tensor2,
    alpha: f64,
    iters: usize,
) -> Result<AssignmentMatrix, MatcherError> {
    if iters == 0 {
        return Err(MatcherError::ZeroIterations);
    }
    if !fused.all_finite() || !alpha.is_finite() {
        return Err(MatcherError::NonFiniteScores);
    }
    let (n_prev, n_cur) = fused.shape();
    if n_prev == 0 || n_cur == 0 {
        return Ok(degenerate_assignment(n_prev, n_cur));
    }
    let mut tape = Tape::new();
    let scores = tape.leaf(fused.clone());
    let bin = tape.leaf(Tensor2::scalar(alpha));
    let augmented = tape.augment(scores, bin);
    let log_a = sinkhorn_graph(&mut tape, augmented, n_prev, n_cur, iters);
    Ok(AssignmentMatrix {
        probs: tape.value(log_a).map(f64::exp),
    })
}

/// Accepts (i, j) iff `A[i][j]` is the strict maximum of both its row and its
/// column (dustbins included in the comparison) and clears `tau_match`.
pub fn decode_matches(a: &AssignmentMatrix, tau_match: f64) -> MatchDecode {
    let p = &a.probs;
    let n_prev = a.n_prev();
    let n_cur = a.n_cur();
    let mut matched_prev = vec![false; n_prev];
    let mut matched_cur = vec![false; n_cur];
    let mut pairs = Vec::new();
    for i in 0..n_prev {
        let mut best_j = n_cur;
        let mut best = f64::NEG_INFINITY;
        for j in 0..=n_cur {
            if p.get(i, j) > best {
                best = p.get(i, j);
                best_j = j;
            }
        }
        if best_j == n_cur || best < tau_match {
            continue;
        }
        let strict_row = (0..=n_cur).all(|j| j == best_j || p.get(i, j) < best);
        let strict_col = (0..=n_prev).all(|r| r == i || p.get(r, best_j) < best);
        if strict_row && strict_col {
            pairs.push((i, best_j));
            matched_prev[i] = true;
            matched_cur[best_j] = true;
        }
    }
    MatchDecode {
        pairs,
        unmatched_prev: (0..n_prev).filter(|i| !matched_prev[*i]).collect(),
        unmatched_cur: (0..n_cur).filter(|j| !matched_cur[*j]).collect(),
    }
}

/// Mean negative log probability over the ground-truth cells.
pub fn nll_loss(a: &AssignmentMatrix, gt: &Correspondences) -> Result<f64, MatcherError> {
    let cells = gt.cells(a.n_prev(), a.n_cur())?;
    if cells.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = cells.iter().map(|(r, c)| -a.probs.get(*r, *c).ln()).sum();
    Ok(sum / cells.len() as f64)
}

/// One labelled frame pair for training.
#[derive(Clone, Debug)]
pub struct TrainingPair {
    pub prev: CandidateSet,
    pub cur: CandidateSet,
    pub gt: Correspondences,
}

/// Optimizer settings for [`train_matcher`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 600,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Trains both branches jointly through the fused assignment by stochastic
/// steps over the labelled pairs. Deterministic given the seed; returns the
/// parameters and the per-step loss history.
pub fn train_matcher(
    pairs: &[TrainingPair],
    matcher_cfg: &MatcherConfig,
    train_cfg: &TrainConfig,
) -> Result<(MatcherParams, Vec<f64>), MatcherError> {
    let usable: Vec<&TrainingPair> = pairs
        .iter()
        .filter(|p| {
            !p.prev.is_empty()
                && !p.cur.is_empty()
                && p.gt
                    .cells(p.prev.len(), p.cur.len())
                    .map(|c| !c.is_empty())
                    .unwrap_or(false)
        })
        .collect();
    if usable.is_empty() {
        return Err(MatcherError::EmptyTrainingSet);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut params = MatcherParams::init(&mut rng, matcher_cfg.arch);
    let mut state = AdamState::new(
        &params
            .tensors()
            .iter()
            .map(|t| (*t).clone())
            .collect::<Vec<_>>(),
    );

    let mut order: Vec<usize> = Vec::new();
    let mut losses = Vec::with_capacity(train_cfg.steps);
    for _ in 0..train_cfg.steps {
        if order.is_empty() {
            order = (0..usable.len()).collect();
            order.shuffle(&mut rng);
        }
        let pair = usable[order.pop().unwrap()];
        let cells = pair.gt.cells(pair.prev.len(), pair.cur.len())?;
        let mut graph = build_assignment_graph(
            &params,
            matcher_cfg,
            &pair.prev,
            &pair.cur,
            matcher_cfg.sinkhorn_iters_train,
        )?;
        let loss_node = graph.tape.neg_mean_cells(graph.log_assignment, cells);
        losses.push(graph.tape.value(loss_node).data[0]);
        let grads = graph.tape.backward(loss_node);
        let grad_tensors: Vec<Tensor2> = graph
            .param_ids
            .iter()
            .map(|id| grads[*id].clone())
            .collect();
        let mut tensor_refs = params.tensors_mut();
        let mut owned: Vec<Tensor2> = tensor_refs.iter().map(|t| (**t).clone()).collect();
        adam_step(
            &mut owned,
            &grad_tensors,
            &mut state,
            train_cfg.lr,
            (0.9, 0.999),
            1e-8,
        )?;
        for (dst, src) in tensor_refs.iter_mut().zip(owned) {
            **dst = src;
        }
    }
    Ok((params, losses))
}

/// Per-candidate decision accuracy over labelled pairs: every real candidate
/// on both sides must receive its ground-truth partner (or the dustbin).
pub fn association_accuracy(
    params: &MatcherParams,
    cfg: &MatcherConfig,
    pairs: &[TrainingPair],
) -> Result<f64, MatcherError> {
    let mut correct = 0usize;
    let mut total = 0usize;
    const DUSTBIN: usize = usize::MAX;
    for pair in pairs {
        let a = assignment(params, cfg, &pair.prev, &pair.cur)?;
        let decode = decode_matches(&a, cfg.tau_match);
        let n_prev = pair.prev.len();
        let n_cur = pair.cur.len();
        let mut gt_prev = vec![DUSTBIN; n_prev];
        let mut gt_cur = vec![DUSTBIN; n_cur];
        for (i, j) in &pair.gt.pairs {
            gt_prev[*i] = *j;
            gt_cur[*j] = *i;
        }
        let mut pred_prev = vec![DUSTBIN; n_prev];
        let mut pred_cur = vec![DUSTBIN; n_cur];
        for (i, j) in &decode.pairs {
            pred_prev[*i] = *j;
            pred_cur[*j] = *i;
        }
        correct += gt_prev.iter().zip(&pred_prev).filter(|(a, b)| a == b).count();
        correct += gt_cur.iter().zip(&pred_cur).filter(|(a, b)| a == b).count();
        total += n_prev + n_cur;
    }
    Ok(if total == 0 {
        1.0
    } else {
        correct as f64 / total as f64
    })
}
