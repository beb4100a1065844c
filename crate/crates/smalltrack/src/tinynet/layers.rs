//! Linear, MLP and single-head attention layers with tape-graph builders.

use super::tape::{NodeId, Tape};
use super::tensor::Tensor2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
}

fn shape_err(expected: impl Into<String>, got: impl Into<String>) -> NetError {
    NetError::Shape {
        expected: expected.into(),
        got: got.into(),
    }
}

/// A dense layer: `x @ weight + bias`, weight `in x out`, bias `1 x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor2,
    pub bias: Tensor2,
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: Tensor2::zeros(fan_in, fan_out),
            bias: Tensor2::zeros(1, fan_out),
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut weight = Tensor2::zeros(dim, dim);
        for i in 0..dim {
            weight.set(i, i, 1.0);
        }
        Linear {
            weight,
            bias: Tensor2::zeros(1, dim),
        }
    }

    /// Gaussian init scaled by 1/sqrt(fan_in), zero bias.
    pub fn init<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).unwrap();
        let data = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
        Linear {
            weight: Tensor2::from_vec(fan_in, fan_out, data),
            bias: Tensor2::zeros(1, fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
}

/// Multi-layer perceptron; the activation is applied after every layer.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl MlpParams {
    pub fn new(layers: Vec<Linear>) -> Self {
        assert!(!layers.is_empty());
        for pair in layers.windows(2) {
            assert_eq!(
                pair[0].fan_out(),
                pair[1].fan_in(),
                "consecutive layer dimensions must chain"
            );
        }
        MlpParams {
            layers,
            activation: Activation::Relu,
        }
    }

    /// Builds dims[0] -> dims[1] -> ... -> dims.last() with Gaussian init.
    pub fn init<R: Rng>(rng: &mut R, dims: &[usize]) -> Self {
        assert!(dims.len() >= 2);
        let layers = dims
            .windows(2)
            .map(|w| Linear::init(rng, w[0], w[1]))
            .collect();
        MlpParams::new(layers)
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().fan_out()
    }
}

/// Single-head attention: square d x d query/key/value/output projections.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub wq: Tensor2,
    pub wk: Tensor2,
    pub wv: Tensor2,
    pub wo: Tensor2,
}

impl AttentionParams {
    pub fn init<R: Rng>(rng: &mut R, d: usize) -> Self {
        let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).unwrap();
        let mut draw = || {
            Tensor2::from_vec(d, d, (0..d * d).map(|_| normal.sample(rng)).collect())
        };
        let wq = draw();
        let wk = draw();
        let wv = draw();
        let wo = draw();
        AttentionParams { wq, wk, wv, wo }
    }

    pub fn identity(d: usize) -> Self {
        let id = Linear::identity(d).weight;
        AttentionParams {
            wq: id.clone(),
            wk: id.clone(),
            wv: id.clone(),
            wo: id,
        }
    }

    pub fn width(&self) -> usize {
        self.wq.rows
    }
}

/// Node ids for one registered linear layer.
#[derive(Clone, Copy, Debug)]
pub struct LinearIds {
    pub weight: NodeId,
    pub bias: NodeId,
}

/// Node ids for one registered attention layer.
#[derive(Clone, Copy, Debug)]
pub struct AttentionIds {
    pub wq: NodeId,
    pub wk: NodeId,
    pub wv: NodeId,
    pub wo: NodeId,
}

pub fn register_linear(tape: &mut Tape, l: &Linear) -> LinearIds {
    LinearIds {
        weight: tape.leaf(l.weight.clone()),
        bias: tape.leaf(l.bias.clone()),
    }
}

pub fn register_attention(tape: &mut Tape, p: &AttentionParams) -> AttentionIds {
    AttentionIds {
        wq: tape.leaf(p.wq.clone()),
        wk: tape.leaf(p.wk.clone()),
        wv: tape.leaf(p.wv.clone()),
        wo: tape.leaf(p.wo.clone()),
    }
}

pub fn linear_graph(tape: &mut Tape, ids: LinearIds, x: NodeId) -> NodeId {
    let prod = tape.matmul(x, ids.weight);
    tape.add_row(prod, ids.bias)
}

/// MLP graph: linear layers with the activation after each one.
pub fn mlp_graph(tape: &mut Tape, layers: &[LinearIds], x: NodeId) -> NodeId {
    let mut cur = x;
    for ids in layers {
        cur = linear_graph(tape, *ids, cur);
        cur = tape.relu(cur);
    }
    cur
}

/// Attention graph: softmax(Q K^T / sqrt(d)) V followed by the output
/// projection. Queries come from `q_from`, keys and values from `kv_from`.
pub fn attention_graph(
    tape: &mut Tape,
    ids: AttentionIds,
    q_from: NodeId,
    kv_from: NodeId,
) -> NodeId {
    let d = tape.value(ids.wq).rows;
    let q = tape.matmul(q_from, ids.wq);
    let k = tape.matmul(kv_from, ids.wk);
    let v = tape.matmul(kv_from, ids.wv);
    let kt = tape.transpose(k);
    let scores = tape.matmul(q, kt);
    let scaled = tape.scale(scores, 1.0 / (d as f64).sqrt());
    let weights = tape.softmax_rows(scaled);
    let mixed = tape.matmul(weights, v);
    tape.matmul(mixed, ids.wo)
}

/// Batched MLP forward pass: one input row per sample.
pub fn mlp_forward(p: &MlpParams, x: &Tensor2) -> Result<Tensor2, NetError> {
    if x.cols != p.input_width() {
        return Err(shape_err(
            format!("input width {}", p.input_width()),
            format!("{}", x.cols),
        ));
    }
    let mut tape = Tape::new();
    let ids: Vec<LinearIds> = p.layers.iter().map(|l| register_linear(&mut tape, l)).collect();
    let input = tape.leaf(x.clone());
    let out = mlp_graph(&mut tape, &ids, input);
    Ok(tape.value(out).clone())
}

/// Single-head attention forward pass.
pub fn attention_forward(
    p: &AttentionParams,
    q_from: &Tensor2,
    kv_from: &Tensor2,
) -> Result<Tensor2, NetError> {
    let d = p.width();
    if q_from.cols != d || kv_from.cols != d {
        return Err(shape_err(
            format!("width {d}"),
            format!("{} and {}", q_from.cols, kv_from.cols),
        ));
    }
    let mut tape = Tape::new();
    let ids = register_attention(&mut tape, p);
    let q = tape.leaf(q_from.clone());
    let kv = tape.leaf(kv_from.clone());
    let out = attention_graph(&mut tape, ids, q, kv);
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mlp_zero_params_zero_output() {
        let p = MlpParams::new(vec![Linear::zeros(3, 4), Linear::zeros(4, 2)]);
        let x = Tensor2::from_vec(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]);
        let y = mlp_forward(&p, &x).unwrap();
        assert!(y.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mlp_identity_layer_passes_positive_input() {
        let p = MlpParams::new(vec![Linear::identity(3)]);
        let x = Tensor2::from_vec(1, 3, vec![1.0, 2.0, 3.0]);
        assert_eq!(mlp_forward(&p, &x).unwrap(), x);
        // negative entries are clipped by the activation
        let neg = Tensor2::from_vec(1, 3, vec![-1.0, 2.0, -3.0]);
        assert_eq!(
            mlp_forward(&p, &neg).unwrap().data,
            vec![0.0, 2.0, 0.0]
        );
    }

    #[test]
    fn mlp_hand_arithmetic() {
        // weights [[2]], bias [1], input [[3]]: relu(2*3 + 1) = 7
        let l = Linear {
            weight: Tensor2::from_vec(1, 1, vec![2.0]),
            bias: Tensor2::from_vec(1, 1, vec![1.0]),
        };
        let p = MlpParams::new(vec![l]);
        let y = mlp_forward(&p, &Tensor2::scalar(3.0)).unwrap();
        assert_eq!(y.data, vec![7.0]);
    }

    #[test]
    fn mlp_rejects_width_mismatch() {
        let p = MlpParams::new(vec![Linear::zeros(3, 2)]);
        let x = Tensor2::zeros(1, 4);
        assert!(matches!(mlp_forward(&p, &x), Err(NetError::Shape { .. })));
    }

    #[test]
    fn attention_single_kv_row_ignores_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = AttentionParams::init(&mut rng, 4);
        let q1 = Tensor2::from_vec(1, 4, vec![5.0, -1.0, 2.0, 0.0]);
        let q2 = Tensor2::from_vec(1, 4, vec![-9.0, 3.0, 1.0, 4.0]);
        let kv = Tensor2::from_vec(1, 4, vec![0.3, 0.1, -0.2, 0.7]);
        let y1 = attention_forward(&p, &q1, &kv).unwrap();
        let y2 = attention_forward(&p, &q2, &kv).unwrap();
        // softmax over one key is always 1: the output is the projected value
        let expected = kv.matmul(&p.wv).matmul(&p.wo);
        for (a, b) in y1.data.iter().zip(&expected.data) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(y1.data, y2.data);
    }

    #[test]
    fn attention_duplicate_kv_rows_match_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = AttentionParams::init(&mut rng, 4);
        let q = Tensor2::from_vec(1, 4, vec![0.5, -0.25, 1.5, 2.0]);
        let kv1 = Tensor2::from_vec(1, 4, vec![0.3, 0.1, -0.2, 0.7]);
        let kv2 = Tensor2::from_rows(&[kv1.row(0).to_vec(), kv1.row(0).to_vec()]);
        let y1 = attention_forward(&p, &q, &kv1).unwrap();
        let y2 = attention_forward(&p, &q, &kv2).unwrap();
        for (a, b) in y1.data.iter().zip(&y2.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_two_row_identity_fixture() {
        // identity projections, d = 2: out = softmax(q kv^T / sqrt(2)) kv
        let p = AttentionParams::identity(2);
        let q = Tensor2::from_vec(1, 2, vec![1.0, 0.0]);
        let kv = Tensor2::from_rows(&[vec![2.0, 0.0], vec![0.0, 2.0]]);
        let y = attention_forward(&p, &q, &kv).unwrap();
        let s = 2.0 / 2f64.sqrt();
        let e0 = s.exp();
        let e1 = 0f64.exp();
        let w0 = e0 / (e0 + e1);
        let w1 = e1 / (e0 + e1);
        assert!((y.data[0] - 2.0 * w0).abs() < 1e-12);
        assert!((y.data[1] - 2.0 * w1).abs() < 1e-12);
    }

    #[test]
    fn attention_rejects_width_mismatch() {
        let p = AttentionParams::identity(3);
        let q = Tensor2::zeros(2, 3);
        let kv = Tensor2::zeros(2, 4);
        assert!(matches!(
            attention_forward(&p, &q, &kv),
            Err(NetError::Shape { .. })
        ));
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = MlpParams::init(&mut rng, &[3, 8, 2]);
        let x = Tensor2::from_vec(2, 3, vec![0.1, 0.2, 0.3, -0.1, -0.2, -0.3]);
        let a = mlp_forward(&p, &x).unwrap();
        let b = mlp_forward(&p, &x).unwrap();
        assert_eq!(a.data, b.data);
    }
}
