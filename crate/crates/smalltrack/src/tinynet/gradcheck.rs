//! Central finite-difference verification of tape gradients.

use super::tape::{NodeId, Tape};
use super::tensor::Tensor2;

/// Compares analytic tape gradients against central finite differences for a
/// scalar function of the given parameter tensors.
///
/// `build` receives a fresh tape plus one leaf id per parameter and must
/// return a scalar node. Returns the maximum over all parameter components
/// of `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F>(build: F, params: &[Tensor2], eps: f64) -> f64
where
    F: Fn(&mut Tape, &[NodeId]) -> NodeId,
{
    let eval = |values: &[Tensor2]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = values.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = build(&mut tape, &ids);
        assert_eq!(tape.value(loss).shape(), (1, 1), "loss must be scalar");
        tape.value(loss).data[0]
    };

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = build(&mut tape, &ids);
    assert_eq!(tape.value(loss).shape(), (1, 1), "loss must be scalar");
    let grads = tape.backward(loss);

    let mut work: Vec<Tensor2> = params.to_vec();
    let mut max_rel: f64 = 0.0;
    for pi in 0..work.len() {
        for k in 0..work[pi].data.len() {
            let orig = work[pi].data[k];
            work[pi].data[k] = orig + eps;
            let plus = eval(&work);
            work[pi].data[k] = orig - eps;
            let minus = eval(&work);
            work[pi].data[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads[ids[pi]].data[k];
            let rel =
                (analytic - numeric).abs() / f64::max(1e-8, analytic.abs() + numeric.abs());
            max_rel = max_rel.max(rel);
        }
    }
    max_rel
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinynet::layers::{attention_graph, mlp_graph, AttentionParams, LinearIds, MlpParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalarize(tape: &mut Tape, x: NodeId) -> NodeId {
        // sum of entries via two matmuls with ones
        let (r, c) = tape.value(x).shape();
        let ones_r = tape.leaf(Tensor2::from_vec(1, r, vec![1.0; r]));
        let ones_c = tape.leaf(Tensor2::from_vec(c, 1, vec![1.0; c]));
        let collapsed = tape.matmul(ones_r, x);
        tape.matmul(collapsed, ones_c)
    }

    #[test]
    fn constant_function_has_zero_error() {
        let params = vec![Tensor2::from_vec(1, 2, vec![0.4, -0.6])];
        let err = grad_check(
            |tape, _ids| tape.leaf(Tensor2::scalar(3.5)),
            &params,
            1e-4,
        );
        assert_eq!(err, 0.0);
    }

    #[test]
    fn linear_layer_below_1e6() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let layer = crate::tinynet::layers::Linear::init(&mut rng, 3, 2);
        let x = Tensor2::from_vec(2, 3, vec![0.4, -0.3, 0.9, 1.1, 0.2, -0.8]);
        let params = vec![layer.weight.clone(), layer.bias.clone()];
        let err = grad_check(
            |tape, ids| {
                let input = tape.leaf(x.clone());
                let lin = crate::tinynet::layers::linear_graph(
                    tape,
                    LinearIds {
                        weight: ids[0],
                        bias: ids[1],
                    },
                    input,
                );
                scalarize(tape, lin)
            },
            &params,
            1e-4,
        );
        assert!(err < 1e-6, "linear gradcheck error {err}");
    }

    #[test]
    fn three_layer_mlp_below_1e4() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mlp = MlpParams::init(&mut rng, &[4, 6, 6, 3]);
        let x = Tensor2::from_vec(2, 4, vec![0.7, -0.2, 0.5, 1.2, -0.6, 0.9, 0.3, -1.1]);
        let params: Vec<Tensor2> = mlp
            .layers
            .iter()
            .flat_map(|l| [l.weight.clone(), l.bias.clone()])
            .collect();
        let err = grad_check(
            |tape, ids| {
                let layer_ids: Vec<LinearIds> = ids
                    .chunks(2)
                    .map(|c| LinearIds {
                        weight: c[0],
                        bias: c[1],
                    })
                    .collect();
                let input = tape.leaf(x.clone());
                let out = mlp_graph(tape, &layer_ids, input);
                scalarize(tape, out)
            },
            &params,
            1e-4,
        );
        assert!(err < 1e-4, "mlp gradcheck error {err}");
    }

    #[test]
    fn attention_layer_below_1e4() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let attn = AttentionParams::init(&mut rng, 4);
        let q = Tensor2::from_vec(2, 4, vec![0.3, -0.1, 0.8, 0.2, -0.5, 0.6, 0.1, -0.9]);
        let kv = Tensor2::from_vec(3, 4, vec![
            0.2, 0.7, -0.3, 0.4, -0.6, 0.1, 0.9, -0.2, 0.5, -0.8, 0.3, 0.6,
        ]);
        let params = vec![
            attn.wq.clone(),
            attn.wk.clone(),
            attn.wv.clone(),
            attn.wo.clone(),
        ];
        let err = grad_check(
            |tape, ids| {
                let q_id = tape.leaf(q.clone());
                let kv_id = tape.leaf(kv.clone());
                let out = attention_graph(
                    tape,
                    crate::tinynet::layers::AttentionIds {
                        wq: ids[0],
                        wk: ids[1],
                        wv: ids[2],
                        wo: ids[3],
                    },
                    q_id,
                    kv_id,
                );
                scalarize(tape, out)
            },
            &params,
            1e-4,
        );
        assert!(err < 1e-4, "attention gradcheck error {err}");
    }

    #[test]
    fn full_op_set_below_1e4_over_seeds() {
        // composite graph touching every differentiable op
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let layer = crate::tinynet::layers::Linear::init(&mut rng, 3, 3);
            let bin = Tensor2::scalar(0.7);
            let x = {
                use rand::Rng;
                Tensor2::from_vec(3, 3, (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect())
            };
            let params = vec![layer.weight.clone(), layer.bias.clone(), bin, x.clone()];
            let err = grad_check(
                |tape, ids| {
                    let lin = crate::tinynet::layers::linear_graph(
                        tape,
                        LinearIds {
                            weight: ids[0],
                            bias: ids[1],
                        },
                        ids[3],
                    );
                    let act = tape.relu(lin);
                    let scaled = tape.scale(act, 0.5);
                    let mixed = tape.lincomb(0.3, scaled, 0.7, act);
                    let soft = tape.softmax_rows(mixed);
                    let t = tape.transpose(soft);
                    let prod = tape.matmul(soft, t);
                    let aug = tape.augment(prod, ids[2]);
                    let lse_r = tape.logsumexp_rows(aug);
                    let aug2 = tape.add_col(aug, lse_r);
                    let lse_c = tape.logsumexp_cols(aug2);
                    let aug3 = tape.add_row(aug2, lse_c);
                    let summed = tape.add(aug3, aug3);
                    tape.neg_mean_cells(summed, vec![(0, 0), (1, 2), (3, 3), (2, 1)])
                },
                &params,
                1e-4,
            );
            assert!(err < 1e-4, "seed {seed}: composite gradcheck error {err}");
        }
    }
}
