//! Reverse-mode automatic differentiation over a recorded operation tape.
//!
//! The tape covers exactly the operations the matcher composes: dense
//! products, broadcast additions, relu, row softmax, log-sum-exp reductions,
//! dustbin augmentation, and cell gathering for the assignment loss. Values
//! are computed eagerly on insertion; `backward` runs one reverse sweep and
//! returns a gradient per node.

use super::tensor::Tensor2;

pub type NodeId = usize;

#[derive(Debug)]
enum Op {
    Leaf,
    /// a @ b
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    /// elementwise a + b, same shape
    Add(NodeId, NodeId),
    /// a*x + b*y with constant coefficients, same shape
    Lincomb(f64, NodeId, f64, NodeId),
    /// matrix + 1xC row vector broadcast down the rows
    AddRow(NodeId, NodeId),
    /// matrix + Rx1 column vector broadcast across the columns
    AddCol(NodeId, NodeId),
    Relu(NodeId),
    Scale(NodeId, f64),
    SoftmaxRows(NodeId),
    /// per-row log-sum-exp, R x 1
    LogSumExpRows(NodeId),
    /// per-column log-sum-exp, 1 x C
    LogSumExpCols(NodeId),
    /// (R+1)x(C+1): scores in the top-left block, the scalar bin elsewhere
    Augment(NodeId, NodeId),
    /// scalar: -(mean of the selected cells)
    NegMeanCells(NodeId, Vec<(usize, usize)>),
}

pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Tensor2>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            ops: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor2 {
        &self.values[id]
    }

    fn push(&mut self, op: Op, value: Tensor2) -> NodeId {
        self.ops.push(op);
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn leaf(&mut self, value: Tensor2) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.values[a].matmul(&self.values[b]);
        self.push(Op::MatMul(a, b), value)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.values[a].transpose();
        self.push(Op::Transpose(a), value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.values[a].shape(), self.values[b].shape());
        let mut value = self.values[a].clone();
        value.add_assign(&self.values[b]);
        self.push(Op::Add(a, b), value)
    }

    pub fn lincomb(&mut self, ca: f64, a: NodeId, cb: f64, b: NodeId) -> NodeId {
        assert_eq!(self.values[a].shape(), self.values[b].shape());
        let (r, c) = self.values[a].shape();
        let mut value = Tensor2::zeros(r, c);
        for i in 0..value.data.len() {
            value.data[i] = ca * self.values[a].data[i] + cb * self.values[b].data[i];
        }
        self.push(Op::Lincomb(ca, a, cb, b), value)
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (r, c) = self.values[a].shape();
        assert_eq!(self.values[row].shape(), (1, c));
        let mut value = self.values[a].clone();
        for i in 0..r {
            for j in 0..c {
                value.data[i * c + j] += self.values[row].data[j];
            }
        }
        self.push(Op::AddRow(a, row), value)
    }

    pub fn add_col(&mut self, a: NodeId, col: NodeId) -> NodeId {
        let (r, c) = self.values[a].shape();
        assert_eq!(self.values[col].shape(), (r, 1));
        let mut value = self.values[a].clone();
        for i in 0..r {
            for j in 0..c {
                value.data[i * c + j] += self.values[col].data[i];
            }
        }
        self.push(Op::AddCol(a, col), value)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.values[a].map(|v| v.max(0.0));
        self.push(Op::Relu(a), value)
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let value = self.values[a].map(|v| k * v);
        self.push(Op::Scale(a, k), value)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let src = &self.values[a];
        let mut value = src.clone();
        for i in 0..src.rows {
            let row = &mut value.data[i * src.cols..(i + 1) * src.cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        self.push(Op::SoftmaxRows(a), value)
    }

    pub fn logsumexp_rows(&mut self, a: NodeId) -> NodeId {
        let src = &self.values[a];
        let mut value = Tensor2::zeros(src.rows, 1);
        for i in 0..src.rows {
            value.data[i] = logsumexp(src.row(i).iter().cloned());
        }
        self.push(Op::LogSumExpRows(a), value)
    }

    pub fn logsumexp_cols(&mut self, a: NodeId) -> NodeId {
        let src = &self.values[a];
        let mut value = Tensor2::zeros(1, src.cols);
        for j in 0..src.cols {
            value.data[j] = logsumexp((0..src.rows).map(|i| src.get(i, j)));
        }
        self.push(Op::LogSumExpCols(a), value)
    }

    pub fn augment(&mut self, scores: NodeId, bin: NodeId) -> NodeId {
        assert_eq!(self.values[bin].shape(), (1, 1));
        let s = &self.values[scores];
        let b = self.values[bin].data[0];
        let mut value = Tensor2::zeros(s.rows + 1, s.cols + 1);
        for i in 0..=s.rows {
            for j in 0..=s.cols {
                value.set(
                    i,
                    j,
                    if i < s.rows && j < s.cols {
                        s.get(i, j)
                    } else {
                        b
                    },
                );
            }
        }
        self.push(Op::Augment(scores, bin), value)
    }

    pub fn neg_mean_cells(&mut self, a: NodeId, cells: Vec<(usize, usize)>) -> NodeId {
        assert!(!cells.is_empty());
        let src = &self.values[a];
        let sum: f64 = cells.iter().map(|(r, c)| src.get(*r, *c)).sum();
        let value = Tensor2::scalar(-sum / cells.len() as f64);
        self.push(Op::NegMeanCells(a, cells), value)
    }

    /// Reverse sweep from a scalar node; returns one gradient per node.
    pub fn backward(&self, loss: NodeId) -> Vec<Tensor2> {
        assert_eq!(self.values[loss].shape(), (1, 1), "loss must be scalar");
        let mut grads: Vec<Tensor2> = self
            .values
            .iter()
            .map(|v| Tensor2::zeros(v.rows, v.cols))
            .collect();
        grads[loss].data[0] = 1.0;

        for id in (0..self.ops.len()).rev() {
            let g = grads[id].clone();
            if g.data.iter().all(|v| *v == 0.0) {
                continue;
            }
            match &self.ops[id] {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul(&self.values[*b].transpose());
                    let db = self.values[*a].transpose().matmul(&g);
                    grads[*a].add_assign(&da);
                    grads[*b].add_assign(&db);
                }
                Op::Transpose(a) => {
                    let da = g.transpose();
                    grads[*a].add_assign(&da);
                }
                Op::Add(a, b) => {
                    grads[*a].add_assign(&g);
                    grads[*b].add_assign(&g);
                }
                Op::Lincomb(ca, a, cb, b) => {
                    let da = g.map(|v| ca * v);
                    let db = g.map(|v| cb * v);
                    grads[*a].add_assign(&da);
                    grads[*b].add_assign(&db);
                }
                Op::AddRow(a, row) => {
                    grads[*a].add_assign(&g);
                    let c = g.cols;
                    for i in 0..g.rows {
                        for j in 0..c {
                            grads[*row].data[j] += g.data[i * c + j];
                        }
                    }
                }
                Op::AddCol(a, col) => {
                    grads[*a].add_assign(&g);
                    let c = g.cols;
                    for i in 0..g.rows {
                        for j in 0..c {
                            grads[*col].data[i] += g.data[i * c + j];
                        }
                    }
                }
                Op::Relu(a) => {
                    let input = &self.values[*a];
                    let mut da = g.clone();
                    for (d, x) in da.data.iter_mut().zip(&input.data) {
                        if *x <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    grads[*a].add_assign(&da);
                }
                Op::Scale(a, k) => {
                    let da = g.map(|v| k * v);
                    grads[*a].add_assign(&da);
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.values[id];
                    let mut da = Tensor2::zeros(y.rows, y.cols);
                    for i in 0..y.rows {
                        let dot: f64 = (0..y.cols).map(|j| g.get(i, j) * y.get(i, j)).sum();
                        for j in 0..y.cols {
                            da.set(i, j, y.get(i, j) * (g.get(i, j) - dot));
                        }
                    }
                    grads[*a].add_assign(&da);
                }
                Op::LogSumExpRows(a) => {
                    let x = &self.values[*a];
                    let l = &self.values[id];
                    let mut da = Tensor2::zeros(x.rows, x.cols);
                    for i in 0..x.rows {
                        for j in 0..x.cols {
                            da.set(i, j, g.data[i] * (x.get(i, j) - l.data[i]).exp());
                        }
                    }
                    grads[*a].add_assign(&da);
                }
                Op::LogSumExpCols(a) => {
                    let x = &self.values[*a];
                    let l = &self.values[id];
                    let mut da = Tensor2::zeros(x.rows, x.cols);
                    for i in 0..x.rows {
                        for j in 0..x.cols {
                            da.set(i, j, g.data[j] * (x.get(i, j) - l.data[j]).exp());
                        }
                    }
                    grads[*a].add_assign(&da);
                }
                Op::Augment(scores, bin) => {
                    let (r, c) = self.values[*scores].shape();
                    let mut dbin = 0.0;
                    for i in 0..=r {
                        for j in 0..=c {
                            if i < r && j < c {
                                grads[*scores].data[i * c + j] += g.get(i, j);
                            } else {
                                dbin += g.get(i, j);
                            }
                        }
                    }
                    grads[*bin].data[0] += dbin;
                }
                Op::NegMeanCells(a, cells) => {
                    let k = cells.len() as f64;
                    for (r, c) in cells {
                        let cols = grads[*a].cols;
                        grads[*a].data[r * cols + c] -= g.data[0] / k;
                    }
                }
            }
        }
        grads
    }
}

fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_gradient_is_input() {
        // loss = x @ w with x 1x3, w 3x1: d loss / d w = x^T
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2::from_vec(1, 3, vec![2.0, -1.0, 0.5]));
        let w = tape.leaf(Tensor2::from_vec(3, 1, vec![1.0, 1.0, 1.0]));
        let loss = tape.matmul(x, w);
        let grads = tape.backward(loss);
        assert_eq!(grads[w].data, vec![2.0, -1.0, 0.5]);
    }

    #[test]
    fn relu_blocks_gradient_at_negative_input() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2::from_vec(1, 2, vec![-3.0, 4.0]));
        let r = tape.relu(x);
        let ones = tape.leaf(Tensor2::from_vec(2, 1, vec![1.0, 1.0]));
        let loss = tape.matmul(r, ones);
        let grads = tape.backward(loss);
        assert_eq!(grads[x].data, vec![0.0, 1.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2::from_vec(2, 3, vec![1.0, 2.0, 3.0, -5.0, 0.0, 5.0]));
        let s = tape.softmax_rows(x);
        for i in 0..2 {
            let sum: f64 = tape.value(s).row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn augment_fills_dustbins() {
        let mut tape = Tape::new();
        let s = tape.leaf(Tensor2::from_vec(1, 2, vec![3.0, 4.0]));
        let bin = tape.leaf(Tensor2::scalar(7.0));
        let a = tape.augment(s, bin);
        assert_eq!(tape.value(a).data, vec![3.0, 4.0, 7.0, 7.0, 7.0, 7.0]);
        let loss = tape.neg_mean_cells_for_test(a);
        let grads = tape.backward(loss);
        // corner + dustbin row + dustbin column: 4 cells carry the bin value
        assert_eq!(grads[bin].data[0], -(4.0 / 6.0));
    }

    impl Tape {
        fn neg_mean_cells_for_test(&mut self, a: NodeId) -> NodeId {
            let (r, c) = self.values[a].shape();
            let cells = (0..r)
                .flat_map(|i| (0..c).map(move |j| (i, j)))
                .collect();
            self.neg_mean_cells(a, cells)
        }
    }

    #[test]
    fn logsumexp_handles_large_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2::from_vec(1, 2, vec![1000.0, 1000.0]));
        let l = tape.logsumexp_rows(x);
        assert!((tape.value(l).data[0] - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }
}
