use rand::Rng;

use super::matrix::{gemm, Matrix, Op};
use crate::{Error, Result};

/// Uniform He-style initialisation bound for a layer with `fan_in` inputs.
fn he_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in.max(1) as f64).sqrt()
}

/// Fully connected layer `y = W x + b` with `W` stored `[out × in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    in_dim: usize,
    out_dim: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = he_bound(in_dim);
        let weight = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Self {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn from_parts(
        in_dim: usize,
        out_dim: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if weight.len() != in_dim * out_dim {
            return Err(Error::Dimension {
                context: "dense weight",
                expected: in_dim * out_dim,
                got: weight.len(),
            });
        }
        if bias.len() != out_dim {
            return Err(Error::Dimension {
                context: "dense bias",
                expected: out_dim,
                got: bias.len(),
            });
        }
        Ok(Self {
            in_dim,
            out_dim,
            weight,
            bias,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn forward(&self, x: &Matrix) -> Matrix {
        let batch = x.rows();
        let mut out = Matrix::zeros(batch, self.out_dim);
        for r in 0..batch {
            out.row_mut(r).copy_from_slice(&self.bias);
        }
        gemm(
            batch,
            self.in_dim,
            self.out_dim,
            1.0,
            x.as_slice(),
            Op::N,
            &self.weight,
            Op::T,
            1.0,
            out.as_mut_slice(),
        );
        out
    }

    fn backward(
        &self,
        x: &Matrix,
        grad: &Matrix,
        want_input: bool,
    ) -> (Option<Matrix>, [Vec<f64>; 2]) {
        let batch = x.rows();
        let mut dw = vec![0.0; self.weight.len()];
        gemm(
            self.out_dim,
            batch,
            self.in_dim,
            1.0,
            grad.as_slice(),
            Op::T,
            x.as_slice(),
            Op::N,
            0.0,
            &mut dw,
        );
        let mut db = vec![0.0; self.out_dim];
        for g in grad.iter_rows() {
            for (d, v) in db.iter_mut().zip(g) {
                *d += v;
            }
        }
        let dx = want_input.then(|| {
            let mut dx = Matrix::zeros(batch, self.in_dim);
            gemm(
                batch,
                self.out_dim,
                self.in_dim,
                1.0,
                grad.as_slice(),
                Op::N,
                &self.weight,
                Op::N,
                0.0,
                dx.as_mut_slice(),
            );
            dx
        });
        (dx, [dw, db])
    }
}

/// Channel-wise convolution with kernel size 1.
///
/// A sample is laid out channel-major, `[channels × positions]`, so the
/// flattened output of one layer feeds the next layer (or a dense layer)
/// without a reshape.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1x1 {
    in_channels: usize,
    out_channels: usize,
    positions: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Conv1x1 {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        positions: usize,
        rng: &mut R,
    ) -> Self {
        let bound = he_bound(in_channels);
        let weight = (0..in_channels * out_channels)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Self {
            in_channels,
            out_channels,
            positions,
            weight,
            bias: vec![0.0; out_channels],
        }
    }

    pub fn from_parts(
        in_channels: usize,
        out_channels: usize,
        positions: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if weight.len() != in_channels * out_channels || bias.len() != out_channels {
            return Err(Error::Dimension {
                context: "conv1x1 parameters",
                expected: in_channels * out_channels + out_channels,
                got: weight.len() + bias.len(),
            });
        }
        Ok(Self {
            in_channels,
            out_channels,
            positions,
            weight,
            bias,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_channels * self.positions
    }

    pub fn out_dim(&self) -> usize {
        self.out_channels * self.positions
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn forward(&self, x: &Matrix) -> Matrix {
        let (ic, oc, len) = (self.in_channels, self.out_channels, self.positions);
        let mut out = Matrix::zeros(x.rows(), self.out_dim());
        for (xs, ys) in x
            .iter_rows()
            .zip(out.as_mut_slice().chunks_exact_mut(oc * len))
        {
            for o in 0..oc {
                let y = &mut ys[o * len..(o + 1) * len];
                y.fill(self.bias[o]);
                for c in 0..ic {
                    let w = self.weight[o * ic + c];
                    for (yv, xv) in y.iter_mut().zip(&xs[c * len..(c + 1) * len]) {
                        *yv += w * xv;
                    }
                }
            }
        }
        out
    }

    fn backward(
        &self,
        x: &Matrix,
        grad: &Matrix,
        want_input: bool,
    ) -> (Option<Matrix>, [Vec<f64>; 2]) {
        let (ic, oc, len) = (self.in_channels, self.out_channels, self.positions);
        let mut dw = vec![0.0; self.weight.len()];
        let mut db = vec![0.0; oc];
        let mut dx = want_input.then(|| Matrix::zeros(x.rows(), self.in_dim()));
        for s in 0..x.rows() {
            let xs = x.row(s);
            let gs = grad.row(s);
            for o in 0..oc {
                let g = &gs[o * len..(o + 1) * len];
                db[o] += g.iter().sum::<f64>();
                for c in 0..ic {
                    let xc = &xs[c * len..(c + 1) * len];
                    dw[o * ic + c] += g.iter().zip(xc).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            if let Some(dx) = dx.as_mut() {
                let dxs = dx.row_mut(s);
                for c in 0..ic {
                    let d = &mut dxs[c * len..(c + 1) * len];
                    for o in 0..oc {
                        let w = self.weight[o * ic + c];
                        for (dv, gv) in d.iter_mut().zip(&gs[o * len..(o + 1) * len]) {
                            *dv += w * gv;
                        }
                    }
                }
            }
        }
        (dx, [dw, db])
    }
}

/// One stage of a sequential network.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv1x1(Conv1x1),
    Relu,
}

impl Layer {
    pub(crate) fn forward(&self, x: &Matrix) -> Matrix {
        match self {
            Layer::Dense(d) => d.forward(x),
            Layer::Conv1x1(c) => c.forward(x),
            Layer::Relu => {
                let mut y = x.clone();
                y.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
                y
            }
        }
    }

    /// Returns the input gradient (when requested) and parameter gradients
    /// in the order of [`Layer::params`].
    pub(crate) fn backward(
        &self,
        x: &Matrix,
        grad: &Matrix,
        want_input: bool,
    ) -> (Option<Matrix>, Vec<Vec<f64>>) {
        match self {
            Layer::Dense(d) => {
                let (dx, p) = d.backward(x, grad, want_input);
                (dx, p.into())
            }
            Layer::Conv1x1(c) => {
                let (dx, p) = c.backward(x, grad, want_input);
                (dx, p.into())
            }
            Layer::Relu => {
                let dx = want_input.then(|| {
                    let mut dx = grad.clone();
                    for (d, xv) in dx.as_mut_slice().iter_mut().zip(x.as_slice()) {
                        if *xv <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    dx
                });
                (dx, Vec::new())
            }
        }
    }

    /// Output width given an input width (ReLU preserves it).
    pub(crate) fn out_dim(&self, in_dim: usize) -> usize {
        match self {
            Layer::Dense(d) => d.out_dim(),
            Layer::Conv1x1(c) => c.out_dim(),
            Layer::Relu => in_dim,
        }
    }

    pub(crate) fn in_dim(&self) -> Option<usize> {
        match self {
            Layer::Dense(d) => Some(d.in_dim()),
            Layer::Conv1x1(c) => Some(c.in_dim()),
            Layer::Relu => None,
        }
    }

    pub(crate) fn params(&self) -> Vec<&[f64]> {
        match self {
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::Conv1x1(c) => vec![&c.weight, &c.bias],
            Layer::Relu => Vec::new(),
        }
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Conv1x1(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Relu => Vec::new(),
        }
    }

    /// Tensor shapes of the parameters, matching [`Layer::params`].
    pub(crate) fn param_shapes(&self) -> Vec<Vec<usize>> {
        match self {
            Layer::Dense(d) => vec![vec![d.out_dim, d.in_dim], vec![d.out_dim]],
            Layer::Conv1x1(c) => vec![vec![c.out_channels, c.in_channels], vec![c.out_channels]],
            Layer::Relu => Vec::new(),
        }
    }

    pub(crate) fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv1x1(_) => "conv1x1",
            Layer::Relu => "relu",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_hand_arithmetic() {
        let d = Dense::from_parts(2, 2, vec![2.0, 0.0, 0.0, 3.0], vec![1.0, -1.0]).unwrap();
        let y = Layer::Dense(d).forward(&Matrix::row_vector(&[1.0, 1.0]));
        assert_eq!(y.as_slice(), &[3.0, 2.0]);
    }

    #[test]
    fn conv1x1_equals_dense_at_every_position() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let conv = Conv1x1::new(3, 7, 9, &mut rng);
            let dense = Dense::from_parts(3, 7, conv.weight.clone(), conv.bias.clone()).unwrap();
            let x: Vec<f64> = (0..27).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let y = Layer::Conv1x1(conv).forward(&Matrix::row_vector(&x));
            for p in 0..9 {
                let column: Vec<f64> = (0..3).map(|c| x[c * 9 + p]).collect();
                let yd = Layer::Dense(dense.clone()).forward(&Matrix::row_vector(&column));
                for o in 0..7 {
                    assert!((y.get(0, o * 9 + p) - yd.get(0, o)).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn relu_zeroes_negative_inputs_and_their_gradients() {
        let x = Matrix::row_vector(&[-1.0, 0.0, 2.0]);
        assert_eq!(Layer::Relu.forward(&x).as_slice(), &[0.0, 0.0, 2.0]);
        let g = Matrix::row_vector(&[5.0, 5.0, 5.0]);
        let (dx, p) = Layer::Relu.backward(&x, &g, true);
        assert_eq!(dx.unwrap().as_slice(), &[0.0, 0.0, 5.0]);
        assert!(p.is_empty());
    }
}
