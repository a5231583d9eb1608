use super::checkpoint::Tensor;
use super::layer::Layer;
use super::matrix::Matrix;
use crate::{Error, Result};

/// Parameter gradients, one buffer per parameter tensor in [`Network::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    /// Element-wise sum with another gradient set of the same layout.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Cache {
    trunk_inputs: Vec<Matrix>,
    trunk_out: Matrix,
    branch_inputs: Vec<Vec<Matrix>>,
}

/// Sequential trunk followed by zero or more output branches.
///
/// With no branches the trunk output is the single network output.
#[derive(Debug, Clone)]
pub struct Network {
    input_dim: usize,
    trunk: Vec<Layer>,
    branches: Vec<Vec<Layer>>,
    cache: Option<Cache>,
}

fn check_chain(mut dim: usize, layers: &[Layer]) -> Result<usize> {
    for layer in layers {
        if let Some(expected) = layer.in_dim() {
            if expected != dim {
                return Err(Error::Dimension {
                    context: "layer chain",
                    expected,
                    got: dim,
                });
            }
        }
        dim = layer.out_dim(dim);
    }
    Ok(dim)
}

impl Network {
    pub fn new(input_dim: usize, trunk: Vec<Layer>, branches: Vec<Vec<Layer>>) -> Result<Self> {
        let trunk_out = check_chain(input_dim, &trunk)?;
        for b in &branches {
            check_chain(trunk_out, b)?;
        }
        Ok(Self {
            input_dim,
            trunk,
            branches,
            cache: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Widths of each output (one per branch, or the trunk width).
    pub fn output_dims(&self) -> Vec<usize> {
        let trunk_out = self.trunk.iter().fold(self.input_dim, |d, l| l.out_dim(d));
        if self.branches.is_empty() {
            vec![trunk_out]
        } else {
            self.branches
                .iter()
                .map(|b| b.iter().fold(trunk_out, |d, l| l.out_dim(d)))
                .collect()
        }
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim {
            return Err(Error::Dimension {
                context: "network input",
                expected: self.input_dim,
                got: x.cols(),
            });
        }
        Ok(())
    }

    /// Pure forward pass over a batch (one sample per row).
    pub fn forward(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        self.check_input(x)?;
        let h = self.trunk.iter().fold(x.clone(), |h, l| l.forward(&h));
        if self.branches.is_empty() {
            return Ok(vec![h]);
        }
        Ok(self
            .branches
            .iter()
            .map(|b| b.iter().fold(h.clone(), |z, l| l.forward(&z)))
            .collect())
    }

    /// Single-sample convenience wrapper over [`Network::forward`].
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .forward(&Matrix::row_vector(x))?
            .into_iter()
            .map(Matrix::into_vec)
            .collect())
    }

    /// Forward pass that records activations for a following [`Network::backward`].
    pub fn forward_train(&mut self, x: &Matrix) -> Result<Vec<Matrix>> {
        self.check_input(x)?;
        let mut trunk_inputs = Vec::with_capacity(self.trunk.len());
        let mut h = x.clone();
        for l in &self.trunk {
            let next = l.forward(&h);
            trunk_inputs.push(std::mem::replace(&mut h, next));
        }
        let mut outputs = Vec::new();
        let mut branch_inputs = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            let mut inputs = Vec::with_capacity(b.len());
            let mut z = h.clone();
            for l in b {
                let next = l.forward(&z);
                inputs.push(std::mem::replace(&mut z, next));
            }
            outputs.push(z);
            branch_inputs.push(inputs);
        }
        if self.branches.is_empty() {
            outputs.push(h.clone());
        }
        self.cache = Some(Cache {
            trunk_inputs,
            trunk_out: h,
            branch_inputs,
        });
        Ok(outputs)
    }

    /// Backpropagates output gradients through the activations recorded by the
    /// last [`Network::forward_train`]. The recording is consumed.
    pub fn backward(&mut self, output_grads: &[Matrix]) -> Result<Gradients> {
        let cache = self.cache.take().ok_or_else(|| {
            Error::Usage("backward called without a preceding forward_train".into())
        })?;
        let dims = self.output_dims();
        if output_grads.len() != dims.len() {
            return Err(Error::Dimension {
                context: "output gradient count",
                expected: dims.len(),
                got: output_grads.len(),
            });
        }
        let batch = cache.trunk_out.rows();
        for (g, &d) in output_grads.iter().zip(&dims) {
            if g.cols() != d || g.rows() != batch {
                return Err(Error::Dimension {
                    context: "output gradient",
                    expected: d,
                    got: g.cols(),
                });
            }
        }

        let mut branch_grads: Vec<Vec<Vec<f64>>> = Vec::with_capacity(self.branches.len());
        let trunk_grad = if self.branches.is_empty() {
            output_grads[0].clone()
        } else {
            let mut acc = Matrix::zeros(batch, cache.trunk_out.cols());
            for ((b, inputs), g) in self
                .branches
                .iter()
                .zip(&cache.branch_inputs)
                .zip(output_grads)
            {
                let (dh, grads) = backprop_chain(b, inputs, g.clone(), true);
                let dh = dh.expect("branch input gradient was requested");
                for (a, v) in acc.as_mut_slice().iter_mut().zip(dh.as_slice()) {
                    *a += v;
                }
                branch_grads.push(grads);
            }
            acc
        };

        let (_, mut grads) = backprop_chain(&self.trunk, &cache.trunk_inputs, trunk_grad, false);
        for g in branch_grads {
            grads.extend(g);
        }
        Ok(Gradients(grads))
    }

    fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.trunk.iter().chain(self.branches.iter().flatten())
    }

    /// All parameter tensors: trunk layers first, then each branch in order.
    pub fn params(&self) -> Vec<&[f64]> {
        self.layers().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.trunk
            .iter_mut()
            .chain(self.branches.iter_mut().flatten())
            .flat_map(Layer::params_mut)
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Overwrites this network's parameters with `other`'s. Shapes must agree.
    pub fn copy_params_from(&mut self, other: &Network) -> Result<()> {
        let src = other.params();
        let mut dst = self.params_mut();
        if src.len() != dst.len() {
            return Err(Error::Dimension {
                context: "parameter copy",
                expected: dst.len(),
                got: src.len(),
            });
        }
        for (d, s) in dst.iter_mut().zip(&src) {
            if d.len() != s.len() {
                return Err(Error::Dimension {
                    context: "parameter copy",
                    expected: d.len(),
                    got: s.len(),
                });
            }
            d.copy_from_slice(s);
        }
        Ok(())
    }

    /// Named parameter tensors, e.g. `trunk.0.weight` or `branch1.0.bias`.
    pub fn tensors(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        let groups = std::iter::once(("trunk".to_string(), &self.trunk)).chain(
            self.branches
                .iter()
                .enumerate()
                .map(|(i, b)| (format!("branch{i}"), b)),
        );
        for (prefix, layers) in groups {
            for (li, layer) in layers.iter().enumerate() {
                for ((suffix, shape), values) in ["weight", "bias"]
                    .iter()
                    .zip(layer.param_shapes())
                    .zip(layer.params())
                {
                    out.push(Tensor {
                        name: format!("{prefix}.{li}.{}.{suffix}", layer.kind()),
                        shape,
                        values: values.to_vec(),
                    });
                }
            }
        }
        out
    }

    /// Loads tensors produced by [`Network::tensors`] on an identically shaped network.
    pub fn load_tensors(&mut self, tensors: &[Tensor]) -> Result<()> {
        let expected = self.tensors();
        if expected.len() != tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (e, t) in expected.iter().zip(tensors) {
            if e.name != t.name || e.shape != t.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor mismatch: expected {} {:?}, found {} {:?}",
                    e.name, e.shape, t.name, t.shape
                )));
            }
        }
        for (dst, t) in self.params_mut().into_iter().zip(tensors) {
            dst.copy_from_slice(&t.values);
        }
        Ok(())
    }
}

fn backprop_chain(
    layers: &[Layer],
    inputs: &[Matrix],
    grad: Matrix,
    want_input: bool,
) -> (Option<Matrix>, Vec<Vec<f64>>) {
    let mut per_layer = Vec::with_capacity(layers.len());
    let mut grad = Some(grad);
    for (i, (layer, x)) in layers.iter().zip(inputs).enumerate().rev() {
        let g = grad
            .take()
            .expect("gradient is propagated down to the first layer");
        let (dx, grads) = layer.backward(x, &g, want_input || i > 0);
        per_layer.push(grads);
        grad = dx;
    }
    per_layer.reverse();
    (grad, per_layer.into_iter().flatten().collect())
}
