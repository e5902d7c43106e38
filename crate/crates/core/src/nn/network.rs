use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::layer::{self, LayerSpec};
use crate::nn::{Matrix, OnlineAvgState};

/// Per-call state that is not part of the shared parameters.
#[derive(Debug, Clone, Copy, Default)]
pub struct AuxState<'a> {
    /// One xi vector per `LhucScale` layer, in network order. `None` means
    /// identity scaling.
    pub lhuc: Option<&'a [Vec<f64>]>,
    /// History for the `OnlineAverage` layer. `None` means a cold start.
    pub online: Option<&'a OnlineAvgState>,
}

impl<'a> AuxState<'a> {
    pub fn with_lhuc(xi: &'a [Vec<f64>]) -> Self {
        Self {
            lhuc: Some(xi),
            online: None,
        }
    }
}

/// Output of a forward pass. The activation cache is only present when the
/// pass was run for training.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub output: Matrix,
    cache: Option<Vec<Matrix>>,
}

impl ForwardPass {
    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    /// Input that layer `i` received during the pass, when cached.
    pub fn layer_input(&self, i: usize) -> Option<&Matrix> {
        self.cache.as_ref().and_then(|c| c.get(i))
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<f64>,
    /// Gradient per `LhucScale` layer (zeros when the pass ran without xi).
    pub lhuc: Vec<Vec<f64>>,
    pub input: Matrix,
}

pub enum Target<'a> {
    Classes(&'a [usize]),
    Values(&'a Matrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<LayerSpec>,
    params: Vec<f64>,
    offsets: Vec<usize>,
    seed: u64,
}

impl Network {
    /// Builds a network with Glorot-uniform weights and zero biases.
    pub fn new(layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let mut net = Self::with_zero_params(layers, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, l) in net.layers.iter().enumerate() {
            if let LayerSpec::Affine { in_dim, out_dim } = *l {
                let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
                let start = net.offsets[i];
                for w in &mut net.params[start..start + in_dim * out_dim] {
                    *w = rng.gen_range(-limit..limit);
                }
            }
        }
        Ok(net)
    }

    pub fn with_zero_params(layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("network needs at least one layer"));
        }
        let mut offsets = Vec::with_capacity(layers.len());
        let mut total = 0;
        for (i, l) in layers.iter().enumerate() {
            l.validate().map_err(|e| Error::config(format!("layer {i}: {e}")))?;
            if i > 0 && layers[i - 1].out_dim() != l.in_dim() {
                return Err(Error::config(format!(
                    "layer {i} ({}) expects {} inputs but layer {} ({}) produces {}",
                    l.name(),
                    l.in_dim(),
                    i - 1,
                    layers[i - 1].name(),
                    layers[i - 1].out_dim()
                )));
            }
            if l.is_head() && i + 1 != layers.len() {
                return Err(Error::config(format!("layer {i}: {} must be last", l.name())));
            }
            offsets.push(total);
            total += l.param_count();
        }
        if layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::OnlineAverage { .. }))
            .count()
            > 1
        {
            return Err(Error::config("at most one online-average layer is supported"));
        }
        Ok(Self {
            layers,
            params: vec![0.0; total],
            offsets,
            seed,
        })
    }

    pub fn from_parts(layers: Vec<LayerSpec>, params: Vec<f64>, seed: u64) -> Result<Self> {
        let mut net = Self::with_zero_params(layers, seed)?;
        if params.len() != net.params.len() {
            return Err(Error::config(format!(
                "parameter block has {} values, layers need {}",
                params.len(),
                net.params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Widths of the `LhucScale` layers in network order.
    pub fn lhuc_dims(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::LhucScale { dim } => Some(*dim),
                _ => None,
            })
            .collect()
    }

    fn check_aux(&self, aux: &AuxState<'_>) -> Result<()> {
        if let Some(xi) = aux.lhuc {
            let dims = self.lhuc_dims();
            if xi.len() != dims.len() || xi.iter().zip(&dims).any(|(v, &d)| v.len() != d) {
                return Err(Error::config(format!(
                    "LHUC transform shape {:?} does not match layer widths {dims:?}",
                    xi.iter().map(Vec::len).collect::<Vec<_>>()
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, input: &Matrix, aux: AuxState<'_>) -> Result<ForwardPass> {
        self.run(input, aux, true, self.layers.len())
    }

    /// Forward pass without an activation cache.
    pub fn infer(&self, input: &Matrix, aux: AuxState<'_>) -> Result<Matrix> {
        Ok(self.run(input, aux, false, self.layers.len())?.output)
    }

    /// Runs the chain up to (not including) a trailing head layer.
    pub fn infer_pre_head(&self, input: &Matrix, aux: AuxState<'_>) -> Result<Matrix> {
        let end = if self.layers.last().is_some_and(LayerSpec::is_head) {
            self.layers.len() - 1
        } else {
            self.layers.len()
        };
        Ok(self.run(input, aux, false, end)?.output)
    }

    /// Runs only `layers[range]`, feeding `input` to the first of them.
    pub fn infer_layers(&self, input: &Matrix, aux: AuxState<'_>, range: std::ops::Range<usize>) -> Result<Matrix> {
        if range.start >= range.end || range.end > self.layers.len() {
            return Err(Error::config(format!("invalid layer range {range:?}")));
        }
        Ok(self.run_from(input, aux, false, range.start, range.end)?.output)
    }

    fn run(&self, input: &Matrix, aux: AuxState<'_>, keep: bool, end: usize) -> Result<ForwardPass> {
        self.run_from(input, aux, keep, 0, end)
    }

    fn run_from(&self, input: &Matrix, aux: AuxState<'_>, keep: bool, start: usize, end: usize) -> Result<ForwardPass> {
        if input.cols() != self.layers[start].in_dim() {
            return Err(Error::config(format!(
                "layer {start} ({}) expects {} input columns, got {}",
                self.layers[start].name(),
                self.layers[start].in_dim(),
                input.cols()
            )));
        }
        if input.rows() == 0 {
            return Err(Error::config("forward pass needs at least one row"));
        }
        self.check_aux(&aux)?;
        let mut cache = Vec::with_capacity(if keep { end + 1 } else { 0 });
        let mut x = input.clone();
        let mut lhuc_idx = self.layers[..start]
            .iter()
            .filter(|l| matches!(l, LayerSpec::LhucScale { .. }))
            .count();
        for (i, l) in self.layers.iter().enumerate().take(end).skip(start) {
            let y = match l {
                LayerSpec::Affine { in_dim, out_dim } => {
                    let p = &self.params[self.offsets[i]..self.offsets[i] + l.param_count()];
                    layer::affine_forward(p, *in_dim, *out_dim, &x)
                }
                LayerSpec::Sigmoid { .. } => x.map(layer::sigmoid),
                LayerSpec::Relu { .. } => x.map(|v| v.max(0.0)),
                LayerSpec::SoftmaxCeHead { .. } => layer::softmax_rows(&x),
                LayerSpec::MseHead { .. } => x.clone(),
                LayerSpec::LhucScale { .. } => {
                    let y = match aux.lhuc {
                        Some(xi) => layer::lhuc_forward(&x, &xi[lhuc_idx]),
                        None => x.clone(),
                    };
                    lhuc_idx += 1;
                    y
                }
                LayerSpec::ContextSplice { offsets, .. } => layer::splice_forward(&x, offsets),
                LayerSpec::OnlineAverage { .. } => layer::online_forward(&x, aux.online)?,
            };
            if keep {
                cache.push(std::mem::replace(&mut x, y));
            } else {
                x = y;
            }
        }
        Ok(ForwardPass {
            output: x,
            cache: keep.then_some(cache),
        })
    }

    /// Reverse pass given the gradient of the loss with respect to the output.
    pub fn backward(&self, pass: &ForwardPass, aux: AuxState<'_>, grad_output: &Matrix) -> Result<Gradients> {
        let cache = pass
            .cache
            .as_ref()
            .ok_or_else(|| Error::Usage("backward requires a forward pass run with caching".into()))?;
        if cache.len() != self.layers.len() {
            return Err(Error::Usage("forward pass was truncated; cannot backpropagate".into()));
        }
        if grad_output.shape() != pass.output.shape() {
            return Err(Error::config(format!(
                "output gradient shape {:?} does not match output {:?}",
                grad_output.shape(),
                pass.output.shape()
            )));
        }
        self.check_aux(&aux)?;
        let dims = self.lhuc_dims();
        let mut grads = vec![0.0; self.params.len()];
        let mut lhuc_grads: Vec<Vec<f64>> = dims.iter().map(|&d| vec![0.0; d]).collect();
        let mut lhuc_idx = dims.len();
        let mut dy = grad_output.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let x = &cache[i];
            let y = if i + 1 < cache.len() {
                &cache[i + 1]
            } else {
                &pass.output
            };
            dy = match l {
                LayerSpec::Affine { in_dim, out_dim } => {
                    let range = self.offsets[i]..self.offsets[i] + l.param_count();
                    layer::affine_backward(
                        &self.params[range.clone()],
                        *in_dim,
                        *out_dim,
                        x,
                        &dy,
                        &mut grads[range],
                        true,
                    )
                }
                LayerSpec::Sigmoid { .. } => {
                    let mut dx = dy;
                    for (d, &s) in dx.data_mut().iter_mut().zip(y.data()) {
                        *d *= s * (1.0 - s);
                    }
                    dx
                }
                LayerSpec::Relu { .. } => {
                    let mut dx = dy;
                    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
                        if v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    dx
                }
                LayerSpec::SoftmaxCeHead { .. } => layer::softmax_backward(y, &dy),
                LayerSpec::MseHead { .. } => dy,
                LayerSpec::LhucScale { .. } => {
                    lhuc_idx -= 1;
                    match aux.lhuc {
                        Some(xi) => {
                            let (dx, dxi) = layer::lhuc_backward(x, &xi[lhuc_idx], &dy);
                            lhuc_grads[lhuc_idx] = dxi;
                            dx
                        }
                        None => {
                            let zero = vec![0.0; dims[lhuc_idx]];
                            let (dx, dxi) = layer::lhuc_backward(x, &zero, &dy);
                            lhuc_grads[lhuc_idx] = dxi;
                            dx
                        }
                    }
                }
                LayerSpec::ContextSplice { in_dim, offsets } => layer::splice_backward(&dy, *in_dim, offsets),
                LayerSpec::OnlineAverage { .. } => layer::online_backward(x.rows(), aux.online, &dy),
            };
        }
        Ok(Gradients {
            params: grads,
            lhuc: lhuc_grads,
            input: dy,
        })
    }

    /// Loss and output gradient for the trailing head layer.
    pub fn loss(&self, output: &Matrix, target: Target<'_>) -> Result<(f64, Matrix)> {
        match (self.layers.last(), target) {
            (Some(LayerSpec::SoftmaxCeHead { .. }), Target::Classes(labels)) => cross_entropy(output, labels),
            (Some(LayerSpec::MseHead { .. }), Target::Values(t)) => mse(output, t),
            (Some(l), _) => Err(Error::config(format!(
                "target kind does not match final layer {}",
                l.name()
            ))),
            (None, _) => Err(Error::config("empty network")),
        }
    }
}

/// Mean cross-entropy over rows of a probability matrix, with the gradient
/// with respect to the probabilities.
pub fn cross_entropy(probs: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if probs.rows() != labels.len() {
        return Err(Error::data(format!(
            "{} label(s) for {} row(s)",
            labels.len(),
            probs.rows()
        )));
    }
    let n = probs.rows() as f64;
    let mut grad = Matrix::zeros(probs.rows(), probs.cols());
    let mut loss = 0.0;
    for (t, &y) in labels.iter().enumerate() {
        if y >= probs.cols() {
            return Err(Error::data(format!(
                "label {y} out of range for {} classes",
                probs.cols()
            )));
        }
        let p = probs.get(t, y).max(1e-300);
        loss -= p.ln();
        grad.set(t, y, -1.0 / (n * p));
    }
    Ok((loss / n, grad))
}

/// Mean squared error over all elements; gradient is `2 (y - t) / n`.
pub fn mse(output: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    if output.shape() != target.shape() {
        return Err(Error::data(format!(
            "MSE target shape {:?} does not match output {:?}",
            target.shape(),
            output.shape()
        )));
    }
    let n = output.data().len() as f64;
    let mut grad = Matrix::zeros(output.rows(), output.cols());
    let mut loss = 0.0;
    for ((g, &y), &t) in grad.data_mut().iter_mut().zip(output.data()).zip(target.data()) {
        let d = y - t;
        loss += d * d;
        *g = 2.0 * d / n;
    }
    Ok((loss / n, grad))
}
