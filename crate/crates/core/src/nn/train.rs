use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::network::{AuxState, Target};
use crate::nn::{Matrix, Network, OptimState};

#[derive(Debug, Clone)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Matrix),
}

impl Targets {
    fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(m) => m.rows(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Matrix,
    pub targets: Targets,
}

impl Dataset {
    pub fn new(inputs: Matrix, targets: Targets) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::data("dataset is empty"));
        }
        if inputs.rows() != targets.len() {
            return Err(Error::data(format!(
                "{} input rows but {} targets",
                inputs.rows(),
                targets.len()
            )));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            seed: 0,
        }
    }
}

/// Deterministic minibatch order for one epoch.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Minibatch training against the network's head loss. Returns the mean
/// training loss of every epoch.
pub fn train(net: &mut Network, data: &Dataset, opt: &mut OptimState, options: &TrainOptions) -> Result<Vec<f64>> {
    train_with_aux(net, data, opt, options, AuxState::default())
}

pub fn train_with_aux(
    net: &mut Network,
    data: &Dataset,
    opt: &mut OptimState,
    options: &TrainOptions,
    aux: AuxState<'_>,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::data("dataset is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut trace = Vec::with_capacity(options.epochs);
    for epoch in 0..options.epochs {
        let mut total = 0.0;
        for batch in epoch_batches(data.len(), options.batch_size, &mut rng) {
            let x = data.inputs.select_rows(&batch);
            let pass = net.forward(&x, aux)?;
            let (loss, grad_out) = match &data.targets {
                Targets::Classes(c) => {
                    let labels: Vec<usize> = batch.iter().map(|&i| c[i]).collect();
                    net.loss(&pass.output, Target::Classes(&labels))?
                }
                Targets::Values(v) => {
                    let t = v.select_rows(&batch);
                    net.loss(&pass.output, Target::Values(&t))?
                }
            };
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    phase: "train".into(),
                    epoch,
                });
            }
            let grads = net.backward(&pass, aux, &grad_out)?;
            opt.step(net.params_mut(), &grads.params)?;
            total += loss * batch.len() as f64;
        }
        let mean = total / data.len() as f64;
        opt.end_epoch(mean);
        trace.push(mean);
    }
    Ok(trace)
}
