//! Maximum-likelihood training by mini-batch gradient ascent.
//!
//! Per optimizer step the objective is the batch mean of `log model(x)`
//! minus `log Z`; `log Z` and its gradient come from a single pass over the
//! circuit with every variable integrated out.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::circuit::{BlockRole, Reparam, TensorizedCircuit};
use crate::error::{Error, Result};
use crate::inference::{log_likelihood, Model};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Initial values of weight blocks (sum weights, input coefficients,
/// logits). Locations start at `N(0, 1)` draws and log-scales at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScheme {
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, std: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub optimizer: Optimizer,
    pub init: InitScheme,
    pub seed: u64,
    /// L2 penalty on free parameters.
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            learning_rate: 1e-2,
            max_epochs: 100,
            patience: 3,
            optimizer: Optimizer::adam(),
            init: InitScheme::Uniform { low: 0.0, high: 1.0 },
            seed: 0,
            l2: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidArgument("patience must be at least 1".into()));
        }
        if self.l2 < 0.0 {
            return Err(Error::InvalidArgument("l2 must be non-negative".into()));
        }
        match self.init {
            InitScheme::Uniform { low, high } if !(low < high) => {
                Err(Error::InvalidArgument("uniform init needs low < high".into()))
            }
            InitScheme::Normal { std, .. } if !(std > 0.0) => {
                Err(Error::InvalidArgument("normal init needs a positive std".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Set every free parameter from `scheme`, deterministically in `seed`.
///
/// Weight blocks draw their effective value from the scheme; under an
/// exponential reparameterization a uniform draw `u` is stored as `ln u`
/// (so effective weights follow the scheme) and a normal draw is stored
/// directly. Softmax rows take the draws as logits.
pub fn init_parameters(c: &mut TensorizedCircuit, scheme: InitScheme, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut values = c.params.values().to_vec();
    for b in c.params.blocks() {
        for v in &mut values[b.range()] {
            *v = match b.role {
                BlockRole::Location => std_normal.sample(&mut rng),
                BlockRole::LogScale => 0.0,
                BlockRole::Weight => match (scheme, b.reparam) {
                    (InitScheme::Uniform { low, high }, Reparam::Exp) => {
                        let u = Uniform::new(low, high)
                            .map_err(|e| Error::InvalidArgument(e.to_string()))?
                            .sample(&mut rng);
                        if u <= 0.0 {
                            return Err(Error::InvalidArgument(
                                "uniform init on exp-reparameterized weights needs positive draws".into(),
                            ));
                        }
                        u.ln()
                    }
                    (InitScheme::Uniform { low, high }, _) => rng.random_range(low..high),
                    (InitScheme::Normal { mean, std }, _) => Normal::new(mean, std)
                        .map_err(|e| Error::InvalidArgument(e.to_string()))?
                        .sample(&mut rng),
                },
            };
        }
    }
    c.params.set_values(&values)
}

/// Optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// Objective of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Batch mean of `log p(x)` before the update.
    pub log_likelihood: f64,
    pub log_z: f64,
}

impl Trainer {
    pub fn new(config: TrainConfig, parameter_count: usize) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            config,
            m: vec![0.0; parameter_count],
            v: vec![0.0; parameter_count],
            t: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Gradient of the batch objective with respect to the free parameters.
    pub fn gradient(model: &Model, batch: &[&[f64]]) -> Result<(StepOutcome, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let (data_ev, scale) = model.data_evaluator();
        let n_params = data_ev.effective().len();
        let n = batch.len() as f64;
        // each row contributes its log-value in slot n_params
        let acc = par::try_sum(batch.len(), n_params + 1, |i| {
            let point: Vec<Option<f64>> = batch[i].iter().map(|&x| Some(x)).collect();
            let (y, mut g) = data_ev.log_grad(&point).map_err(|e| e.at_row(i))?;
            g.iter_mut().for_each(|v| *v *= scale);
            g.push(scale * y.log_mag);
            Ok(g)
        })?;
        model.record_z();
        let z_ev = model.evaluator();
        let (z, z_grad) = z_ev.log_grad(&vec![None; model.variable_count()])?;
        if z.sign <= 0.0 || !z.log_mag.is_finite() {
            return Err(Error::DegenerateModel("partition function is not positive and finite".into()));
        }
        let eff_grad: Vec<f64> = (0..n_params).map(|j| acc[j] / n - z_grad[j]).collect();
        let free = model.circuit().params.free_grad(data_ev.effective(), &eff_grad);
        Ok((
            StepOutcome {
                log_likelihood: acc[n_params] / n - z.log_mag,
                log_z: z.log_mag,
            },
            free,
        ))
    }

    /// One ascent step on the batch objective.
    pub fn step(&mut self, model: &mut Model, batch: &[&[f64]]) -> Result<StepOutcome> {
        let (out, mut grad) = Self::gradient(model, batch)?;
        let params = &mut model.circuit_mut().params;
        if self.config.l2 > 0.0 {
            for (g, v) in grad.iter_mut().zip(params.values()) {
                *g -= 2.0 * self.config.l2 * v;
            }
        }
        params.zero_grad();
        params.gradients_mut().copy_from_slice(&grad);
        let lr = self.config.learning_rate;
        self.t += 1;
        let values = params.values_mut();
        match self.config.optimizer {
            Optimizer::Sgd => {
                values.iter_mut().zip(&grad).for_each(|(v, g)| *v += lr * g);
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.t as i32);
                let c2 = 1.0 - beta2.powi(self.t as i32);
                for i in 0..values.len() {
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    values[i] += lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
                }
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("non-finite parameter after step {}", self.t)));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_ll: f64,
    pub val_ll: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_ll: f64,
    pub best_params: Vec<f64>,
    pub steps: u64,
    pub wall_seconds: f64,
}

impl TrainReport {
    /// `epoch,train_ll,val_ll,seconds` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_ll,val_ll,seconds\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_ll, e.val_ll, e.seconds));
        }
        s
    }
}

/// Train `model` on `train`, early-stopping on `val`. Parameters are left at
/// the best validation checkpoint.
pub fn train(model: &mut Model, train: &[Vec<f64>], val: &[Vec<f64>], config: &TrainConfig) -> Result<TrainReport> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument("training and validation splits must be non-empty".into()));
    }
    let start = Instant::now();
    let mut trainer = Trainer::new(config.clone(), model.circuit().params.len())?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best_val = log_likelihood(model, val)?.mean;
    let mut best_params = model.circuit().params.values().to_vec();
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut epochs = Vec::new();
    for epoch in 1..=config.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&[f64]> = chunk.iter().map(|&i| train[i].as_slice()).collect();
            let out = trainer.step(model, &batch).map_err(|e| with_context(e, epoch, trainer.t))?;
            total += out.log_likelihood * chunk.len() as f64;
        }
        let val_ll = log_likelihood(model, val).map_err(|e| with_context(e, epoch, trainer.t))?.mean;
        epochs.push(EpochRecord {
            epoch,
            train_ll: total / train.len() as f64,
            val_ll,
            seconds: start.elapsed().as_secs_f64(),
        });
        if val_ll > best_val {
            best_val = val_ll;
            best_params = model.circuit().params.values().to_vec();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    model.circuit_mut().params.set_values(&best_params)?;
    Ok(TrainReport {
        epochs,
        best_epoch,
        best_val_ll: best_val,
        best_params,
        steps: trainer.t,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

fn with_context(e: Error, epoch: usize, step: u64) -> Error {
    match e {
        Error::Numeric { message, layer, row } => Error::Numeric {
            message: format!("{message} (epoch {epoch}, step {step})"),
            layer,
            row,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{CircuitBuilder, ProductKind};
    use crate::input::InputFamily;
    use crate::region_graph::RegionGraph;
    use crate::squaring::square;
    use approx::assert_relative_eq;

    #[test]
    fn init_is_reproducible() {
        let rg = RegionGraph::binary_tree(4, 0).unwrap();
        let mut a = TensorizedCircuit::from_region_graph(&rg, 3, ProductKind::Hadamard, &vec![InputFamily::Gaussian; 4], false)
            .unwrap();
        let mut b = a.clone();
        init_parameters(&mut a, InitScheme::Uniform { low: 0.0, high: 1.0 }, 7).unwrap();
        init_parameters(&mut b, InitScheme::Uniform { low: 0.0, high: 1.0 }, 7).unwrap();
        assert_eq!(a.params.values(), b.params.values());
    }

    #[test]
    fn normal_init_gives_both_signs() {
        let rg = RegionGraph::binary_tree(8, 0).unwrap();
        let mut c = TensorizedCircuit::from_region_graph(&rg, 8, ProductKind::Hadamard, &vec![InputFamily::Gaussian; 8], false)
            .unwrap();
        init_parameters(&mut c, InitScheme::Normal { mean: 0.0, std: 0.1 }, 1).unwrap();
        let weights: Vec<f64> = c
            .params
            .blocks()
            .iter()
            .filter(|b| b.role == BlockRole::Weight)
            .flat_map(|b| c.params.values()[b.range()].to_vec())
            .collect();
        let n = weights.len() as f64;
        let neg = weights.iter().filter(|w| **w < 0.0).count() as f64;
        assert!((neg - n / 2.0).abs() < 4.0 * (n / 4.0).sqrt(), "{neg} of {n}");
    }

    #[test]
    fn uniform_target_converges() {
        let m = 5;
        let mut b = CircuitBuilder::new(1);
        let i = b.input(0, InputFamily::Categorical { states: m }, 1, true).unwrap();
        let s = b.sum(i, 1, Reparam::Exp).unwrap();
        let mut c = b.finish(s, None).unwrap();
        init_parameters(&mut c, InitScheme::Normal { mean: 0.0, std: 1.0 }, 2).unwrap();
        let mut model = Model::Plain(c);
        let data: Vec<Vec<f64>> = (0..500).map(|i| vec![(i % m) as f64]).collect();
        let config = TrainConfig {
            batch_size: 100,
            learning_rate: 0.1,
            max_epochs: 200,
            patience: 10,
            ..Default::default()
        };
        train(&mut model, &data, &data, &config).unwrap();
        let ll = log_likelihood(&model, &data).unwrap().mean;
        assert!((ll + (m as f64).ln()).abs() < 1e-3, "{ll}");
    }

    #[test]
    fn one_z_per_step() {
        let rg = RegionGraph::linear_tree(2, 0).unwrap();
        let mut c = TensorizedCircuit::from_region_graph(&rg, 3, ProductKind::Hadamard, &vec![InputFamily::Gaussian; 2], false)
            .unwrap();
        init_parameters(&mut c, InitScheme::Uniform { low: 0.0, high: 1.0 }, 0).unwrap();
        let mut model = Model::Squared(square(c).unwrap());
        let data: Vec<Vec<f64>> = (0..300).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()]).collect();
        let mut t = Trainer::new(TrainConfig::default(), model.circuit().params.len()).unwrap();
        for bs in [64, 256] {
            let batch: Vec<&[f64]> = data[..bs].iter().map(|r| r.as_slice()).collect();
            let before = model.z_evaluations();
            t.step(&mut model, &batch).unwrap();
            assert_eq!(model.z_evaluations() - before, 1);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut b = CircuitBuilder::new(1);
        let i = b.input(0, InputFamily::Gaussian, 2, false).unwrap();
        let s = b.sum(i, 1, Reparam::Identity).unwrap();
        let mut c = b.finish(s, None).unwrap();
        c.params.set_values(&[-0.5, 0.7, 0.1, -0.3, 0.8, -0.4]).unwrap();
        let model = Model::Squared(square(c).unwrap());
        let data: Vec<Vec<f64>> = vec![vec![0.2], vec![-1.0], vec![1.3]];
        let batch: Vec<&[f64]> = data.iter().map(|r| r.as_slice()).collect();
        let (_, g) = Trainer::gradient(&model, &batch).unwrap();
        let h = 1e-6;
        for j in 0..6 {
            let f = |delta: f64| {
                let mut m = model.clone();
                m.circuit_mut().params.values_mut()[j] += delta;
                Trainer::gradient(&m, &batch).unwrap().0.log_likelihood
            };
            let fd = (f(h) - f(-h)) / (2.0 * h);
            assert_relative_eq!(g[j], fd, max_relative = 1e-4, epsilon = 1e-8);
        }
    }
}
