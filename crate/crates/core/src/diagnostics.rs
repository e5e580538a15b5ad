//! Measurements behind the benchmark harness.

use std::time::Instant;

use crate::circuit::{ProductKind, TensorizedCircuit};
use crate::error::{Error, Result};
use crate::inference::Model;
use crate::input::InputFamily;
use crate::learning::{init_parameters, InitScheme, TrainConfig, Trainer};
use crate::region_graph::RegionGraph;
use crate::squaring::square;

/// `log Z` of one squared circuit computed in signed log-space and in plain
/// float-64 arithmetic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingPoint {
    pub variables: usize,
    pub depth: usize,
    pub log_z: f64,
    pub linear_z: f64,
}

impl ScalingPoint {
    /// The float-64 path left the representable range.
    pub fn linear_failed(&self) -> bool {
        !self.linear_z.is_finite() || self.linear_z <= 0.0
    }
}

/// Square a binary-tree circuit of Gaussian inputs over `variables`
/// variables with `width` units per layer and uniform(0, 1) weights, then
/// compute its partition function both ways.
pub fn log_space_probe(variables: usize, width: usize, seed: u64) -> Result<ScalingPoint> {
    let rg = RegionGraph::binary_tree(variables, seed)?;
    let families = vec![InputFamily::Gaussian; variables];
    let mut c = TensorizedCircuit::from_region_graph(&rg, width, ProductKind::Hadamard, &families, false)?;
    init_parameters(&mut c, InitScheme::Uniform { low: 0.0, high: 1.0 }, seed)?;
    let c2 = square(c)?;
    let ev = c2.evaluator();
    let none = vec![None; variables];
    let z = ev.value(&none)?;
    if z.sign <= 0.0 || !z.log_mag.is_finite() {
        return Err(Error::numeric(format!("log-space Z has sign {} and log {}", z.sign, z.log_mag)));
    }
    Ok(ScalingPoint {
        variables,
        depth: rg.depth(),
        log_z: z.log_mag,
        linear_z: ev.value_linear(&none)?,
    })
}

/// Timing and partition-function bookkeeping of a few optimizer steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepProbe {
    pub steps: usize,
    pub seconds_per_step: f64,
    pub z_per_step: f64,
}

/// Run `steps` optimizer steps on batches of `batch_size` rows, cycling
/// through `rows`.
pub fn step_probe(model: &mut Model, rows: &[Vec<f64>], config: &TrainConfig, steps: usize) -> Result<StepProbe> {
    if rows.is_empty() || steps == 0 {
        return Err(Error::InvalidArgument("step probe needs rows and at least one step".into()));
    }
    let mut trainer = Trainer::new(config.clone(), model.circuit().params.len())?;
    let before = model.z_evaluations();
    let start = Instant::now();
    for s in 0..steps {
        let batch: Vec<&[f64]> = (0..config.batch_size)
            .map(|i| rows[(s * config.batch_size + i) % rows.len()].as_slice())
            .collect();
        trainer.step(model, &batch)?;
    }
    let seconds = start.elapsed().as_secs_f64();
    Ok(StepProbe {
        steps,
        seconds_per_step: seconds / steps as f64,
        z_per_step: (model.z_evaluations() - before) as f64 / steps as f64,
    })
}
