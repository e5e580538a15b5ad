//! Evaluation, normalization, marginal queries, likelihoods and sampling.

mod sampling;

pub use sampling::sample;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use crate::circuit::{ModelDocument, Property, TensorizedCircuit};
use crate::engine::Evaluator;
use crate::error::{Error, Result};
use crate::par;
use crate::signed::{SignedLog, SignedLogTensor};
use crate::squaring::SquaredCircuit;

/// Evaluation counter and cached value of the partition function, keyed by
/// the parameter version it was computed at.
#[derive(Debug, Default)]
pub struct PartitionCache {
    count: AtomicU64,
    cached: Mutex<Option<(u64, SignedLog)>>,
}

impl Clone for PartitionCache {
    fn clone(&self) -> Self {
        PartitionCache {
            count: AtomicU64::new(self.count()),
            cached: Mutex::new(*self.cached.lock().unwrap()),
        }
    }
}

impl PartitionCache {
    pub fn count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }

    pub fn reset_count(&self) {
        self.count.store(0, Ordering::Relaxed);
    }

    pub(crate) fn record(&self) {
        self.count.fetch_add(1, Ordering::Relaxed);
    }

    fn get(&self, version: u64) -> Option<SignedLog> {
        match *self.cached.lock().unwrap() {
            Some((v, z)) if v == version => Some(z),
            _ => None,
        }
    }

    fn store(&self, version: u64, z: SignedLog) {
        *self.cached.lock().unwrap() = Some((version, z));
    }
}

fn all_marginalized(d: usize) -> Vec<Option<f64>> {
    vec![None; d]
}

fn observed(x: &[f64]) -> Vec<Option<f64>> {
    x.iter().map(|&v| Some(v)).collect()
}

fn check_z(z: SignedLog) -> Result<SignedLog> {
    if z.is_zero() {
        return Err(Error::DegenerateModel("partition function is zero".into()));
    }
    if !z.log_mag.is_finite() || z.sign < 0.0 {
        return Err(Error::numeric(format!(
            "partition function is not a finite positive number (log {} sign {})",
            z.log_mag, z.sign
        )));
    }
    Ok(z)
}

/// `c(x)` for each row.
pub fn evaluate(c: &TensorizedCircuit, xs: &[Vec<f64>]) -> Result<SignedLogTensor> {
    let ev = Evaluator::plain(c);
    let v = par::try_map(xs.len(), |i| ev.value(&observed(&xs[i])).map_err(|e| e.at_row(i)))?;
    Ok(SignedLogTensor::from_values(v))
}

/// `c²(x)` (or `c(x)ᵀ H c(x)` with a head) for each row, computed on the
/// squared circuit.
pub fn evaluate_squared(c2: &SquaredCircuit, xs: &[Vec<f64>]) -> Result<SignedLogTensor> {
    let ev = c2.evaluator();
    let v = par::try_map(xs.len(), |i| ev.value(&observed(&xs[i])).map_err(|e| e.at_row(i)))?;
    Ok(SignedLogTensor::from_values(v))
}

/// `Z = ∫ c²`, by one pass with product-integral matrices at every input.
/// Always recomputes and counts one evaluation.
pub fn partition_function(c2: &SquaredCircuit) -> Result<SignedLog> {
    c2.partition.record();
    let z = c2.evaluator().value(&all_marginalized(c2.variable_count()))?;
    check_z(z)
}

/// A marginal query. Variables in neither set are integrated out as well.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Query {
    pub evidence: BTreeMap<usize, f64>,
    pub marginalized: BTreeSet<usize>,
    pub require_normalized: bool,
}

impl Query {
    pub fn new(evidence: impl IntoIterator<Item = (usize, f64)>) -> Self {
        Query {
            evidence: evidence.into_iter().collect(),
            ..Default::default()
        }
    }

    pub fn normalized(mut self) -> Self {
        self.require_normalized = true;
        self
    }

    fn point(&self, d: usize) -> Result<Vec<Option<f64>>> {
        if let Some(v) = self.evidence.keys().chain(&self.marginalized).find(|&&v| v >= d) {
            return Err(Error::InvalidArgument(format!("variable {v} out of range")));
        }
        if let Some(v) = self.marginalized.iter().find(|v| self.evidence.contains_key(v)) {
            return Err(Error::InvalidArgument(format!(
                "variable {v} is both observed and marginalized"
            )));
        }
        let mut p = vec![None; d];
        for (&v, &x) in &self.evidence {
            p[v] = Some(x);
        }
        Ok(p)
    }
}

/// `∫ c²(evidence, z) dz`, divided by `Z` when the query asks for it.
pub fn marginalize(c2: &SquaredCircuit, q: &Query) -> Result<SignedLog> {
    let point = q.point(c2.variable_count())?;
    let v = c2.evaluator().value(&point)?;
    if q.require_normalized {
        let z = partition_function(c2)?;
        Ok(v.mul(z.recip()?))
    } else {
        Ok(v)
    }
}

/// A density model: a circuit used as is (a monotonic PC) or squared.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Plain(TensorizedCircuit),
    Squared(SquaredCircuit),
}

/// Mean log-likelihood with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLikelihood {
    pub mean: f64,
    pub std_error: f64,
    pub rows: usize,
}

impl Model {
    pub fn circuit(&self) -> &TensorizedCircuit {
        match self {
            Model::Plain(c) => c,
            Model::Squared(c2) => c2.source(),
        }
    }

    pub fn circuit_mut(&mut self) -> &mut TensorizedCircuit {
        match self {
            Model::Plain(c) => c,
            Model::Squared(c2) => c2.source_mut(),
        }
    }

    pub fn variable_count(&self) -> usize {
        self.circuit().variable_count()
    }

    pub fn is_squared(&self) -> bool {
        matches!(self, Model::Squared(_))
    }

    fn cache(&self) -> &PartitionCache {
        match self {
            Model::Plain(c) => &c.partition,
            Model::Squared(c2) => &c2.partition,
        }
    }

    /// Partition-function evaluations performed so far.
    pub fn z_evaluations(&self) -> u64 {
        self.cache().count()
    }

    pub(crate) fn record_z(&self) {
        self.cache().record();
    }

    /// Evaluator for marginal queries (the model function itself).
    pub fn evaluator(&self) -> Evaluator<'_> {
        match self {
            Model::Plain(c) => Evaluator::plain(c),
            Model::Squared(c2) => c2.evaluator(),
        }
    }

    /// Evaluator and scale for fully observed rows: `log model(x)` equals
    /// `scale * log|value|`. Squared models without a head use the source
    /// circuit, since `log c² = 2 log|c|`.
    pub fn data_evaluator(&self) -> (Evaluator<'_>, f64) {
        match self {
            Model::Squared(c2) if c2.head().is_none() => (Evaluator::plain(c2.source()), 2.0),
            _ => (self.evaluator(), 1.0),
        }
    }

    /// `log Z`, cached per parameter version.
    pub fn log_partition(&self) -> Result<f64> {
        let version = self.circuit().params.version();
        if let Some(z) = self.cache().get(version) {
            return Ok(z.log_mag);
        }
        self.record_z();
        let z = check_z(self.evaluator().value(&all_marginalized(self.variable_count()))?)?;
        self.cache().store(version, z);
        Ok(z.log_mag)
    }

    /// Unnormalized `log model(x)` at a full assignment; `-inf` where the
    /// model vanishes.
    pub fn log_unnormalized(&self, x: &[f64]) -> Result<f64> {
        let (ev, scale) = self.data_evaluator();
        let v = ev.value(&observed(x))?;
        if v.sign < 0.0 && scale == 1.0 {
            return Err(Error::numeric("negative model value"));
        }
        Ok(scale * v.log_mag)
    }

    /// Normalized log-density at each row.
    pub fn log_density(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let log_z = self.log_partition()?;
        let (ev, scale) = self.data_evaluator();
        par::try_map(xs.len(), |i| {
            let v = ev.value(&observed(&xs[i])).map_err(|e| e.at_row(i))?;
            if v.sign < 0.0 && scale == 1.0 {
                return Err(Error::numeric("negative model value").at_row(i));
            }
            Ok(scale * v.log_mag - log_z)
        })
    }

    /// Normalized log-marginal of a partial assignment.
    pub fn log_marginal(&self, point: &[Option<f64>]) -> Result<f64> {
        let log_z = self.log_partition()?;
        Ok(self.evaluator().value(point)?.log_mag - log_z)
    }

    pub fn to_document(&self) -> ModelDocument {
        match self {
            Model::Plain(c) => ModelDocument::from_circuit(c),
            Model::Squared(c2) => c2.to_document(),
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        if doc.squared {
            Ok(Model::Squared(SquaredCircuit::from_document(doc)?))
        } else {
            Ok(Model::Plain(doc.to_circuit()?))
        }
    }

    pub fn is_monotonic(&self) -> Result<bool> {
        self.circuit().check_property(Property::Monotonic)
    }
}

/// Mean of `log p(x)` over rows with two-sided standard error. A row where
/// the model vanishes is a numeric error carrying the row index.
pub fn log_likelihood(model: &Model, xs: &[Vec<f64>]) -> Result<LogLikelihood> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument("log-likelihood of an empty split".into()));
    }
    let lls = model.log_density(xs)?;
    if let Some(i) = lls.iter().position(|v| !v.is_finite()) {
        return Err(Error::numeric("model vanishes at a data row").at_row(i));
    }
    let n = lls.len() as f64;
    let mean = lls.iter().sum::<f64>() / n;
    let var = if lls.len() > 1 {
        lls.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(LogLikelihood {
        mean,
        std_error: (var / n).sqrt(),
        rows: lls.len(),
    })
}

/// Log-density on a regular grid over a two-variable model, as rows
/// `(x1, x2, log p)`; `x1` varies slowest.
pub fn density_grid(model: &Model, axes: [&[f64]; 2]) -> Result<Vec<[f64; 3]>> {
    if model.variable_count() != 2 {
        return Err(Error::InvalidArgument("density grids need a two-variable model".into()));
    }
    let points: Vec<Vec<f64>> = axes[0]
        .iter()
        .flat_map(|&a| axes[1].iter().map(move |&b| vec![a, b]))
        .collect();
    let lp = model.log_density(&points)?;
    Ok(points.iter().zip(lp).map(|(p, l)| [p[0], p[1], l]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{CircuitBuilder, ProductKind, Reparam};
    use crate::input::InputFamily;
    use crate::region_graph::RegionGraph;
    use crate::squaring::{enumerate_assignments, square};
    use approx::assert_relative_eq;

    fn uniform_categorical(m: usize) -> SquaredCircuit {
        let mut b = CircuitBuilder::new(1);
        let i = b.input(0, InputFamily::Categorical { states: m }, 1, true).unwrap();
        let s = b.sum(i, 1, Reparam::Identity).unwrap();
        let mut c = b.finish(s, None).unwrap();
        let mut v = vec![0.0; m];
        v.push(1.0);
        c.params.set_values(&v).unwrap();
        square(c).unwrap()
    }

    #[test]
    fn uniform_categorical_values() {
        let c2 = uniform_categorical(4);
        let v = evaluate_squared(&c2, &[vec![2.0]]).unwrap();
        assert_relative_eq!(v.get(0).to_linear(), 1.0 / 16.0, epsilon = 1e-15);
        let z = partition_function(&c2).unwrap();
        assert_relative_eq!(z.to_linear(), 0.25, epsilon = 1e-15);
        assert_eq!(c2.z_evaluations(), 1);
    }

    #[test]
    fn identical_gaussians_cancel() {
        let mut b = CircuitBuilder::new(1);
        let i = b.input(0, InputFamily::Gaussian, 2, false).unwrap();
        let s = b.sum(i, 1, Reparam::Identity).unwrap();
        let mut c = b.finish(s, None).unwrap();
        c.params.set_values(&[0.0, 0.0, 0.0, 0.0, 1.0, -1.0]).unwrap();
        let c2 = square(c).unwrap();
        assert!(matches!(partition_function(&c2), Err(Error::DegenerateModel(_))));
    }

    fn random_discrete(d: usize, seed: u64) -> SquaredCircuit {
        let rg = RegionGraph::binary_tree(d, seed).unwrap();
        let fams = vec![InputFamily::Embedding { states: 2 }; d];
        let mut c = TensorizedCircuit::from_region_graph(&rg, 2, ProductKind::Hadamard, &fams, false).unwrap();
        for (i, v) in c.params.values_mut().iter_mut().enumerate() {
            *v = ((i as f64 + 0.5) * 2.1 + seed as f64).cos();
        }
        square(c).unwrap()
    }

    #[test]
    fn partition_matches_enumeration() {
        let c2 = random_discrete(10, 4);
        let z = partition_function(&c2).unwrap().to_linear();
        let xs = enumerate_assignments(&[2; 10]);
        let total: f64 = evaluate_squared(&c2, &xs).unwrap().to_linear().iter().sum();
        assert_relative_eq!(z, total, max_relative = 1e-10);
    }

    #[test]
    fn marginals_are_consistent() {
        let c2 = random_discrete(5, 2);
        let all = Query::default();
        assert_relative_eq!(
            marginalize(&c2, &all).unwrap().to_linear(),
            partition_function(&c2).unwrap().to_linear(),
            max_relative = 1e-12
        );
        let coarse = marginalize(&c2, &Query::new([(0, 1.0), (3, 0.0)])).unwrap().to_linear();
        let fine: f64 = (0..2)
            .map(|s| marginalize(&c2, &Query::new([(0, 1.0), (3, 0.0), (2, s as f64)])).unwrap().to_linear())
            .sum();
        assert_relative_eq!(coarse, fine, max_relative = 1e-10);
        let normalized = marginalize(&c2, &Query::new([(0, 1.0)]).normalized()).unwrap().to_linear();
        assert!(normalized > 0.0 && normalized < 1.0);
    }

    #[test]
    fn query_validation() {
        let c2 = random_discrete(3, 1);
        let mut q = Query::new([(0, 1.0)]);
        q.marginalized.insert(0);
        assert!(marginalize(&c2, &q).is_err());
    }

    #[test]
    fn uniform_grid_log_likelihood() {
        let mut b = CircuitBuilder::new(2);
        let a = b.input(0, InputFamily::Categorical { states: 32 }, 1, true).unwrap();
        let c = b.input(1, InputFamily::Categorical { states: 32 }, 1, true).unwrap();
        let h = b.product(ProductKind::Hadamard, vec![a, c]).unwrap();
        let s = b.sum(h, 1, Reparam::Exp).unwrap();
        let circuit = b.finish(s, None).unwrap();
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![(i % 32) as f64, (i * 7 % 32) as f64]).collect();
        let plain = Model::Plain(circuit.clone());
        let squared = Model::Squared(square(circuit).unwrap());
        for m in [plain, squared] {
            let ll = log_likelihood(&m, &rows).unwrap();
            assert_relative_eq!(ll.mean, -(1024f64).ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn z_is_cached_per_version() {
        let mut m = Model::Squared(random_discrete(4, 3));
        m.log_partition().unwrap();
        m.log_partition().unwrap();
        assert_eq!(m.z_evaluations(), 1);
        m.circuit_mut().params.values_mut()[0] += 0.1;
        m.log_partition().unwrap();
        assert_eq!(m.z_evaluations(), 2);
    }

    #[test]
    fn squared_density_where_source_is_negative() {
        // c(x) = -N(x; 0, 1), so c² is proportional to N(x; 0, 1/sqrt 2)
        let mut b = CircuitBuilder::new(1);
        let i = b.input(0, InputFamily::Gaussian, 1, false).unwrap();
        let s = b.sum(i, 1, Reparam::Identity).unwrap();
        let mut c = b.finish(s, None).unwrap();
        c.params.set_values(&[0.0, 0.0, -1.0]).unwrap();
        let m = Model::Squared(square(c).unwrap());
        let ll = m.log_density(&[vec![0.0]]).unwrap()[0];
        let sd = 0.5f64.sqrt();
        assert_relative_eq!(ll, -(sd * (2.0 * std::f64::consts::PI).sqrt()).ln(), max_relative = 1e-12);
        assert_relative_eq!(m.log_unnormalized(&[0.0]).unwrap() - m.log_partition().unwrap(), ll, max_relative = 1e-12);
    }
}
