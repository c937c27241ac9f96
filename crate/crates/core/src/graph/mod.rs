//! Factor-graph container and batch Levenberg–Marquardt optimizer.
//!
//! Variables live on SE(3), S² or Euclidean spaces and are updated through
//! their retractions. Each factor supplies a whitened residual and one
//! Jacobian block per variable, in tangent coordinates; the optimizer
//! minimizes `½ Σ ‖r‖²` by solving damped normal equations with a sparse
//! Cholesky factorization.

mod lm;
mod system;
mod values;

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

pub use lm::{optimize_lm, OptimizerConfig, OptimizerReport, TerminationReason};
pub use system::{NormalEquations, SparsityPattern};
pub use values::{Key, Values, VarKind, Variable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("variable {0} already exists")]
    DuplicateKey(Key),
    #[error("factor references unknown variable {0}")]
    DanglingKey(Key),
    #[error("value for {0} does not match its variable kind")]
    TypeMismatch(Key),
    #[error("no initial value for variable {0}")]
    MissingValue(Key),
    #[error("factor has {keys} keys but {blocks} Jacobian blocks")]
    MalformedFactor { keys: usize, blocks: usize },
}

/// Whitened residual with one Jacobian block per factor key.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    pub residual: DVector<f64>,
    pub jacobians: Vec<DMatrix<f64>>,
}

/// A measurement or constraint on a fixed set of variables.
///
/// `linearize` returns `None` when the current assignment is outside the
/// factor's valid domain (e.g. a landmark behind the camera); such a factor
/// contributes nothing for that evaluation.
pub trait Factor: Send + Sync + fmt::Debug {
    fn keys(&self) -> &[Key];

    fn dim(&self) -> usize;

    fn linearize(&self, values: &Values) -> Option<Linearization>;

    fn residual(&self, values: &Values) -> Option<DVector<f64>> {
        self.linearize(values).map(|l| l.residual)
    }
}

/// Bipartite graph of variables and factors.
#[derive(Debug, Default)]
pub struct FactorGraph {
    variables: BTreeMap<Key, usize>,
    factors: Vec<Box<dyn Factor>>,
}

impl FactorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(&mut self, key: Key) -> Result<(), GraphError> {
        if self.variables.contains_key(&key) {
            return Err(GraphError::DuplicateKey(key));
        }
        self.variables.insert(key, key.dim());
        Ok(())
    }

    pub fn add_factor<F: Factor + 'static>(&mut self, factor: F) -> Result<(), GraphError> {
        self.add_boxed_factor(Box::new(factor))
    }

    pub fn add_boxed_factor(&mut self, factor: Box<dyn Factor>) -> Result<(), GraphError> {
        if let Some(k) = factor.keys().iter().find(|k| !self.variables.contains_key(k)) {
            return Err(GraphError::DanglingKey(*k));
        }
        self.factors.push(factor);
        Ok(())
    }

    pub fn contains(&self, key: &Key) -> bool {
        self.variables.contains_key(key)
    }

    pub fn variables(&self) -> impl Iterator<Item = Key> + '_ {
        self.variables.keys().copied()
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn factors(&self) -> &[Box<dyn Factor>] {
        &self.factors
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    /// Total tangent dimension.
    pub fn tangent_dim(&self) -> usize {
        self.variables.values().sum()
    }

    /// Total residual dimension over all factors.
    pub fn residual_dim(&self) -> usize {
        self.factors.iter().map(|f| f.dim()).sum()
    }

    /// Checks that `values` assigns every variable of the graph.
    pub fn check_values(&self, values: &Values) -> Result<(), GraphError> {
        for key in self.variables.keys() {
            if !values.contains(key) {
                return Err(GraphError::MissingValue(*key));
            }
        }
        Ok(())
    }

    /// `½ Σ ‖whitened residual‖²` over the factors that evaluate.
    pub fn total_cost(&self, values: &Values) -> f64 {
        self.cost_and_active(values).0
    }

    /// Cost together with the number of factors that evaluated.
    pub fn cost_and_active(&self, values: &Values) -> (f64, usize) {
        let residuals: Vec<Option<f64>> = self
            .factors
            .par_iter()
            .map(|f| f.residual(values).map(|r| r.norm_squared()))
            .collect();
        let mut sum = 0.0;
        let mut active = 0;
        for r in residuals.into_iter().flatten() {
            sum += r;
            active += 1;
        }
        (0.5 * sum, active)
    }

    /// Builds the Gauss–Newton normal equations at `values`.
    pub fn linearize(&self, values: &Values) -> NormalEquations {
        let pattern = SparsityPattern::new(self);
        NormalEquations::assemble(self, &std::sync::Arc::new(pattern), values)
    }

    pub(crate) fn linearize_all(&self, values: &Values) -> Vec<Option<Linearization>> {
        self.factors.par_iter().map(|f| f.linearize(values)).collect()
    }
}

/// Applies a stacked tangent increment (ordered as in `pattern`) to `values`.
pub fn retract_values(values: &Values, pattern: &SparsityPattern, delta: &[f64]) -> Values {
    let mut out = values.clone();
    for (key, offset) in pattern.key_offsets() {
        if let Some(v) = out.get_mut(key) {
            let dim = key.dim();
            *v = v.retract(&delta[*offset..*offset + dim]);
        }
    }
    out
}
