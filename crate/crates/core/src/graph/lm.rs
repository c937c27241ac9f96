use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use super::system::{NormalEquations, SparsityPattern};
use super::{retract_values, FactorGraph, GraphError, Values};

/// Levenberg–Marquardt settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub relative_cost_tolerance: f64,
    pub gradient_tolerance: f64,
    /// Damping above which the solve is abandoned.
    pub max_damping: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            initial_damping: 1e-4,
            damping_up: 10.0,
            damping_down: 10.0,
            relative_cost_tolerance: 1e-8,
            gradient_tolerance: 1e-10,
            max_damping: 1e16,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("initial_damping", self.initial_damping),
            ("damping_up", self.damping_up),
            ("damping_down", self.damping_down),
            ("relative_cost_tolerance", self.relative_cost_tolerance),
            ("gradient_tolerance", self.gradient_tolerance),
            ("max_damping", self.max_damping),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("optimizer.{name} must be positive and finite"));
            }
        }
        if self.max_iterations == 0 {
            return Err("optimizer.max_iterations must be positive".into());
        }
        if self.damping_up <= 1.0 || self.damping_down <= 1.0 {
            return Err("optimizer damping factors must exceed 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminationReason {
    RelativeCostTolerance,
    GradientTolerance,
    MaxIterations,
    /// No cost-reducing step found before damping hit its ceiling; the
    /// current estimate is a local minimum to numerical precision.
    DampingSaturated,
    /// The damped system could not be factorized at any damping level.
    SingularSystem,
}

impl TerminationReason {
    pub fn is_failure(self) -> bool {
        matches!(self, TerminationReason::SingularSystem)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerReport {
    /// Number of linearizations performed.
    pub iterations: usize,
    /// Cost before optimization followed by the cost after every accepted step.
    pub cost_trace: Vec<f64>,
    pub termination: TerminationReason,
    pub final_gradient_norm: f64,
    pub final_damping: f64,
}

impl OptimizerReport {
    pub fn initial_cost(&self) -> f64 {
        self.cost_trace[0]
    }

    pub fn final_cost(&self) -> f64 {
        *self.cost_trace.last().expect("non-empty trace")
    }
}

/// Smallest diagonal value used to scale damping, so that directions without
/// any curvature still get regularized.
const MIN_DIAGONAL: f64 = 1e-6;

struct DampedSolver {
    symbolic: SymbolicLlt<usize>,
    values: Vec<f64>,
}

impl DampedSolver {
    fn new(pattern: &SparsityPattern) -> Option<Self> {
        let sym = SymbolicSparseColMatRef::new_checked(
            pattern.dim(),
            pattern.dim(),
            pattern.col_ptr(),
            None,
            pattern.row_idx(),
        );
        let symbolic = SymbolicLlt::try_new(sym, Side::Upper).ok()?;
        Some(Self { symbolic, values: vec![0.0; pattern.nnz()] })
    }

    /// Solves `(H + λ·diag(max(H_ii, ε))) δ = −g`.
    fn solve(&mut self, system: &NormalEquations, damping: f64) -> Option<Vec<f64>> {
        let pattern = system.pattern();
        let n = pattern.dim();
        self.values.copy_from_slice(system.hessian_values());
        for col in 0..n {
            let p = pattern.diagonal_position(col);
            self.values[p] += damping * self.values[p].max(MIN_DIAGONAL);
        }
        let sym = SymbolicSparseColMatRef::new_checked(n, n, pattern.col_ptr(), None, pattern.row_idx());
        let mat = SparseColMatRef::new(sym, &self.values);
        let llt = Llt::try_new_with_symbolic(self.symbolic.clone(), mat, Side::Upper).ok()?;
        let mut rhs = Mat::from_fn(n, 1, |i, _| -system.gradient()[i]);
        llt.solve_in_place(rhs.as_mut());
        let delta: Vec<f64> = (0..n).map(|i| rhs[(i, 0)]).collect();
        delta.iter().all(|d| d.is_finite()).then_some(delta)
    }
}

fn inf_norm(v: &nalgebra::DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Minimizes `½ Σ ‖r‖²` over `graph` starting from `initial`.
///
/// Returns the best estimate found and a report. A singular system is
/// reported through [`TerminationReason::SingularSystem`] rather than as an
/// error; errors are reserved for malformed input.
pub fn optimize_lm(
    graph: &FactorGraph,
    initial: &Values,
    config: &OptimizerConfig,
) -> Result<(Values, OptimizerReport), GraphError> {
    graph.check_values(initial)?;
    let pattern = Arc::new(SparsityPattern::new(graph));
    let mut values = initial.clone();

    let Some(mut solver) = DampedSolver::new(&pattern) else {
        let (cost, _) = graph.cost_and_active(&values);
        let report = OptimizerReport {
            iterations: 0,
            cost_trace: vec![cost],
            termination: TerminationReason::SingularSystem,
            final_gradient_norm: f64::NAN,
            final_damping: config.initial_damping,
        };
        return Ok((values, report));
    };

    let mut damping = config.initial_damping;
    let mut system = NormalEquations::assemble(graph, &pattern, &values);
    let mut cost = system.cost();
    let mut active = system.active_factors();
    let mut trace = vec![cost];
    let mut iterations = 0;
    let mut termination = TerminationReason::MaxIterations;

    'outer: while iterations < config.max_iterations {
        if inf_norm(system.gradient()) < config.gradient_tolerance {
            termination = TerminationReason::GradientTolerance;
            break;
        }
        iterations += 1;

        let mut factorized_once = false;
        loop {
            if damping > config.max_damping {
                termination = if factorized_once {
                    TerminationReason::DampingSaturated
                } else {
                    TerminationReason::SingularSystem
                };
                break 'outer;
            }
            let Some(delta) = solver.solve(&system, damping) else {
                damping *= config.damping_up;
                continue;
            };
            factorized_once = true;

            let candidate = retract_values(&values, &pattern, &delta);
            let (new_cost, new_active) = graph.cost_and_active(&candidate);
            // A step that pushes factors out of their valid domain would look
            // cheaper only because those residuals vanish; treat it as rejected.
            if new_cost.is_finite() && new_cost <= cost && new_active >= active {
                let decrease = cost - new_cost;
                values = candidate;
                damping = (damping / config.damping_down).max(f64::MIN_POSITIVE);
                system = NormalEquations::assemble(graph, &pattern, &values);
                cost = system.cost();
                active = system.active_factors();
                trace.push(cost);
                if decrease <= config.relative_cost_tolerance * trace[trace.len() - 2] {
                    termination = TerminationReason::RelativeCostTolerance;
                    break 'outer;
                }
                break;
            }
            damping *= config.damping_up;
        }
    }

    let report = OptimizerReport {
        iterations,
        cost_trace: trace,
        termination,
        final_gradient_norm: inf_norm(system.gradient()),
        final_damping: damping,
    };
    Ok((values, report))
}
