use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid sizing error: {0}")]
    Sizing(String),

    #[error("non-finite value {value} at node {node} (x = {coords:?})")]
    NonFinite {
        node: usize,
        coords: Vec<f64>,
        value: f64,
    },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("stencil is not monotone at node {node}: |a12| = {a12} exceeds min(a11, a22) = {min_diag}")]
    NonMonotone { node: usize, a12: f64, min_diag: f64 },

    #[error("coefficient eigenvalue {value} at node {node} lies outside [{lambda}, {big_lambda}]")]
    EigenvalueBounds {
        node: usize,
        value: f64,
        lambda: f64,
        big_lambda: f64,
    },

    #[error("family is not elliptic: sampled ratio {ratio} outside [{lo}, {hi}]")]
    NonElliptic { ratio: f64, lo: f64, hi: f64 },

    #[error("linear solve did not reach the residual target; relative residual trace {trace:?}")]
    LinearSolve { trace: Vec<f64> },

    #[error("{what} did not converge after {iterations} iterations; residual history tail {history:?}")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        history: Vec<f64>,
    },

    #[error("continuation stage {stage} (eps = {eps}) failed: {source}")]
    Stage {
        stage: usize,
        eps: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("time step {step} (eps = {eps}) failed: {source}")]
    Step {
        step: usize,
        eps: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("obstacle is positive on the (parabolic) boundary at node {node}: psi = {value}")]
    ObstacleOnBoundary { node: usize, value: f64 },

    #[error("no active set satisfies the complementarity conditions")]
    NoLcpSolution,

    #[error("unknown instance `{0}`")]
    UnknownInstance(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Trims a residual history so error messages stay readable.
    pub(crate) fn not_converged(what: &'static str, history: &[f64]) -> Self {
        let tail = history.len().saturating_sub(8);
        Error::NotConverged {
            what,
            iterations: history.len(),
            history: history[tail..].to_vec(),
        }
    }
}
