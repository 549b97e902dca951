//! Adaptive P1 finite elements for one quasi-static step of primal
//! elastoplasticity with linear kinematic and isotropic hardening, in 2D.
//!
//! The crate covers the whole Solve -> Estimate -> Mark -> Refine loop:
//!
//! * [`mesh`]: conforming triangulations under newest-vertex bisection,
//!   including closure, overlays of meshes with a common root, and the mesh
//!   text format;
//! * [`fem`]: the P1 x P0 discretization (energies, assembly, the stress
//!   error measure between states on related meshes);
//! * [`solver`]: alternating minimization with a closed-form return map,
//!   plus an independent dense proximal-descent oracle;
//! * [`estimator`]: residual error indicators and data oscillations;
//! * [`adaptivity`]: bulk (Dörfler) marking of minimal cardinality and the
//!   adaptive loop with its trace;
//! * [`diagnostics`]: empirical estimates of the stability, reduction,
//!   quasi-orthogonality and discrete-reliability constants, rate fits and
//!   the JSON report;
//! * [`config`] / [`report`] / [`runner`]: config files, CSV/SVG/JSON
//!   artifacts and the command-line pipeline.

pub mod adaptivity;
pub mod config;
pub mod diagnostics;
pub mod estimator;
pub mod expr;
pub mod fem;
pub mod mesh;
pub mod parallel;
pub mod report;
pub mod runner;
pub mod solver;
pub mod sparse;
pub mod tensor;
pub mod verify;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("meshes do not descend from the same root mesh")]
    IncompatibleRoots,

    #[error("linear solve failed after {iterations} iterations (residual {residual:.3e}): {detail}")]
    SolverFailure {
        residual: f64,
        iterations: usize,
        detail: String,
    },

    #[error("alternating minimization did not converge within {iterations} iterations")]
    NonConvergence {
        iterations: usize,
        /// Energy value after each outer iteration, for post-mortems.
        energy_trace: Vec<f64>,
    },

    #[error("problem has {dofs} dofs, above the dense oracle cap of {cap}")]
    OracleTooLarge { dofs: usize, cap: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("configuration invalid:\n{}", issues.join("\n"))]
    Config { issues: Vec<String> },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}
