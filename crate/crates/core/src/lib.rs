//! Numerical toolkit for the parametrically pumped Kerr resonator: Fock-space
//! operators, the Lindblad generator, full counting statistics, quantum
//! trajectories and Wigner functions.

pub mod error;
pub mod fcs;
pub mod fock;
pub mod model;
pub mod superop;
pub mod system;
pub mod trajectories;
pub mod wigner;

pub use num_complex::Complex64 as C64;

pub use error::{Error, Result};
pub use fcs::{CountingStatistics, MeasurementScheme};
pub use fock::{DensityMatrix, Operator, PureState, SparseOperator};
pub use model::{ModelParams, SemiclassicalFixedPoints, TunnellingScales};
pub use superop::{SuperOperatorMatrix, VectorizedState};
pub use system::{DimPolicy, PpkSystem};
pub use trajectories::{TrajectoryConfig, TrajectoryRecord};
pub use wigner::{GridSpec, WignerGrid};
