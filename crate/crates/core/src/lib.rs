//! Flow integration with density tracking, the Ornstein–Uhlenbeck semigroup,
//! Gaussian divergence calculus and commutator estimates for vector fields
//! on R^N equipped with the standard Gaussian measure.

pub mod commutator;
pub mod continuity;
pub mod error;
pub mod field;
pub mod flow;
pub mod gaussian;
pub mod ou;
pub mod quad1d;
pub mod rotation;
pub mod seed;
pub mod stats;

pub use error::{FlowlabError, Result};
pub use field::{FieldDescriptor, FieldSpec, NamedField};
pub use gaussian::{QuadratureKind, QuadratureScheme};
pub use ou::OuOperator;
pub use rotation::RotationGroup;
