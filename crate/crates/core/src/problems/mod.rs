//! Concrete bilevel problems and dataset utilities.

pub mod data;
pub mod hypercleaning;
pub mod loss;
pub mod quadratic;
pub mod regpath;

pub use hypercleaning::{make_hypercleaning, DigitSource, HyperCleaning, HyperCleaningSpec};
pub use quadratic::{make_quadratic, Parts, QuadraticBilevel, QuadraticSpec};
pub use regpath::{make_regpath, Penalty, RegPathLogReg, RegPathSpec, TabularSource};
