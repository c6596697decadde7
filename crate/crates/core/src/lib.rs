pub mod basis;
pub mod cli;
pub mod error;
pub mod estimator;
pub mod ftn;
pub mod io;
pub mod models;
pub mod quadrature;
pub mod rankstudy;
pub mod sketch;
pub mod stats;
pub mod tensor;
pub mod topology;
pub mod wavelet;

pub use error::{FhtwError, Result};
