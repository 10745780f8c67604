//! Tape-based reverse-mode differentiation for dense `f32`/`f64` tensors.
//!
//! ```
//! use autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::vector(&[1.0, -2.0, 3.0]).with_grad());
//! let y = tape.mul(x, x).unwrap();
//! let loss = tape.sum(y).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).unwrap(), &[2.0, -4.0, 6.0]);
//! ```

mod error;
pub mod gradcheck;
mod ops;
mod params;
pub mod rng;
mod scalar;
pub mod suite;
mod tape;
mod tensor;

pub use error::{AdError, Result};
pub use gradcheck::{grad_check, GradCheckReport, ParamCheck};
pub use params::{ParamStore, Parameter};
pub use rng::Rng;
pub use scalar::{gemm, DType, Real};
pub use suite::{primitive_names, primitive_suite};
pub use tape::{Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;
