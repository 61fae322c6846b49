//! Dense `f64` arrays with define-by-run reverse-mode differentiation.
//!
//! ```
//! use ndgrad::{Array, Tape};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Array::from_vec(vec![1.0, 2.0]));
//! let y = x.mul(x).unwrap().sum().unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[2.0, 4.0]);
//! ```

mod array;
mod conv;
mod error;
mod gradcheck;
mod ops;
mod tape;

pub use array::{broadcast_shape, Array};
pub use error::{NdError, Result};
pub use gradcheck::{grad_check, grad_check_coords, DEFAULT_STEP};
pub use ops::concat;
pub use tape::{Gradients, Tape, Var};
