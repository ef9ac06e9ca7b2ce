//! Metrics, the inversion harness, image dumps and the gradient checker.

mod gradcheck;
mod image;
mod invert;
mod metrics;

pub use self::image::{dump_png, quantize, tile_rows};
pub use gradcheck::{check_gradients, gradcheck, rel_err, CoordinateError, GradcheckOptions, GradcheckReport, TensorCheck};
pub use invert::{invert_from_layer, write_inversion, InversionReport};
pub use metrics::{evaluate, reconstruction_l2, top_k_accuracy, EvalReport};
