//! Semantic 3D Gaussian splatting trained from sparse views.

pub mod ablation;
pub mod buffer;
pub mod correspondence;
pub mod error;
pub mod fixtures;
pub mod geom;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod query;
pub mod raster;
pub mod sgi;
pub mod scenegen;
pub mod sh;
pub mod trainer;

pub use buffer::ImageBuf;
pub use error::{Error, FormatError, FormatErrorKind, Result};
pub use geom::{Camera, Gaussian, GaussianSet};
pub use raster::{render, render_backward, render_reference, RenderGrads, RenderOutput};
