mod conv;
pub(crate) mod elementwise;
mod linalg;
mod nn;
pub use nn::L2_NORM_FLOOR;
mod pool;
mod reduce;
pub(crate) mod resize;
mod shape;
