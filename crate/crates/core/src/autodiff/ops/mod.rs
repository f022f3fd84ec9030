pub mod batch_norm;
pub mod conv;
pub mod elementwise;
pub mod linear;
pub mod pool;
pub mod shape;
