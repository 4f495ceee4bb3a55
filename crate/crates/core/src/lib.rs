//! Locational marginal prices from an interior-point AC optimal power flow,
//! and Chebyshev graph convolutional networks that learn to predict them.

pub mod bench;
pub mod grid;
pub mod linalg;
pub mod models;
pub mod neural;
pub mod opf;
pub mod pipeline;
