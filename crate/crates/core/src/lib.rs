//! Adaptive trust-region and line-search methods for smooth nonconvex
//! problems whose gradient oracle may be arbitrarily corrupted and whose
//! function values carry heavy-tailed noise.

pub mod engine;
pub mod harness;
pub mod line_search;
pub mod oracles;
pub mod problems;
pub mod theory;
pub mod trust_region;
