//! Executable construction of a bi-sub-Lipschitz homeomorphism of the unit
//! cube that fixes the boundary and reverses orientation almost everywhere.

pub mod modulus;
pub mod sequences;
pub mod boxswap;
pub mod flipmap;
pub mod map;
pub mod ode;
pub mod qmc;
pub mod quad;
pub mod refine;
pub mod smooth;
