//! Hardware-independent models of tile-based GPU kernels.
//!
//! * [`machine`]: machine constants and the max-plus-overhead cost model.
//! * [`layouts`]: shared-memory layouts, swizzles and bank-conflict analysis.
//! * [`tiles`]: register/shared/global tiles and bulk tile operations.
//! * [`lcsf`]: the load-compute-store-finish pipeline: functional execution,
//!   trace validation, and a discrete-event timing model.
//! * [`grid`]: block orders, L2 traffic replay and persistent scheduling.
//! * [`kernels`]: GEMM, attention and rotary kernels with fp64 oracles.

pub mod grid;
pub mod kernels;
pub mod layouts;
pub mod lcsf;
pub mod machine;
pub mod tiles;
