//! Dense matrix kernels, rank notions, subspace angles and seeded sampling.

mod decomp;
mod matrix;
pub mod random;
mod stats;

pub use decomp::{
    affine_rank, antisymmetric_part, column_space_basis, numerical_rank, principal_angles,
    projection_residual, row_space_basis, singular_values, svd, symmetric_part, SvdResult,
    DEFAULT_REL_TOL,
};
pub use matrix::Matrix;
pub use random::{random_gaussian, random_invertible_with_condition, rng_stream, LabRng};
pub use stats::{mean, pearson, std_dev};
