//! State-space sequence machinery: discretisation, the linear recurrence,
//! scan orders over 2-D grids, and the fused selective 2-D scan.

pub mod direction;
pub mod scan;
pub mod selective;
pub mod zoh;

pub use direction::{direction_perm, invert_perm, DirectionSet, ScanDirection};
pub use scan::{scan_recurrence, scan_recurrence_backward, ScanGrads, scan_recurrence_fast, scan_states, SsmParams, SCAN_BLOCK};
pub use selective::{
    ssm_2d, ssm_2d_backward, ssm_2d_forward, ssm_2d_reference, MergeMode, ScanOptions, SelectiveGrads,
    SelectiveProjection, SelectiveSsm, SelectiveWeights,
};
pub use zoh::{discretize, discretize_backward, DiscretizeGrads, expm1_ratio, zoh_scalar, DiscreteSsm, ZohMode};
