//! Differentiable two-view geometry on synthetic scenes: rigid and rotational
//! flow, depth triangulated from dense correspondences, the
//! flow-divergence/depth-gradient identity, and the correspondence-guided
//! depth losses, with a field optimizer that recovers depth from them.

pub mod ad;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod grad;
pub mod grid;
pub mod io;
pub mod losses;
pub mod optim;
pub mod scene;
pub mod triangulate;

pub use error::{Error, FormatError, Result};
pub use geometry::{
    backproject, divergence, project, rigid_flow, rotational_flow, translational_flow, CameraIntrinsics, RigidMotion,
    TwistParams,
};
pub use grad::{finite_difference_check, loss_gradient, FdOptions, GradCheckReport, LossId, LossInputs, Targets};
pub use grid::{DepthMap, FlowField, Grid, Image, Mask, ScalarField};
pub use losses::{
    bsca_loss, cgdc_loss, depth_metrics, differential_fields, dpc_loss, edge_aware_smoothness, photometric_loss,
    DepthMetrics, DifferentialFields, LossValue,
};
pub use optim::{ablation_suite, co_adjust, recover_depth, DepthInit, LossWeights, OptimConfig, RunTrace, StepRule};
pub use scene::{synthesize, DepthFamily, DynamicObjectSpec, RegionShape, SceneBundle, SceneFile, SceneSpec, TextureSpec};
pub use triangulate::{triangulate_depth, Degeneracy, TriangulationResult};
