//! Closed-form two-view depth from a dense correspondence field and a known
//! relative pose.
//!
//! For a target pixel with normalized coordinates `p̂_t` and its correspondence
//! `p̂_s`, each image axis `i ∈ {1, 2}` gives
//! `D·(p̂_s,i·r₃ᵀp̂_t − r_iᵀp̂_t) = t_i − p̂_s,i·t₃`; both axes are pooled into a
//! single ratio (sum of numerators over sum of denominators).

use crate::ad::Real;
use crate::geometry::{dot, CameraIntrinsics, Pose, RigidMotion, Vec3};
use crate::grid::{DepthMap, FlowField, Grid, Mask};

/// Pooled denominators below this magnitude are treated as parallax-free.
pub const EPS_DENOMINATOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Degeneracy {
    Ok,
    NearZeroDenominator,
    NegativeDepth,
    MaskedFlow,
}

impl Degeneracy {
    pub fn as_str(self) -> &'static str {
        match self {
            Degeneracy::Ok => "ok",
            Degeneracy::NearZeroDenominator => "near-zero-denominator",
            Degeneracy::NegativeDepth => "negative-depth",
            Degeneracy::MaskedFlow => "masked-flow",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TriangulationResult {
    /// Triangulated depth; masked pixels hold 0.
    pub depth: DepthMap,
    pub codes: Grid<Degeneracy>,
}

impl TriangulationResult {
    pub fn validity(&self) -> &Mask {
        self.depth.mask()
    }

    pub fn count(&self, code: Degeneracy) -> usize {
        self.codes.as_slice().iter().filter(|&&c| c == code).count()
    }
}

/// `(K⁻¹p̃, K⁻¹(p̃ + [flow; 0]))`.
pub fn normalized_correspondences(k: &CameraIntrinsics, p: [f64; 2], flow: [f64; 2]) -> (Vec3<f64>, Vec3<f64>) {
    (k.normalize(p), k.normalize([p[0] + flow[0], p[1] + flow[1]]))
}

pub fn triangulate_depth(k: &CameraIntrinsics, motion: &RigidMotion, flow: &FlowField) -> TriangulationResult {
    let (values, codes) = triangulate_kernel(k, &motion.pose::<f64>(), flow, EPS_DENOMINATOR);
    let mask = codes.map(|&c| c == Degeneracy::Ok);
    TriangulationResult { depth: DepthMap::from_parts(values, mask), codes }
}

/// Same as [`triangulate_depth`] with an explicit denominator threshold.
pub fn triangulate_depth_with(
    k: &CameraIntrinsics,
    motion: &RigidMotion,
    flow: &FlowField,
    eps_denominator: f64,
) -> TriangulationResult {
    let (values, codes) = triangulate_kernel(k, &motion.pose::<f64>(), flow, eps_denominator);
    let mask = codes.map(|&c| c == Degeneracy::Ok);
    TriangulationResult { depth: DepthMap::from_parts(values, mask), codes }
}

pub(crate) fn triangulate_kernel<T: Real>(
    k: &CameraIntrinsics,
    pose: &Pose<T>,
    flow: &FlowField<T>,
    eps_denominator: f64,
) -> (Grid<T>, Grid<Degeneracy>) {
    let (w, h) = (flow.width(), flow.height());
    let t = &pose.translation;
    let r = &pose.rotation;
    let mut codes = Grid::filled(w, h, Degeneracy::Ok);
    let depth = Grid::from_fn(w, h, |u, v| {
        let f = flow.vectors().get(u, v);
        if !flow.mask().get(u, v) {
            *codes.get_mut(u, v) = Degeneracy::MaskedFlow;
            return T::zero();
        }
        let (uf, vf) = (T::constant(u as f64), T::constant(v as f64));
        let pt = k.normalize([uf, vf]);
        let ps = k.normalize([f[0] + u as f64, f[1] + v as f64]);
        let r3_pt = dot(&r[2], &pt);
        let num = (t[0] - ps[0] * t[2]) + (t[1] - ps[1] * t[2]);
        let den = (ps[0] * r3_pt - dot(&r[0], &pt)) + (ps[1] * r3_pt - dot(&r[1], &pt));
        if !(den.value().abs() >= eps_denominator) {
            *codes.get_mut(u, v) = Degeneracy::NearZeroDenominator;
            return T::zero();
        }
        let d = num / den;
        if !(d.value() > 0.0 && d.value().is_finite()) {
            *codes.get_mut(u, v) = Degeneracy::NegativeDepth;
            return T::zero();
        }
        d
    });
    (depth, codes)
}
