//! Pinhole camera, rigid motion and the flow-field primitives built on them.
//!
//! Motion convention: a target-frame point `X` maps to `R·X + t` in the source
//! frame, and the rigid flow of pixel `p` is `project(R·X + t) − p` with
//! `X = D(p)·K⁻¹p̃`.
//!
//! Differential operators use the unnormalized central stencil
//! `f(u+1) − f(u−1)` (twice the analytic derivative) in the interior and
//! one-sided differences scaled by 2 on the border.

use crate::ad::Real;
use crate::error::{Error, Result};
use crate::grid::{check_shape, DepthMap, FlowField, Grid, Image, Mask, ScalarField};

/// Transformed points with `z` at or below this are treated as behind the camera.
pub const MIN_Z: f64 = 1e-9;

pub type Vec3<T> = [T; 3];
pub type Mat3<T> = [[T; 3]; 3];

#[inline]
pub(crate) fn mat_vec<T: Real>(m: &Mat3<T>, x: &Vec3<T>) -> Vec3<T> {
    [
        m[0][0] * x[0] + m[0][1] * x[1] + m[0][2] * x[2],
        m[1][0] * x[0] + m[1][1] * x[1] + m[1][2] * x[2],
        m[2][0] * x[0] + m[2][1] * x[1] + m[2][2] * x[2],
    ]
}

#[inline]
pub(crate) fn dot<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn mat_mul(a: &Mat3<f64>, b: &Mat3<f64>) -> Mat3<f64> {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn transpose(a: &Mat3<f64>) -> Mat3<f64> {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

fn det(a: &Mat3<f64>) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Pinhole intrinsics without skew.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidIntrinsics(format!("focal lengths must be > 0, got ({fx}, {fy})")));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidIntrinsics(format!("principal point ({cx}, {cy}) not finite")));
        }
        Ok(CameraIntrinsics { fx, fy, cx, cy })
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }
    pub fn fy(&self) -> f64 {
        self.fy
    }
    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn matrix(&self) -> Mat3<f64> {
        [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
    }

    /// `(fx·X/Z + cx, fy·Y/Z + cy)`.
    pub fn project(&self, x: Vec3<f64>) -> Result<[f64; 2]> {
        if !(x[2] > 0.0) {
            return Err(Error::BehindCamera { z: x[2] });
        }
        Ok(self.project_unchecked(&x))
    }

    /// `d·K⁻¹·[u, v, 1]ᵀ`.
    pub fn backproject(&self, p: [f64; 2], depth: f64) -> Result<Vec3<f64>> {
        if !(depth > 0.0 && depth.is_finite()) {
            return Err(Error::InvalidDepth { depth });
        }
        let n = self.normalize(p);
        Ok([n[0] * depth, n[1] * depth, depth])
    }

    /// `K⁻¹·[u, v, 1]ᵀ`; the third component is 1.
    #[inline]
    pub fn normalize<T: Real>(&self, p: [T; 2]) -> Vec3<T> {
        [(p[0] - self.cx) / self.fx, (p[1] - self.cy) / self.fy, T::constant(1.0)]
    }

    #[inline]
    pub(crate) fn project_unchecked<T: Real>(&self, x: &Vec3<T>) -> [T; 2] {
        [x[0] / x[2] * self.fx + self.cx, x[1] / x[2] * self.fy + self.cy]
    }
}

/// Axis-angle rotation (exponential map) followed by a plain translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwistParams(pub [f64; 6]);

impl TwistParams {
    pub fn new(rotation: Vec3<f64>, translation: Vec3<f64>) -> Self {
        TwistParams([rotation[0], rotation[1], rotation[2], translation[0], translation[1], translation[2]])
    }

    pub fn rotation(&self) -> Vec3<f64> {
        [self.0[0], self.0[1], self.0[2]]
    }

    pub fn translation(&self) -> Vec3<f64> {
        [self.0[3], self.0[4], self.0[5]]
    }

    pub fn to_motion(&self) -> RigidMotion {
        RigidMotion { rotation: exp_so3(&self.rotation()), translation: self.translation() }
    }
}

/// Rodrigues' formula, generic so rotations can be differentiated.
pub fn exp_so3<T: Real>(w: &Vec3<T>) -> Mat3<T> {
    let theta2 = dot(w, w);
    let (a, b) = if theta2.value() < 1e-8 {
        // Taylor expansions of sin θ/θ and (1 − cos θ)/θ² in θ²
        let t4 = theta2 * theta2;
        (
            T::constant(1.0) - theta2 / 6.0 + t4 / 120.0,
            T::constant(0.5) - theta2 / 24.0 + t4 / 720.0,
        )
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (T::constant(1.0) - theta.cos()) / theta2)
    };
    let one = T::constant(1.0);
    let zero = T::zero();
    let k = [[zero, -w[2], w[1]], [w[2], zero, -w[0]], [-w[1], w[0], zero]];
    let mut r = [[zero; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut k2 = zero;
            for m in 0..3 {
                k2 += k[i][m] * k[m][j];
            }
            let id = if i == j { one } else { zero };
            r[i][j] = id + a * k[i][j] + b * k2;
        }
    }
    r
}

/// Inverse of [`exp_so3`] for rotation angles in `[0, π]`.
pub fn log_so3(r: &Mat3<f64>) -> Vec3<f64> {
    let vee = [r[2][1] - r[1][2], r[0][2] - r[2][0], r[1][0] - r[0][1]];
    let s = 0.5 * (vee[0] * vee[0] + vee[1] * vee[1] + vee[2] * vee[2]).sqrt();
    let c = (0.5 * (r[0][0] + r[1][1] + r[2][2] - 1.0)).clamp(-1.0, 1.0);
    let theta = s.atan2(c);
    if c >= 0.0 {
        let scale = if theta < 1e-6 { 0.5 * (1.0 + theta * theta / 6.0) } else { 0.5 * theta / s };
        return [vee[0] * scale, vee[1] * scale, vee[2] * scale];
    }
    // Wide angles: recover the axis from the symmetric part, n·nᵀ = (sym(R) − c·I)/(1 − c).
    let mut outer = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let sym = 0.5 * (r[i][j] + r[j][i]) - if i == j { c } else { 0.0 };
            outer[i][j] = sym / (1.0 - c);
        }
    }
    let k = (0..3).max_by(|&a, &b| outer[a][a].total_cmp(&outer[b][b])).unwrap();
    let norm = outer[k][k].sqrt();
    let mut axis = [outer[0][k] / norm, outer[1][k] / norm, outer[2][k] / norm];
    if axis[0] * vee[0] + axis[1] * vee[1] + axis[2] * vee[2] < 0.0 {
        axis = [-axis[0], -axis[1], -axis[2]];
    }
    [axis[0] * theta, axis[1] * theta, axis[2] * theta]
}

/// Rotation and translation taking target-frame points into the source frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidMotion {
    rotation: Mat3<f64>,
    translation: Vec3<f64>,
}

impl RigidMotion {
    pub const ORTHONORMAL_TOL: f64 = 1e-12;

    pub fn new(rotation: Mat3<f64>, translation: Vec3<f64>) -> Result<Self> {
        let rrt = mat_mul(&rotation, &transpose(&rotation));
        for (i, row) in rrt.iter().enumerate() {
            for (j, x) in row.iter().enumerate() {
                let id = if i == j { 1.0 } else { 0.0 };
                if !((x - id).abs() <= Self::ORTHONORMAL_TOL) {
                    return Err(Error::InvalidMotion(format!("R·Rᵀ deviates from identity at ({i},{j}): {x}")));
                }
            }
        }
        let d = det(&rotation);
        if !((d - 1.0).abs() <= Self::ORTHONORMAL_TOL) {
            return Err(Error::InvalidMotion(format!("det R = {d}")));
        }
        if !translation.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidMotion("translation not finite".into()));
        }
        Ok(RigidMotion { rotation, translation })
    }

    pub fn identity() -> Self {
        RigidMotion { rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], translation: [0.0; 3] }
    }

    pub fn from_translation(translation: Vec3<f64>) -> Self {
        RigidMotion { translation, ..Self::identity() }
    }

    pub fn from_axis_angle(axis_angle: Vec3<f64>, translation: Vec3<f64>) -> Self {
        TwistParams::new(axis_angle, translation).to_motion()
    }

    pub fn rotation(&self) -> &Mat3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> Vec3<f64> {
        self.translation
    }

    pub fn with_translation(&self, translation: Vec3<f64>) -> Self {
        RigidMotion { rotation: self.rotation, translation }
    }

    pub fn to_twist(&self) -> TwistParams {
        TwistParams::new(log_so3(&self.rotation), self.translation)
    }

    pub fn pose<T: Real>(&self) -> Pose<T> {
        Pose {
            rotation: self.rotation.map(|row| row.map(T::constant)),
            translation: self.translation.map(T::constant),
        }
    }
}

/// Generic pose used inside differentiable kernels.
#[derive(Debug, Clone, Copy)]
pub struct Pose<T> {
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> Pose<T> {
    pub fn from_twist(twist: &[T; 6]) -> Self {
        Pose { rotation: exp_so3(&[twist[0], twist[1], twist[2]]), translation: [twist[3], twist[4], twist[5]] }
    }
}

pub fn project(k: &CameraIntrinsics, x: Vec3<f64>) -> Result<[f64; 2]> {
    k.project(x)
}

pub fn backproject(k: &CameraIntrinsics, p: [f64; 2], depth: f64) -> Result<Vec3<f64>> {
    k.backproject(p, depth)
}

/// Rigid flow of every pixel; pixels whose transformed point is not in front
/// of the camera (or whose depth is masked) are masked.
pub fn rigid_flow(k: &CameraIntrinsics, motion: &RigidMotion, depth: &DepthMap) -> FlowField {
    rigid_flow_kernel(k, &motion.pose::<f64>(), depth.values(), depth.mask())
}

pub(crate) fn rigid_flow_kernel<T: Real>(
    k: &CameraIntrinsics,
    pose: &Pose<T>,
    depth: &Grid<T>,
    depth_mask: &Mask,
) -> FlowField<T> {
    let (w, h) = (depth.width(), depth.height());
    let mut mask = Mask::all(w, h);
    let vectors = Grid::from_fn(w, h, |u, v| {
        let i = depth.index(u, v);
        let d = depth.as_slice()[i];
        if !depth_mask.as_slice()[i] {
            mask.as_mut_slice()[i] = false;
            return [T::zero(), T::zero()];
        }
        let n = k.normalize([T::constant(u as f64), T::constant(v as f64)]);
        let x = [n[0] * d, n[1] * d, d];
        let rx = mat_vec(&pose.rotation, &x);
        let y = [rx[0] + pose.translation[0], rx[1] + pose.translation[1], rx[2] + pose.translation[2]];
        if !(y[2].value() > MIN_Z) {
            mask.as_mut_slice()[i] = false;
            return [T::zero(), T::zero()];
        }
        [(y[0] / y[2] - x[0] / x[2]) * k.fx, (y[1] / y[2] - x[1] / x[2]) * k.fy]
    });
    FlowField::from_parts(vectors, mask)
}

/// Flow induced by the rotation alone; independent of depth.
pub fn rotational_flow(k: &CameraIntrinsics, rotation: &Mat3<f64>, width: usize, height: usize) -> FlowField {
    let r = rotation.map(|row| row.map(f64::constant));
    rotational_flow_kernel(k, &r, width, height)
}

pub(crate) fn rotational_flow_kernel<T: Real>(
    k: &CameraIntrinsics,
    rotation: &Mat3<T>,
    width: usize,
    height: usize,
) -> FlowField<T> {
    let mut mask = Mask::all(width, height);
    let vectors = Grid::from_fn(width, height, |u, v| {
        let n = k.normalize([T::constant(u as f64), T::constant(v as f64)]);
        let y = mat_vec(rotation, &n);
        if !(y[2].value() > MIN_Z) {
            *mask.get_mut(u, v) = false;
            return [T::zero(), T::zero()];
        }
        [(y[0] / y[2] - n[0]) * k.fx, (y[1] / y[2] - n[1]) * k.fy]
    });
    FlowField::from_parts(vectors, mask)
}

/// `F_O − F_Rot` with the intersection of both masks.
pub fn translational_flow(optical: &FlowField, rotational: &FlowField) -> Result<FlowField> {
    translational_flow_kernel(optical, rotational)
}

pub(crate) fn translational_flow_kernel<T: Real>(
    optical: &FlowField<T>,
    rotational: &FlowField<T>,
) -> Result<FlowField<T>> {
    check_shape(optical.vectors(), rotational.vectors(), "translational flow")?;
    let data = optical
        .vectors()
        .as_slice()
        .iter()
        .zip(rotational.vectors().as_slice())
        .map(|(o, r)| [o[0] - r[0], o[1] - r[1]])
        .collect();
    let vectors = Grid::from_vec(optical.width(), optical.height(), data)?;
    Ok(FlowField::from_parts(vectors, optical.mask().and(rotational.mask())))
}

/// Unnormalized difference along one axis at `(u, v)`, plus whether all
/// sampled pixels are valid.
#[inline]
fn stencil<T: Real>(
    len: usize,
    at: usize,
    sample: impl Fn(usize) -> (T, bool),
) -> (T, bool) {
    if at == 0 {
        let (a, va) = sample(0);
        let (b, vb) = sample(1);
        ((b - a) * 2.0, va && vb)
    } else if at + 1 == len {
        let (a, va) = sample(len - 2);
        let (b, vb) = sample(len - 1);
        ((b - a) * 2.0, va && vb)
    } else {
        let (a, va) = sample(at - 1);
        let (b, vb) = sample(at + 1);
        (b - a, va && vb)
    }
}

fn require_stencil_size(width: usize, height: usize) -> Result<()> {
    if width < 3 || height < 3 {
        return Err(Error::Dimension(format!("stencil needs at least 3x3, got {width}x{height}")));
    }
    Ok(())
}

/// `F_u(u+1,v) − F_u(u−1,v) + F_v(u,v+1) − F_v(u,v−1)` (twice the analytic divergence).
pub fn divergence(flow: &FlowField) -> Result<ScalarField> {
    divergence_kernel(flow)
}

pub(crate) fn divergence_kernel<T: Real>(flow: &FlowField<T>) -> Result<ScalarField<T>> {
    let (w, h) = (flow.width(), flow.height());
    require_stencil_size(w, h)?;
    let f = flow.vectors();
    let m = flow.mask();
    let mut mask = Mask::all(w, h);
    let values = Grid::from_fn(w, h, |u, v| {
        let (du, vu) = stencil(w, u, |x| (f.get(x, v)[0], *m.get(x, v)));
        let (dv, vv) = stencil(h, v, |y| (f.get(u, y)[1], *m.get(u, y)));
        *mask.get_mut(u, v) = vu && vv;
        du + dv
    });
    ScalarField::new(values, mask)
}

/// Unnormalized central-difference gradient `(∂u, ∂v)` with the same stencil
/// as [`divergence`].
pub fn central_gradient(values: &Grid<f64>) -> Result<Grid<[f64; 2]>> {
    central_gradient_kernel(values)
}

pub(crate) fn central_gradient_kernel<T: Real>(values: &Grid<T>) -> Result<Grid<[T; 2]>> {
    let (w, h) = (values.width(), values.height());
    require_stencil_size(w, h)?;
    Ok(Grid::from_fn(w, h, |u, v| {
        let (du, _) = stencil(w, u, |x| (*values.get(x, v), true));
        let (dv, _) = stencil(h, v, |y| (*values.get(u, y), true));
        [du, dv]
    }))
}

/// Output of [`warp`].
#[derive(Debug, Clone)]
pub struct Warped<T = f64> {
    pub image: Image<T>,
    pub mask: Mask,
}

/// Bilinearly samples `source` at `p + F(p)`; samples outside the image
/// rectangle (or at masked flow) are zero and masked.
pub fn warp(source: &Image, flow: &FlowField) -> Result<Warped> {
    warp_kernel(source, flow)
}

pub(crate) fn warp_kernel<T: Real>(source: &Image, flow: &FlowField<T>) -> Result<Warped<T>> {
    let (w, h, ch) = (source.width(), source.height(), source.channels());
    if flow.width() != w || flow.height() != h {
        return Err(Error::Dimension(format!(
            "warp: image {w}x{h} vs flow {}x{}",
            flow.width(),
            flow.height()
        )));
    }
    let mut mask = Mask::all(w, h);
    let mut data = Vec::with_capacity(w * h * ch);
    for v in 0..h {
        for u in 0..w {
            let f = flow.vectors().get(u, v);
            let x = f[0] + u as f64;
            let y = f[1] + v as f64;
            let (xv, yv) = (x.value(), y.value());
            let inside = *flow.mask().get(u, v)
                && xv >= 0.0
                && yv >= 0.0
                && xv <= (w - 1) as f64
                && yv <= (h - 1) as f64;
            if !inside {
                *mask.get_mut(u, v) = false;
                data.extend(std::iter::repeat_n(T::zero(), ch));
                continue;
            }
            let x0 = (xv.floor() as usize).min(w.saturating_sub(2));
            let y0 = (yv.floor() as usize).min(h.saturating_sub(2));
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            // fractional offsets from the flow itself, not from the rounded position
            let ax = f[0] - (x0 as f64 - u as f64);
            let ay = f[1] - (y0 as f64 - v as f64);
            let bx = T::constant(1.0) - ax;
            let by = T::constant(1.0) - ay;
            for c in 0..ch {
                let s = by * (bx * source.at(x0, y0, c) + ax * source.at(x1, y0, c))
                    + ay * (bx * source.at(x0, y1, c) + ax * source.at(x1, y1, c));
                data.push(s);
            }
        }
    }
    Ok(Warped { image: Image::from_raw(w, h, ch, data)?, mask })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 64.0, 48.0).unwrap()
    }

    // Projection written out component by component, independent of the kernel path.
    fn project_oracle(fx: f64, fy: f64, cx: f64, cy: f64, x: f64, y: f64, z: f64) -> (f64, f64) {
        (fx * (x / z) + cx, fy * (y / z) + cy)
    }

    #[test]
    fn project_examples() {
        let p = k().project([1.0, 0.0, 5.0]).unwrap();
        let (eu, ev) = project_oracle(100.0, 100.0, 64.0, 48.0, 1.0, 0.0, 5.0);
        assert_eq!(p, [eu, ev]);
        assert_eq!(p, [84.0, 48.0]);
        for d in [0.1, 1.0, 7.5, 1e4] {
            assert_eq!(k().project([0.0, 0.0, d]).unwrap(), [64.0, 48.0]);
        }
        assert!(matches!(k().project([1.0, 0.0, -2.0]), Err(Error::BehindCamera { .. })));
        assert!(matches!(k().project([1.0, 0.0, 0.0]), Err(Error::BehindCamera { .. })));
    }

    #[test]
    fn backproject_examples() {
        assert_eq!(k().backproject([64.0, 48.0], 5.0).unwrap(), [0.0, 0.0, 5.0]);
        assert_eq!(k().backproject([84.0, 48.0], 5.0).unwrap(), [1.0, 0.0, 5.0]);
        assert!(matches!(k().backproject([1.0, 1.0], 0.0), Err(Error::InvalidDepth { .. })));
        assert!(matches!(k().backproject([1.0, 1.0], -3.0), Err(Error::InvalidDepth { .. })));
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, -1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, f64::NAN, 0.0).is_err());
    }

    #[test]
    fn rigid_flow_examples() {
        let depth = DepthMap::constant(128, 96, 5.0).unwrap();
        let f = rigid_flow(&k(), &RigidMotion::from_translation([1.0, 0.0, 0.0]), &depth);
        assert_eq!(*f.vectors().get(64, 48), [20.0, 0.0]);
        assert!(f.mask().get(64, 48));

        let zero = rigid_flow(&k(), &RigidMotion::identity(), &depth);
        assert!(zero.vectors().as_slice().iter().all(|v| v[0] == 0.0 && v[1] == 0.0));
        assert_eq!(zero.mask().count(), 128 * 96);

        let ahead = rigid_flow(&k(), &RigidMotion::from_translation([0.0, 0.0, 6.0]), &depth);
        assert_eq!(ahead.mask().count(), 128 * 96);
        let behind = rigid_flow(&k(), &RigidMotion::from_translation([0.0, 0.0, -6.0]), &depth);
        assert_eq!(behind.mask().count(), 0);
    }

    #[test]
    fn rotational_flow_yaw_at_principal_point() {
        // rotation about the camera y axis by θ sends the optical axis to (sin θ, 0, cos θ)
        let theta = 0.01f64;
        let r = exp_so3(&[0.0, theta, 0.0]);
        let f = rotational_flow(&k(), &r, 128, 96);
        let got = f.vectors().get(64, 48);
        assert!((got[0] - 100.0 * theta.tan()).abs() < 1e-12);
        assert!((got[0] - 1.000_033_3).abs() < 1e-7);
        assert!(got[1].abs() < 1e-12);
        let id = rotational_flow(&k(), &RigidMotion::identity().rotation().clone(), 8, 8);
        assert!(id.vectors().as_slice().iter().all(|v| v[0] == 0.0 && v[1] == 0.0));
    }

    #[test]
    fn rotational_flow_matches_rigid_flow_without_translation() {
        let motion = RigidMotion::from_axis_angle([0.02, -0.03, 0.01], [0.0; 3]);
        let d1 = DepthMap::new(Grid::from_fn(20, 15, |u, v| 1.0 + 0.1 * u as f64 + 0.05 * (v * v) as f64)).unwrap();
        let d2 = DepthMap::new(Grid::from_fn(20, 15, |u, v| 40.0 / (1.0 + (u + v) as f64))).unwrap();
        let rot = rotational_flow(&k(), motion.rotation(), 20, 15);
        for d in [&d1, &d2] {
            let f = rigid_flow(&k(), &motion, d);
            for (a, b) in f.vectors().as_slice().iter().zip(rot.vectors().as_slice()) {
                assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn translational_flow_examples() {
        let g = |x: [f64; 2]| FlowField::new(Grid::filled(3, 3, x)).unwrap();
        let t = translational_flow(&g([3.0, 1.0]), &g([1.0, 1.0])).unwrap();
        assert_eq!(*t.vectors().get(1, 1), [2.0, 0.0]);
        let same = translational_flow(&g([3.0, 1.0]), &g([3.0, 1.0])).unwrap();
        assert!(same.vectors().as_slice().iter().all(|v| *v == [0.0, 0.0]));
        let id = translational_flow(&g([3.0, 1.0]), &FlowField::zeros(3, 3)).unwrap();
        assert_eq!(*id.vectors().get(0, 0), [3.0, 1.0]);
        let bad = FlowField::zeros(4, 3);
        assert!(matches!(translational_flow(&g([0.0; 2]), &bad), Err(Error::Dimension(_))));
    }

    fn field(w: usize, h: usize, f: impl Fn(f64, f64) -> [f64; 2]) -> FlowField {
        FlowField::new(Grid::from_fn(w, h, |u, v| f(u as f64, v as f64))).unwrap()
    }

    #[test]
    fn divergence_examples() {
        let id = divergence(&field(7, 5, |u, v| [u, v])).unwrap();
        for v in 1..4 {
            for u in 1..6 {
                assert_eq!(*id.values().get(u, v), 4.0);
            }
        }
        // one-sided border differences scaled by 2 keep affine fields constant
        assert!(id.values().as_slice().iter().all(|&x| x == 4.0));
        let c = divergence(&field(5, 5, |_, _| [3.0, -2.0])).unwrap();
        assert!(c.values().as_slice().iter().all(|&x| x == 0.0));
        let q = divergence(&field(6, 5, |u, _| [u * u, 0.0])).unwrap();
        assert_eq!(*q.values().get(3, 2), -4.0 + 16.0);
        assert!(matches!(divergence(&FlowField::zeros(2, 5)), Err(Error::Dimension(_))));
    }

    #[test]
    fn warp_examples() {
        let img = Image::from_fn(5, 4, 1, |u, v, _| (u + 5 * v) as f64 / 20.0).unwrap();
        let same = warp(&img, &FlowField::zeros(5, 4)).unwrap();
        assert_eq!(same.image, img);
        assert_eq!(same.mask.count(), 20);

        let shifted = warp(&img, &field(5, 4, |_, _| [1.0, 0.0])).unwrap();
        for v in 0..4 {
            for u in 0..4 {
                assert_eq!(shifted.image.at(u, v, 0), img.at(u + 1, v, 0));
                assert!(shifted.mask.get(u, v));
            }
            assert!(!shifted.mask.get(4, v));
        }
        let gone = warp(&img, &field(5, 4, |_, _| [10.0, 0.0])).unwrap();
        assert_eq!(gone.mask.count(), 0);
    }

    #[test]
    fn warp_interpolates_bilinearly() {
        let img = Image::from_fn(3, 3, 1, |u, v, _| (u as f64 + 2.0 * v as f64) / 6.0).unwrap();
        let w = warp(&img, &field(3, 3, |_, _| [0.25, 0.5])).unwrap();
        // the image is affine, so bilinear sampling is exact
        assert!((w.image.at(0, 0, 0) - (0.25 + 1.0) / 6.0).abs() < 1e-15);
    }

    #[test]
    fn exp_log_round_trip() {
        for w in [
            [0.0, 0.0, 0.0],
            [1e-9, -2e-9, 0.0],
            [0.3, -0.2, 0.1],
            [2.0, 1.0, -0.5],
            [0.0, 0.0, std::f64::consts::PI - 1e-6],
            [1.7, -1.7, 1.7],
        ] {
            let back = log_so3(&exp_so3(&w));
            for i in 0..3 {
                assert!((back[i] - w[i]).abs() < 1e-10, "{w:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn motion_validation() {
        let m = RigidMotion::from_axis_angle([0.1, 0.2, 0.3], [1.0, 2.0, 3.0]);
        assert!(RigidMotion::new(*m.rotation(), m.translation()).is_ok());
        let mut bad = *m.rotation();
        bad[0][0] += 1e-6;
        assert!(RigidMotion::new(bad, [0.0; 3]).is_err());
        let reflect = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]];
        assert!(RigidMotion::new(reflect, [0.0; 3]).is_err());
    }
}
