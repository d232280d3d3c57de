//! Synthetic two-view scenes with analytically known depth, flow and derivatives.
//!
//! Depth families are continuous functions of the pixel coordinates, so the
//! exact flow can be evaluated anywhere. The target image is a procedural
//! texture sampled on the pixel grid; the source image is rendered by inverting
//! the ground-truth flow per source pixel (fixed-point iteration), so the pair
//! is consistent up to bilinear resampling error.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, FormatError, Result};
use crate::geometry::{mat_vec, rigid_flow, CameraIntrinsics, RigidMotion, TwistParams, MIN_Z};
use crate::grid::{DepthMap, FlowField, Grid, Image, Mask, ScalarField};

/// Depth as a function of continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DepthFamily {
    /// `1/(D + t₃) = a + b·u + c·v`: the source-frame depth has affine inverse,
    /// which makes every rigid-flow component quadratic per axis when `R = I`.
    AffineInverseShift { a: f64, b: f64, c: f64 },
    FrontoPlane { depth: f64 },
    /// `near` for `u < edge_u`, `far` otherwise.
    StepEdge { near: f64, far: f64, edge_u: f64 },
    /// `base − height·(1 − r²/radius²)²` inside the disc, `base` outside.
    SphereBump { base: f64, height: f64, radius: f64, center_u: f64, center_v: f64 },
}

impl DepthFamily {
    pub fn name(&self) -> &'static str {
        match self {
            DepthFamily::AffineInverseShift { .. } => "affine-inverse-shift",
            DepthFamily::FrontoPlane { .. } => "fronto-plane",
            DepthFamily::StepEdge { .. } => "step-edge",
            DepthFamily::SphereBump { .. } => "sphere-bump",
        }
    }

    /// Depth at `(u, v)`; `t3` is the forward translation of the scene's motion.
    pub fn depth_at(&self, u: f64, v: f64, t3: f64) -> f64 {
        match *self {
            DepthFamily::AffineInverseShift { a, b, c } => 1.0 / (a + b * u + c * v) - t3,
            DepthFamily::FrontoPlane { depth } => depth,
            DepthFamily::StepEdge { near, far, edge_u } => {
                if u < edge_u {
                    near
                } else {
                    far
                }
            }
            DepthFamily::SphereBump { base, height, radius, center_u, center_v } => {
                let r2 = ((u - center_u).powi(2) + (v - center_v).powi(2)) / (radius * radius);
                if r2 < 1.0 {
                    base - height * (1.0 - r2).powi(2)
                } else {
                    base
                }
            }
        }
    }

    /// Closed-form `(∂D/∂u, ∂D/∂v)`; zero away from the step of a step edge.
    pub fn gradient_at(&self, u: f64, v: f64) -> [f64; 2] {
        match *self {
            DepthFamily::AffineInverseShift { a, b, c } => {
                let g = a + b * u + c * v;
                [-b / (g * g), -c / (g * g)]
            }
            DepthFamily::FrontoPlane { .. } | DepthFamily::StepEdge { .. } => [0.0, 0.0],
            DepthFamily::SphereBump { height, radius, center_u, center_v, .. } => {
                let (du, dv) = (u - center_u, v - center_v);
                let r2 = (du * du + dv * dv) / (radius * radius);
                if r2 < 1.0 {
                    // d/du [−h(1 − r²)²] = 4h(1 − r²)·du/R²
                    let k = 4.0 * height * (1.0 - r2) / (radius * radius);
                    [k * du, k * dv]
                } else {
                    [0.0, 0.0]
                }
            }
        }
    }
}

/// Sum of three sinusoids with incommensurate frequencies around 0.5.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextureSpec {
    /// Peak deviation from 0.5; 0 gives a texture-free scene.
    pub amplitude: f64,
    /// Base spatial frequency in radians per pixel.
    pub frequency: f64,
    pub channels: usize,
}

impl Default for TextureSpec {
    fn default() -> Self {
        TextureSpec { amplitude: 0.4, frequency: 0.2, channels: 1 }
    }
}

const TEXTURE_RATIOS: [f64; 3] = [1.0, std::f64::consts::SQRT_2, 1.618_033_988_749_895];
const TEXTURE_ANGLES: [f64; 3] = [0.3, 1.9, 3.7];
const TEXTURE_PHASES: [f64; 3] = [0.1, 1.3, 2.9];

impl TextureSpec {
    pub fn flat() -> Self {
        TextureSpec { amplitude: 0.0, ..Self::default() }
    }

    pub fn sample(&self, u: f64, v: f64, channel: usize) -> f64 {
        let mut x = 0.5;
        for i in 0..3 {
            let w = self.frequency * TEXTURE_RATIOS[i];
            let (s, c) = TEXTURE_ANGLES[i].sin_cos();
            let phase = TEXTURE_PHASES[i] + 0.7 * channel as f64;
            x += self.amplitude / 3.0 * (w * (c * u + s * v) + phase).sin();
        }
        x.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegionShape {
    Rect { u0: f64, v0: f64, u1: f64, v1: f64 },
    Ellipse { center_u: f64, center_v: f64, radius_u: f64, radius_v: f64 },
}

impl RegionShape {
    pub fn contains(&self, u: f64, v: f64) -> bool {
        match *self {
            RegionShape::Rect { u0, v0, u1, v1 } => u >= u0 && u <= u1 && v >= v0 && v <= v1,
            RegionShape::Ellipse { center_u, center_v, radius_u, radius_v } => {
                ((u - center_u) / radius_u).powi(2) + ((v - center_v) / radius_v).powi(2) <= 1.0
            }
        }
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        match *self {
            RegionShape::Rect { u0, v0, u1, v1 } => (u0, v0, u1, v1),
            RegionShape::Ellipse { center_u, center_v, radius_u, radius_v } => {
                (center_u - radius_u, center_v - radius_v, center_u + radius_u, center_v + radius_v)
            }
        }
    }
}

/// A pixel region whose surface translates independently between frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicObjectSpec {
    pub region: RegionShape,
    /// Extra source-frame translation of the region's surface points.
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub family: DepthFamily,
    pub texture: TextureSpec,
    pub dynamic: Option<DynamicObjectSpec>,
}

impl SceneSpec {
    pub fn new(family: DepthFamily) -> Self {
        SceneSpec { family, texture: TextureSpec::default(), dynamic: None }
    }

    pub fn with_texture(mut self, texture: TextureSpec) -> Self {
        self.texture = texture;
        self
    }

    pub fn with_dynamic(mut self, dynamic: DynamicObjectSpec) -> Self {
        self.dynamic = Some(dynamic);
        self
    }

    /// Checks positivity of the depth family over the pixel grid and the
    /// placement of the dynamic region.
    pub fn validate(&self, motion: &RigidMotion, width: usize, height: usize) -> Result<()> {
        if width < 3 || height < 3 {
            return Err(Error::InvalidScene(format!("grid {width}x{height} smaller than 3x3")));
        }
        let t3 = motion.translation()[2];
        match self.family {
            DepthFamily::StepEdge { near, far, .. } if !(near > 0.0 && far > 0.0) => {
                return Err(Error::InvalidScene("step-edge depths must be > 0".into()));
            }
            DepthFamily::SphereBump { radius, .. } if !(radius > 0.0) => {
                return Err(Error::InvalidScene("sphere-bump radius must be > 0".into()));
            }
            _ => {}
        }
        for v in 0..height {
            for u in 0..width {
                let (uf, vf) = (u as f64, v as f64);
                if let DepthFamily::AffineInverseShift { a, b, c } = self.family {
                    let g = a + b * uf + c * vf;
                    if !(g > 0.0) {
                        return Err(Error::InvalidScene(format!("a + b·u + c·v = {g} ≤ 0 at ({u}, {v})")));
                    }
                }
                let d = self.family.depth_at(uf, vf, t3);
                if !(d > 0.0 && d.is_finite()) {
                    return Err(Error::InvalidScene(format!("depth {d} at ({u}, {v})")));
                }
            }
        }
        let t = &self.texture;
        if !(t.amplitude >= 0.0 && t.amplitude <= 0.5 && t.frequency.is_finite()) {
            return Err(Error::InvalidScene("texture amplitude must lie in [0, 0.5]".into()));
        }
        if t.channels != 1 && t.channels != 3 {
            return Err(Error::InvalidScene("texture channels must be 1 or 3".into()));
        }
        if let Some(dynamic) = &self.dynamic {
            let (u0, v0, u1, v1) = dynamic.region.bounds();
            let inside = u0 >= 1.0 && v0 >= 1.0 && u1 <= (width - 2) as f64 && v1 <= (height - 2) as f64;
            if !(inside && u0 < u1 && v0 < v1) {
                return Err(Error::InvalidScene("dynamic region must lie strictly inside the image".into()));
            }
            if !dynamic.translation.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidScene("dynamic translation not finite".into()));
            }
        }
        Ok(())
    }
}

/// Closed-form `(∂D/∂u, ∂D/∂v)` at pixel `p`.
pub fn analytic_depth_gradient(spec: &SceneSpec, p: [f64; 2]) -> [f64; 2] {
    spec.family.gradient_at(p[0], p[1])
}

/// Ground-truth package for one synthetic two-view scene.
#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub spec: SceneSpec,
    pub intrinsics: CameraIntrinsics,
    pub motion: RigidMotion,
    pub depth_gt: DepthMap,
    /// Rigid flow on static pixels, object-moved flow on the dynamic region.
    pub flow_gt: FlowField,
    pub image_t: Image,
    pub image_s: Image,
    /// Normalized `(∂D/∂u, ∂D/∂v)` per pixel.
    pub analytic_depth_gradient: Grid<[f64; 2]>,
    /// Normalized (true) divergence of `flow_gt`.
    pub analytic_flow_divergence: ScalarField,
    pub dynamic_mask: Mask,
}

impl SceneBundle {
    pub fn width(&self) -> usize {
        self.depth_gt.width()
    }

    pub fn height(&self) -> usize {
        self.depth_gt.height()
    }

    pub fn static_mask(&self) -> Mask {
        self.dynamic_mask.map(|&d| !d)
    }
}

/// Which translation acts on a surface point.
fn translation_for(motion: &RigidMotion, dynamic: Option<&DynamicObjectSpec>) -> [f64; 3] {
    let mut t = motion.translation();
    if let Some(d) = dynamic {
        for i in 0..3 {
            t[i] += d.translation[i];
        }
    }
    t
}

/// Exact flow and source depth of the surface seen at continuous pixel `p`.
fn flow_at(
    spec: &SceneSpec,
    k: &CameraIntrinsics,
    motion: &RigidMotion,
    translation: &[f64; 3],
    p: [f64; 2],
) -> Option<([f64; 2], f64)> {
    let d = spec.family.depth_at(p[0], p[1], motion.translation()[2]);
    if !(d > 0.0 && d.is_finite()) {
        return None;
    }
    let n = k.normalize(p);
    let x = [n[0] * d, n[1] * d, d];
    let rx = mat_vec(motion.rotation(), &x);
    let y = [rx[0] + translation[0], rx[1] + translation[1], rx[2] + translation[2]];
    if !(y[2] > MIN_Z) {
        return None;
    }
    Some(([(y[0] / y[2] - x[0] / x[2]) * k.fx(), (y[1] / y[2] - x[1] / x[2]) * k.fy()], y[2]))
}

/// Solves `p + F(p) = q` by fixed-point iteration.
fn invert_flow(
    spec: &SceneSpec,
    k: &CameraIntrinsics,
    motion: &RigidMotion,
    translation: &[f64; 3],
    q: [f64; 2],
) -> Option<([f64; 2], f64)> {
    let mut p = q;
    for _ in 0..200 {
        let (f, z) = flow_at(spec, k, motion, translation, p)?;
        let next = [q[0] - f[0], q[1] - f[1]];
        let step = (next[0] - p[0]).abs() + (next[1] - p[1]).abs();
        p = next;
        if step < 1e-11 {
            let (_, z_final) = flow_at(spec, k, motion, translation, p).unwrap_or(([0.0; 2], z));
            return Some((p, z_final));
        }
        if !(p[0].is_finite() && p[1].is_finite()) {
            return None;
        }
    }
    None
}

/// Normalized divergence of the exact flow field via its Jacobian.
fn analytic_divergence(
    spec: &SceneSpec,
    k: &CameraIntrinsics,
    motion: &RigidMotion,
    translation: &[f64; 3],
    u: f64,
    v: f64,
) -> Option<f64> {
    let d = spec.family.depth_at(u, v, motion.translation()[2]);
    let [du, dv] = spec.family.gradient_at(u, v);
    let n = k.normalize([u, v]);
    let x = [n[0] * d, n[1] * d, d];
    let dx_du = [du * n[0] + d / k.fx(), du * n[1], du];
    let dx_dv = [dv * n[0], dv * n[1] + d / k.fy(), dv];
    let rx = mat_vec(motion.rotation(), &x);
    let y = [rx[0] + translation[0], rx[1] + translation[1], rx[2] + translation[2]];
    if !(y[2] > MIN_Z) {
        return None;
    }
    let dy_du = mat_vec(motion.rotation(), &dx_du);
    let dy_dv = mat_vec(motion.rotation(), &dx_dv);
    let dpu_du = k.fx() * (dy_du[0] * y[2] - y[0] * dy_du[2]) / (y[2] * y[2]);
    let dpv_dv = k.fy() * (dy_dv[1] * y[2] - y[1] * dy_dv[2]) / (y[2] * y[2]);
    Some(dpu_du + dpv_dv - 2.0)
}

/// Builds the ground-truth bundle for `spec` on a `width × height` grid.
pub fn synthesize(
    spec: &SceneSpec,
    k: &CameraIntrinsics,
    motion: &RigidMotion,
    width: usize,
    height: usize,
) -> Result<SceneBundle> {
    spec.validate(motion, width, height)?;
    let t3 = motion.translation()[2];
    let depth_gt = DepthMap::new(Grid::from_fn(width, height, |u, v| spec.family.depth_at(u as f64, v as f64, t3)))?;
    let dynamic_mask = Grid::from_fn(width, height, |u, v| match &spec.dynamic {
        Some(d) => d.region.contains(u as f64, v as f64),
        None => false,
    });

    let static_flow = rigid_flow(k, motion, &depth_gt);
    let flow_gt = match &spec.dynamic {
        None => static_flow,
        Some(d) => {
            let moved = rigid_flow(k, &motion.with_translation(translation_for(motion, Some(d))), &depth_gt);
            let mut vectors = static_flow.vectors().clone();
            let mut mask = static_flow.mask().clone();
            for i in 0..vectors.len() {
                if dynamic_mask.as_slice()[i] {
                    vectors.as_mut_slice()[i] = moved.vectors().as_slice()[i];
                    mask.as_mut_slice()[i] = moved.mask().as_slice()[i];
                }
            }
            FlowField::with_mask(vectors, mask)?
        }
    };

    let analytic_depth_gradient = Grid::from_fn(width, height, |u, v| spec.family.gradient_at(u as f64, v as f64));
    let mut div_mask = Mask::all(width, height);
    let div_values = Grid::from_fn(width, height, |u, v| {
        let dynamic = spec.dynamic.as_ref().filter(|_| *dynamic_mask.get(u, v));
        let t = translation_for(motion, dynamic);
        match analytic_divergence(spec, k, motion, &t, u as f64, v as f64) {
            Some(x) => x,
            None => {
                *div_mask.get_mut(u, v) = false;
                0.0
            }
        }
    });
    let analytic_flow_divergence = ScalarField::new(div_values, div_mask)?;

    let ch = spec.texture.channels;
    let image_t = Image::from_fn(width, height, ch, |u, v, c| spec.texture.sample(u as f64, v as f64, c))?;
    let rows: Vec<Vec<f64>> = (0..height)
        .into_par_iter()
        .map(|v| {
            let mut row = Vec::with_capacity(width * ch);
            for u in 0..width {
                let src = render_source_pixel(spec, k, motion, [u as f64, v as f64]);
                for c in 0..ch {
                    row.push(spec.texture.sample(src[0], src[1], c));
                }
            }
            row
        })
        .collect();
    let image_s = Image::new(width, height, ch, rows.concat())?;

    Ok(SceneBundle {
        spec: *spec,
        intrinsics: *k,
        motion: *motion,
        depth_gt,
        flow_gt,
        image_t,
        image_s,
        analytic_depth_gradient,
        analytic_flow_divergence,
        dynamic_mask,
    })
}

/// Target-image texture coordinate seen by source pixel `q`.
fn render_source_pixel(spec: &SceneSpec, k: &CameraIntrinsics, motion: &RigidMotion, q: [f64; 2]) -> [f64; 2] {
    let static_t = motion.translation();
    let region = spec.dynamic.as_ref().map(|d| d.region);
    let static_hit = invert_flow(spec, k, motion, &static_t, q)
        .filter(|(p, _)| region.is_none_or(|r| !r.contains(p[0], p[1])));
    let dynamic_hit = spec.dynamic.as_ref().and_then(|d| {
        let t = translation_for(motion, Some(d));
        invert_flow(spec, k, motion, &t, q).filter(|(p, _)| d.region.contains(p[0], p[1]))
    });
    match (static_hit, dynamic_hit) {
        (Some((ps, zs)), Some((pd, zd))) => {
            if zd <= zs {
                pd
            } else {
                ps
            }
        }
        (Some((p, _)), None) | (None, Some((p, _))) => p,
        // disoccluded or unreachable: fall back to the texture at the source pixel itself
        (None, None) => q,
    }
}

/// Scene description as read from / written to a flat `key=value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFile {
    pub spec: SceneSpec,
    pub intrinsics: Option<CameraIntrinsics>,
    pub twist: Option<TwistParams>,
    pub size: Option<(usize, usize)>,
}

impl SceneFile {
    /// Default camera for a grid: `fx = fy = 100`, principal point at the centre.
    pub fn intrinsics_for(&self, width: usize, height: usize) -> Result<CameraIntrinsics> {
        match self.intrinsics {
            Some(k) => Ok(k),
            None => CameraIntrinsics::new(100.0, 100.0, width as f64 / 2.0, height as f64 / 2.0),
        }
    }

    /// Defaults to a lateral-dominant translation `(0.3, 0.05, 0.1)` without rotation.
    pub fn motion(&self) -> RigidMotion {
        self.twist.unwrap_or(TwistParams::new([0.0; 3], [0.3, 0.05, 0.1])).to_motion()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        kv("family", self.spec.family.name().into());
        match self.spec.family {
            DepthFamily::AffineInverseShift { a, b, c } => {
                kv("a", a.to_string());
                kv("b", b.to_string());
                kv("c", c.to_string());
            }
            DepthFamily::FrontoPlane { depth } => kv("depth", depth.to_string()),
            DepthFamily::StepEdge { near, far, edge_u } => {
                kv("near", near.to_string());
                kv("far", far.to_string());
                kv("edge_u", edge_u.to_string());
            }
            DepthFamily::SphereBump { base, height, radius, center_u, center_v } => {
                kv("base", base.to_string());
                kv("bump_height", height.to_string());
                kv("radius", radius.to_string());
                kv("center_u", center_u.to_string());
                kv("center_v", center_v.to_string());
            }
        }
        kv("texture_amplitude", self.spec.texture.amplitude.to_string());
        kv("texture_frequency", self.spec.texture.frequency.to_string());
        kv("channels", self.spec.texture.channels.to_string());
        match &self.spec.dynamic {
            None => kv("dynamic", "none".into()),
            Some(d) => {
                match d.region {
                    RegionShape::Rect { u0, v0, u1, v1 } => {
                        kv("dynamic", "rect".into());
                        kv("dynamic_u0", u0.to_string());
                        kv("dynamic_v0", v0.to_string());
                        kv("dynamic_u1", u1.to_string());
                        kv("dynamic_v1", v1.to_string());
                    }
                    RegionShape::Ellipse { center_u, center_v, radius_u, radius_v } => {
                        kv("dynamic", "ellipse".into());
                        kv("dynamic_cu", center_u.to_string());
                        kv("dynamic_cv", center_v.to_string());
                        kv("dynamic_ru", radius_u.to_string());
                        kv("dynamic_rv", radius_v.to_string());
                    }
                }
                kv("dynamic_tx", d.translation[0].to_string());
                kv("dynamic_ty", d.translation[1].to_string());
                kv("dynamic_tz", d.translation[2].to_string());
            }
        }
        if let Some(k) = &self.intrinsics {
            kv("fx", k.fx().to_string());
            kv("fy", k.fy().to_string());
            kv("cx", k.cx().to_string());
            kv("cy", k.cy().to_string());
        }
        if let Some(t) = &self.twist {
            for (name, x) in ["rx", "ry", "rz", "tx", "ty", "tz"].iter().zip(t.0) {
                kv(name, x.to_string());
            }
        }
        if let Some((w, h)) = self.size {
            kv("width", w.to_string());
            kv("height", h.to_string());
        }
        out
    }

    pub fn parse(text: &str) -> Result<SceneFile> {
        let mut map: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| FormatError::SceneFile {
                line: i + 1,
                message: "expected key=value".into(),
            })?;
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(FormatError::SceneFile { line: i + 1, message: format!("unknown key '{key}'") }.into());
            }
            if map.insert(key.clone(), (i + 1, value.trim().to_string())).is_some() {
                return Err(FormatError::SceneFile { line: i + 1, message: format!("duplicate key '{key}'") }.into());
            }
        }
        let mut reader = KeyReader { map };
        let family = match reader.string("family")?.as_deref() {
            Some("affine-inverse-shift") => DepthFamily::AffineInverseShift {
                a: reader.required("a")?,
                b: reader.float("b")?.unwrap_or(0.0),
                c: reader.float("c")?.unwrap_or(0.0),
            },
            Some("fronto-plane") => DepthFamily::FrontoPlane { depth: reader.required("depth")? },
            Some("step-edge") => DepthFamily::StepEdge {
                near: reader.required("near")?,
                far: reader.required("far")?,
                edge_u: reader.required("edge_u")?,
            },
            Some("sphere-bump") => DepthFamily::SphereBump {
                base: reader.required("base")?,
                height: reader.required("bump_height")?,
                radius: reader.required("radius")?,
                center_u: reader.required("center_u")?,
                center_v: reader.required("center_v")?,
            },
            Some(other) => {
                return Err(FormatError::SceneFile { line: 0, message: format!("unknown family '{other}'") }.into())
            }
            None => return Err(FormatError::SceneFile { line: 0, message: "missing 'family'".into() }.into()),
        };
        let defaults = TextureSpec::default();
        let texture = TextureSpec {
            amplitude: reader.float("texture_amplitude")?.unwrap_or(defaults.amplitude),
            frequency: reader.float("texture_frequency")?.unwrap_or(defaults.frequency),
            channels: reader.float("channels")?.map(|c| c as usize).unwrap_or(defaults.channels),
        };
        let region = match reader.string("dynamic")?.as_deref() {
            None | Some("none") => None,
            Some("rect") => Some(RegionShape::Rect {
                u0: reader.required("dynamic_u0")?,
                v0: reader.required("dynamic_v0")?,
                u1: reader.required("dynamic_u1")?,
                v1: reader.required("dynamic_v1")?,
            }),
            Some("ellipse") => Some(RegionShape::Ellipse {
                center_u: reader.required("dynamic_cu")?,
                center_v: reader.required("dynamic_cv")?,
                radius_u: reader.required("dynamic_ru")?,
                radius_v: reader.required("dynamic_rv")?,
            }),
            Some(other) => {
                return Err(FormatError::SceneFile { line: 0, message: format!("unknown dynamic shape '{other}'") }.into())
            }
        };
        let dynamic = match region {
            Some(region) => Some(DynamicObjectSpec {
                region,
                translation: [
                    reader.float("dynamic_tx")?.unwrap_or(0.0),
                    reader.float("dynamic_ty")?.unwrap_or(0.0),
                    reader.float("dynamic_tz")?.unwrap_or(0.0),
                ],
            }),
            None => None,
        };
        let intrinsics = match (reader.float("fx")?, reader.float("fy")?, reader.float("cx")?, reader.float("cy")?) {
            (None, None, None, None) => None,
            (Some(fx), Some(fy), Some(cx), Some(cy)) => Some(CameraIntrinsics::new(fx, fy, cx, cy)?),
            _ => {
                return Err(FormatError::SceneFile { line: 0, message: "fx, fy, cx, cy must be given together".into() }.into())
            }
        };
        let pose_keys = ["rx", "ry", "rz", "tx", "ty", "tz"];
        let mut pose = [0.0; 6];
        let mut any_pose = false;
        for (slot, key) in pose.iter_mut().zip(pose_keys) {
            if let Some(x) = reader.float(key)? {
                *slot = x;
                any_pose = true;
            }
        }
        let size = match (reader.float("width")?, reader.float("height")?) {
            (Some(w), Some(h)) => Some((w as usize, h as usize)),
            (None, None) => None,
            _ => return Err(FormatError::SceneFile { line: 0, message: "width and height must be given together".into() }.into()),
        };
        Ok(SceneFile {
            spec: SceneSpec { family, texture, dynamic },
            intrinsics,
            twist: any_pose.then_some(TwistParams(pose)),
            size,
        })
    }
}

const KNOWN_KEYS: &[&str] = &[
    "family", "a", "b", "c", "depth", "near", "far", "edge_u", "base", "bump_height", "radius", "center_u",
    "center_v", "texture_amplitude", "texture_frequency", "channels", "dynamic", "dynamic_u0", "dynamic_v0",
    "dynamic_u1", "dynamic_v1", "dynamic_cu", "dynamic_cv", "dynamic_ru", "dynamic_rv", "dynamic_tx", "dynamic_ty",
    "dynamic_tz", "fx", "fy", "cx", "cy", "rx", "ry", "rz", "tx", "ty", "tz", "width", "height",
];

struct KeyReader {
    map: BTreeMap<String, (usize, String)>,
}

impl KeyReader {
    fn string(&mut self, key: &str) -> Result<Option<String>> {
        Ok(self.map.get(key).map(|(_, v)| v.clone()))
    }

    fn float(&mut self, key: &str) -> Result<Option<f64>> {
        match self.map.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse::<f64>().map(Some).map_err(|_| {
                FormatError::SceneFile { line: *line, message: format!("'{key}' is not a number: {v}") }.into()
            }),
        }
    }

    fn required(&mut self, key: &str) -> Result<f64> {
        self.float(key)?
            .ok_or_else(|| FormatError::SceneFile { line: 0, message: format!("missing '{key}'") }.into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{divergence, warp};

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 64.0, 48.0).unwrap()
    }

    #[test]
    fn identity_motion_on_a_plane_has_no_flow() {
        let spec = SceneSpec::new(DepthFamily::FrontoPlane { depth: 5.0 });
        let b = synthesize(&spec, &k(), &RigidMotion::identity(), 32, 24).unwrap();
        assert!(b.flow_gt.vectors().as_slice().iter().all(|f| *f == [0.0, 0.0]));
        assert!(b.analytic_flow_divergence.values().as_slice().iter().all(|&d| d.abs() < 1e-15));
        assert_eq!(b.image_s, b.image_t);
    }

    #[test]
    fn constant_affine_inverse_depth() {
        // source depth 1/a = 5, so target depth 5 − t3 = 4
        let spec = SceneSpec::new(DepthFamily::AffineInverseShift { a: 0.2, b: 0.0, c: 0.0 });
        let b = synthesize(&spec, &k(), &RigidMotion::from_translation([0.0, 0.0, 1.0]), 16, 12).unwrap();
        assert!(b.depth_gt.values().as_slice().iter().all(|&d| (d - 4.0).abs() < 1e-14));
    }

    #[test]
    fn discrete_divergence_is_twice_analytic_on_affine_inverse_scene() {
        let spec = SceneSpec::new(DepthFamily::AffineInverseShift { a: 0.2, b: 1e-3, c: 0.0 });
        let b = synthesize(&spec, &k(), &RigidMotion::from_translation([0.0, 0.0, 1.0]), 128, 96).unwrap();
        let div = divergence(&b.flow_gt).unwrap();
        for v in 1..95 {
            for u in 1..127 {
                let d = div.values().get(u, v);
                let a = b.analytic_flow_divergence.values().get(u, v);
                assert!((d - 2.0 * a).abs() < 1e-10, "({u},{v}) {d} vs {a}");
            }
        }
    }

    #[test]
    fn analytic_gradient_examples() {
        let plane = SceneSpec::new(DepthFamily::FrontoPlane { depth: 3.0 });
        assert_eq!(analytic_depth_gradient(&plane, [4.0, 5.0]), [0.0, 0.0]);
        let (a, b, c) = (0.2, 1e-3, -2e-3);
        let affine = SceneSpec::new(DepthFamily::AffineInverseShift { a, b, c });
        let g = a + b * 10.0 + c * 7.0;
        assert_eq!(analytic_depth_gradient(&affine, [10.0, 7.0]), [-b / (g * g), -c / (g * g)]);
        let step = SceneSpec::new(DepthFamily::StepEdge { near: 2.0, far: 4.0, edge_u: 10.5 });
        assert_eq!(analytic_depth_gradient(&step, [3.0, 3.0]), [0.0, 0.0]);
    }

    #[test]
    fn sphere_bump_gradient_matches_central_differences() {
        let fam = DepthFamily::SphereBump { base: 6.0, height: 1.5, radius: 9.0, center_u: 16.0, center_v: 12.0 };
        let h = 1e-5;
        for (u, v) in [(18.3, 11.1), (12.0, 16.5), (16.0, 12.0)] {
            let g = fam.gradient_at(u, v);
            let du = (fam.depth_at(u + h, v, 0.0) - fam.depth_at(u - h, v, 0.0)) / (2.0 * h);
            let dv = (fam.depth_at(u, v + h, 0.0) - fam.depth_at(u, v - h, 0.0)) / (2.0 * h);
            assert!((g[0] - du).abs() < 1e-8 && (g[1] - dv).abs() < 1e-8);
        }
    }

    #[test]
    fn positivity_violations_rejected() {
        let bad = SceneSpec::new(DepthFamily::AffineInverseShift { a: 0.1, b: -0.01, c: 0.0 });
        assert!(matches!(
            synthesize(&bad, &k(), &RigidMotion::from_translation([0.1, 0.0, 0.1]), 32, 24),
            Err(Error::InvalidScene(_))
        ));
        let neg = SceneSpec::new(DepthFamily::FrontoPlane { depth: -1.0 });
        assert!(synthesize(&neg, &k(), &RigidMotion::identity(), 8, 8).is_err());
        // 1/a − t3 = 0.5 − 1 < 0
        let behind = SceneSpec::new(DepthFamily::AffineInverseShift { a: 2.0, b: 0.0, c: 0.0 });
        assert!(synthesize(&behind, &k(), &RigidMotion::from_translation([0.0, 0.0, 1.0]), 8, 8).is_err());
    }

    #[test]
    fn dynamic_region_must_be_interior() {
        let spec = SceneSpec::new(DepthFamily::FrontoPlane { depth: 5.0 }).with_dynamic(DynamicObjectSpec {
            region: RegionShape::Rect { u0: 0.0, v0: 2.0, u1: 5.0, v1: 5.0 },
            translation: [0.0, 0.2, 0.0],
        });
        assert!(synthesize(&spec, &k(), &RigidMotion::identity(), 16, 16).is_err());
    }

    #[test]
    fn photometric_consistency_on_static_scene() {
        let spec = SceneSpec::new(DepthFamily::AffineInverseShift { a: 0.15, b: 8e-4, c: 5e-4 });
        let k = CameraIntrinsics::new(100.0, 100.0, 48.0, 36.0).unwrap();
        let motion = RigidMotion::from_axis_angle([0.01, -0.02, 0.005], [0.3, 0.05, 0.1]);
        let b = synthesize(&spec, &k, &motion, 96, 72).unwrap();
        let warped = warp(&b.image_s, &b.flow_gt).unwrap();
        let (mut err, mut n) = (0.0, 0);
        for i in 0..warped.mask.len() {
            if warped.mask.as_slice()[i] {
                err += (warped.image.as_slice()[i] - b.image_t.as_slice()[i]).abs();
                n += 1;
            }
        }
        assert!(n > 96 * 72 / 2);
        assert!(err / (n as f64) < 1e-3, "mean abs error {}", err / n as f64);
    }

    #[test]
    fn scene_file_round_trip() {
        let file = SceneFile {
            spec: SceneSpec::new(DepthFamily::SphereBump {
                base: 6.0,
                height: 1.25,
                radius: 10.0,
                center_u: 20.5,
                center_v: 14.0,
            })
            .with_texture(TextureSpec { amplitude: 0.3, frequency: 0.17, channels: 3 })
            .with_dynamic(DynamicObjectSpec {
                region: RegionShape::Ellipse { center_u: 10.0, center_v: 9.0, radius_u: 4.0, radius_v: 3.0 },
                translation: [0.0, 0.2, -0.05],
            }),
            intrinsics: Some(CameraIntrinsics::new(90.0, 95.5, 20.0, 15.0).unwrap()),
            twist: Some(TwistParams([0.01, -0.02, 0.0, 0.3, 0.1, 0.2])),
            size: Some((40, 30)),
        };
        assert_eq!(SceneFile::parse(&file.to_text()).unwrap(), file);
        assert!(SceneFile::parse("family=fronto-plane\ndepth=2\nbogus=1\n").is_err());
        assert!(SceneFile::parse("family=fronto-plane\n").is_err());
        assert!(SceneFile::parse("family=fronto-plane\ndepth=abc\n").is_err());
    }
}
