//! Loss functionals over masked pixel sets, plus standard depth metrics.
//!
//! Each loss is a mean over its valid pixels, accumulated in row-major order so
//! results are reproducible bit for bit. The generic `*_kernel` functions are
//! the single implementation used both for plain evaluation and on the
//! autodiff tape.

use crate::ad::Real;
use crate::error::{Error, Result};
use crate::geometry::{central_gradient_kernel, divergence_kernel, CameraIntrinsics, RigidMotion};
use crate::grid::{check_shape, DepthMap, FlowField, Grid, Image, Mask, ScalarField};
use crate::triangulate::TriangulationResult;

/// SSIM stabilizers for intensities in `[0, 1]`.
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// SSIM/L1 balance of the photometric loss.
pub const DEFAULT_ALPHA: f64 = 0.85;
/// Guard on the depth denominator of the geometric consistency loss.
pub const EPS_DIV: f64 = 1e-6;
/// Guard on `|C^D|` in the differential consistency loss.
pub const EPS_DPC: f64 = 1e-4;
/// Guard (pixels) on the optical-flow magnitude in the flow coupling loss.
pub const EPS_FLOW: f64 = 1e-3;
/// Minimum `|t₃|` for the divergence relation.
pub const EPS_T3: f64 = 1e-6;
/// Pixels whose source depth `|D + t₃|` is below this are masked.
pub const EPS_GEO: f64 = 1e-6;
/// Divergence of the identity pixel field under the unnormalized stencil.
pub const IDENTITY_DIVERGENCE: f64 = 4.0;

/// Reduced loss with its support size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub valid_pixel_count: usize,
    /// Pixels whose denominator guard dominated (0 for unguarded losses).
    pub guarded_pixel_count: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Reduced<T> {
    pub value: T,
    pub count: usize,
    pub guarded: usize,
    /// Primal per-pixel contributions, already divided by their mean's count;
    /// `value` is their sum, or their sum over the sum of `divisor` when that
    /// is non-empty.
    pub terms: Vec<f64>,
    pub divisor: Vec<f64>,
}

impl<T: Real> Reduced<T> {
    pub fn to_loss_value(&self) -> LossValue {
        LossValue { value: self.value.value(), valid_pixel_count: self.count, guarded_pixel_count: self.guarded }
    }
}

/// Row-major running mean. The primal value is summed with Neumaier
/// compensation so that finite differences of a loss see only the rounding of
/// the perturbed terms.
struct Accumulator<T> {
    sum: Option<T>,
    exact: f64,
    compensation: f64,
    terms: Vec<f64>,
    count: usize,
    guarded: usize,
}

impl<T: Real> Accumulator<T> {
    fn new() -> Self {
        Accumulator { sum: None, exact: 0.0, compensation: 0.0, terms: Vec::new(), count: 0, guarded: 0 }
    }

    #[inline]
    fn push(&mut self, term: T) {
        let x = term.value();
        let t = self.exact + x;
        self.compensation += if self.exact.abs() >= x.abs() { (self.exact - t) + x } else { (x - t) + self.exact };
        self.exact = t;
        self.terms.push(x);
        self.sum = Some(match self.sum {
            Some(s) => s + term,
            None => term,
        });
        self.count += 1;
    }

    fn finish(self) -> Result<Reduced<T>> {
        match self.sum {
            Some(s) if self.count > 0 => {
                let n = self.count as f64;
                let value = (s / n).with_value((self.exact + self.compensation) / n);
                let terms = self.terms.into_iter().map(|x| x / n).collect();
                Ok(Reduced { value, count: self.count, guarded: self.guarded, terms, divisor: Vec::new() })
            }
            _ => Err(Error::NoValidPixels),
        }
    }
}

/// Per-pixel SSIM (3×3 mean pooling with reflection padding), averaged over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<ScalarField> {
    let per_channel = dssim_kernel(a, b)?;
    let ch = a.channels();
    let values = Grid::from_fn(a.width(), a.height(), |u, v| {
        let base = (v * a.width() + u) * ch;
        per_channel[base..base + ch].iter().map(|d| 1.0 - d).sum::<f64>() / ch as f64
    });
    ScalarField::new(values, Mask::all(a.width(), a.height()))
}

#[inline]
fn reflect(i: isize, len: usize) -> usize {
    if i < 0 {
        (-i) as usize
    } else if i as usize >= len {
        2 * (len - 1) - i as usize
    } else {
        i as usize
    }
}

/// Interleaved per-pixel, per-channel `1 − SSIM`.
///
/// Evaluated as `((μa−μb)²·B + a·Var(a−b)) / (A·B)`, which equals `(den − num)/den`
/// but stays accurate when the windows nearly match.
pub(crate) fn dssim_kernel<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<Vec<T>> {
    a.check_same(b, "ssim")?;
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    if w < 2 || h < 2 {
        return Err(Error::Dimension(format!("ssim needs at least 2x2, got {w}x{h}")));
    }
    let mut out = Vec::with_capacity(w * h * ch);
    for v in 0..h {
        for u in 0..w {
            for c in 0..ch {
                let mut window = [(T::zero(), T::zero()); 9];
                let (mut sa, mut sb) = (T::zero(), T::zero());
                for (i, slot) in window.iter_mut().enumerate() {
                    let x = reflect(u as isize + (i % 3) as isize - 1, w);
                    let y = reflect(v as isize + (i / 3) as isize - 1, h);
                    *slot = (a.at(x, y, c), b.at(x, y, c));
                    sa += slot.0;
                    sb += slot.1;
                }
                let (mu_a, mu_b) = (sa / 9.0, sb / 9.0);
                // centered second moments avoid the cancellation of E[x²] − μ²
                let (mut var_a, mut var_b, mut var_diff) = (T::zero(), T::zero(), T::zero());
                for &(pa, pb) in &window {
                    let (da, db) = (pa - mu_a, pb - mu_b);
                    var_a += da * da;
                    var_b += db * db;
                    var_diff += (da - db).square();
                }
                let (var_a, var_b, var_diff) = (var_a / 9.0, var_b / 9.0, var_diff / 9.0);
                let luminance = (mu_a * mu_a + mu_b * mu_b) + SSIM_C1;
                let contrast = (var_a + var_b) + SSIM_C2;
                let mean_gap = (mu_a - mu_b).square();
                let excess = mean_gap * contrast + ((mu_a * mu_b) * 2.0 + SSIM_C1) * var_diff;
                out.push(excess / (luminance * contrast));
            }
        }
    }
    Ok(out)
}

/// `α·(1 − SSIM)/2 + (1 − α)·|I_t − I′_t|`, channels averaged, mean over `mask`.
pub fn photometric_loss(target: &Image, warped: &Image, mask: &Mask, alpha: f64) -> Result<LossValue> {
    Ok(photometric_kernel(target, warped, mask, alpha)?.to_loss_value())
}

pub(crate) fn photometric_kernel<T: Real>(
    target: &Image<T>,
    warped: &Image<T>,
    mask: &Mask,
    alpha: f64,
) -> Result<Reduced<T>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!("alpha {alpha} outside [0, 1]")));
    }
    target.check_same(warped, "photometric loss")?;
    if mask.width() != target.width() || mask.height() != target.height() {
        return Err(Error::Dimension("photometric loss mask".into()));
    }
    let ch = target.channels();
    let dssim_values = if alpha > 0.0 { Some(dssim_kernel(target, warped)?) } else { None };
    let mut acc = Accumulator::new();
    for (i, &valid) in mask.as_slice().iter().enumerate() {
        if !valid {
            continue;
        }
        let mut term = T::zero();
        for c in 0..ch {
            let k = i * ch + c;
            let l1 = (target.as_slice()[k] - warped.as_slice()[k]).abs() * (1.0 - alpha);
            term += match &dssim_values {
                Some(d) => d[k] * (alpha / 2.0) + l1,
                None => l1,
            };
        }
        acc.push(term / ch as f64);
    }
    acc.finish()
}

/// Mean of `|D^G − D^C| / D^C` over pixels valid in both maps.
pub fn cgdc_loss(geometric: &TriangulationResult, contextual: &DepthMap) -> Result<LossValue> {
    check_shape(geometric.depth.values(), contextual.values(), "cgdc loss")?;
    Ok(cgdc_kernel(
        geometric.depth.values(),
        geometric.validity(),
        contextual.values(),
        contextual.mask(),
    )?
    .to_loss_value())
}

pub(crate) fn cgdc_kernel<T: Real>(
    geometric: &Grid<T>,
    geometric_mask: &Mask,
    contextual: &Grid<T>,
    contextual_mask: &Mask,
) -> Result<Reduced<T>> {
    let mut acc = Accumulator::new();
    for i in 0..geometric.len() {
        if !(geometric_mask.as_slice()[i] && contextual_mask.as_slice()[i]) {
            continue;
        }
        let dc = contextual.as_slice()[i];
        let denom = if dc.value() > EPS_DIV {
            dc
        } else {
            acc.guarded += 1;
            T::constant(EPS_DIV)
        };
        acc.push((geometric.as_slice()[i] - dc).abs() / denom);
    }
    acc.finish()
}

/// Paired differential fields of the depth/flow-divergence identity.
#[derive(Debug, Clone)]
pub struct DifferentialFields {
    /// Flow-divergence side.
    pub c_f: ScalarField,
    /// Depth-gradient side.
    pub c_d: ScalarField,
    /// Pixel offset from the translation-shifted principal point.
    pub q: Grid<[f64; 2]>,
    pub validity: Mask,
}

/// How the depth-gradient side of the identity is discretized.
#[derive(Debug, Clone, Copy)]
pub(crate) enum DepthGradient<'a> {
    /// Central stencil on the inverse source depth `1/(D + t₃)`.
    Stencil,
    /// Externally supplied analytic `(∂D/∂u, ∂D/∂v)`.
    Analytic(&'a Grid<[f64; 2]>),
}

pub(crate) struct FieldsKernel<T> {
    pub c_f: Grid<T>,
    pub c_d: Grid<T>,
    pub q: Grid<[f64; 2]>,
    pub validity: Mask,
}

/// Builds `C^F` and `C^D` from contextual depth and translational flow.
///
/// With `s = D + t₃` the source-frame depth,
/// `C^F = (s / −t₃)·div F^Tra − div p` and `C^D = s·q·∇(1/s)`, which equals
/// `−q·∇D / s` in the continuum. Only border-free pixels with `|s| ≥ ε_geo`
/// and valid inputs on the whole stencil are kept.
pub fn differential_fields(
    k: &CameraIntrinsics,
    motion: &RigidMotion,
    depth: &DepthMap,
    translational: &FlowField,
) -> Result<DifferentialFields> {
    check_shape(depth.values(), translational.vectors(), "differential fields")?;
    let out = fields_kernel(k, &motion.translation(), depth.values(), depth.mask(), translational, DepthGradient::Stencil)?;
    Ok(out.into_public())
}

/// As [`differential_fields`] but with a caller-supplied analytic depth
/// gradient (normalized, i.e. true `∂D/∂u`); it is doubled internally to
/// match the unnormalized divergence.
pub fn differential_fields_with_gradient(
    k: &CameraIntrinsics,
    motion: &RigidMotion,
    depth: &DepthMap,
    translational: &FlowField,
    depth_gradient: &Grid<[f64; 2]>,
) -> Result<DifferentialFields> {
    check_shape(depth.values(), translational.vectors(), "differential fields")?;
    check_shape(depth.values(), depth_gradient, "analytic depth gradient")?;
    let out = fields_kernel(
        k,
        &motion.translation(),
        depth.values(),
        depth.mask(),
        translational,
        DepthGradient::Analytic(depth_gradient),
    )?;
    Ok(out.into_public())
}

impl FieldsKernel<f64> {
    fn into_public(self) -> DifferentialFields {
        DifferentialFields {
            c_f: ScalarField { values: self.c_f, mask: self.validity.clone() },
            c_d: ScalarField { values: self.c_d, mask: self.validity.clone() },
            q: self.q,
            validity: self.validity,
        }
    }
}

/// `(u − cx − fx·t₁/t₃, v − cy − fy·t₂/t₃)`.
pub fn q_offset(k: &CameraIntrinsics, translation: [f64; 3], u: f64, v: f64) -> Result<[f64; 2]> {
    let t3 = translation[2];
    if !(t3.abs() > EPS_T3) {
        return Err(Error::LateralMotionDegeneracy { t3 });
    }
    Ok([
        u - k.cx() - k.fx() * translation[0] / t3,
        v - k.cy() - k.fy() * translation[1] / t3,
    ])
}

pub(crate) fn fields_kernel<T: Real>(
    k: &CameraIntrinsics,
    translation: &[T; 3],
    depth: &Grid<T>,
    depth_mask: &Mask,
    translational: &FlowField<T>,
    gradient: DepthGradient<'_>,
) -> Result<FieldsKernel<T>> {
    let (w, h) = (depth.width(), depth.height());
    let t3 = translation[2];
    if !(t3.value().abs() > EPS_T3) {
        return Err(Error::LateralMotionDegeneracy { t3: t3.value() });
    }
    let t_values = [translation[0].value(), translation[1].value(), t3.value()];
    let div = divergence_kernel(translational)?;
    let shift: Grid<T> = depth.map(|&d| d + t3);
    let mut validity = Grid::from_fn(w, h, |u, v| {
        let ok = |x: usize, y: usize| *depth_mask.get(x, y) && shift.get(x, y).value().abs() >= EPS_GEO;
        depth.is_interior(u, v)
            && *div.mask().get(u, v)
            && ok(u, v)
            && ok(u - 1, v)
            && ok(u + 1, v)
            && ok(u, v - 1)
            && ok(u, v + 1)
    });
    // q is independent of the differentiation targets only up to t; keep it generic.
    let t_ratio = [translation[0] / t3, translation[1] / t3];
    let q_generic: Grid<[T; 2]> = Grid::from_fn(w, h, |u, v| {
        [
            (t_ratio[0] * -k.fx()) + (u as f64 - k.cx()),
            (t_ratio[1] * -k.fy()) + (v as f64 - k.cy()),
        ]
    });
    let q = Grid::from_fn(w, h, |u, v| {
        q_offset(k, t_values, u as f64, v as f64).unwrap_or([0.0, 0.0])
    });
    let inv_shift_grad = match gradient {
        DepthGradient::Stencil => {
            let inv = shift.map(|&s| if s.value().abs() >= EPS_GEO { T::constant(1.0) / s } else { T::zero() });
            Some(central_gradient_kernel(&inv)?)
        }
        DepthGradient::Analytic(_) => None,
    };
    let mut c_f = Vec::with_capacity(w * h);
    let mut c_d = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            if !*validity.get(u, v) {
                c_f.push(T::zero());
                c_d.push(T::zero());
                continue;
            }
            let s = *shift.get(u, v);
            let qp = q_generic.get(u, v);
            let cf = s / (-t3) * *div.values().get(u, v) - IDENTITY_DIVERGENCE;
            let cd = match (&gradient, &inv_shift_grad) {
                (DepthGradient::Stencil, Some(g)) => {
                    let g = g.get(u, v);
                    (qp[0] * g[0] + qp[1] * g[1]) * s
                }
                (DepthGradient::Analytic(grad), _) => {
                    let g = grad.get(u, v);
                    -(qp[0] * (2.0 * g[0]) + qp[1] * (2.0 * g[1])) / s
                }
                _ => unreachable!(),
            };
            if !(cf.value().is_finite() && cd.value().is_finite()) {
                *validity.get_mut(u, v) = false;
                c_f.push(T::zero());
                c_d.push(T::zero());
                continue;
            }
            c_f.push(cf);
            c_d.push(cd);
        }
    }
    Ok(FieldsKernel {
        c_f: Grid::from_vec(w, h, c_f)?,
        c_d: Grid::from_vec(w, h, c_d)?,
        q,
        validity,
    })
}

/// Mean of `|C^D − C^F| / (|C^D| + ε_dpc)` over valid pixels.
pub fn dpc_loss(fields: &DifferentialFields) -> Result<LossValue> {
    Ok(dpc_kernel(fields.c_f.values(), fields.c_d.values(), &fields.validity)?.to_loss_value())
}

pub(crate) fn dpc_kernel<T: Real>(c_f: &Grid<T>, c_d: &Grid<T>, validity: &Mask) -> Result<Reduced<T>> {
    let mut acc = Accumulator::new();
    for i in 0..c_f.len() {
        if !validity.as_slice()[i] {
            continue;
        }
        let cd = c_d.as_slice()[i];
        let mag = cd.abs();
        if mag.value() < EPS_DPC {
            acc.guarded += 1;
        }
        acc.push((cd - c_f.as_slice()[i]).abs() / (mag + EPS_DPC));
    }
    acc.finish()
}

/// Mean of `‖F^R − F^O‖₁ / (‖F^O‖₁ + ε_flow)` over pixels valid in both flows.
pub fn bsca_loss(rigid: &FlowField, optical: &FlowField) -> Result<LossValue> {
    Ok(bsca_kernel(rigid, optical)?.to_loss_value())
}

pub(crate) fn bsca_kernel<T: Real>(rigid: &FlowField<T>, optical: &FlowField<T>) -> Result<Reduced<T>> {
    check_shape(rigid.vectors(), optical.vectors(), "bsca loss")?;
    let mut acc = Accumulator::new();
    let (r, o) = (rigid.vectors().as_slice(), optical.vectors().as_slice());
    for i in 0..r.len() {
        if !(rigid.mask().as_slice()[i] && optical.mask().as_slice()[i]) {
            continue;
        }
        let norm_o = o[i][0].abs() + o[i][1].abs();
        if norm_o.value() < EPS_FLOW {
            acc.guarded += 1;
        }
        let diff = (r[i][0] - o[i][0]).abs() + (r[i][1] - o[i][1]).abs();
        acc.push(diff / (norm_o + EPS_FLOW));
    }
    acc.finish()
}

/// Edge-aware smoothness on mean-normalized depth:
/// `mean|∂_u D*|·e^{−|∂_u I|} + mean|∂_v D*|·e^{−|∂_v I|}` with forward differences.
pub fn edge_aware_smoothness(depth: &DepthMap, image: &Image) -> Result<LossValue> {
    Ok(smoothness_kernel(depth.values(), depth.mask(), image)?.to_loss_value())
}

pub(crate) fn smoothness_kernel<T: Real>(depth: &Grid<T>, mask: &Mask, image: &Image) -> Result<Reduced<T>> {
    let (w, h) = (depth.width(), depth.height());
    if image.width() != w || image.height() != h {
        return Err(Error::Dimension(format!(
            "smoothness: depth {w}x{h} vs image {}x{}",
            image.width(),
            image.height()
        )));
    }
    let mut mean = Accumulator::new();
    for (&d, &m) in depth.as_slice().iter().zip(mask.as_slice()) {
        if m {
            mean.push(d);
        }
    }
    let mean = mean.finish()?;
    let ch = image.channels();
    let intensity_step = |(u0, v0): (usize, usize), (u1, v1): (usize, usize)| {
        (0..ch).map(|c| (image.at(u1, v1, c) - image.at(u0, v0, c)).abs()).sum::<f64>() / ch as f64
    };
    let mut total = T::zero();
    let mut count = 0;
    let mut terms = Vec::new();
    for (du, dv) in [(1usize, 0usize), (0, 1)] {
        let mut axis = Accumulator::new();
        for v in 0..h - dv {
            for u in 0..w - du {
                let (a, b) = ((u, v), (u + du, v + dv));
                if !(*mask.get(a.0, a.1) && *mask.get(b.0, b.1)) {
                    continue;
                }
                let step = (*depth.get(b.0, b.1) - *depth.get(a.0, a.1)).abs();
                axis.push(step * (-intensity_step(a, b)).exp());
            }
        }
        if let Ok(r) = axis.finish() {
            total += r.value;
            count += r.count;
            terms.extend(r.terms);
        }
    }
    if count == 0 {
        return Err(Error::NoValidPixels);
    }
    let value = total / mean.value;
    Ok(Reduced { value, count, guarded: 0, terms, divisor: mean.terms })
}

/// Standard monocular depth error metrics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub count: usize,
}

impl DepthMetrics {
    pub const CSV_HEADER: [&'static str; 8] =
        ["abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3", "count"];

    pub fn csv_fields(&self) -> Vec<String> {
        vec![
            self.abs_rel.to_string(),
            self.sq_rel.to_string(),
            self.rmse.to_string(),
            self.rmse_log.to_string(),
            self.delta1.to_string(),
            self.delta2.to_string(),
            self.delta3.to_string(),
            self.count.to_string(),
        ]
    }
}

/// Abs Rel, Sq Rel, RMSE, RMSE log and δ < 1.25ⁱ accuracies over `mask`.
pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap, mask: &Mask) -> Result<DepthMetrics> {
    check_shape(pred.values(), gt.values(), "depth metrics")?;
    check_shape(pred.values(), mask, "depth metrics mask")?;
    let mut m = DepthMetrics::default();
    let (mut sq, mut sq_log) = (0.0, 0.0);
    for i in 0..mask.len() {
        if !mask.as_slice()[i] {
            continue;
        }
        let (p, g) = (pred.values().as_slice()[i], gt.values().as_slice()[i]);
        if !(p > 0.0 && g > 0.0) {
            return Err(Error::InvalidDepth { depth: p.min(g) });
        }
        let diff = p - g;
        m.abs_rel += diff.abs() / g;
        m.sq_rel += diff * diff / g;
        sq += diff * diff;
        sq_log += (p.ln() - g.ln()).powi(2);
        let ratio = (p / g).max(g / p);
        m.delta1 += (ratio < 1.25) as u8 as f64;
        m.delta2 += (ratio < 1.25f64.powi(2)) as u8 as f64;
        m.delta3 += (ratio < 1.25f64.powi(3)) as u8 as f64;
        m.count += 1;
    }
    if m.count == 0 {
        return Err(Error::NoValidPixels);
    }
    let n = m.count as f64;
    m.abs_rel /= n;
    m.sq_rel /= n;
    m.rmse = (sq / n).sqrt();
    m.rmse_log = (sq_log / n).sqrt();
    m.delta1 /= n;
    m.delta2 /= n;
    m.delta3 /= n;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triangulate::Degeneracy;

    fn image(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> Image {
        Image::from_fn(w, h, 1, |u, v, _| f(u, v)).unwrap()
    }

    #[test]
    fn dissimilarity_matches_ratio_form() {
        let a = image(5, 4, |u, v| 0.5 + 0.3 * ((u * 7 + v * 3) as f64).sin());
        let b = image(5, 4, |u, v| 0.45 + 0.25 * ((u * 5 + v * 2) as f64).cos());
        let d = dssim_kernel(&a, &b).unwrap();
        for v in 0..4 {
            for u in 0..5 {
                let mut xs = Vec::new();
                for dy in -1..=1isize {
                    for dx in -1..=1isize {
                        let (x, y) = (reflect(u as isize + dx, 5), reflect(v as isize + dy, 4));
                        xs.push((a.at(x, y, 0), b.at(x, y, 0)));
                    }
                }
                let mean = |f: &dyn Fn(&(f64, f64)) -> f64| xs.iter().map(f).sum::<f64>() / 9.0;
                let (ma, mb) = (mean(&|p| p.0), mean(&|p| p.1));
                let va = mean(&|p| (p.0 - ma).powi(2));
                let vb = mean(&|p| (p.1 - mb).powi(2));
                let cov = mean(&|p| (p.0 - ma) * (p.1 - mb));
                let ssim = ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
                assert!((1.0 - ssim - d[v * 5 + u]).abs() < 1e-13);
            }
        }
        let same = dssim_kernel(&a, &a).unwrap();
        assert!(same.iter().all(|&x| x == 0.0));
    }

    fn tri(values: Vec<f64>, w: usize, h: usize) -> TriangulationResult {
        let grid = Grid::from_vec(w, h, values).unwrap();
        let mask = grid.map(|&d| d > 0.0);
        TriangulationResult {
            codes: mask.map(|&m| if m { Degeneracy::Ok } else { Degeneracy::NegativeDepth }),
            depth: DepthMap::with_mask(grid, mask).unwrap(),
        }
    }

    #[test]
    fn ssim_examples() {
        let img = image(6, 5, |u, v| ((u * 7 + v * 3) % 5) as f64 / 4.0);
        let s = ssim(&img, &img).unwrap();
        assert!(s.values().as_slice().iter().all(|&x| x == 1.0));
        let inv = image(6, 5, |u, v| 1.0 - ((u * 7 + v * 3) % 5) as f64 / 4.0);
        let s = ssim(&img, &inv).unwrap();
        assert!(s.values().as_slice().iter().all(|&x| x < 1.0 && x >= -1.0));
        let half = Image::constant(4, 4, 3, 0.5).unwrap();
        assert!(ssim(&half, &half).unwrap().values().as_slice().iter().all(|&x| x == 1.0));
        assert!(matches!(ssim(&half, &Image::constant(4, 3, 3, 0.5).unwrap()), Err(Error::Dimension(_))));
    }

    #[test]
    fn photometric_examples() {
        let a = image(5, 4, |u, v| (u + v) as f64 / 8.0);
        let mask = Mask::all(5, 4);
        assert_eq!(photometric_loss(&a, &a, &mask, DEFAULT_ALPHA).unwrap().value, 0.0);
        let t = Image::constant(5, 4, 1, 0.2).unwrap();
        let w = Image::constant(5, 4, 1, 0.5).unwrap();
        let l = photometric_loss(&t, &w, &mask, 0.0).unwrap();
        assert!((l.value - 0.3).abs() < 1e-15);
        assert_eq!(l.valid_pixel_count, 20);
        assert!(matches!(
            photometric_loss(&t, &w, &Mask::filled(5, 4, false), 0.85),
            Err(Error::NoValidPixels)
        ));
        assert!(photometric_loss(&t, &w, &mask, 1.5).is_err());
    }

    #[test]
    fn cgdc_examples() {
        let dc = DepthMap::new(Grid::from_vec(3, 1, vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        assert_eq!(cgdc_loss(&tri(vec![1.0, 2.0, 3.0], 3, 1), &dc).unwrap().value, 0.0);
        let one = DepthMap::new(Grid::from_vec(1, 1, vec![1.0]).unwrap()).unwrap();
        assert_eq!(cgdc_loss(&tri(vec![2.0], 1, 1), &one).unwrap().value, 1.0);
        let two = DepthMap::new(Grid::from_vec(1, 1, vec![2.0]).unwrap()).unwrap();
        assert_eq!(cgdc_loss(&tri(vec![1.0], 1, 1), &two).unwrap().value, 0.5);
        assert!(matches!(cgdc_loss(&tri(vec![-1.0], 1, 1), &two), Err(Error::NoValidPixels)));
    }

    fn fields(c_f: Vec<f64>, c_d: Vec<f64>) -> DifferentialFields {
        let n = c_f.len();
        let mask = Mask::all(n, 1);
        DifferentialFields {
            c_f: ScalarField::new(Grid::from_vec(n, 1, c_f).unwrap(), mask.clone()).unwrap(),
            c_d: ScalarField::new(Grid::from_vec(n, 1, c_d).unwrap(), mask.clone()).unwrap(),
            q: Grid::filled(n, 1, [0.0, 0.0]),
            validity: mask,
        }
    }

    #[test]
    fn dpc_examples() {
        assert_eq!(dpc_loss(&fields(vec![0.5, -2.0], vec![0.5, -2.0])).unwrap().value, 0.0);
        let l = dpc_loss(&fields(vec![1.0], vec![2.0])).unwrap();
        assert!((l.value - 1.0 / (2.0 + 1e-4)).abs() < 1e-15);
        assert!((l.value - 0.49998).abs() < 1e-5);
        let flat = dpc_loss(&fields(vec![0.01], vec![0.0])).unwrap();
        assert!((flat.value - 100.0).abs() < 1e-9);
        assert_eq!(flat.guarded_pixel_count, 1);
    }

    #[test]
    fn bsca_examples() {
        let f = |x: [f64; 2]| FlowField::new(Grid::filled(1, 1, x)).unwrap();
        assert_eq!(bsca_loss(&f([2.0, -1.0]), &f([2.0, -1.0])).unwrap().value, 0.0);
        let l = bsca_loss(&f([2.0, 0.0]), &f([1.0, 0.0])).unwrap();
        assert!((l.value - 1.0 / 1.001).abs() < 1e-15);
        let g = bsca_loss(&f([0.5, 0.0]), &f([0.0, 0.0])).unwrap();
        assert!((g.value - 500.0).abs() < 1e-9);
        assert_eq!(g.guarded_pixel_count, 1);
        assert!(matches!(bsca_loss(&f([0.0; 2]), &FlowField::zeros(2, 1)), Err(Error::Dimension(_))));
    }

    #[test]
    fn smoothness_examples() {
        let img = Image::constant(6, 4, 1, 0.5).unwrap();
        let flat = DepthMap::constant(6, 4, 3.0).unwrap();
        assert_eq!(edge_aware_smoothness(&flat, &img).unwrap().value, 0.0);

        let ramp = DepthMap::new(Grid::from_fn(6, 4, |u, _| 2.0 + 0.5 * u as f64)).unwrap();
        let mean = 2.0 + 0.5 * 2.5;
        let l = edge_aware_smoothness(&ramp, &img).unwrap();
        assert!((l.value - 0.5 / mean).abs() < 1e-15);

        let step = DepthMap::new(Grid::from_fn(6, 4, |u, _| if u < 3 { 2.0 } else { 4.0 })).unwrap();
        let edge_img = image(6, 4, |u, _| if u < 3 { 0.0 } else { 1.0 });
        assert!(edge_aware_smoothness(&step, &edge_img).unwrap().value < edge_aware_smoothness(&step, &img).unwrap().value);
    }

    #[test]
    fn metrics_examples() {
        let gt = DepthMap::new(Grid::from_fn(4, 3, |u, v| 1.0 + u as f64 + 0.5 * v as f64)).unwrap();
        let mask = Mask::all(4, 3);
        let same = depth_metrics(&gt, &gt, &mask).unwrap();
        assert_eq!((same.abs_rel, same.delta1, same.delta2, same.delta3), (0.0, 1.0, 1.0, 1.0));
        let m = depth_metrics(&gt.scaled(1.2).unwrap(), &gt, &mask).unwrap();
        assert!((m.abs_rel - 0.2).abs() < 1e-12);
        assert_eq!(m.delta1, 1.0);
        let m = depth_metrics(&gt.scaled(2.0).unwrap(), &gt, &mask).unwrap();
        assert_eq!((m.delta1, m.delta2, m.delta3), (0.0, 0.0, 0.0));
        assert!((m.abs_rel - 1.0).abs() < 1e-12);
        assert!(matches!(depth_metrics(&gt, &gt, &Mask::filled(4, 3, false)), Err(Error::NoValidPixels)));
    }
}
