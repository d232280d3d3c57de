//! Exact loss derivatives via the reverse-mode tape, and a central-difference
//! checker used as the oracle for them.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ad::{Real, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{
    rigid_flow_kernel, rotational_flow_kernel, translational_flow_kernel, warp_kernel, CameraIntrinsics, Pose,
    TwistParams,
};
use crate::grid::{DepthMap, FlowField, Grid, Image, Mask, ScalarField};
use crate::losses::{
    bsca_kernel, cgdc_kernel, dpc_kernel, fields_kernel, photometric_kernel, smoothness_kernel, DepthGradient,
    LossValue, Reduced,
};
use crate::triangulate::{triangulate_kernel, EPS_DENOMINATOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossId {
    Photometric,
    Cgdc,
    Dpc,
    Bsca,
    Smoothness,
}

impl LossId {
    pub const ALL: [LossId; 5] = [LossId::Photometric, LossId::Cgdc, LossId::Dpc, LossId::Bsca, LossId::Smoothness];

    pub fn name(self) -> &'static str {
        match self {
            LossId::Photometric => "photometric",
            LossId::Cgdc => "cgdc",
            LossId::Dpc => "dpc",
            LossId::Bsca => "bsca",
            LossId::Smoothness => "smoothness",
        }
    }
}

impl fmt::Display for LossId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossId {
    type Err = Error;

    fn from_str(s: &str) -> Result<LossId> {
        LossId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown loss '{s}'")))
    }
}

/// Everything a loss may read. `flow` is the optical flow `F^O`.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub intrinsics: &'a CameraIntrinsics,
    pub twist: TwistParams,
    pub depth: &'a DepthMap,
    pub flow: &'a FlowField,
    pub image_t: &'a Image,
    pub image_s: &'a Image,
    /// SSIM weight of the photometric loss.
    pub alpha: f64,
    /// Treat the triangulated depth as a constant computed at the given pose and flow.
    pub stop_gradient: bool,
}

impl LossInputs<'_> {
    fn check(&self) -> Result<()> {
        let (w, h) = (self.depth.width(), self.depth.height());
        let same = |a: usize, b: usize| a == w && b == h;
        if !same(self.flow.width(), self.flow.height())
            || !same(self.image_t.width(), self.image_t.height())
            || !same(self.image_s.width(), self.image_s.height())
        {
            return Err(Error::Dimension("loss inputs must share one grid".into()));
        }
        self.image_t.check_same(self.image_s, "loss inputs")
    }
}

/// Which inputs receive derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Targets {
    pub depth: bool,
    pub twist: bool,
    pub flow: bool,
}

impl Targets {
    pub const ALL: Targets = Targets { depth: true, twist: true, flow: true };
    pub const DEPTH: Targets = Targets { depth: true, twist: false, flow: false };
    pub const FLOW: Targets = Targets { depth: false, twist: false, flow: true };
}

/// Derivatives of a (weighted sum of) masked-mean loss(es).
#[derive(Debug, Clone)]
pub struct LossGradient {
    /// Weighted objective value.
    pub value: f64,
    pub terms: Vec<(LossId, LossValue)>,
    /// `∂L/∂D`; zero outside the depth mask or when depth is not a target.
    pub d_depth: ScalarField,
    pub d_twist: [f64; 6],
    pub d_flow: Option<FlowField>,
}

/// Differentiable state of one evaluation.
struct State<T> {
    twist: [T; 6],
    depth: Grid<T>,
    flow: FlowField<T>,
    /// Pose and flow feeding triangulation (frozen copies under stop-gradient).
    geo_twist: [T; 6],
    geo_flow: FlowField<T>,
}

fn mix(h: u64, x: u64) -> u64 {
    (h ^ x).wrapping_mul(0x0000_0100_0000_01b3)
}

/// Loss value plus a fingerprint of its discrete structure (support, guards,
/// bilinear cells). A change in fingerprint marks a non-differentiable step.
fn evaluate_kernel<T: Real>(id: LossId, inputs: &LossInputs, s: &State<T>) -> Result<(Reduced<T>, u64)> {
    let k = inputs.intrinsics;
    let depth_mask = inputs.depth.mask();
    let (reduced, support) = match id {
        LossId::Photometric => {
            let pose = Pose::from_twist(&s.twist);
            let rigid = rigid_flow_kernel(k, &pose, &s.depth, depth_mask);
            let warped = warp_kernel(inputs.image_s, &rigid)?;
            let target = Image::<T>::lift(inputs.image_t);
            let r = photometric_kernel(&target, &warped.image, &warped.mask, inputs.alpha)?;
            let mut h = warped.mask.fingerprint();
            for (f, &m) in rigid.vectors().as_slice().iter().zip(warped.mask.as_slice()) {
                if m {
                    h = mix(h, f[0].value().floor() as i64 as u64);
                    h = mix(h, f[1].value().floor() as i64 as u64);
                }
            }
            (r, h)
        }
        LossId::Cgdc => {
            let pose = Pose::from_twist(&s.geo_twist);
            let (dg, codes) = triangulate_kernel(k, &pose, &s.geo_flow, EPS_DENOMINATOR);
            let valid = codes.map(|&c| c == crate::triangulate::Degeneracy::Ok);
            let r = cgdc_kernel(&dg, &valid, &s.depth, depth_mask)?;
            (r, valid.fingerprint())
        }
        LossId::Dpc => {
            let pose = Pose::from_twist(&s.twist);
            let rot = rotational_flow_kernel(k, &pose.rotation, s.depth.width(), s.depth.height());
            let tra = translational_flow_kernel(&s.flow, &rot)?;
            let fields = fields_kernel(k, &pose.translation, &s.depth, depth_mask, &tra, DepthGradient::Stencil)?;
            let r = dpc_kernel(&fields.c_f, &fields.c_d, &fields.validity)?;
            (r, fields.validity.fingerprint())
        }
        LossId::Bsca => {
            let pose = Pose::from_twist(&s.twist);
            let rigid = rigid_flow_kernel(k, &pose, &s.depth, depth_mask);
            let r = bsca_kernel(&rigid, &s.flow)?;
            (r, rigid.mask().fingerprint())
        }
        LossId::Smoothness => {
            let r = smoothness_kernel(&s.depth, depth_mask, inputs.image_t)?;
            (r, depth_mask.fingerprint())
        }
    };
    let support = mix(mix(support, reduced.count as u64), reduced.guarded as u64);
    Ok((reduced, support))
}

fn constant_state(inputs: &LossInputs) -> State<f64> {
    State {
        twist: inputs.twist.0,
        depth: inputs.depth.values().clone(),
        flow: inputs.flow.clone(),
        geo_twist: inputs.twist.0,
        geo_flow: inputs.flow.clone(),
    }
}

/// Plain evaluation of one loss on the given inputs.
pub fn evaluate_loss(id: LossId, inputs: &LossInputs) -> Result<LossValue> {
    inputs.check()?;
    Ok(evaluate_kernel(id, inputs, &constant_state(inputs))?.0.to_loss_value())
}

/// Exact derivatives of a single loss.
pub fn loss_gradient(id: LossId, inputs: &LossInputs, targets: Targets) -> Result<LossGradient> {
    objective_gradient(&[(id, 1.0)], inputs, targets)
}

/// Exact derivatives of `Σ wᵢ·Lᵢ`; zero-weight terms are skipped.
pub fn objective_gradient(terms: &[(LossId, f64)], inputs: &LossInputs, targets: Targets) -> Result<LossGradient> {
    inputs.check()?;
    if terms.iter().all(|&(_, w)| w == 0.0) {
        return Err(Error::InvalidConfig("objective has no nonzero weight".into()));
    }
    let tape = Tape::new();
    let twist: [Var; 6] = inputs.twist.0.map(|x| if targets.twist { tape.var(x) } else { Var::constant(x) });
    let depth_mask = inputs.depth.mask();
    let mut i = 0;
    let depth = inputs.depth.values().map(|&d| {
        let valid = depth_mask.as_slice()[i];
        i += 1;
        if targets.depth && valid {
            tape.var(d)
        } else {
            Var::constant(d)
        }
    });
    let flow_mask = inputs.flow.mask();
    let mut i = 0;
    let flow_vectors = inputs.flow.vectors().map(|f| {
        let valid = flow_mask.as_slice()[i];
        i += 1;
        if targets.flow && valid {
            [tape.var(f[0]), tape.var(f[1])]
        } else {
            [Var::constant(f[0]), Var::constant(f[1])]
        }
    });
    let flow = FlowField::from_parts(flow_vectors, flow_mask.clone());
    let (geo_twist, geo_flow) = if inputs.stop_gradient {
        (inputs.twist.0.map(Var::constant), FlowField::from_parts(Grid::lift2(inputs.flow.vectors()), flow_mask.clone()))
    } else {
        (twist, flow.clone())
    };
    let state = State { twist, depth, flow, geo_twist, geo_flow };

    let mut total = Var::zero();
    let mut values = Vec::new();
    for &(id, w) in terms {
        if w == 0.0 {
            continue;
        }
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::InvalidConfig(format!("weight {w} for {id} must be ≥ 0")));
        }
        let (r, _) = evaluate_kernel(id, inputs, &state)?;
        total = total + r.value * w;
        values.push((id, r.to_loss_value()));
    }
    let g = tape.gradient(total);
    let d_depth = ScalarField::new(state.depth.map(|&d| g.wrt(d)), depth_mask.clone())?;
    let d_twist = state.twist.map(|t| g.wrt(t));
    let d_flow = targets
        .flow
        .then(|| FlowField::from_parts(state.flow.vectors().map(|f| [g.wrt(f[0]), g.wrt(f[1])]), flow_mask.clone()));
    Ok(LossGradient { value: total.value(), terms: values, d_depth, d_twist, d_flow })
}

/// One compared coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub coordinate: String,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    /// Coordinates skipped because a perturbation changed the discrete structure.
    pub excluded: Vec<String>,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub const CSV_HEADER: [&'static str; 4] = ["coordinate", "analytic", "finite_difference", "relative_error"];

    pub fn csv_rows(&self) -> Vec<[String; 4]> {
        self.entries
            .iter()
            .map(|e| {
                [
                    e.coordinate.clone(),
                    format!("{:e}", e.analytic),
                    format!("{:e}", e.numeric),
                    format!("{:e}", e.relative_error),
                ]
            })
            .collect()
    }
}

fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for x in values {
        let t = sum + x;
        c += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + c
}

/// `|a − fd| / max(|a|, |fd|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// One evaluation of a checked objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    /// Additive contributions whose sum is the objective. Differences are
    /// taken term by term, so terms untouched by a perturbation cancel exactly.
    pub terms: Vec<f64>,
    /// When non-empty the objective is `Σ terms / Σ divisor`; the divisor is
    /// differenced term by term as well.
    pub divisor: Vec<f64>,
    /// Discrete structure (support, guards); a change marks a non-differentiable step.
    pub fingerprint: u64,
}

impl Probe {
    pub fn scalar(value: f64) -> Probe {
        Probe { terms: vec![value], divisor: Vec::new(), fingerprint: 0 }
    }
}

/// `f(plus) − f(minus)` from term-wise differences. For a ratio `S/M` it uses
/// `(ΔS·M₋ − S₋·ΔM) / (M₊·M₋)`, so a divisor shared by every term does not
/// bring the rounding of the whole sum into the difference.
fn probe_difference(plus: &Probe, minus: &Probe) -> f64 {
    let diff = |a: &[f64], b: &[f64]| compensated_sum(a.iter().zip(b).map(|(x, y)| x - y));
    let d_terms = diff(&plus.terms, &minus.terms);
    if plus.divisor.is_empty() {
        return d_terms;
    }
    let d_divisor = diff(&plus.divisor, &minus.divisor);
    let (s_minus, m_minus) = (compensated_sum(minus.terms.iter().copied()), compensated_sum(minus.divisor.iter().copied()));
    let m_plus = compensated_sum(plus.divisor.iter().copied());
    (d_terms * m_minus - s_minus * d_divisor) / (m_plus * m_minus)
}

/// Compares `analytic[i]` with `(f(xᵢ + h) − f(xᵢ − h)) / 2h`.
///
/// `eval(i, delta)` evaluates the objective with coordinate `i` shifted by
/// `delta`; coordinates whose fingerprint differs from the unperturbed one are
/// excluded and listed.
pub fn central_difference_check(
    coordinates: &[(String, f64)],
    step: f64,
    tolerance: f64,
    mut eval: impl FnMut(usize, f64) -> Result<Probe>,
) -> Result<GradCheckReport> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidConfig(format!("step {step} must be > 0")));
    }

    let mut entries = Vec::new();
    let mut excluded = Vec::new();
    for (i, (label, analytic)) in coordinates.iter().enumerate() {
        let base = eval(i, 0.0)?.fingerprint;
        let plus = eval(i, step);
        let minus = eval(i, -step);
        match (plus, minus) {
            (Ok(p), Ok(m))
                if p.fingerprint == base
                    && m.fingerprint == base
                    && p.terms.len() == m.terms.len()
                    && p.divisor.len() == m.divisor.len() =>
            {
                let numeric = probe_difference(&p, &m) / (2.0 * step);
                entries.push(GradCheckEntry {
                    coordinate: label.clone(),
                    analytic: *analytic,
                    numeric,
                    relative_error: relative_error(*analytic, numeric),
                });
            }
            (Err(Error::NoValidPixels), _) | (_, Err(Error::NoValidPixels)) | (Ok(_), Ok(_)) => {
                excluded.push(label.clone())
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
    }
    let max_relative_error = entries.iter().map(|e| e.relative_error).fold(0.0, f64::max);
    let passed = !entries.is_empty() && max_relative_error < tolerance;
    Ok(GradCheckReport { entries, excluded, max_relative_error, tolerance, passed })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdOptions {
    pub step: f64,
    pub depth_samples: usize,
    pub flow_samples: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions { step: 1e-6, depth_samples: 64, flow_samples: 16, seed: 0, tolerance: 1e-5 }
    }
}

#[derive(Debug, Clone, Copy)]
enum Coordinate {
    Twist(usize),
    Depth(usize),
    Flow(usize, usize),
}

/// Checks [`loss_gradient`] against central differences on all six twist
/// coordinates and randomly sampled valid depth pixels and flow components.
pub fn finite_difference_check(id: LossId, inputs: &LossInputs, options: &FdOptions) -> Result<GradCheckReport> {
    let grad = loss_gradient(id, inputs, Targets::ALL)?;
    let d_flow = grad.d_flow.as_ref().expect("flow is a target");
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let valid_depth: Vec<usize> =
        (0..inputs.depth.values().len()).filter(|&i| inputs.depth.mask().as_slice()[i]).collect();
    let valid_flow: Vec<usize> =
        (0..inputs.flow.vectors().len()).filter(|&i| inputs.flow.mask().as_slice()[i]).collect();

    let mut coords: Vec<Coordinate> = (0..6).map(Coordinate::Twist).collect();
    let n = options.depth_samples.min(valid_depth.len());
    let mut picked: Vec<usize> = sample(&mut rng, valid_depth.len(), n).into_iter().map(|j| valid_depth[j]).collect();
    picked.sort_unstable();
    coords.extend(picked.into_iter().map(Coordinate::Depth));
    let n = options.flow_samples.min(valid_flow.len());
    let mut picked: Vec<usize> = sample(&mut rng, valid_flow.len(), n).into_iter().map(|j| valid_flow[j]).collect();
    picked.sort_unstable();
    coords.extend(picked.into_iter().enumerate().map(|(j, i)| Coordinate::Flow(i, j % 2)));

    let w = inputs.depth.width();
    let labelled: Vec<(String, f64)> = coords
        .iter()
        .map(|c| match *c {
            Coordinate::Twist(j) => (format!("twist[{j}]"), grad.d_twist[j]),
            Coordinate::Depth(i) => (format!("depth({},{})", i % w, i / w), grad.d_depth.values().as_slice()[i]),
            Coordinate::Flow(i, c) => (
                format!("flow({},{}).{}", i % w, i / w, ["u", "v"][c]),
                d_flow.vectors().as_slice()[i][c],
            ),
        })
        .collect();

    let base = constant_state(inputs);
    central_difference_check(&labelled, options.step, options.tolerance, |j, delta| {
        let mut s = State {
            twist: base.twist,
            depth: base.depth.clone(),
            flow: base.flow.clone(),
            geo_twist: base.geo_twist,
            geo_flow: base.geo_flow.clone(),
        };
        match coords[j] {
            Coordinate::Twist(c) => s.twist[c] += delta,
            Coordinate::Depth(i) => s.depth.as_mut_slice()[i] += delta,
            Coordinate::Flow(i, c) => s.flow.vectors.as_mut_slice()[i][c] += delta,
        }
        if !inputs.stop_gradient {
            s.geo_twist = s.twist;
            s.geo_flow = s.flow.clone();
        }
        let (result, kinks) = crate::ad::record_kinks(|| evaluate_kernel(id, inputs, &s));
        let (r, fingerprint) = result?;
        Ok(Probe { terms: r.terms, divisor: r.divisor, fingerprint: mix(fingerprint, kinks) })
    })
}

/// Masked depth-gradient helper: `∂L/∂D` only where `mask` holds.
pub fn restrict(gradient: &ScalarField, mask: &Mask) -> Result<ScalarField> {
    let values = Grid::from_fn(gradient.values().width(), gradient.values().height(), |u, v| {
        if *mask.get(u, v) {
            *gradient.values().get(u, v)
        } else {
            0.0
        }
    });
    ScalarField::new(values, gradient.mask().and(mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rigid_flow, RigidMotion};
    use crate::scene::{synthesize, DepthFamily, SceneSpec};

    struct Fixture {
        k: CameraIntrinsics,
        twist: TwistParams,
        depth: DepthMap,
        flow: FlowField,
        image_t: Image,
        image_s: Image,
    }

    fn fixture() -> Fixture {
        let k = CameraIntrinsics::new(20.0, 20.0, 8.0, 6.0).unwrap();
        let motion = RigidMotion::from_axis_angle([0.01, -0.02, 0.015], [0.3, 0.1, 0.2]);
        let spec = SceneSpec::new(DepthFamily::AffineInverseShift { a: 0.2, b: 3e-3, c: -2e-3 });
        let b = synthesize(&spec, &k, &motion, 16, 12).unwrap();
        let depth = DepthMap::new(Grid::from_fn(16, 12, |u, v| {
            b.depth_gt.values().get(u, v) * (1.0 + 0.1 * ((u * 7 + v * 3) % 5) as f64 / 5.0 - 0.05)
        }))
        .unwrap();
        Fixture { k, twist: motion.to_twist(), depth, flow: b.flow_gt, image_t: b.image_t, image_s: b.image_s }
    }

    fn inputs(f: &Fixture) -> LossInputs<'_> {
        LossInputs {
            intrinsics: &f.k,
            twist: f.twist,
            depth: &f.depth,
            flow: &f.flow,
            image_t: &f.image_t,
            image_s: &f.image_s,
            alpha: 0.85,
            stop_gradient: false,
        }
    }

    #[test]
    fn quadratic_functional_agrees_exactly() {
        let d0 = [1.0, 2.5, -0.5, 4.0];
        let x = [1.5, 2.0, 0.25, 3.0];
        let n = d0.len() as f64;
        let coords: Vec<(String, f64)> = (0..4).map(|i| (format!("x{i}"), 2.0 * (x[i] - d0[i]) / n)).collect();
        let report = central_difference_check(&coords, 1e-3, 1e-10, |i, delta| {
            let mut y = x;
            y[i] += delta;
            Ok(Probe::scalar(y.iter().zip(&d0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n))
        })
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn perturbation_changing_support_is_excluded() {
        let coords = vec![("x".to_string(), 1.0)];
        let report = central_difference_check(&coords, 1e-6, 1e-5, |_, delta| {
            Ok(Probe { terms: vec![delta], divisor: Vec::new(), fingerprint: (delta > 0.0) as u64 })
        }).unwrap();
        assert_eq!(report.excluded, vec!["x".to_string()]);
        assert!(report.entries.is_empty());
    }

    #[test]
    fn every_loss_passes_the_finite_difference_check() {
        let f = fixture();
        for stop_gradient in [false, true] {
            let mut inp = inputs(&f);
            inp.stop_gradient = stop_gradient;
            for id in LossId::ALL {
                let report = finite_difference_check(id, &inp, &FdOptions::default()).unwrap();
                assert!(report.passed, "{id} stopgrad={stop_gradient}: {}", report.max_relative_error);
                assert!(report.entries.len() >= 6 + 64 - report.excluded.len().min(64));
            }
        }
    }

    #[test]
    fn photometric_l1_gradient_hand_calculation() {
        // α = 0 and warped = target + 0.1 everywhere: each warped sample on the
        // support carries adjoint 1/(N·channels); masked samples carry none.
        let target = Image::from_fn(4, 4, 3, |u, v, c| 0.2 + 0.05 * (u + v + c) as f64).unwrap();
        let mut mask = Mask::all(4, 4);
        for v in 0..4 {
            *mask.get_mut(3, v) = false;
        }
        let n = 12.0 * 3.0;
        let tape = Tape::new();
        let warped: Vec<Var> = target.as_slice().iter().map(|&x| tape.var(x + 0.1)).collect();
        let image = Image::from_raw(4, 4, 3, warped.clone()).unwrap();
        let r = photometric_kernel(&Image::<Var>::lift(&target), &image, &mask, 0.0).unwrap();
        assert!((r.value.value() - 0.1).abs() < 1e-15);
        let g = tape.gradient(r.value);
        for (i, s) in warped.iter().enumerate() {
            let expected = if (i / 3) % 4 == 3 { 0.0 } else { 1.0 / n };
            assert!((g.wrt(*s) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn static_self_pair_has_zero_twist_gradient() {
        let k = CameraIntrinsics::new(20.0, 20.0, 8.0, 6.0).unwrap();
        let image = Image::from_fn(16, 12, 1, |u, v, _| 0.5 + 0.3 * ((u as f64) * 0.7 + (v as f64) * 0.4).sin()).unwrap();
        let depth = DepthMap::constant(16, 12, 3.0).unwrap();
        let flow = FlowField::zeros(16, 12);
        let inp = LossInputs {
            intrinsics: &k,
            twist: TwistParams([0.0; 6]),
            depth: &depth,
            flow: &flow,
            image_t: &image,
            image_s: &image,
            alpha: 0.85,
            stop_gradient: false,
        };
        let g = loss_gradient(LossId::Photometric, &inp, Targets::ALL).unwrap();
        assert_eq!(g.value, 0.0);
        assert!(g.d_twist.iter().all(|&x| x.abs() < 1e-10), "{:?}", g.d_twist);
    }

    #[test]
    fn gradients_vanish_at_fixed_points() {
        let k = CameraIntrinsics::new(20.0, 20.0, 8.0, 6.0).unwrap();
        let motion = RigidMotion::from_axis_angle([0.0; 3], [0.3, 0.1, 0.2]);
        let spec = SceneSpec::new(DepthFamily::AffineInverseShift { a: 0.2, b: 3e-3, c: -2e-3 });
        let b = synthesize(&spec, &k, &motion, 16, 12).unwrap();
        let flow = rigid_flow(&k, &motion, &b.depth_gt);
        let inp = LossInputs {
            intrinsics: &k,
            twist: motion.to_twist(),
            depth: &b.depth_gt,
            flow: &flow,
            image_t: &b.image_t,
            image_s: &b.image_s,
            alpha: 0.85,
            stop_gradient: false,
        };
        for id in [LossId::Bsca, LossId::Dpc] {
            let g = loss_gradient(id, &inp, Targets::DEPTH).unwrap();
            assert!(g.value < 1e-8, "{id} {}", g.value);
        }
        // L_b sits at an abs kink at the fixed point; the zero subgradient is chosen
        let g = loss_gradient(LossId::Bsca, &inp, Targets::ALL).unwrap();
        let norm: f64 = g.d_depth.values().as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-10);
    }

    #[test]
    fn zero_objective_rejected() {
        let f = fixture();
        assert!(objective_gradient(&[(LossId::Cgdc, 0.0)], &inputs(&f), Targets::DEPTH).is_err());
    }
}
