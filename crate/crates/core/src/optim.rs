//! Direct optimization of a per-pixel depth field (and, for co-adjustment, a
//! free optical-flow field) against the correspondence-driven losses.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ad::Real;
use crate::error::{Error, Result};
use crate::geometry::rigid_flow;
use crate::grad::{objective_gradient, LossId, LossInputs, Targets};
use crate::grid::{DepthMap, FlowField, Grid, Mask};
use crate::losses::{depth_metrics, DepthMetrics, DEFAULT_ALPHA};
use crate::scene::SceneBundle;

/// Losses above this (or non-finite) abort a run.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub photometric: f64,
    pub cgdc: f64,
    pub dpc: f64,
    pub bsca: f64,
    pub smoothness: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { photometric: 0.0, cgdc: 1.0, dpc: 0.1, bsca: 0.0, smoothness: 0.0 }
    }
}

impl LossWeights {
    /// `w_p, w_c, w_d, w_b` with smoothness off.
    pub fn new(photometric: f64, cgdc: f64, dpc: f64, bsca: f64) -> Self {
        LossWeights { photometric, cgdc, dpc, bsca, smoothness: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.photometric, self.cgdc, self.dpc, self.bsca, self.smoothness];
        if !all.iter().all(|w| *w >= 0.0 && w.is_finite()) {
            return Err(Error::InvalidConfig("loss weights must be finite and ≥ 0".into()));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(Error::InvalidConfig("all loss weights are zero".into()));
        }
        Ok(())
    }

    /// Terms that drive the depth field; `dpc_scale` multiplies `w_d`.
    fn depth_terms(&self, dpc_scale: f64) -> Vec<(LossId, f64)> {
        [
            (LossId::Photometric, self.photometric),
            (LossId::Cgdc, self.cgdc),
            (LossId::Dpc, self.dpc * dpc_scale),
            (LossId::Smoothness, self.smoothness),
        ]
        .into_iter()
        .filter(|&(_, w)| w > 0.0)
        .collect()
    }
}

/// Positivity-preserving map from the free parameter θ to depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DepthParameterization {
    /// `D = e^θ`.
    #[default]
    Log,
    /// `D = ln(1 + e^θ)`.
    Softplus,
}

impl DepthParameterization {
    pub fn depth(self, theta: f64) -> f64 {
        match self {
            DepthParameterization::Log => theta.exp(),
            DepthParameterization::Softplus => theta.softplus(),
        }
    }

    pub fn theta(self, depth: f64) -> f64 {
        match self {
            DepthParameterization::Log => depth.ln(),
            // ln(e^D − 1) = D + ln(1 − e^−D)
            DepthParameterization::Softplus => depth + (-(-depth).exp()).ln_1p(),
        }
    }

    /// `dD/dθ`.
    fn slope(self, theta: f64) -> f64 {
        match self {
            DepthParameterization::Log => theta.exp(),
            DepthParameterization::Softplus => 1.0 / (1.0 + (-theta).exp()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DepthInit {
    GroundTruth,
    /// Ground truth times a per-pixel factor drawn log-uniformly from `[low, high]`.
    RandomScale { low: f64, high: f64 },
    /// Ground truth times one factor drawn log-uniformly from `[low, high]`.
    RandomGlobalScale { low: f64, high: f64 },
    Constant(f64),
}

/// How the step length is chosen along the negative gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// `θ ← θ − lr·N·∇L`; the gradient of a mean over `N` pixels is rescaled so
    /// `lr` is a per-pixel step.
    Fixed { lr: f64 },
    /// `θ ← θ − γ·L/‖∇L‖²·∇L`, aiming at a loss of 0. Per-coordinate moves are
    /// clipped to `max_step`.
    Polyak { gamma: f64, max_step: f64 },
    /// Adam moments with the rate cosine-annealed from `lr` to 0 over the run.
    Adam { lr: f64, beta1: f64, beta2: f64 },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Polyak { gamma: 1.0, max_step: 0.5 }
    }
}

/// Per-run optimizer memory.
#[derive(Debug, Clone, Default)]
struct StepState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl StepRule {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepRule::Fixed { lr } => lr > 0.0 && lr.is_finite(),
            StepRule::Polyak { gamma, max_step } => gamma > 0.0 && gamma < 2.0 && max_step > 0.0,
            StepRule::Adam { lr, beta1, beta2 } => {
                lr > 0.0 && lr.is_finite() && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid step rule {self:?}")))
        }
    }

    /// Step vector (to be subtracted) for gradient `g` of a loss with value
    /// `loss`; `progress` in `[0, 1]` drives annealing.
    fn step(&self, state: &mut StepState, loss: f64, g: &[f64], progress: f64) -> Vec<f64> {
        let n = g.len() as f64;
        match *self {
            StepRule::Fixed { lr } => g.iter().map(|x| lr * n * x).collect(),
            StepRule::Polyak { gamma, max_step } => {
                let norm2: f64 = g.iter().map(|x| x * x).sum();
                if !(norm2 > 0.0) {
                    return vec![0.0; g.len()];
                }
                let scale = gamma * loss / norm2;
                g.iter().map(|x| (scale * x).clamp(-max_step, max_step)).collect()
            }
            StepRule::Adam { lr, beta1, beta2 } => {
                if state.m.len() != g.len() {
                    state.m = vec![0.0; g.len()];
                    state.v = vec![0.0; g.len()];
                    state.t = 0;
                }
                state.t += 1;
                let rate = 0.5 * lr * (1.0 + (std::f64::consts::PI * progress.clamp(0.0, 1.0)).cos());
                let (c1, c2) = (1.0 - beta1.powi(state.t), 1.0 - beta2.powi(state.t));
                let mut out = Vec::with_capacity(g.len());
                for ((m, v), &x) in state.m.iter_mut().zip(state.v.iter_mut()).zip(g) {
                    let x = x * n;
                    *m = beta1 * *m + (1.0 - beta1) * x;
                    *v = beta2 * *v + (1.0 - beta2) * x * x;
                    out.push(rate * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS));
                }
                out
            }
        }
    }
}

const ADAM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub weights: LossWeights,
    pub step: StepRule,
    /// Step rule for the free flow field (co-adjustment only); `Fixed` is in pixels.
    pub flow_step: StepRule,
    pub iterations: usize,
    pub parameterization: DepthParameterization,
    pub init: DepthInit,
    pub stop_gradient: bool,
    pub seed: u64,
    /// Heavy-ball coefficient in `[0, 1)`; 0 is plain gradient descent.
    pub momentum: f64,
    pub record_every: usize,
    pub alpha: f64,
    /// Iterations before the flow field starts receiving updates.
    pub flow_warmup: usize,
    /// Iterations run with `w_d = 0` before the DPC term switches on.
    pub dpc_delay: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            weights: LossWeights::default(),
            step: StepRule::default(),
            flow_step: StepRule::Adam { lr: 0.005, beta1: 0.9, beta2: 0.999 },
            iterations: 2000,
            parameterization: DepthParameterization::Log,
            init: DepthInit::RandomScale { low: 0.5, high: 2.0 },
            stop_gradient: false,
            seed: 0,
            momentum: 0.0,
            record_every: 10,
            alpha: DEFAULT_ALPHA,
            flow_warmup: 100,
            dpc_delay: 400,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.step.validate()?;
        self.flow_step.validate()?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidConfig("record_every must be ≥ 1".into()));
        }
        if let DepthInit::RandomScale { low, high } | DepthInit::RandomGlobalScale { low, high } = self.init {
            if !(low > 0.0 && high >= low) {
                return Err(Error::InvalidConfig("random init needs 0 < low ≤ high".into()));
            }
        }
        if let DepthInit::Constant(d) = self.init {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidConfig("constant init must be > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    /// Weighted depth objective.
    pub objective: f64,
    /// Unweighted value per loss, evaluated only for losses with nonzero weight.
    pub losses: Vec<(LossId, f64)>,
    pub metrics: DepthMetrics,
    pub static_abs_rel: f64,
    pub dynamic_abs_rel: Option<f64>,
    /// Mean `‖F^O − F^R‖₁` over the dynamic region, `F^R` being the rigid
    /// flow of the current depth.
    pub patch_flow_gap: Option<f64>,
    /// Same gap against the rigid flow of the ground-truth depth.
    pub patch_flow_gap_gt: Option<f64>,
}

impl TraceRecord {
    pub const CSV_HEADER: [&'static str; 18] = [
        "iteration",
        "objective",
        "l_photometric",
        "l_cgdc",
        "l_dpc",
        "l_bsca",
        "l_smoothness",
        "abs_rel",
        "sq_rel",
        "rmse",
        "rmse_log",
        "delta1",
        "delta2",
        "delta3",
        "static_abs_rel",
        "dynamic_abs_rel",
        "patch_flow_gap",
        "patch_flow_gap_gt",
    ];

    pub fn loss(&self, id: LossId) -> Option<f64> {
        self.losses.iter().find(|(l, _)| *l == id).map(|&(_, v)| v)
    }

    pub fn csv_fields(&self) -> Vec<String> {
        let opt = |x: Option<f64>| x.map(|v| format!("{v:e}")).unwrap_or_default();
        let m = &self.metrics;
        let mut out = vec![self.iteration.to_string(), format!("{:e}", self.objective)];
        for id in [LossId::Photometric, LossId::Cgdc, LossId::Dpc, LossId::Bsca, LossId::Smoothness] {
            out.push(opt(self.loss(id)));
        }
        for x in [m.abs_rel, m.sq_rel, m.rmse, m.rmse_log, m.delta1, m.delta2, m.delta3, self.static_abs_rel] {
            out.push(format!("{x:e}"));
        }
        out.push(opt(self.dynamic_abs_rel));
        out.push(opt(self.patch_flow_gap));
        out.push(opt(self.patch_flow_gap_gt));
        out
    }
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub config: OptimConfig,
    pub records: Vec<TraceRecord>,
    pub wall_clock: Duration,
    pub final_depth: DepthMap,
    pub final_flow: FlowField,
}

impl RunTrace {
    pub fn last(&self) -> &TraceRecord {
        self.records.last().expect("a trace always holds the initial record")
    }

    pub fn first(&self) -> &TraceRecord {
        &self.records[0]
    }
}

fn initial_depth(bundle: &SceneBundle, init: DepthInit, seed: u64) -> Vec<f64> {
    let gt = bundle.depth_gt.values().as_slice();
    match init {
        DepthInit::GroundTruth => gt.to_vec(),
        DepthInit::Constant(d) => vec![d; gt.len()],
        DepthInit::RandomScale { low, high } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = (low.ln(), high.ln());
            gt.iter()
                .map(|&d| {
                    let s = if b > a { rng.gen_range(a..b) } else { a };
                    d * s.exp()
                })
                .collect()
        }
        DepthInit::RandomGlobalScale { low, high } => {
            let s = random_global_scale(low, high, seed);
            gt.iter().map(|&d| d * s).collect()
        }
    }
}

/// The factor used by [`DepthInit::RandomGlobalScale`] for `seed`.
pub fn random_global_scale(low: f64, high: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = (low.ln(), high.ln());
    if b > a {
        rng.gen_range(a..b).exp()
    } else {
        low
    }
}

struct Run<'a> {
    bundle: &'a SceneBundle,
    config: OptimConfig,
    rigid_gt: FlowField,
    static_mask: Mask,
}

impl Run<'_> {
    fn inputs<'b>(&'b self, depth: &'b DepthMap, flow: &'b FlowField) -> LossInputs<'b> {
        LossInputs {
            intrinsics: &self.bundle.intrinsics,
            twist: self.bundle.motion.to_twist(),
            depth,
            flow,
            image_t: &self.bundle.image_t,
            image_s: &self.bundle.image_s,
            alpha: self.config.alpha,
            stop_gradient: self.config.stop_gradient,
        }
    }

    fn record(&self, iteration: usize, objective: f64, losses: Vec<(LossId, f64)>, depth: &DepthMap, flow: &FlowField) -> Result<TraceRecord> {
        let gt = &self.bundle.depth_gt;
        let metrics = depth_metrics(depth, gt, gt.mask())?;
        let static_abs_rel = depth_metrics(depth, gt, &self.static_mask)?.abs_rel;
        let dynamic = &self.bundle.dynamic_mask;
        let gap = |rigid: &FlowField| {
            dynamic
                .as_slice()
                .iter()
                .zip(flow.vectors().as_slice().iter().zip(rigid.vectors().as_slice()))
                .filter(|(m, _)| **m)
                .map(|(_, (f, r))| (f[0] - r[0]).abs() + (f[1] - r[1]).abs())
                .sum::<f64>()
                / dynamic.count() as f64
        };
        let (dynamic_abs_rel, patch_flow_gap, patch_flow_gap_gt) = if dynamic.count() > 0 {
            let current = rigid_flow(&self.bundle.intrinsics, &self.bundle.motion, depth);
            (Some(depth_metrics(depth, gt, dynamic)?.abs_rel), Some(gap(&current)), Some(gap(&self.rigid_gt)))
        } else {
            (None, None, None)
        };
        Ok(TraceRecord {
            iteration,
            objective,
            losses,
            metrics,
            static_abs_rel,
            dynamic_abs_rel,
            patch_flow_gap,
            patch_flow_gap_gt,
        })
    }
}

/// Gradient descent on the depth objective with the ground-truth flow as the
/// correspondence prior and the pose held at ground truth.
pub fn recover_depth(bundle: &SceneBundle, config: &OptimConfig) -> Result<RunTrace> {
    if bundle.dynamic_mask.count() > 0 && config.weights.bsca == 0.0 {
        return Err(Error::InvalidConfig("recover_depth needs a static scene unless w_b > 0".into()));
    }
    optimize(bundle, config, config.weights.bsca > 0.0)
}

/// Joint run: depth follows `L_c + L_d` (and any other depth terms) computed
/// from a free flow field, and the flow follows `L_b` alone. With `w_b = 0`
/// the flow stays at its initialization, which is the control setting.
pub fn co_adjust(bundle: &SceneBundle, config: &OptimConfig) -> Result<RunTrace> {
    optimize(bundle, config, true)
}

fn optimize(bundle: &SceneBundle, config: &OptimConfig, flow_free: bool) -> Result<RunTrace> {
    config.validate()?;
    let t = bundle.motion.translation();
    if t.iter().all(|x| *x == 0.0) {
        return Err(Error::InvalidConfig("depth recovery needs a nonzero translation".into()));
    }
    let start = Instant::now();
    let run = Run {
        bundle,
        config: *config,
        rigid_gt: rigid_flow(&bundle.intrinsics, &bundle.motion, &bundle.depth_gt),
        static_mask: bundle.static_mask(),
    };
    let (w, h) = (bundle.width(), bundle.height());
    let param = config.parameterization;
    let mut theta: Vec<f64> = initial_depth(bundle, config.init, config.seed).iter().map(|&d| param.theta(d)).collect();
    let mut velocity = vec![0.0; theta.len()];
    let (mut depth_state, mut flow_state) = (StepState::default(), StepState::default());
    let mut flow = bundle.flow_gt.clone();
    let flow_active = flow_free && config.weights.bsca > 0.0;
    let mut records = Vec::new();

    let depth_of = |theta: &[f64]| -> Result<DepthMap> {
        DepthMap::with_mask(
            Grid::from_vec(w, h, theta.iter().map(|&x| param.depth(x)).collect())?,
            bundle.depth_gt.mask().clone(),
        )
    };
    let diverged = |iteration: usize, loss: f64, records: &Vec<TraceRecord>, theta: &[f64], flow: &FlowField| {
        let final_depth = DepthMap::from_parts(
            Grid::from_fn(w, h, |u, v| param.depth(theta[v * w + u])),
            bundle.depth_gt.mask().clone(),
        );
        Error::Diverged {
            iteration,
            loss,
            trace: Box::new(RunTrace {
                config: *config,
                records: records.clone(),
                wall_clock: start.elapsed(),
                final_depth,
                final_flow: flow.clone(),
            }),
        }
    };

    for iteration in 0..=config.iterations {
        let depth = depth_of(&theta).map_err(|_| diverged(iteration, f64::NAN, &records, &theta, &flow))?;
        let progress = iteration as f64 / config.iterations.max(1) as f64;
        let dpc_scale = if iteration < config.dpc_delay { 0.0 } else { 1.0 };
        let depth_terms = config.weights.depth_terms(dpc_scale);
        let (objective, losses, grad_depth) = if depth_terms.is_empty() {
            (0.0, Vec::new(), None)
        } else {
            let g = objective_gradient(&depth_terms, &run.inputs(&depth, &flow), Targets::DEPTH)?;
            let losses = g.terms.iter().map(|(id, v)| (*id, v.value)).collect();
            (g.value, losses, Some(g.d_depth))
        };
        let flow_grad = if flow_active {
            Some(objective_gradient(&[(LossId::Bsca, config.weights.bsca)], &run.inputs(&depth, &flow), Targets::FLOW)?)
        } else {
            None
        };
        let mut losses: Vec<(LossId, f64)> = losses;
        if let Some(g) = &flow_grad {
            losses.push((LossId::Bsca, g.terms[0].1.value));
        }
        let total = objective + flow_grad.as_ref().map_or(0.0, |g| g.value);
        if !total.is_finite() || total > DIVERGENCE_LIMIT {
            return Err(diverged(iteration, total, &records, &theta, &flow));
        }
        if iteration % config.record_every == 0 || iteration == config.iterations {
            records.push(run.record(iteration, objective, losses, &depth, &flow)?);
        }
        if iteration == config.iterations {
            return Ok(RunTrace {
                config: *config,
                records,
                wall_clock: start.elapsed(),
                final_depth: depth,
                final_flow: flow,
            });
        }

        if let Some(gd) = grad_depth {
            let g: Vec<f64> =
                gd.values().as_slice().iter().zip(&theta).map(|(g, &th)| g * param.slope(th)).collect();
            let step = config.step.step(&mut depth_state, objective, &g, progress);
            for ((th, v), s) in theta.iter_mut().zip(velocity.iter_mut()).zip(step) {
                *v = config.momentum * *v + s;
                *th -= *v;
            }
        }
        if let Some(g) = flow_grad.filter(|_| iteration >= config.flow_warmup) {
            let d_flow = g.d_flow.expect("flow is a target");
            let flat: Vec<f64> = d_flow.vectors().as_slice().iter().flat_map(|f| [f[0], f[1]]).collect();
            let step = config.flow_step.step(&mut flow_state, g.value, &flat, progress);
            for (f, s) in flow.vectors.as_mut_slice().iter_mut().zip(step.chunks(2)) {
                f[0] -= s[0];
                f[1] -= s[1];
            }
        }
    }
    unreachable!("the loop returns at the final iteration")
}

/// One row of an ablation report.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub scene: String,
    pub config: String,
    pub weights: LossWeights,
    /// Final record, or the error that aborted the run.
    pub outcome: std::result::Result<TraceRecord, String>,
}

impl AblationRow {
    pub const CSV_HEADER: [&'static str; 12] = [
        "scene",
        "config",
        "w_p",
        "w_c",
        "w_d",
        "w_b",
        "status",
        "iterations",
        "abs_rel",
        "rmse",
        "static_abs_rel",
        "dynamic_abs_rel",
    ];

    pub fn csv_fields(&self) -> Vec<String> {
        let w = &self.weights;
        let mut out = vec![
            self.scene.clone(),
            self.config.clone(),
            w.photometric.to_string(),
            w.cgdc.to_string(),
            w.dpc.to_string(),
            w.bsca.to_string(),
        ];
        match &self.outcome {
            Ok(r) => {
                out.push("ok".into());
                out.push(r.iteration.to_string());
                out.push(format!("{:e}", r.metrics.abs_rel));
                out.push(format!("{:e}", r.metrics.rmse));
                out.push(format!("{:e}", r.static_abs_rel));
                out.push(r.dynamic_abs_rel.map(|x| format!("{x:e}")).unwrap_or_default());
            }
            Err(e) => {
                out.push(e.replace([',', '\n'], ";"));
                out.extend(std::iter::repeat_n(String::new(), 5));
            }
        }
        out
    }
}

/// Runs every `(scene, config)` pair; rows follow scene-major order and are
/// evaluated concurrently with isolated state.
pub fn ablation_suite(scenes: &[(String, SceneBundle)], grid: &[(String, OptimConfig)]) -> Result<Vec<AblationRow>> {
    if scenes.is_empty() || grid.is_empty() {
        return Err(Error::InvalidConfig("ablation needs at least one scene and one config".into()));
    }
    let jobs: Vec<(&(String, SceneBundle), &(String, OptimConfig))> =
        scenes.iter().flat_map(|s| grid.iter().map(move |c| (s, c))).collect();
    Ok(jobs
        .par_iter()
        .map(|((scene_name, bundle), (config_name, config))| AblationRow {
            scene: scene_name.clone(),
            config: config_name.clone(),
            weights: config.weights,
            outcome: co_adjust(bundle, config).map(|t| t.last().clone()).map_err(|e| e.to_string()),
        })
        .collect())
}
