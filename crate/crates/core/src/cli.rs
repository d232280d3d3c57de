//! `corrdepth` command line: scene generation, verification runs and
//! depth-recovery experiments, each writing its artifacts under `--out`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{rotational_flow, translational_flow, TwistParams};
use crate::grad::{finite_difference_check, FdOptions, GradCheckReport, LossId, LossInputs};
use crate::grid::{DepthMap, Grid};
use crate::io;
use crate::losses::{depth_metrics, differential_fields, dpc_loss, DepthMetrics};
use crate::optim::{ablation_suite, co_adjust, recover_depth, LossWeights, OptimConfig, RunTrace, TraceRecord};
use crate::scene::{synthesize, DepthFamily, SceneBundle, SceneFile, SceneSpec};
use crate::triangulate::{triangulate_depth, Degeneracy};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
/// Caps the worker pool when set to a positive integer.
pub const THREADS_ENV: &str = "DCPI_THREADS";
const DEFAULT_SIZE: (usize, usize) = (96, 72);

#[derive(Debug, Parser)]
#[command(name = "corrdepth", version, about = "Correspondence-guided depth geometry toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a scene and write depth, flow and both images.
    GenScene(Common),
    /// Triangulate depth from the scene's ground-truth flow.
    Triangulate(Common),
    /// Compare the flow-divergence and depth-gradient fields.
    CheckDpc(Common),
    /// Finite-difference check of every loss gradient.
    GradCheck(Common),
    /// Recover depth from a random initialization with known pose and flow.
    RecoverDepth(Common),
    /// Jointly adjust depth and a free flow field.
    CoAdjust(Common),
    /// Run the w_c × w_d grid on the scene.
    Ablate(Common),
    /// Depth metrics between two PFM depth maps.
    Metrics(MetricsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Args)]
struct Common {
    /// Scene description file (key=value lines).
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Output directory, created if absent.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Grid size as WIDTHxHEIGHT, e.g. 96x72.
    #[arg(long, value_parser = parse_size)]
    size: Option<(usize, usize)>,
    /// Loss weights w_p,w_c,w_d,w_b.
    #[arg(long, value_parser = parse_weights)]
    weights: Option<LossWeights>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long, value_enum, default_value = "off")]
    stopgrad: Switch,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WIDTHxHEIGHT")?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width '{w}'"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height '{h}'"))?;
    if w < 3 || h < 3 {
        return Err("grid must be at least 3x3".into());
    }
    Ok((w, h))
}

fn parse_weights(s: &str) -> std::result::Result<LossWeights, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| format!("bad weight '{x}'")))
        .collect::<std::result::Result<_, _>>()?;
    let [p, c, d, b] = parts[..] else {
        return Err("expected four weights w_p,w_c,w_d,w_b".into());
    };
    let w = LossWeights::new(p, c, d, b);
    w.validate().map_err(|e| e.to_string())?;
    Ok(w)
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    configure_threads();
    let mut ctx = Context { stdout, manifest: String::new() };
    match dispatch(cli.command, &mut ctx) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.to_string().replace('\n', " "));
            if matches!(e, Error::InvalidConfig(_)) {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn configure_threads() {
    let threads = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&n| n > 0);
    if let Some(n) = threads {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

struct Context<'a> {
    stdout: &'a mut dyn Write,
    manifest: String,
}

impl Context<'_> {
    fn wrote(&mut self, path: &Path) -> Result<()> {
        writeln!(self.stdout, "wrote {}", path.display())?;
        Ok(())
    }

    fn note(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.manifest, "{key}={value}");
    }

    fn csv<R, S>(&mut self, path: PathBuf, header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<()>
    where
        R: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        io::write_csv(&path, header, rows)?;
        self.wrote(&path)
    }

    fn finish(&mut self, out: &Path) -> Result<()> {
        let path = out.join("manifest.txt");
        fs::write(&path, &self.manifest)?;
        self.wrote(&path)
    }
}

struct Resolved {
    scene: SceneFile,
    bundle: SceneBundle,
    config: OptimConfig,
}

fn default_scene() -> SceneFile {
    SceneFile {
        spec: SceneSpec::new(DepthFamily::AffineInverseShift { a: 0.15, b: 8e-4, c: 5e-4 }),
        intrinsics: None,
        twist: None,
        size: None,
    }
}

fn resolve(args: &Common, ctx: &mut Context, command: &str) -> Result<Resolved> {
    let mut scene = match &args.scene {
        Some(path) => SceneFile::parse(&fs::read_to_string(path)?)?,
        None => default_scene(),
    };
    let (w, h) = args.size.or(scene.size).unwrap_or(DEFAULT_SIZE);
    let k = scene.intrinsics_for(w, h)?;
    let motion = scene.motion();
    scene.intrinsics = Some(k);
    scene.twist = Some(motion.to_twist());
    scene.size = Some((w, h));
    let bundle = synthesize(&scene.spec, &k, &motion, w, h)?;
    let mut config = OptimConfig { seed: args.seed, stop_gradient: args.stopgrad == Switch::On, ..Default::default() };
    if let Some(weights) = args.weights {
        config.weights = weights;
    }
    if let Some(iters) = args.iters {
        config.iterations = iters;
    }
    fs::create_dir_all(&args.out)?;
    ctx.note("command", command);
    ctx.note("seed", args.seed);
    ctx.note("size", format!("{w}x{h}"));
    ctx.note("stopgrad", args.stopgrad == Switch::On);
    ctx.note("config", format!("{config:?}"));
    for line in scene.to_text().lines() {
        let _ = writeln!(ctx.manifest, "scene.{line}");
    }
    Ok(Resolved { scene, bundle, config })
}

fn dispatch(command: Command, ctx: &mut Context) -> Result<()> {
    match command {
        Command::GenScene(a) => gen_scene(&a, ctx),
        Command::Triangulate(a) => triangulate(&a, ctx),
        Command::CheckDpc(a) => check_dpc(&a, ctx),
        Command::GradCheck(a) => grad_check(&a, ctx),
        Command::RecoverDepth(a) => optimize_cmd(&a, ctx, false),
        Command::CoAdjust(a) => optimize_cmd(&a, ctx, true),
        Command::Ablate(a) => ablate(&a, ctx),
        Command::Metrics(a) => metrics(&a, ctx),
    }
}

fn gen_scene(args: &Common, ctx: &mut Context) -> Result<()> {
    let r = resolve(args, ctx, "gen-scene")?;
    let out = &args.out;
    let b = &r.bundle;
    let path = out.join("scene.txt");
    fs::write(&path, r.scene.to_text())?;
    ctx.wrote(&path)?;
    let path = out.join("depth.pfm");
    io::write_depth_pfm(&path, &b.depth_gt)?;
    ctx.wrote(&path)?;
    let path = out.join("flow.flo");
    io::write_flow(&path, &b.flow_gt)?;
    ctx.wrote(&path)?;
    for (name, image) in [("image_t.pnm", &b.image_t), ("image_s.pnm", &b.image_s)] {
        let path = out.join(name);
        io::write_image_pnm(&path, image)?;
        ctx.wrote(&path)?;
    }
    ctx.finish(out)
}

fn triangulate(args: &Common, ctx: &mut Context) -> Result<()> {
    let r = resolve(args, ctx, "triangulate")?;
    let b = &r.bundle;
    let result = triangulate_depth(&b.intrinsics, &b.motion, &b.flow_gt);
    let path = args.out.join("depth_g.pfm");
    io::write_depth_pfm(&path, &result.depth)?;
    ctx.wrote(&path)?;
    let support = result.validity().and(&b.static_mask());
    let mut max_rel = 0.0f64;
    for ((g, t), m) in result.depth.values().as_slice().iter().zip(b.depth_gt.values().as_slice()).zip(support.as_slice()) {
        if *m {
            max_rel = max_rel.max((g - t).abs() / t);
        }
    }
    let metrics = depth_metrics(&result.depth, &b.depth_gt, &support)?;
    let mut rows = vec![
        vec!["valid_pixels".to_string(), result.validity().count().to_string()],
        vec!["max_relative_error_static".into(), format!("{max_rel:e}")],
        vec!["abs_rel".into(), format!("{:e}", metrics.abs_rel)],
    ];
    for code in [Degeneracy::NearZeroDenominator, Degeneracy::NegativeDepth, Degeneracy::MaskedFlow] {
        rows.push(vec![code.as_str().to_string(), result.count(code).to_string()]);
    }
    ctx.csv(args.out.join("triangulation.csv"), &["quantity", "value"], rows)?;
    ctx.finish(&args.out)
}

fn check_dpc(args: &Common, ctx: &mut Context) -> Result<()> {
    let r = resolve(args, ctx, "check-dpc")?;
    let b = &r.bundle;
    let rot = rotational_flow(&b.intrinsics, b.motion.rotation(), b.width(), b.height());
    let tra = translational_flow(&b.flow_gt, &rot)?;
    let fields = differential_fields(&b.intrinsics, &b.motion, &b.depth_gt, &tra)?;
    let valid = fields.validity.as_slice();
    let (cf, cd) = (fields.c_f.values().as_slice(), fields.c_d.values().as_slice());
    let mut max_diff = 0.0f64;
    let mut max_abs = 0.0f64;
    for i in 0..valid.len() {
        if valid[i] {
            max_diff = max_diff.max((cf[i] - cd[i]).abs());
            max_abs = max_abs.max(cf[i].abs()).max(cd[i].abs());
        }
    }
    let loss = dpc_loss(&fields)?;
    let (w, h) = (b.width(), b.height());
    for (name, values) in [("c_f.pfm", cf), ("c_d.pfm", cd)] {
        let masked: Vec<f64> = values.iter().zip(valid).map(|(&x, &m)| if m { x } else { 0.0 }).collect();
        let path = args.out.join(name);
        fs::write(&path, io::encode_pfm(w, h, &masked)?)?;
        ctx.wrote(&path)?;
    }
    ctx.csv(
        args.out.join("dpc.csv"),
        &["valid_pixels", "max_abs_difference", "max_abs_field", "dpc_loss", "guarded_pixels"],
        [[
            loss.valid_pixel_count.to_string(),
            format!("{max_diff:e}"),
            format!("{max_abs:e}"),
            format!("{:e}", loss.value),
            loss.guarded_pixel_count.to_string(),
        ]],
    )?;
    writeln!(ctx.stdout, "max |C^F - C^D| = {max_diff:e}, dpc loss = {:e}", loss.value)?;
    ctx.finish(&args.out)
}

/// Evaluation point of the gradient check: depth scaled by a seeded planar
/// tilt within ±5% plus per-pixel jitter of ±0.2%, rotation offset by up to
/// 0.02 rad per axis and translation scaled per axis within ±5%.
fn perturbed_point(depth: &DepthMap, twist: TwistParams, seed: u64) -> Result<(DepthMap, TwistParams)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tilt: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.05..0.05));
    let (w, h) = (depth.width() as f64, depth.height() as f64);
    let values = Grid::from_fn(depth.width(), depth.height(), |u, v| {
        let scale = 1.0 + tilt[0] + tilt[1] * u as f64 / w + tilt[2] * v as f64 / h;
        depth.values().get(u, v) * (scale + rng.gen_range(-0.002..0.002))
    });
    let mut t = twist.0;
    for x in &mut t[..3] {
        *x += rng.gen_range(-0.02..0.02);
    }
    for x in &mut t[3..] {
        *x *= 1.0 + rng.gen_range(-0.05..0.05);
    }
    Ok((DepthMap::with_mask(values, depth.mask().clone())?, TwistParams(t)))
}

fn grad_check(args: &Common, ctx: &mut Context) -> Result<()> {
    let r = resolve(args, ctx, "grad-check")?;
    let b = &r.bundle;
    let (depth, twist) = perturbed_point(&b.depth_gt, b.motion.to_twist(), args.seed)?;
    let inputs = LossInputs {
        intrinsics: &b.intrinsics,
        twist,
        depth: &depth,
        flow: &b.flow_gt,
        image_t: &b.image_t,
        image_s: &b.image_s,
        alpha: r.config.alpha,
        stop_gradient: r.config.stop_gradient,
    };
    let options = FdOptions { seed: args.seed, ..Default::default() };
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let mut failed = Vec::new();
    for id in LossId::ALL {
        let report: GradCheckReport = finite_difference_check(id, &inputs, &options)?;
        for row in report.csv_rows() {
            rows.push(std::iter::once(id.name().to_string()).chain(row).collect::<Vec<_>>());
        }
        summary.push(vec![
            id.name().to_string(),
            report.entries.len().to_string(),
            report.excluded.len().to_string(),
            format!("{:e}", report.max_relative_error),
            report.passed.to_string(),
        ]);
        writeln!(ctx.stdout, "{:<12} max relative error {:e} ({})", id.name(), report.max_relative_error, if report.passed { "pass" } else { "FAIL" })?;
        if !report.passed {
            failed.push(id.name());
        }
    }
    let mut header = vec!["loss"];
    header.extend(GradCheckReport::CSV_HEADER);
    ctx.csv(args.out.join("grad_check.csv"), &header, rows)?;
    ctx.csv(args.out.join("grad_check_summary.csv"), &["loss", "checked", "excluded", "max_relative_error", "passed"], summary)?;
    ctx.finish(&args.out)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidValue(format!("gradient check failed for {}", failed.join(", "))))
    }
}

fn write_trace(ctx: &mut Context, out: &Path, trace: &RunTrace, with_flow: bool) -> Result<()> {
    ctx.csv(out.join("trace.csv"), &TraceRecord::CSV_HEADER, trace.records.iter().map(TraceRecord::csv_fields))?;
    let path = out.join("depth.pfm");
    io::write_depth_pfm(&path, &trace.final_depth)?;
    ctx.wrote(&path)?;
    if with_flow {
        let path = out.join("flow.flo");
        io::write_flow(&path, &trace.final_flow)?;
        ctx.wrote(&path)?;
    }
    Ok(())
}

fn optimize_cmd(args: &Common, ctx: &mut Context, joint: bool) -> Result<()> {
    let r = resolve(args, ctx, if joint { "co-adjust" } else { "recover-depth" })?;
    let outcome = if joint { co_adjust(&r.bundle, &r.config) } else { recover_depth(&r.bundle, &r.config) };
    match outcome {
        Ok(trace) => {
            write_trace(ctx, &args.out, &trace, joint)?;
            let last = trace.last();
            writeln!(ctx.stdout, "iteration {} abs_rel {:e}", last.iteration, last.metrics.abs_rel)?;
            ctx.finish(&args.out)
        }
        Err(Error::Diverged { iteration, loss, trace }) => {
            write_trace(ctx, &args.out, &trace, joint)?;
            ctx.finish(&args.out)?;
            Err(Error::Diverged { iteration, loss, trace })
        }
        Err(e) => Err(e),
    }
}

fn ablate(args: &Common, ctx: &mut Context) -> Result<()> {
    let r = resolve(args, ctx, "ablate")?;
    let base = r.config.weights;
    let (c_on, d_on) = (if base.cgdc > 0.0 { base.cgdc } else { 1.0 }, if base.dpc > 0.0 { base.dpc } else { 0.1 });
    let mut grid = Vec::new();
    for wc in [0.0, c_on] {
        for wd in [0.0, d_on] {
            let weights = LossWeights { cgdc: wc, dpc: wd, ..base };
            grid.push((format!("w_c={wc} w_d={wd}"), OptimConfig { weights, ..r.config }));
        }
    }
    let name = r.bundle.spec.family.name().to_string();
    let rows = ablation_suite(&[(name, r.bundle)], &grid)?;
    for row in &rows {
        let status = match &row.outcome {
            Ok(rec) => format!("abs_rel {:e}", rec.metrics.abs_rel),
            Err(e) => format!("error: {e}"),
        };
        writeln!(ctx.stdout, "{:<20} {status}", row.config)?;
    }
    ctx.csv(args.out.join("ablation.csv"), &crate::optim::AblationRow::CSV_HEADER, rows.iter().map(|r| r.csv_fields()))?;
    ctx.finish(&args.out)
}

fn metrics(args: &MetricsArgs, ctx: &mut Context) -> Result<()> {
    let pred = io::read_depth_pfm(&args.pred)?;
    let gt = io::read_depth_pfm(&args.gt)?;
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::Dimension(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    fs::create_dir_all(&args.out)?;
    let mask = pred.mask().and(gt.mask());
    let m: DepthMetrics = depth_metrics(&pred, &gt, &mask)?;
    writeln!(ctx.stdout, "abs_rel {:e} rmse {:e} delta1 {}", m.abs_rel, m.rmse, m.delta1)?;
    ctx.note("command", "metrics");
    ctx.note("pred", args.pred.display());
    ctx.note("gt", args.gt.display());
    ctx.csv(args.out.join("metrics.csv"), &DepthMetrics::CSV_HEADER, [m.csv_fields()])?;
    ctx.finish(&args.out)
}
