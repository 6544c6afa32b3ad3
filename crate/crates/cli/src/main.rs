//! Command-line front end for the mbsmith BRDF library.
//!
//! Subcommands wrap the estimator and validation operations and emit
//! deterministic text: a single stdout line for `eval`, CSV for the
//! measurement commands, and PFM/PPM images for `slice`. Timing columns are
//! opt-in (`--timing`) so that default outputs are byte-identical across
//! runs and worker-thread counts.

use clap::{Args, Parser, Subcommand};
use mbsmith::fresnel::conductor_by_name;
use mbsmith::validation::{
    furnace_test, inverse_efficiency, mse_convergence, reflectance_curve, solve_rho_fixedpoint,
    CurveReport, DirectionGrid, Method,
};
use mbsmith::{
    estimators, Direction, EstimatorConfig, FresnelSpec, MicrosurfaceParams, NdfKind, RngStream,
    Spectrum,
};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

// ---------------------------------------------------------------------------
// Argument surface
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(name = "mbsmith", version, about = "Multiple-bounce Smith microfacet BRDF toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate rho(w_i, w_o) and print value, standard error, mean bounces
    Eval(EvalArgs),
    /// Draw BRDF samples and histogram them over the outgoing hemisphere
    SampleHistogram(HistogramArgs),
    /// White furnace albedo table over roughness x incidence angle
    Furnace(FurnaceArgs),
    /// Reflectance vs outgoing angle for one estimator
    Curve(CurveArgs),
    /// Reflectance curves of two estimators side by side
    Compare(CompareArgs),
    /// MSE vs sample count against the fixed-point oracle
    Convergence(ConvergenceArgs),
    /// Image of rho over the outgoing hemisphere (disk parameterization)
    Slice(SliceArgs),
}

/// Flags shared by every subcommand; unset values fall back to the config
/// file (if any) and then to built-in defaults.
#[derive(Args)]
struct CommonArgs {
    /// Microfacet distribution: ggx or beckmann
    #[arg(long)]
    ndf: Option<String>,
    /// Isotropic roughness
    #[arg(long)]
    alpha: Option<f64>,
    /// Anisotropic roughness along x (requires --alpha-y)
    #[arg(long)]
    alpha_x: Option<f64>,
    /// Anisotropic roughness along y (requires --alpha-x)
    #[arg(long)]
    alpha_y: Option<f64>,
    /// Fresnel model: none, schlick:F0 (scalar or r,g,b), conductor:NAME
    #[arg(long)]
    fresnel: Option<String>,
    /// Monte Carlo sample count
    #[arg(long)]
    samples: Option<usize>,
    /// Walk truncation depth
    #[arg(long)]
    max_bounces: Option<usize>,
    /// RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output path (stdout when omitted, where applicable)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Config file with `key = value` lines; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Incidence polar angle in degrees
    #[arg(long)]
    theta_i: Option<f64>,
    /// Outgoing polar angle in degrees
    #[arg(long)]
    theta_o: Option<f64>,
    /// Outgoing azimuth in degrees (incidence azimuth is 0)
    #[arg(long)]
    phi_o: Option<f64>,
}

#[derive(Args)]
struct HistogramArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    theta_i: Option<f64>,
    /// Polar bins (equal solid angle)
    #[arg(long)]
    n_theta: Option<usize>,
    /// Azimuth bins
    #[arg(long)]
    n_phi: Option<usize>,
}

#[derive(Args)]
struct FurnaceArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Roughness values, comma separated
    #[arg(long, value_delimiter = ',')]
    alphas: Vec<f64>,
    /// Incidence angles in degrees, comma separated
    #[arg(long, value_delimiter = ',')]
    thetas: Vec<f64>,
}

#[derive(Args)]
struct CurveArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    theta_i: Option<f64>,
    #[arg(long)]
    n_bins: Option<usize>,
    /// Estimator: ours-pt, ours-bdpt, or independent
    #[arg(long)]
    method: Option<String>,
    /// Emit wall-time columns (makes output nondeterministic)
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    theta_i: Option<f64>,
    #[arg(long)]
    n_bins: Option<usize>,
    /// First estimator
    #[arg(long)]
    method_a: Option<String>,
    /// Second estimator
    #[arg(long)]
    method_b: Option<String>,
    /// Append inverse-efficiency columns (nondeterministic timings)
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct ConvergenceArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    theta_i: Option<f64>,
    /// Sample counts of the ladder, comma separated
    #[arg(long, value_delimiter = ',')]
    ladder: Vec<usize>,
}

#[derive(Args)]
struct SliceArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    theta_i: Option<f64>,
    /// Image side in pixels, 16..=2048; output format follows the
    /// --out extension (.pfm raw floats, .ppm gamma-2.2 preview)
    #[arg(long)]
    resolution: Option<usize>,
}

// ---------------------------------------------------------------------------
// Errors and exit codes
// ---------------------------------------------------------------------------

enum CliError {
    Usage(String),
    Domain(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Domain(m) | CliError::Io(m) => m,
        }
    }
}

impl From<mbsmith::Error> for CliError {
    fn from(e: mbsmith::Error) -> CliError {
        CliError::Domain(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Eval(a) => cmd_eval(a),
        Command::SampleHistogram(a) => cmd_sample_histogram(a),
        Command::Furnace(a) => cmd_furnace(a),
        Command::Curve(a) => cmd_curve(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Convergence(a) => cmd_convergence(a),
        Command::Slice(a) => cmd_slice(a),
    }
}

// ---------------------------------------------------------------------------
// Config file and flag merging
// ---------------------------------------------------------------------------

const KNOWN_KEYS: &[&str] = &[
    "ndf", "alpha", "alpha_x", "alpha_y", "fresnel", "samples", "max_bounces", "seed", "out",
    "theta_i", "theta_o", "phi_o", "n_bins", "n_theta", "n_phi", "method", "method_a", "method_b",
    "resolution", "alphas", "thetas", "ladder",
];

#[derive(Default)]
struct ConfigFile(HashMap<String, String>);

impl ConfigFile {
    fn load(path: &PathBuf) -> CliResult<ConfigFile> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        let mut map = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Usage(format!(
                    "config line {}: expected `key = value`",
                    i + 1
                )));
            };
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(CliError::Usage(format!(
                    "unknown config key `{key}` at line {}",
                    i + 1
                )));
            }
            map.insert(key.to_string(), value.trim().to_string());
        }
        Ok(ConfigFile(map))
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }
}

/// Flag value if set, else the parsed config value, else None.
fn merged<T: std::str::FromStr>(
    flag: Option<T>,
    file: &ConfigFile,
    key: &str,
) -> CliResult<Option<T>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match file.get(key) {
        Some(v) => v
            .parse::<T>()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("config key `{key}`: invalid value `{v}`"))),
        None => Ok(None),
    }
}

fn merged_string(flag: Option<String>, file: &ConfigFile, key: &str) -> Option<String> {
    flag.or_else(|| file.get(key).map(str::to_string))
}

fn require_f64(flag: Option<f64>, file: &ConfigFile, key: &str, name: &str) -> CliResult<f64> {
    merged(flag, file, key)?
        .ok_or_else(|| CliError::Usage(format!("missing required flag {name}")))
}

fn merged_list<T: std::str::FromStr + Clone>(
    flags: &[T],
    file: &ConfigFile,
    key: &str,
    default: &[T],
) -> CliResult<Vec<T>> {
    if !flags.is_empty() {
        return Ok(flags.to_vec());
    }
    match file.get(key) {
        Some(v) => v
            .split(',')
            .map(|t| {
                t.trim().parse::<T>().map_err(|_| {
                    CliError::Usage(format!("config key `{key}`: invalid value `{t}`"))
                })
            })
            .collect(),
        None => Ok(default.to_vec()),
    }
}

/// The resolved surface, Fresnel, and estimator settings for one run.
struct Scene {
    p: MicrosurfaceParams,
    fr: FresnelSpec,
    cfg: EstimatorConfig,
    out: Option<PathBuf>,
    file: ConfigFile,
}

fn resolve(common: &CommonArgs, default_samples: usize) -> CliResult<Scene> {
    let file = match &common.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let ndf_name = merged_string(common.ndf.clone(), &file, "ndf").unwrap_or_else(|| "ggx".into());
    let ndf = match ndf_name.as_str() {
        "ggx" => NdfKind::Ggx,
        "beckmann" => NdfKind::Beckmann,
        other => {
            return Err(CliError::Usage(format!("--ndf must be ggx or beckmann, got `{other}`")))
        }
    };
    let alpha = merged(common.alpha, &file, "alpha")?;
    let ax = merged(common.alpha_x, &file, "alpha_x")?;
    let ay = merged(common.alpha_y, &file, "alpha_y")?;
    let p = match (ax, ay) {
        (Some(x), Some(y)) => MicrosurfaceParams::new(ndf, x, y),
        (None, None) => MicrosurfaceParams::isotropic(ndf, alpha.unwrap_or(0.5)),
        _ => {
            return Err(CliError::Usage(
                "--alpha-x and --alpha-y must be given together".into(),
            ))
        }
    };
    let fr = parse_fresnel(
        &merged_string(common.fresnel.clone(), &file, "fresnel").unwrap_or_else(|| "none".into()),
    )?;
    let samples = merged(common.samples, &file, "samples")?.unwrap_or(default_samples);
    let seed = merged(common.seed, &file, "seed")?.unwrap_or(0);
    let max_bounces = merged(common.max_bounces, &file, "max_bounces")?.unwrap_or(16);
    let cfg = EstimatorConfig::new(samples, seed).with_max_bounces(max_bounces);
    let out = common.out.clone().or_else(|| file.get("out").map(PathBuf::from));
    Ok(Scene { p, fr, cfg, out, file })
}

fn parse_fresnel(s: &str) -> CliResult<FresnelSpec> {
    if s == "none" {
        return Ok(FresnelSpec::None);
    }
    if let Some(rest) = s.strip_prefix("schlick:") {
        let parts: Result<Vec<f64>, _> = rest.split(',').map(|t| t.trim().parse()).collect();
        let parts =
            parts.map_err(|_| CliError::Usage(format!("--fresnel: bad schlick F0 `{rest}`")))?;
        let f0 = match parts.as_slice() {
            [v] => Spectrum::splat(*v),
            [r, g, b] => Spectrum::new(*r, *g, *b),
            _ => {
                return Err(CliError::Usage(
                    "--fresnel schlick takes one value or r,g,b".into(),
                ))
            }
        };
        return Ok(FresnelSpec::schlick(f0));
    }
    if let Some(name) = s.strip_prefix("conductor:") {
        return conductor_by_name(name).map_err(|e| CliError::Usage(format!("--fresnel: {e}")));
    }
    Err(CliError::Usage(format!(
        "--fresnel must be none, schlick:F0, or conductor:NAME, got `{s}`"
    )))
}

fn parse_method(s: &str, flag: &str) -> CliResult<Method> {
    match s {
        "ours-pt" => Ok(Method::Eval),
        "ours-bdpt" => Ok(Method::Bdpt),
        "independent" => Ok(Method::IndependentBounce),
        other => Err(CliError::Usage(format!(
            "{flag} must be ours-pt, ours-bdpt, or independent, got `{other}`"
        ))),
    }
}

fn direction_deg(theta_deg: f64, phi_deg: f64) -> Direction {
    Direction::from_spherical(theta_deg.to_radians(), phi_deg.to_radians())
}

// ---------------------------------------------------------------------------
// Output helpers
// ---------------------------------------------------------------------------

/// 17 significant digits; round-trips every f64.
fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_output(out: &Option<PathBuf>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_bytes(path: &PathBuf, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

/// splitmix64; decorrelates per-pixel seeds.
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    let scene = resolve(&args.common, 100_000)?;
    let theta_i = require_f64(args.theta_i, &scene.file, "theta_i", "--theta-i")?;
    let theta_o = require_f64(args.theta_o, &scene.file, "theta_o", "--theta-o")?;
    let phi_o = merged(args.phi_o, &scene.file, "phi_o")?.unwrap_or(0.0);
    let w_i = direction_deg(theta_i, 0.0);
    let w_o = direction_deg(theta_o, phi_o);
    let r = estimators::eval(w_i, w_o, &scene.p, &scene.fr, &scene.cfg)?;
    let se = r.std_error();
    println!(
        "{} {} {} {} {} {} {}",
        fmt(r.value.r),
        fmt(r.value.g),
        fmt(r.value.b),
        fmt(se.r),
        fmt(se.g),
        fmt(se.b),
        fmt(r.mean_bounces())
    );
    Ok(())
}

fn cmd_sample_histogram(args: HistogramArgs) -> CliResult<()> {
    let scene = resolve(&args.common, 100_000)?;
    let theta_i = require_f64(args.theta_i, &scene.file, "theta_i", "--theta-i")?;
    let n_theta = merged(args.n_theta, &scene.file, "n_theta")?.unwrap_or(32);
    let n_phi = merged(args.n_phi, &scene.file, "n_phi")?.unwrap_or(64);
    if n_theta == 0 || n_phi == 0 {
        return Err(CliError::Usage("--n-theta and --n-phi must be positive".into()));
    }
    let w_i = direction_deg(theta_i, 0.0);

    let mut acc = vec![Spectrum::ZERO; n_theta * n_phi];
    let mut counts = vec![0u64; n_theta * n_phi];
    for idx in 0..scene.cfg.sample_count {
        let mut rng = RngStream::new(scene.cfg.seed, idx as u64);
        let s = estimators::sample(w_i, &scene.p, &scene.fr, &scene.cfg, &mut rng)?;
        if s.truncated {
            continue;
        }
        // equal-solid-angle polar bins: uniform in cos(theta_o)
        let bt = (((1.0 - s.w_o.z) * n_theta as f64) as usize).min(n_theta - 1);
        let bp = ((s.w_o.phi() / std::f64::consts::TAU * n_phi as f64) as usize).min(n_phi - 1);
        acc[bt * n_phi + bp] += s.weight;
        counts[bt * n_phi + bp] += 1;
    }

    let solid_angle = std::f64::consts::TAU / (n_theta * n_phi) as f64;
    let norm = 1.0 / (scene.cfg.sample_count as f64 * solid_angle);
    let mut csv =
        String::from("theta_index,phi_index,theta_center_deg,phi_center_deg,rho_r,rho_g,rho_b,count\n");
    for bt in 0..n_theta {
        let cos_center = 1.0 - (bt as f64 + 0.5) / n_theta as f64;
        let theta_deg = cos_center.clamp(-1.0, 1.0).acos().to_degrees();
        for bp in 0..n_phi {
            let phi_deg = 360.0 * (bp as f64 + 0.5) / n_phi as f64;
            let v = acc[bt * n_phi + bp] * norm;
            let _ = writeln!(
                csv,
                "{bt},{bp},{},{},{},{},{},{}",
                fmt(theta_deg),
                fmt(phi_deg),
                fmt(v.r),
                fmt(v.g),
                fmt(v.b),
                counts[bt * n_phi + bp]
            );
        }
    }
    write_output(&scene.out, &csv)
}

fn cmd_furnace(args: FurnaceArgs) -> CliResult<()> {
    let scene = resolve(&args.common, 1_000_000)?;
    let alphas = merged_list(&args.alphas, &scene.file, "alphas", &[0.1, 0.5, 1.0])?;
    let thetas = merged_list(&args.thetas, &scene.file, "thetas", &[15.0, 45.0, 75.0])?;
    let ndf = scene.p.ndf_kind;

    let mut csv = String::from("ndf,alpha,theta_i_deg,albedo,samples\n");
    for &alpha in &alphas {
        let p = MicrosurfaceParams::isotropic(ndf, alpha);
        for &theta in &thetas {
            let albedo = furnace_test(direction_deg(theta, 0.0), &p, &scene.cfg)?;
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                ndf_name(ndf),
                fmt(alpha),
                fmt(theta),
                fmt(albedo),
                scene.cfg.sample_count
            );
        }
    }
    write_output(&scene.out, &csv)
}

fn ndf_name(kind: NdfKind) -> &'static str {
    match kind {
        NdfKind::Ggx => "ggx",
        NdfKind::Beckmann => "beckmann",
    }
}

fn cmd_curve(args: CurveArgs) -> CliResult<()> {
    let scene = resolve(&args.common, 4096)?;
    let theta_i = require_f64(args.theta_i, &scene.file, "theta_i", "--theta-i")?;
    let n_bins = merged(args.n_bins, &scene.file, "n_bins")?.unwrap_or(90);
    let method = parse_method(
        &merged_string(args.method.clone(), &scene.file, "method").unwrap_or_else(|| "ours-pt".into()),
        "--method",
    )?;
    let report = reflectance_curve(
        theta_i.to_radians(),
        &scene.p,
        &scene.fr,
        &scene.cfg,
        n_bins,
        method,
    )?;
    write_output(&scene.out, &curve_csv(&report, args.timing))
}

fn curve_csv(report: &CurveReport, timing: bool) -> String {
    let mut csv = String::from(if timing {
        "theta_o_deg,mean_rho,variance,time_seconds\n"
    } else {
        "theta_o_deg,mean_rho,variance\n"
    });
    for b in &report.bins {
        if timing {
            let _ = writeln!(
                csv,
                "{},{},{},{}",
                fmt(b.theta_center.to_degrees()),
                fmt(b.mean),
                fmt(b.variance),
                fmt(b.time_seconds)
            );
        } else {
            let _ = writeln!(
                csv,
                "{},{},{}",
                fmt(b.theta_center.to_degrees()),
                fmt(b.mean),
                fmt(b.variance)
            );
        }
    }
    csv
}

fn cmd_compare(args: CompareArgs) -> CliResult<()> {
    let scene = resolve(&args.common, 4096)?;
    let theta_i = require_f64(args.theta_i, &scene.file, "theta_i", "--theta-i")?;
    let n_bins = merged(args.n_bins, &scene.file, "n_bins")?.unwrap_or(90);
    let method_a = parse_method(
        &merged_string(args.method_a.clone(), &scene.file, "method_a")
            .unwrap_or_else(|| "ours-pt".into()),
        "--method-a",
    )?;
    let method_b = parse_method(
        &merged_string(args.method_b.clone(), &scene.file, "method_b")
            .unwrap_or_else(|| "independent".into()),
        "--method-b",
    )?;
    let theta_rad = theta_i.to_radians();
    let a = reflectance_curve(theta_rad, &scene.p, &scene.fr, &scene.cfg, n_bins, method_a)?;
    let b = reflectance_curve(theta_rad, &scene.p, &scene.fr, &scene.cfg, n_bins, method_b)?;

    let mut csv = String::from(if args.timing {
        "theta_o_deg,mean_a,mean_b,difference,inv_eff_a,inv_eff_b,inv_eff_ratio\n"
    } else {
        "theta_o_deg,mean_a,mean_b,difference\n"
    });
    let eff = if args.timing { Some(inverse_efficiency(&a, &b)?) } else { None };
    for (i, (ba, bb)) in a.bins.iter().zip(&b.bins).enumerate() {
        if let Some(eff) = &eff {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                fmt(ba.theta_center.to_degrees()),
                fmt(ba.mean),
                fmt(bb.mean),
                fmt(ba.mean - bb.mean),
                fmt(eff[i].inv_eff_a),
                fmt(eff[i].inv_eff_b),
                fmt(eff[i].ratio)
            );
        } else {
            let _ = writeln!(
                csv,
                "{},{},{},{}",
                fmt(ba.theta_center.to_degrees()),
                fmt(ba.mean),
                fmt(bb.mean),
                fmt(ba.mean - bb.mean)
            );
        }
    }
    write_output(&scene.out, &csv)
}

fn cmd_convergence(args: ConvergenceArgs) -> CliResult<()> {
    let scene = resolve(&args.common, 4096)?;
    let theta_i = require_f64(args.theta_i, &scene.file, "theta_i", "--theta-i")?;
    let ladder = merged_list(&args.ladder, &scene.file, "ladder", &[64, 256, 1024, 4096])?;
    let oracle =
        solve_rho_fixedpoint(&scene.p, &scene.fr, DirectionGrid::new(32, 64), 1e-6, 200)?;

    let w_i = direction_deg(theta_i, 0.0);
    let queries: Vec<(Direction, Direction)> = [15.0, 35.0, 55.0]
        .iter()
        .flat_map(|&t| [30.0, 150.0].map(|p| (w_i, direction_deg(t, p))))
        .collect();
    let report =
        mse_convergence(&queries, &scene.p, &scene.fr, &scene.cfg, &ladder, &oracle)?;

    let mut csv = String::from("method,n_samples,mse,slope\n");
    for (mi, name) in ["ours-pt", "ours-bdpt", "independent"].iter().enumerate() {
        for row in &report.rows {
            let _ = writeln!(
                csv,
                "{name},{},{},{}",
                row.n_samples,
                fmt(row.mse[mi]),
                fmt(report.slopes[mi])
            );
        }
    }
    write_output(&scene.out, &csv)
}

fn cmd_slice(args: SliceArgs) -> CliResult<()> {
    let scene = resolve(&args.common, 64)?;
    let theta_i = require_f64(args.theta_i, &scene.file, "theta_i", "--theta-i")?;
    let res = merged(args.resolution, &scene.file, "resolution")?.unwrap_or(256);
    if !(16..=2048).contains(&res) {
        return Err(CliError::Usage(format!(
            "--resolution must lie in [16, 2048], got {res}"
        )));
    }
    let Some(out) = scene.out.clone() else {
        return Err(CliError::Usage("slice requires --out with a .pfm or .ppm path".into()));
    };
    let w_i = direction_deg(theta_i, 0.0);

    // disk parameterization: radius = theta_o / 90 deg, azimuth = phi_o;
    // pixels outside the unit disk are black
    let mut pixels = vec![Spectrum::ZERO; res * res];
    for py in 0..res {
        let y = 1.0 - 2.0 * (py as f64 + 0.5) / res as f64;
        for px in 0..res {
            let x = 2.0 * (px as f64 + 0.5) / res as f64 - 1.0;
            let r = (x * x + y * y).sqrt();
            if r >= 1.0 {
                continue;
            }
            let theta_o = r * std::f64::consts::FRAC_PI_2;
            if theta_o.cos() <= 1e-9 {
                continue;
            }
            let w_o = Direction::from_spherical(theta_o, y.atan2(x).rem_euclid(std::f64::consts::TAU));
            let cfg = EstimatorConfig {
                seed: mix(scene.cfg.seed ^ ((py * res + px) as u64)),
                ..scene.cfg
            };
            pixels[py * res + px] = estimators::eval(w_i, w_o, &scene.p, &scene.fr, &cfg)?.value;
        }
    }

    match out.extension().and_then(|e| e.to_str()) {
        Some("pfm") => write_bytes(&out, &encode_pfm(res, &pixels)),
        Some("ppm") => write_bytes(&out, &encode_ppm(res, &pixels)),
        _ => Err(CliError::Usage("--out must end in .pfm or .ppm".into())),
    }
}

/// Color PFM: `PF\n{W} {H}\n-1.0\n` (little-endian scale) then rows
/// bottom-to-top, three f32 per pixel.
fn encode_pfm(res: usize, pixels: &[Spectrum]) -> Vec<u8> {
    let mut data = format!("PF\n{res} {res}\n-1.0\n").into_bytes();
    for py in (0..res).rev() {
        for px in 0..res {
            let v = pixels[py * res + px];
            for ch in [v.r, v.g, v.b] {
                data.extend_from_slice(&(ch as f32).to_le_bytes());
            }
        }
    }
    data
}

/// Binary PPM preview: clamp to [0, 1], gamma 2.2, 8 bits per channel.
fn encode_ppm(res: usize, pixels: &[Spectrum]) -> Vec<u8> {
    let mut data = format!("P6\n{res} {res}\n255\n").into_bytes();
    for v in pixels {
        for ch in [v.r, v.g, v.b] {
            data.push((ch.clamp(0.0, 1.0).powf(1.0 / 2.2) * 255.0).round() as u8);
        }
    }
    data
}
