use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use mrslam::cloudops::{self, CloudOpsError};
use mrslam::evaluation::{self, EvalError};
use mrslam::features::{
    self, FeatureError, FrameFeatures, FrameProjection, Homography, IdentityProjection, MatchConfig,
};
use mrslam::fusion::{FusionError, FusionParams, Session};
use mrslam::io::{self, fmt6, Config, IoError, ProjectionSpec};
use mrslam::keyframe::{self, KeyframeError};
use mrslam::registration::RegistrationError;
use mrslam::simgen::{self, FixtureSpec, SimError};

#[derive(Parser)]
#[command(name = "mrslam", version, about = "Multi-robot visual SLAM back-end tools")]
struct Cli {
    /// Parameter file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Parameter override `key=value`; may be repeated. Applied after --config.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Match two feature frames.
    Match {
        #[arg(long)]
        frame_a: PathBuf,
        #[arg(long)]
        frame_b: PathBuf,
        /// Projection file (`identity` or `homography` + 9 values); identity if omitted.
        #[arg(long)]
        projection: Option<PathBuf>,
        /// Ground-truth pairs for precision/recall.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// cross, one-pass or brute.
        #[arg(long, default_value = "cross")]
        mode: String,
        /// Where to write the match pairs.
        #[arg(long)]
        pairs_out: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Select keyframes from an observation stream.
    Keyframes {
        #[arg(long)]
        observations: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fuse a multi-robot session.
    Fuse {
        #[arg(long)]
        manifest: PathBuf,
        /// Fused cloud output (PLY).
        #[arg(long)]
        cloud_out: PathBuf,
        /// Directory for world-frame trajectories.
        #[arg(long)]
        trajectories_out: Option<PathBuf>,
        #[arg(long)]
        ascii: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Voxel sampling (one input point per voxel).
    Sample {
        #[arg(long)]
        voxel: Option<f64>,
        #[arg(long)]
        ascii: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        input: PathBuf,
        output: PathBuf,
    },
    /// Gaussian smoothing.
    Filter {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        reg: Option<f64>,
        #[arg(long)]
        ascii: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        input: PathBuf,
        output: PathBuf,
    },
    /// Absolute trajectory error between two TUM files.
    Ate {
        #[arg(long)]
        est: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Rigidly align the estimate to the reference first.
        #[arg(long)]
        align: bool,
        #[arg(long)]
        max_dt: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic scene bundle.
    Simgen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Time brute-force, grid and cross-validated matching.
    BenchMatch {
        #[arg(long, value_delimiter = ',', default_value = "250,1000,2000")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum CliError {
    Usage(String),
    Format(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Format(_) => 3,
            Self::Numeric(_) => 4,
        }
    }

    fn line(&self) -> String {
        let (kind, msg) = match self {
            Self::Usage(m) => ("usage", m),
            Self::Format(m) => ("format", m),
            Self::Numeric(m) => ("numeric", m),
        };
        format!("error[{kind}]: {}", msg.replace('\n', " "))
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::UnknownKeys(_) | IoError::TypeMismatch { .. } => Self::Usage(e.to_string()),
            _ => Self::Format(e.to_string()),
        }
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        match e {
            FeatureError::InvalidConfig(_) => Self::Usage(e.to_string()),
            _ => Self::Format(e.to_string()),
        }
    }
}

impl From<KeyframeError> for CliError {
    fn from(e: KeyframeError) -> Self {
        match e {
            KeyframeError::InvalidConfig(_) => Self::Usage(e.to_string()),
            KeyframeError::DegenerateFrame(_) => Self::Numeric(e.to_string()),
            _ => Self::Format(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::InvalidInput(_) => Self::Usage(e.to_string()),
            EvalError::NonIncreasing { .. } | EvalError::EmptyInput => Self::Format(e.to_string()),
            _ => Self::Numeric(e.to_string()),
        }
    }
}

impl From<CloudOpsError> for CliError {
    fn from(e: CloudOpsError) -> Self {
        match e {
            CloudOpsError::InvalidVoxelSize(_) | CloudOpsError::InvalidInput(_) => Self::Usage(e.to_string()),
            CloudOpsError::InsufficientNeighborhood { .. } => Self::Numeric(e.to_string()),
        }
    }
}

impl From<RegistrationError> for CliError {
    fn from(e: RegistrationError) -> Self {
        match e {
            RegistrationError::InvalidParams(_) | RegistrationError::InvalidRadius(_) => Self::Usage(e.to_string()),
            _ => Self::Numeric(e.to_string()),
        }
    }
}

impl From<FusionError> for CliError {
    fn from(e: FusionError) -> Self {
        match e {
            FusionError::Io(e) => e.into(),
            FusionError::Registration(e) => e.into(),
            FusionError::CloudOps(e) => e.into(),
            FusionError::EmptySession | FusionError::DuplicateRobot(_) | FusionError::MissingField { .. } => {
                Self::Format(e.to_string())
            }
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Io(e) => e.into(),
            SimError::InvalidSpec(_) => Self::Format(e.to_string()),
            SimError::Generation(_) => Self::Numeric(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn overrides(cli_set: &[String]) -> Result<Vec<(String, String)>> {
    cli_set
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {s:?}")))
        })
        .collect()
}

/// `base` ← `--config` file ← `--set` flags ← subcommand flags.
fn layered_config(base: Config, file: Option<&Path>, set: &[String], flags: &[(&str, String)]) -> Result<Config> {
    let mut cfg = base;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|source| IoError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let entries = io::parse_key_values(&text)?;
        cfg = cfg.with_overrides(entries.iter().map(|(_, k, v)| (k.as_str(), v.as_str())))?;
    }
    let set = overrides(set)?;
    cfg = cfg.with_overrides(set.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    cfg = cfg.with_overrides(flags.iter().map(|(k, v)| (*k, v.as_str())))?;
    Ok(cfg)
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|source| {
            IoError::Io {
                path: path.to_path_buf(),
                source,
            }
            .into()
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    emit(text, Some(path))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
        .into()
    })
}

fn kv(entries: &[(&str, String)]) -> String {
    let owned: Vec<(String, String)> = entries.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    io::format_key_values(&owned)
}

fn run(cli: Cli) -> Result<()> {
    let file = cli.config.as_deref();
    let base = Config::default();
    match cli.command {
        Command::Match {
            frame_a,
            frame_b,
            projection,
            truth,
            mode,
            pairs_out,
            out,
        } => {
            let cfg = layered_config(base, file, &cli.set, &[])?;
            let m = &cfg.matching;
            let a = io::read_frame(&frame_a, m.cell_size)?;
            let b = io::read_frame(&frame_b, m.cell_size)?;
            let spec = match projection {
                Some(p) => io::parse_projection(&read_text(&p)?)?,
                None => ProjectionSpec::Identity,
            };
            let proj: Box<dyn FrameProjection> = match spec {
                ProjectionSpec::Identity => Box::new(IdentityProjection),
                ProjectionSpec::Homography(h) => {
                    Box::new(Homography::new(h).ok_or_else(|| CliError::Format("singular homography".into()))?)
                }
            };
            m.validate()?;
            let set = match mode.as_str() {
                "cross" => features::cross_validate_match(&a, &b, proj.as_ref(), m)?,
                "one-pass" => features::stage_one_match(&a, &b, proj.as_ref(), m),
                "brute" => features::brute_force_match(&a, &b, m),
                other => return Err(CliError::Usage(format!("unknown match mode {other:?}"))),
            };
            if let Some(p) = pairs_out {
                write_text(&p, &io::format_pairs(&set.pairs))?;
            }
            let mut entries = vec![
                ("mode", mode.clone()),
                ("keypoints_a", a.len().to_string()),
                ("keypoints_b", b.len().to_string()),
                ("matches", set.len().to_string()),
            ];
            if let Some(t) = truth {
                let truth = io::parse_pairs(&read_text(&t)?)?;
                let (precision, recall) = features::precision_recall(&set.pairs, &truth);
                entries.push(("precision", fmt6(precision)));
                entries.push(("recall", fmt6(recall)));
            }
            emit(&kv(&entries), out.as_deref())
        }

        Command::Keyframes { observations, out } => {
            let cfg = layered_config(base, file, &cli.set, &[])?;
            let stream = io::parse_observations(&read_text(&observations)?)?;
            let rows = keyframe::select_keyframes_with_table(&stream, &cfg.keyframe)?;
            let selected: Vec<String> = rows
                .iter()
                .filter(|r| r.is_keyframe)
                .map(|r| r.frame_index.to_string())
                .collect();
            let mut text = kv(&[
                ("frames", rows.len().to_string()),
                ("keyframe_count", selected.len().to_string()),
                ("keyframes", selected.join(" ")),
            ]);
            text += "# frame_index t_h is_keyframe\n";
            for r in &rows {
                let _ = writeln!(text, "{} {} {}", r.frame_index, fmt6(r.t_h), r.is_keyframe as u8);
            }
            emit(&text, out.as_deref())
        }

        Command::Fuse {
            manifest,
            cloud_out,
            trajectories_out,
            ascii,
            out,
        } => {
            let m = io::read_manifest(&manifest)?;
            let cfg = layered_config(m.config, file, &cli.set, &[])?;
            let session = Session::from_manifest(&m)?;
            let (map, report) = session.fuse(&FusionParams::from(&cfg))?;
            io::write_ply(&map, &cloud_out, ascii)?;
            if let Some(dir) = trajectories_out {
                std::fs::create_dir_all(&dir).map_err(|source| IoError::Io {
                    path: dir.clone(),
                    source,
                })?;
                for (id, traj) in session.fuse_trajectories(&report.corrections) {
                    io::write_tum(&traj, &dir.join(format!("{id}_world.txt")))?;
                }
            }
            emit(&io::format_key_values(&report.to_entries()), out.as_deref())
        }

        Command::Sample {
            voxel,
            ascii,
            out,
            input,
            output,
        } => {
            let flags: Vec<(&str, String)> = voxel.map(|v| ("voxel.size", v.to_string())).into_iter().collect();
            let cfg = layered_config(base, file, &cli.set, &flags)?;
            let cloud = io::read_ply(&input)?;
            let sampled = cloudops::uniform_sample(&cloud, cfg.voxel_size)?;
            io::write_ply(&sampled, &output, ascii)?;
            let mut entries = vec![
                ("voxel_size", fmt6(cfg.voxel_size)),
                ("points_in", cloud.len().to_string()),
                ("points_out", sampled.len().to_string()),
            ];
            if !cloud.is_empty() {
                let r = cloudops::reduction_ratio(cloud.len(), sampled.len())?;
                entries.push(("reduction_percent", fmt6(r.0)));
            }
            emit(&kv(&entries), out.as_deref())
        }

        Command::Filter {
            k,
            reg,
            ascii,
            out,
            input,
            output,
        } => {
            let mut flags = Vec::new();
            if let Some(k) = k {
                flags.push(("filter.k_neighbors", k.to_string()));
            }
            if let Some(r) = reg {
                flags.push(("filter.reg", r.to_string()));
            }
            let cfg = layered_config(base, file, &cli.set, &flags)?;
            let cloud = io::read_ply(&input)?;
            let filtered = cloudops::gaussian_filter(&cloud, &cfg.filter)?;
            io::write_ply(&filtered, &output, ascii)?;
            emit(
                &kv(&[
                    ("k_neighbors", cfg.filter.k_neighbors.to_string()),
                    ("points", filtered.len().to_string()),
                ]),
                out.as_deref(),
            )
        }

        Command::Ate {
            est,
            reference,
            align,
            max_dt,
            out,
        } => {
            let flags: Vec<(&str, String)> = max_dt.map(|v| ("ate.max_dt", v.to_string())).into_iter().collect();
            let cfg = layered_config(base, file, &cli.set, &flags)?;
            let e = io::read_tum(&est)?;
            let r = io::read_tum(&reference)?;
            let rep = evaluation::ate(&e, &r, align, cfg.ate_max_dt)?;
            emit(
                &kv(&[
                    ("pairs", rep.per_pose_errors.len().to_string()),
                    ("aligned", align.to_string()),
                    ("max", fmt6(rep.max)),
                    ("med", fmt6(rep.med)),
                    ("rmse", fmt6(rep.rmse)),
                    ("std", fmt6(rep.std)),
                    ("mean", fmt6(rep.mean)),
                ]),
                out.as_deref(),
            )
        }

        Command::Simgen { spec, out_dir } => {
            let (scene, mut fixture) = simgen::parse_spec(&read_text(&spec)?)?;
            let cfg = layered_config(base, file, &cli.set, &[])?;
            fixture.matching = cfg.matching;
            simgen::write_bundle(&scene, &fixture, &out_dir)?;
            println!(
                "{}",
                kv(&[
                    ("out_dir", out_dir.display().to_string()),
                    ("robots", scene.robots.len().to_string())
                ])
                .trim_end()
            );
            Ok(())
        }

        Command::BenchMatch { sizes, reps, seed, out } => {
            let cfg = layered_config(base, file, &cli.set, &[])?;
            if reps == 0 || sizes.is_empty() {
                return Err(CliError::Usage("need at least one size and one repetition".into()));
            }
            let mut text = String::from("# keypoints brute_ms grid_ms cross_ms brute_over_grid\n");
            for &n in &sizes {
                let row = bench_row(n, reps, seed, &cfg.matching)?;
                let _ = writeln!(
                    text,
                    "{} {} {} {} {}",
                    n,
                    fmt6(row[0]),
                    fmt6(row[1]),
                    fmt6(row[2]),
                    fmt6(row[0] / row[1])
                );
            }
            emit(&text, out.as_deref())
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

/// Median milliseconds of brute-force, grid (stage-one) and cross-validated
/// matching on a fixture with `n` keypoints per frame. Grid timings include
/// building the grids.
fn bench_row(n: usize, reps: usize, seed: u64, cfg: &MatchConfig) -> Result<[f64; 3]> {
    let outliers = n / 5;
    let fx = simgen::generate_match_fixture(&FixtureSpec {
        seed,
        n_inliers: n - outliers,
        n_outliers: outliers,
        matching: *cfg,
        ..FixtureSpec::default()
    })?;
    let rebuild = |f: &FrameFeatures| {
        FrameFeatures::new(
            f.width,
            f.height,
            f.keypoints.clone(),
            f.descriptors.clone(),
            cfg.cell_size,
        )
    };
    let mut times = [
        Vec::with_capacity(reps),
        Vec::with_capacity(reps),
        Vec::with_capacity(reps),
    ];
    for _ in 0..reps {
        let t = Instant::now();
        let m = features::brute_force_match(&fx.frame_a, &fx.frame_b, cfg);
        times[0].push(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(m);

        let t = Instant::now();
        let a = rebuild(&fx.frame_a)?;
        let m = features::stage_one_match(&a, &fx.frame_b, &fx.projection, cfg);
        times[1].push(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(m);

        let t = Instant::now();
        let a = rebuild(&fx.frame_a)?;
        let b = rebuild(&fx.frame_b)?;
        let m = features::cross_validate_match(&a, &b, &fx.projection, cfg)?;
        times[2].push(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(m);
    }
    let [b, g, c] = times;
    Ok([median(b), median(g), median(c)])
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.code())
        }
    }
}
