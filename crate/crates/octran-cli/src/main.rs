//! `octran` — operator CLI for the occupancy pipeline.
//!
//! Every command prints machine-parseable `key=value` lines on stdout
//! and writes a run manifest next to its outputs. Exit codes: 0 on
//! success, 2 on usage or input errors, 3 on numerical failure
//! (diverged training). The `OCTRAN_SEED` environment variable
//! overrides the seed found in any spec or config file.

mod manifest;

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use octran::geometry::{
    depth_error, disparity_to_pointcloud, voxelize, write_ocgr, write_ply_points, PointCloud,
    StereoCamera, VoxelGridSpec,
};
use octran::model::{baseline_iou, evaluate, ModelError, OctranConfig, TrainState};
use octran::scenes::{
    derive_seed, generate_dataset, generate_scene, load_pfm, load_shard, pipeline_consistency,
    render_disparity, save_shard, GtMode, SceneSpec,
};

use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "octran", version, about = "Stereo-to-occupancy pipeline tools")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset shard from a scene spec file.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Ground-truth mode: volume | surface.
        #[arg(long, default_value = "volume")]
        gt: String,
    },
    /// Train a model on a shard, writing checkpoints and a metrics CSV.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Total optimizer steps (a resumed run continues up to this).
        #[arg(long, default_value_t = 200)]
        steps: u64,
        /// Evaluate IoU every this many steps (0 = only at the end).
        #[arg(long, default_value_t = 50)]
        eval_every: u64,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Resume from an existing checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Report mean IoU of a checkpoint on a shard.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Back-project a PFM disparity map into a PLY point cloud or an
    /// OCGR occupancy grid (chosen by the output extension).
    Project {
        #[arg(long)]
        pfm: PathBuf,
        #[arg(long)]
        cam: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Voxel counts "nx,ny,nz" (required for .ocgr output).
        #[arg(long)]
        grid_dims: Option<String>,
        /// Metric size "x,y,z" of the grid (required for .ocgr output).
        #[arg(long, allow_hyphen_values = true)]
        grid_extent: Option<String>,
        /// Minimum corner "x,y,z" of the grid (required for .ocgr output).
        #[arg(long, allow_hyphen_values = true)]
        grid_origin: Option<String>,
    },
    /// Print the first-order depth error z²·Δd/(b·f_x) as CSV.
    DepthErrorTable {
        #[arg(long)]
        cam: PathBuf,
        #[arg(long)]
        zmin: f64,
        #[arg(long)]
        zmax: f64,
        /// Disparity perturbation in pixels.
        #[arg(long)]
        dd: f64,
        #[arg(long, default_value_t = 10)]
        rows: usize,
    },
    /// Print measured attention MACs per query count as CSV.
    BenchAttention {
        /// Comma-separated query token counts.
        #[arg(long, default_value = "32,64,128,256")]
        m_list: String,
        /// Latent count.
        #[arg(long, default_value_t = 8)]
        n: usize,
        /// Dim per head.
        #[arg(long, default_value_t = 16)]
        d: usize,
    },
    /// Verify that voxelized back-projections stay inside the dilated
    /// ground truth for every seeded scene of a spec.
    PipelineCheck {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Process-level failure, carrying the exit code.
enum CliError {
    /// Bad usage or unreadable/invalid input: exit 2.
    Input(String),
    /// Numerical failure (diverged training): exit 3.
    Numeric(String),
}

impl CliError {
    fn input(e: impl std::fmt::Display) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Diverged { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numeric(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var("OCTRAN_SEED") {
        Ok(v) => v
            .parse()
            .map(Some)
            .map_err(|_| CliError::Input(format!("OCTRAN_SEED={v:?} is not a u64"))),
        Err(_) => Ok(None),
    }
}

fn read_text(path: &Path, what: &str) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {what} {}: {e}", path.display())))
}

fn parse_triple<T: std::str::FromStr + Copy>(s: &str, flag: &str) -> Result<[T; 3], CliError> {
    let parts: Vec<T> = s
        .split(',')
        .map(|p| p.trim().parse::<T>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Input(format!("--{flag} {s:?} is not three comma-separated values")))?;
    parts
        .try_into()
        .map_err(|_| CliError::Input(format!("--{flag} {s:?} must have exactly three values")))
}

/// Camera file: flat `key=value` with fx, fy, ox, oy, b, width, height.
fn load_camera(path: &Path) -> Result<StereoCamera, CliError> {
    let text = read_text(path, "camera file")?;
    let mut kv = std::collections::BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("camera file line {line:?} is not key=value")))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let mut get = |key: &str| -> Result<String, CliError> {
        kv.remove(key)
            .ok_or_else(|| CliError::Input(format!("camera file missing key {key:?}")))
    };
    let f = |s: String, key: &str| -> Result<f64, CliError> {
        s.parse()
            .map_err(|_| CliError::Input(format!("camera key {key} has bad value {s:?}")))
    };
    let fx = f(get("fx")?, "fx")?;
    let fy = f(get("fy")?, "fy")?;
    let ox = f(get("ox")?, "ox")?;
    let oy = f(get("oy")?, "oy")?;
    let b = f(get("b")?, "b")?;
    let width: u32 = get("width")?
        .parse()
        .map_err(|_| CliError::Input("camera width must be a positive integer".into()))?;
    let height: u32 = get("height")?
        .parse()
        .map_err(|_| CliError::Input("camera height must be a positive integer".into()))?;
    StereoCamera::new(fx, fy, ox, oy, b, width, height).map_err(CliError::input)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::GenData { spec, out, count, seed, gt } => gen_data(&spec, &out, count, seed, &gt),
        Cmd::Train { config, data, out, steps, eval_every, threshold, resume } => {
            train(&config, &data, &out, steps, eval_every, threshold, resume.as_deref())
        }
        Cmd::Eval { ckpt, data, threshold } => eval_cmd(&ckpt, &data, threshold),
        Cmd::Project { pfm, cam, out, grid_dims, grid_extent, grid_origin } => {
            project(&pfm, &cam, &out, grid_dims, grid_extent, grid_origin)
        }
        Cmd::DepthErrorTable { cam, zmin, zmax, dd, rows } => {
            depth_error_table(&cam, zmin, zmax, dd, rows)
        }
        Cmd::BenchAttention { m_list, n, d } => bench_attention(&m_list, n, d),
        Cmd::PipelineCheck { spec, count, seed } => pipeline_check(&spec, count, seed),
    }
}

fn gen_data(
    spec_path: &Path,
    out: &Path,
    count: usize,
    seed: Option<u64>,
    gt: &str,
) -> Result<(), CliError> {
    let mut manifest = RunManifest::new("gen-data");
    let mode = GtMode::parse(gt)
        .ok_or_else(|| CliError::Input(format!("--gt {gt:?} must be volume or surface")))?;
    let mut spec = SceneSpec::from_text(&read_text(spec_path, "scene spec")?).map_err(CliError::input)?;
    if let Some(s) = seed.or(env_seed()?) {
        spec.seed = s;
    }
    let samples = generate_dataset(&spec, count, mode).map_err(CliError::input)?;
    save_shard(out, &spec.camera, &samples).map_err(CliError::input)?;
    println!("samples={count}");
    println!("seed={}", spec.seed);
    println!("gt={}", mode.name());
    println!("shard={}", out.display());
    manifest.set("seed", spec.seed);
    manifest.set("count", count);
    manifest.set("gt", mode.name());
    manifest.set("spec", spec_path.display());
    manifest.add_output(out);
    manifest
        .write(&manifest_path(out))
        .map_err(CliError::input)
}

/// Manifest lands next to the named output (`<out>.manifest.txt` for
/// files, `<out>/run_manifest.txt` for directories).
fn manifest_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join("run_manifest.txt")
    } else {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.txt");
        out.with_file_name(name)
    }
}

fn train(
    config_path: &Path,
    data: &Path,
    out: &Path,
    steps: u64,
    eval_every: u64,
    threshold: f64,
    resume: Option<&Path>,
) -> Result<(), CliError> {
    let mut manifest = RunManifest::new("train");
    let mut cfg = OctranConfig::from_text(&read_text(config_path, "config")?)?;
    if let Some(s) = env_seed()? {
        cfg.seed = s;
    }
    let (_, samples) = load_shard(data).map_err(CliError::input)?;
    if samples.is_empty() {
        return Err(CliError::Input("shard contains no samples".into()));
    }
    let mut state = match resume {
        Some(dir) => {
            let state = TrainState::load(dir)?;
            if state.model.config() != &cfg {
                return Err(CliError::Input(
                    "checkpoint config does not match --config".into(),
                ));
            }
            state
        }
        None => TrainState::new(cfg.clone())?,
    };
    let bs = cfg.bs;
    while state.step < steps {
        // deterministic batch schedule: step s covers samples
        // [s*bs, s*bs + bs) modulo the shard
        let batch: Vec<_> = (0..bs)
            .map(|j| samples[(state.step as usize * bs + j) % samples.len()].clone())
            .collect();
        state.train_step(&batch)?;
        if eval_every > 0 && state.step % eval_every == 0 && state.step < steps {
            let iou = evaluate(&state.model, &samples, threshold)?;
            state.record_iou(iou);
        }
    }
    let iou = evaluate(&state.model, &samples, threshold)?;
    state.record_iou(iou);
    state.save(out)?;

    let mut csv = String::from("step,loss,iou\n");
    let mut iou_at: std::collections::BTreeMap<u64, f64> =
        state.iou_history.iter().copied().collect();
    for (i, loss) in state.loss_history.iter().enumerate() {
        let step = i as u64 + 1;
        match iou_at.remove(&step) {
            Some(v) => {
                let _ = writeln!(csv, "{step},{loss},{v}");
            }
            None => {
                let _ = writeln!(csv, "{step},{loss},");
            }
        }
    }
    fs::write(out.join("metrics.csv"), csv)
        .map_err(|e| CliError::Input(format!("cannot write metrics.csv: {e}")))?;

    let initial = state.loss_history.first().copied().unwrap_or(f64::NAN);
    let final_loss = state.loss_history.last().copied().unwrap_or(f64::NAN);
    let empty = baseline_iou(&samples, false)?;
    let occupied = baseline_iou(&samples, true)?;
    println!("steps={}", state.step);
    println!("params={}", state.model.param_count());
    println!("initial_loss={initial}");
    println!("final_loss={final_loss}");
    println!("loss_ratio={}", final_loss / initial);
    println!("iou={iou}");
    println!("baseline_empty_iou={empty}");
    println!("baseline_occupied_iou={occupied}");
    manifest.set("config", config_path.display());
    manifest.set("data", data.display());
    manifest.set("seed", cfg.seed);
    manifest.set("steps", state.step);
    manifest.set("final_loss", final_loss);
    manifest.set("iou", iou);
    manifest.add_output(out);
    manifest.write(&out.join("run_manifest.txt")).map_err(CliError::input)
}

fn eval_cmd(ckpt: &Path, data: &Path, threshold: f64) -> Result<(), CliError> {
    let state = TrainState::load(ckpt)?;
    let (_, samples) = load_shard(data).map_err(CliError::input)?;
    let iou = evaluate(&state.model, &samples, threshold)?;
    println!("iou={iou}");
    println!("baseline_empty_iou={}", baseline_iou(&samples, false)?);
    println!("baseline_occupied_iou={}", baseline_iou(&samples, true)?);
    Ok(())
}

fn project(
    pfm: &Path,
    cam: &Path,
    out: &Path,
    grid_dims: Option<String>,
    grid_extent: Option<String>,
    grid_origin: Option<String>,
) -> Result<(), CliError> {
    let mut manifest = RunManifest::new("project");
    let camera = load_camera(cam)?;
    let dm = load_pfm(pfm)
        .map_err(|e| CliError::Input(format!("cannot load {}: {e}", pfm.display())))?;
    let pc: PointCloud = disparity_to_pointcloud(&camera, &dm).map_err(CliError::input)?;
    println!("points={}", pc.points.len());
    let ext = out.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "ply" => {
            let mut w = BufWriter::new(
                fs::File::create(out).map_err(|e| CliError::Input(e.to_string()))?,
            );
            write_ply_points(&mut w, &pc.points).map_err(CliError::input)?;
        }
        "ocgr" => {
            let (dims, extent, origin) = match (grid_dims, grid_extent, grid_origin) {
                (Some(d), Some(e), Some(o)) => (d, e, o),
                _ => {
                    return Err(CliError::Input(
                        ".ocgr output needs --grid-dims, --grid-extent and --grid-origin".into(),
                    ))
                }
            };
            let spec = VoxelGridSpec::new(
                parse_triple(&dims, "grid-dims")?,
                parse_triple(&extent, "grid-extent")?,
                parse_triple(&origin, "grid-origin")?,
            )
            .map_err(CliError::input)?;
            let vox = voxelize(&pc, &spec);
            println!("dropped={}", vox.dropped);
            println!("voxels={}", vox.grid.occupied_count());
            let mut w = BufWriter::new(
                fs::File::create(out).map_err(|e| CliError::Input(e.to_string()))?,
            );
            write_ocgr(&mut w, &vox.grid).map_err(CliError::input)?;
        }
        other => {
            return Err(CliError::Input(format!(
                "--out extension {other:?} must be ply or ocgr"
            )))
        }
    }
    println!("out={}", out.display());
    manifest.set("pfm", pfm.display());
    manifest.set("cam", cam.display());
    manifest.set("points", pc.points.len());
    manifest.add_output(out);
    manifest.write(&manifest_path(out)).map_err(CliError::input)
}

fn depth_error_table(
    cam: &Path,
    zmin: f64,
    zmax: f64,
    dd: f64,
    rows: usize,
) -> Result<(), CliError> {
    if !(zmin > 0.0) || zmax < zmin || rows == 0 {
        return Err(CliError::Input(format!(
            "need 0 < zmin <= zmax and rows >= 1 (got zmin={zmin}, zmax={zmax}, rows={rows})"
        )));
    }
    let camera = load_camera(cam)?;
    println!("z,dz");
    for i in 0..rows {
        let z = if rows == 1 {
            zmin
        } else {
            zmin + (zmax - zmin) * i as f64 / (rows - 1) as f64
        };
        let dz = depth_error(&camera, z, dd).map_err(CliError::input)?;
        println!("{z},{dz}");
    }
    Ok(())
}

fn bench_attention(m_list: &str, n: usize, d: usize) -> Result<(), CliError> {
    let ms: Vec<usize> = m_list
        .split(',')
        .map(|s| s.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Input(format!("--m-list {m_list:?} is not a list of integers")))?;
    println!("m,cross_macs,self_macs");
    for m in ms {
        let row = octran::attention::complexity_row(m, n, d).map_err(CliError::input)?;
        println!("{},{},{}", row.m, row.cross_score_macs, row.self_score_macs);
    }
    Ok(())
}

fn pipeline_check(spec_path: &Path, count: usize, seed: Option<u64>) -> Result<(), CliError> {
    let mut spec = SceneSpec::from_text(&read_text(spec_path, "scene spec")?).map_err(CliError::input)?;
    if let Some(s) = seed.or(env_seed()?) {
        spec.seed = s;
    }
    let mut violations = 0usize;
    let mut points = 0usize;
    for i in 0..count {
        let mut per_sample = spec.clone();
        per_sample.seed = derive_seed(spec.seed, i as u64);
        let scene = generate_scene(&per_sample).map_err(CliError::input)?;
        let dm = render_disparity(&scene, &spec.camera);
        let report =
            pipeline_consistency(&scene, &dm, &spec.camera, &spec.grid).map_err(CliError::input)?;
        violations += report.violations;
        points += report.projected_points;
    }
    println!("samples={count}");
    println!("projected_points={points}");
    println!("violations={violations}");
    println!("consistent={}", violations == 0);
    Ok(())
}
