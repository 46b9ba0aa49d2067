//! Command-line verbs. Exit codes: 0 success, 2 input error, 3 numerical failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use featreg_core::{
    encode_volume, evaluate, register, register_stacks, DeskEncoder, Dims, DisplacementField,
    EncoderConfig, Error as CoreError, Interp, LabelVolume, MetricReport, RegistrationConfig,
    Resample, SliceFeatureStack, Volume3D,
};
use serde::Serialize;
use thiserror::Error;

use crate::error::FormatError;
use crate::manifest::{FileRecord, RunManifest};
use crate::montage::{self, MontageMode};
use crate::synth::{self, SynthConfig, SynthError};
use crate::{fvb, nifti};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        source: FormatError,
    },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{0}")]
    Usage(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        let numerical = |e: &CoreError| matches!(e, CoreError::NonFiniteLoss { .. } | CoreError::RankDeficient { .. });
        match self {
            Self::Core(e) => {
                if numerical(e) {
                    3
                } else {
                    2
                }
            }
            Self::Synth(SynthError::RejectionExhausted { .. }) => 3,
            Self::Synth(SynthError::Core(e)) if numerical(e) => 3,
            _ => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "featreg", version, about = "Training-free deformable registration in a reduced patch-feature space")]
pub struct Cli {
    /// Worker threads (default: all cores). `--threads 1` is bitwise reproducible.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic blob pair with a known fold-free field.
    Synth(SynthArgs),
    /// Encode a volume slice by slice into an FVB1 feature stack.
    Extract(ExtractArgs),
    /// Register a moving volume onto a fixed volume.
    Register(RegisterArgs),
    /// Apply a displacement field to a volume.
    Warp(WarpArgs),
    /// Score a field with Dice, HD95 and SDLogJ.
    Evaluate(EvaluateArgs),
    /// Write a mid-axial PGM display.
    Montage(MontageArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Volume shape as W,H,Z.
    #[arg(long, value_delimiter = ',', default_values_t = [64, 64, 64])]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 6)]
    pub n_blobs: usize,
    /// Largest truth-field component, in voxels.
    #[arg(long, default_value_t = 12.0)]
    pub amplitude: f64,
    /// Gaussian std of the noise smoothing, in voxels.
    #[arg(long, default_value_t = 16.0)]
    pub smoothness: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EncoderKind {
    /// Built-in patch descriptor.
    Desk,
    /// Externally produced FVB1 given with --from.
    File,
}

#[derive(Debug, Args)]
pub struct EncoderArgs {
    /// Encode every k-th axial slice (plus the last) and interpolate the rest.
    #[arg(long = "stride", default_value_t = 1)]
    pub stride_k: usize,
    #[arg(long, default_value_t = 2)]
    pub patch_size: usize,
    /// Multiplier on desk descriptor values.
    #[arg(long, default_value_t = DeskEncoder::DEFAULT_GAIN)]
    pub desk_gain: f64,
}

impl EncoderArgs {
    pub fn config(&self) -> EncoderConfig {
        EncoderConfig {
            stride_k: self.stride_k,
            patch_size: self.patch_size,
            desk_gain: self.desk_gain,
            encoder_id: DeskEncoder::ID.to_owned(),
        }
    }
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = EncoderKind::Desk)]
    pub encoder: EncoderKind,
    /// FVB1 file to validate against the input (with `--encoder file`).
    #[arg(long)]
    pub from: Option<PathBuf>,
    #[command(flatten)]
    pub enc: EncoderArgs,
}

#[derive(Debug, Args)]
pub struct RegConfigArgs {
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    /// Per-level capture radius, coarsest first.
    #[arg(long, value_delimiter = ',', default_values_t = [2, 2, 2])]
    pub capture_radius: Vec<usize>,
    /// Per-level candidate spacing, coarsest first.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 1, 1])]
    pub quant_step: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub cc_iters: usize,
    #[arg(long, default_value_t = 3)]
    pub smooth_radius: usize,
    #[arg(long, default_value_t = 100)]
    pub refine_iters: usize,
    #[arg(long, default_value_t = 0.1)]
    pub step_size: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub eps: f64,
    #[arg(long, default_value_t = 24)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 2)]
    pub grid_factor: usize,
}

impl RegConfigArgs {
    pub fn config(&self) -> RegistrationConfig {
        RegistrationConfig {
            lambda: self.lambda,
            levels: self.levels,
            capture_radius: self.capture_radius.clone(),
            quant_step: self.quant_step.clone(),
            cc_iters: self.cc_iters,
            smooth_radius: self.smooth_radius,
            refine_iters: self.refine_iters,
            step_size: self.step_size,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            feature_dim: self.feature_dim,
            grid_factor: self.grid_factor,
        }
    }
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    #[arg(long)]
    pub fix: PathBuf,
    #[arg(long)]
    pub mov: PathBuf,
    /// Precomputed FVB1 features for the fixed volume (requires --mov-feat).
    #[arg(long, requires = "mov_feat")]
    pub fix_feat: Option<PathBuf>,
    #[arg(long, requires = "fix_feat")]
    pub mov_feat: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub enc: EncoderArgs,
    #[command(flatten)]
    pub reg: RegConfigArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InterpArg {
    Linear,
    Nearest,
}

#[derive(Debug, Args)]
pub struct WarpArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub disp: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = InterpArg::Linear)]
    pub interp: InterpArg,
    /// Treat the input as a label map (always nearest, integer output).
    #[arg(long)]
    pub labels: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub fix_labels: PathBuf,
    #[arg(long)]
    pub mov_labels: PathBuf,
    #[arg(long)]
    pub disp: PathBuf,
    /// Labels to score (default: every non-zero label present).
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<u32>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// Value of the `case` column for the registered rows.
    #[arg(long, default_value = "registered")]
    pub case: String,
}

#[derive(Debug, Args)]
pub struct MontageArgs {
    /// First volume, or the displacement field for `--mode logj`.
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: MontageMode,
    #[arg(long)]
    pub out: PathBuf,
}

fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_owned(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn parse<T>(path: &Path, bytes: &[u8], f: impl FnOnce(&[u8]) -> crate::error::Result<T>) -> CliResult<T> {
    f(bytes).map_err(|source| CliError::Format {
        path: path.to_owned(),
        source,
    })
}

fn encode<T>(path: &Path, r: crate::error::Result<T>) -> CliResult<T> {
    r.map_err(|source| CliError::Format {
        path: path.to_owned(),
        source,
    })
}

/// Output collector that records hashes for the manifest.
struct Outputs<'a> {
    manifest: &'a mut RunManifest,
}

impl Outputs<'_> {
    fn write(&mut self, role: &str, path: &Path, bytes: &[u8]) -> CliResult<()> {
        write_file(path, bytes)?;
        self.manifest.outputs.push(FileRecord::new(role, path, bytes));
        Ok(())
    }
}

fn to_json<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut text = serde_json::to_vec_pretty(value)?;
    text.push(b'\n');
    Ok(text)
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

pub fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        // Fails only if a global pool already exists (e.g. in-process reuse).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Synth(a) => cmd_synth(&a, cli.threads),
        Command::Extract(a) => cmd_extract(&a),
        Command::Register(a) => cmd_register(&a, cli.threads),
        Command::Warp(a) => cmd_warp(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Montage(a) => cmd_montage(&a),
    }
}

pub fn cmd_synth(a: &SynthArgs, threads: Option<usize>) -> CliResult<()> {
    let [w, h, z] = a.dims[..] else {
        return Err(CliError::Usage(format!("--dims takes W,H,Z, got {:?}", a.dims)));
    };
    let cfg = SynthConfig {
        seed: a.seed,
        dims: Dims::new(w, h, z),
        n_blobs: a.n_blobs,
        warp_amplitude: a.amplitude,
        warp_smoothness: a.smoothness,
    };
    let start = Instant::now();
    let case = synth::generate(&cfg)?;
    let mut manifest = RunManifest::new("synth", threads);
    manifest.seed = Some(cfg.seed);
    manifest.config.synth = Some(cfg);
    manifest.timings_ms.insert("generate".into(), elapsed_ms(start));
    let dir = &a.out_dir;
    let files = [
        ("fix", "fix.nii", encode(&dir.join("fix.nii"), nifti::write_volume(&case.fix))?),
        ("mov", "mov.nii", encode(&dir.join("mov.nii"), nifti::write_volume(&case.mov))?),
        ("fix_labels", "fix_labels.nii", encode(&dir.join("fix_labels.nii"), nifti::write_labels(&case.fix_labels))?),
        ("mov_labels", "mov_labels.nii", encode(&dir.join("mov_labels.nii"), nifti::write_labels(&case.mov_labels))?),
        ("truth_disp", "truth_disp.nii", encode(&dir.join("truth_disp.nii"), nifti::write_field(&case.truth))?),
    ];
    let mut out = Outputs { manifest: &mut manifest };
    for (role, name, bytes) in &files {
        out.write(role, &dir.join(name), bytes)?;
    }
    let text = to_json(&manifest)?;
    write_file(&dir.join("synth.json"), &text)
}

fn read_volume(path: &Path) -> CliResult<(Volume3D, Vec<u8>)> {
    let bytes = read_file(path)?;
    let vol = parse(path, &bytes, nifti::read_volume)?;
    Ok((vol, bytes))
}

fn read_stack(path: &Path, depth: usize) -> CliResult<(SliceFeatureStack, Vec<u8>)> {
    let bytes = read_file(path)?;
    let stack = parse(path, &bytes, fvb::read_fvb)?;
    if stack.depth() != depth {
        return Err(CliError::Usage(format!(
            "{}: feature stack has {} slices, volume has {depth}",
            path.display(),
            stack.depth()
        )));
    }
    Ok((stack, bytes))
}

pub fn cmd_extract(a: &ExtractArgs) -> CliResult<()> {
    let (vol, _) = read_volume(&a.input)?;
    let bytes = match a.encoder {
        EncoderKind::Desk => {
            let cfg = a.enc.config();
            let stack = encode_volume(&vol, &cfg, &DeskEncoder::from_config(&cfg))?;
            encode(&a.out, fvb::write_fvb(&stack))?
        }
        EncoderKind::File => {
            let from = a
                .from
                .as_deref()
                .ok_or_else(|| CliError::Usage("--encoder file requires --from <fvb>".into()))?;
            read_stack(from, vol.dims().z)?.1
        }
    };
    write_file(&a.out, &bytes)
}

#[derive(Serialize)]
struct TraceRecord {
    iteration: usize,
    sim: f64,
    reg: f64,
    total: f64,
}

pub fn cmd_register(a: &RegisterArgs, threads: Option<usize>) -> CliResult<()> {
    let enc_cfg = a.enc.config();
    let reg_cfg = a.reg.config();
    enc_cfg.validate()?;
    reg_cfg.validate()?;
    let mut manifest = RunManifest::new("register", threads);

    let (fix, fix_bytes) = read_volume(&a.fix)?;
    let (mov, mov_bytes) = read_volume(&a.mov)?;
    manifest.inputs.push(FileRecord::new("fix", &a.fix, &fix_bytes));
    manifest.inputs.push(FileRecord::new("mov", &a.mov, &mov_bytes));
    if fix.dims() != mov.dims() {
        return Err(CoreError::DimsMismatch {
            expected: fix.dims(),
            found: mov.dims(),
        }
        .into());
    }

    let start = Instant::now();
    let result = match (&a.fix_feat, &a.mov_feat) {
        (Some(ff), Some(mf)) => {
            let (sf, bf) = read_stack(ff, fix.dims().z)?;
            let (sm, bm) = read_stack(mf, fix.dims().z)?;
            manifest.inputs.push(FileRecord::new("fix_feat", ff, &bf));
            manifest.inputs.push(FileRecord::new("mov_feat", mf, &bm));
            register_stacks(&sf, &sm, fix.dims(), fix.spacing(), &reg_cfg)?
        }
        _ => {
            manifest.config.encoder = Some(enc_cfg.clone());
            register(&fix, &mov, &DeskEncoder::from_config(&enc_cfg), &enc_cfg, &reg_cfg)?
        }
    };
    manifest.timings_ms.insert("register".into(), elapsed_ms(start));
    manifest.config.registration = Some(reg_cfg);
    manifest.identity_loss = Some(result.identity_loss);
    manifest.final_loss = result.trace.last().copied();

    let trace: Vec<TraceRecord> = result
        .trace
        .iter()
        .enumerate()
        .map(|(iteration, l)| TraceRecord {
            iteration,
            sim: l.sim,
            reg: l.reg,
            total: l.total,
        })
        .collect();
    let dir = &a.out_dir;
    let disp_path = dir.join("disp.nii");
    let disp = encode(&disp_path, nifti::write_field(&result.field))?;
    let trace_json = to_json(&trace)?;
    let projection_json = to_json(&result.projection)?;
    let mut out = Outputs { manifest: &mut manifest };
    out.write("disp", &disp_path, &disp)?;
    out.write("trace", &dir.join("trace.json"), &trace_json)?;
    out.write("projection", &dir.join("projection.json"), &projection_json)?;
    let text = to_json(&manifest)?;
    write_file(&dir.join("manifest.json"), &text)
}

fn read_field(path: &Path) -> CliResult<DisplacementField> {
    let bytes = read_file(path)?;
    parse(path, &bytes, nifti::read_field)
}

fn read_labels(path: &Path) -> CliResult<LabelVolume> {
    let bytes = read_file(path)?;
    parse(path, &bytes, nifti::read_labels)
}

pub fn cmd_warp(a: &WarpArgs) -> CliResult<()> {
    let disp = read_field(&a.disp)?;
    let bytes = if a.labels {
        let labels = read_labels(&a.input)?;
        encode(&a.out, nifti::write_labels(&labels.warp(&disp, Interp::Nearest)?))?
    } else {
        let (vol, _) = read_volume(&a.input)?;
        let interp = match a.interp {
            InterpArg::Linear => Interp::Linear,
            InterpArg::Nearest => Interp::Nearest,
        };
        encode(&a.out, nifti::write_volume(&vol.warp(&disp, interp)?))?
    };
    write_file(&a.out, &bytes)
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    case: &'a str,
    initial: &'a MetricReport,
    registered: &'a MetricReport,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV with one row per label plus a `mean` row, for each report.
pub fn metrics_csv(rows: &[(&str, &MetricReport)]) -> String {
    let mut s = String::from("case,label,dice,hd95_mm,sdlogj,folding_fraction\n");
    for (case, r) in rows {
        for (label, d) in &r.per_label_dice {
            let hd = r.per_label_hd95_mm.get(label).copied().flatten();
            let _ = writeln!(s, "{case},{label},{d},{},{},{}", fmt_opt(hd), r.sdlogj, r.folding_fraction);
        }
        let _ = writeln!(
            s,
            "{case},mean,{},{},{},{}",
            r.mean_dice,
            fmt_opt(r.mean_hd95_mm),
            r.sdlogj,
            r.folding_fraction
        );
    }
    s
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> CliResult<()> {
    let fix = read_labels(&a.fix_labels)?;
    let mov = read_labels(&a.mov_labels)?;
    let disp = read_field(&a.disp)?;
    if disp.dims() != fix.dims() {
        return Err(CoreError::DimsMismatch {
            expected: fix.dims(),
            found: disp.dims(),
        }
        .into());
    }
    let zero = DisplacementField::zeros(fix.dims(), fix.spacing())?;
    let initial = evaluate(&fix, &mov, &zero, &a.labels)?;
    let registered = evaluate(&fix, &mov, &disp, &a.labels)?;
    let json = to_json(&MetricsFile {
        case: &a.case,
        initial: &initial,
        registered: &registered,
    })?;
    write_file(&a.out_dir.join("metrics.json"), &json)?;
    let csv = metrics_csv(&[("initial", &initial), (&a.case, &registered)]);
    write_file(&a.out_dir.join("metrics.csv"), csv.as_bytes())
}

pub fn cmd_montage(a: &MontageArgs) -> CliResult<()> {
    let img = match a.mode {
        MontageMode::Logj => montage::logj(&read_field(&a.a)?)?,
        mode => {
            let b = a
                .b
                .as_deref()
                .ok_or_else(|| CliError::Usage("--b is required for checker and diff".into()))?;
            let (va, _) = read_volume(&a.a)?;
            let (vb, _) = read_volume(b)?;
            if mode == MontageMode::Checker {
                montage::checker(&va, &vb)?
            } else {
                montage::diff(&va, &vb)?
            }
        }
    };
    write_file(&a.out, &img.to_pgm())
}
