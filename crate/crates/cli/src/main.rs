//! `disflow` command-line tool: dense flow, stereo disparity, flow chaining
//! and end-point-error evaluation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use disflow::eval::endpoint_errors;
use disflow::{
    compose_flows, dis_flow, dis_flow_timed, dis_stereo_timed, endpoint_error, error_threshold_curve, flow_to_color,
    read_flo, read_image, write_flo, write_ppm, DisParams, FlowError, FlowField, GrayImage, Preset, ResidualNorm,
    StageTimings,
};

#[derive(Parser)]
#[command(name = "disflow", version, about = "Dense optical flow by fast inverse patch search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the flow from FRAME1 to FRAME2 and write it as .flo.
    Compute {
        frame1: PathBuf,
        frame2: PathBuf,
        #[command(flatten)]
        flow: FlowArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Compare an estimated .flo against ground truth.
    Epe {
        gt: PathBuf,
        est: PathBuf,
        /// Comma-separated error thresholds in pixels, ascending; prints the
        /// fraction of pixels above each.
        #[arg(long, value_delimiter = ',')]
        thresholds: Vec<f64>,
    },
    /// Track through a frame sequence, composing the pairwise flows into
    /// the flow from the first to the last frame.
    Chain {
        #[arg(required = true, num_args = 2..)]
        frames: Vec<PathBuf>,
        #[command(flatten)]
        flow: FlowArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Horizontal disparity of a rectified pair; the .flo v-plane is zero.
    Stereo {
        left: PathBuf,
        right: PathBuf,
        #[command(flatten)]
        flow: FlowArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Args)]
struct FlowArgs {
    /// Operating point 1 (fastest) to 4 (most accurate); explicit flags
    /// below override its values. Defaults to 2.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    preset: Option<u8>,
    #[arg(long)]
    patch_size: Option<usize>,
    /// Patch overlap fraction in [0, 1).
    #[arg(long)]
    overlap: Option<f64>,
    /// Gradient descent iterations per patch.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    finest_scale: Option<usize>,
    /// Coarsest pyramid level; chosen from the image width when omitted.
    #[arg(long)]
    coarsest_scale: Option<usize>,
    /// Skip variational refinement.
    #[arg(long)]
    no_variational: bool,
    /// Densify patches from both directions.
    #[arg(long)]
    bidirectional: bool,
    /// Patch residual norm: l2, l1 or huber:B.
    #[arg(long, value_parser = parse_norm)]
    norm: Option<ResidualNorm>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct OutputArgs {
    /// Output .flo path.
    #[arg(long)]
    out: PathBuf,
    /// Also write a color-coded PPM visualization.
    #[arg(long)]
    viz: Option<PathBuf>,
    /// Print preprocessing and flow computation wall-clock times.
    #[arg(long)]
    time: bool,
}

fn parse_norm(s: &str) -> Result<ResidualNorm, String> {
    s.parse().map_err(|e: FlowError| e.to_string())
}

/// Failure with its exit code: 1 for computation errors, 2 for usage and
/// I/O errors.
struct Failure {
    code: u8,
    message: String,
}

impl From<FlowError> for Failure {
    fn from(e: FlowError) -> Self {
        let code = match e {
            FlowError::Io { .. } | FlowError::Format { .. } | FlowError::InvalidParams(_) => 2,
            FlowError::Dimensions(_)
            | FlowError::DimensionMismatch { .. }
            | FlowError::InvalidInput(_)
            | FlowError::NonFinite { .. } => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl FlowArgs {
    fn params(&self, width: usize, height: usize, stereo: bool) -> Result<DisParams, Failure> {
        let preset = Preset::from_index(self.preset.unwrap_or(2)).expect("preset range is validated by clap");
        let mut p = if stereo {
            DisParams::stereo_preset(preset)
        } else {
            DisParams::preset(preset)
        };
        if let Some(v) = self.patch_size {
            p.patch_size = v;
        }
        if let Some(v) = self.overlap {
            p.overlap = v;
        }
        if let Some(v) = self.iters {
            p.iterations = v;
        }
        if let Some(v) = self.finest_scale {
            p.finest_scale = v;
        }
        if self.no_variational {
            p.variational = None;
        }
        if let Some(v) = self.norm {
            p.residual_norm = v;
        }
        p.bidirectional = self.bidirectional;
        p.threads = self.threads;
        // report parameter errors before fitting the scale range to the input
        DisParams {
            coarsest_scale: p.coarsest_scale.max(p.finest_scale),
            ..p.clone()
        }
        .validate()?;
        let p = match self.coarsest_scale {
            Some(v) => DisParams { coarsest_scale: v, ..p },
            None => p.fit_to(width, height)?,
        };
        p.validate()?;
        Ok(p)
    }
}

fn load(path: &Path) -> Result<GrayImage, Failure> {
    Ok(read_image(path)?)
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn print_timings(decode: Duration, t: &StageTimings) {
    println!("preprocessing_ms={:.3}", ms(decode + t.preprocess));
    println!("flow_ms={:.3}", ms(t.flow_total()));
    println!("  patch_search_ms={:.3}", ms(t.patch_search));
    println!("  densification_ms={:.3}", ms(t.densification));
    println!("  variational_ms={:.3}", ms(t.variational));
    println!("  upsampling_ms={:.3}", ms(t.upsampling));
}

fn write_outputs(flow: &FlowField, output: &OutputArgs) -> Result<(), Failure> {
    write_flo(flow, &output.out)?;
    if let Some(viz) = &output.viz {
        write_ppm(&flow_to_color(flow, None), viz)?;
    }
    Ok(())
}

fn compute(frame1: &Path, frame2: &Path, args: &FlowArgs, output: &OutputArgs, stereo: bool) -> Result<(), Failure> {
    let start = Instant::now();
    let a = load(frame1)?;
    let b = load(frame2)?;
    let decode = start.elapsed();
    if a.dims() != b.dims() {
        return Err(FlowError::DimensionMismatch {
            expected: a.dims(),
            actual: b.dims(),
        }
        .into());
    }
    let (w, h) = a.dims();
    let params = args.params(w, h, stereo)?;
    let (flow, timings) = if stereo {
        dis_stereo_timed(&a, &b, &params)?
    } else {
        dis_flow_timed(&a, &b, &params)?
    };
    if output.time {
        print_timings(decode, &timings);
    }
    write_outputs(&flow, output)
}

fn chain(frames: &[PathBuf], args: &FlowArgs, output: &OutputArgs) -> Result<(), Failure> {
    let start = Instant::now();
    let images = frames.iter().map(|p| load(p)).collect::<Result<Vec<_>, _>>()?;
    let decode = start.elapsed();
    let dims = images[0].dims();
    for (i, (img, path)) in images.iter().zip(frames).enumerate().skip(1) {
        if img.dims() != dims {
            return Err(Failure {
                code: 1,
                message: format!(
                    "frame {i} ({}) is {}x{}, expected {}x{} like frame 0",
                    path.display(),
                    img.dims().0,
                    img.dims().1,
                    dims.0,
                    dims.1
                ),
            });
        }
    }
    let params = args.params(dims.0, dims.1, false)?;
    let flow_start = Instant::now();
    let mut total = dis_flow(&images[0], &images[1], &params)?;
    for pair in images[1..].windows(2) {
        let leg = dis_flow(&pair[0], &pair[1], &params)?;
        total = compose_flows(&total, &leg)?;
    }
    if output.time {
        println!("preprocessing_ms={:.3}", ms(decode));
        println!("flow_ms={:.3}", ms(flow_start.elapsed()));
    }
    write_outputs(&total, output)
}

fn epe(gt: &Path, est: &Path, thresholds: &[f64]) -> Result<(), Failure> {
    let gt = read_flo(gt)?;
    let est = read_flo(est)?;
    let stats = endpoint_error(&gt, &est, None)?;
    println!("all     {:.6} ({} px)", stats.epe_all, stats.valid_pixel_count);
    println!("s0-10   {:.6} ({} px)", stats.epe_s0_10, stats.count_s0_10);
    println!("s10-40  {:.6} ({} px)", stats.epe_s10_40, stats.count_s10_40);
    println!("s40+    {:.6} ({} px)", stats.epe_s40, stats.count_s40);
    println!("epe_all={}", stats.epe_all);
    println!("epe_s0_10={}", stats.epe_s0_10);
    println!("epe_s10_40={}", stats.epe_s10_40);
    println!("epe_s40={}", stats.epe_s40);
    println!("valid_pixels={}", stats.valid_pixel_count);
    if !thresholds.is_empty() {
        let errors: Vec<f64> = endpoint_errors(&gt, &est, None)?.into_iter().map(|(e, _)| e).collect();
        let curve = error_threshold_curve(&errors, thresholds)?;
        for (t, f) in thresholds.iter().zip(curve) {
            println!("above_{t}={f}");
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Compute {
            frame1,
            frame2,
            flow,
            output,
        } => compute(frame1, frame2, flow, output, false),
        Command::Stereo {
            left,
            right,
            flow,
            output,
        } => compute(left, right, flow, output, true),
        Command::Chain { frames, flow, output } => chain(frames, flow, output),
        Command::Epe { gt, est, thresholds } => epe(gt, est, thresholds),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
