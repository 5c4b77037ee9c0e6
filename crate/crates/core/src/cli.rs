//! Command-line front end and experiment harness.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::codec::{
    decode_base, decode_enhancement, decode_preview, encode, encode_nonscalable, encode_separate,
    parse, rate_report, serialize, ScalableBitstream,
};
use crate::image::{load_pgm, psnr, save_pgm, Image};
use crate::recon::SolverParams;
use crate::sensing::SensingConfig;
use crate::{Error, Result};

#[derive(Parser)]
#[command(name = "scalecs", about = "Scalable compressive imaging codec", version)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a PGM image into a .scs stream.
    Encode(EncodeArgs),
    /// Decode base and/or enhancement layers from a .scs stream.
    Decode(DecodeArgs),
    /// Write the fast preview image of a stream, no solver involved.
    Preview(PreviewArgs),
    /// PSNR between two PGM images.
    Eval(EvalArgs),
    /// Predictive vs. separate vs. non-scalable comparison, CSV output.
    Compare(CompareArgs),
}

#[derive(Args)]
struct EncodeArgs {
    /// Input PGM image.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output stream path.
    #[arg(long = "out")]
    output: PathBuf,
    /// Base-layer measurement count (a power of two with an integer square root).
    #[arg(long)]
    mb: usize,
    /// Enhancement (or non-scalable) measurement count.
    #[arg(long)]
    me: usize,
    /// Base-layer quantization rate in bits.
    #[arg(long, default_value_t = 5)]
    rb: u8,
    /// Enhancement quantization rate in bits.
    #[arg(long, default_value_t = 5)]
    re: u8,
    /// Master seed; layer seeds derive from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Base-layer width in pixels; defaults to half the image width.
    #[arg(long)]
    base_width: Option<usize>,
    /// predictive, separate, or nonscalable.
    #[arg(long, default_value = "predictive")]
    mode: String,
}

#[derive(Args)]
struct SolverArgs {
    /// Fidelity-weight scale constant.
    #[arg(long, default_value_t = crate::recon::DEFAULT_LAMBDA_C)]
    lambda_c: f64,
    #[arg(long, default_value_t = crate::recon::DEFAULT_MAX_ITERS)]
    max_iters: usize,
    #[arg(long, default_value_t = crate::recon::DEFAULT_TOL)]
    tol: f64,
}

impl SolverArgs {
    fn params(&self) -> SolverParams {
        SolverParams {
            lambda_c: self.lambda_c,
            max_iters: self.max_iters,
            tol: self.tol,
        }
    }
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Output PGM for the base layer.
    #[arg(long)]
    out_base: Option<PathBuf>,
    /// Output PGM for the enhancement (full-resolution) layer.
    #[arg(long)]
    out_enh: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct PreviewArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long = "test")]
    test: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// PGM images to compare on.
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    images: Vec<PathBuf>,
    /// Total net rates in bpp.
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    rates: Vec<f64>,
    /// Master seeds.
    #[arg(long, num_args = 1.., value_delimiter = ',', default_values_t = [1u64, 2, 3])]
    seeds: Vec<u64>,
    /// Base-layer width; defaults to half the image width.
    #[arg(long)]
    base_width: Option<usize>,
    /// Preview width; defaults to half the base width.
    #[arg(long)]
    preview_width: Option<usize>,
    #[arg(long, default_value_t = 5)]
    rb: u8,
    #[arg(long, default_value_t = 5)]
    re: u8,
    /// Quantization rates searched for the non-scalable baseline.
    #[arg(long, num_args = 1.., value_delimiter = ',', default_values_t = [5u8, 6, 7])]
    r_grid: Vec<u8>,
    /// Output CSV path; a gain summary lands next to it as <out>.summary.csv.
    #[arg(long = "out")]
    output: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
}

/// Layer-seed derivation from a master seed. Constants are arbitrary but
/// fixed: identical master seeds must reproduce identical streams.
pub fn derive_seeds(master: u64) -> (u64, u64, u64) {
    (
        master,
        master.wrapping_add(0x9e3779b97f4a7c15),
        master.wrapping_add(0x6a09e667f3bcc908),
    )
}

fn load_square_image(path: &Path) -> Result<Image> {
    let img = load_pgm(path)?;
    if img.width() != img.height() {
        return Err(Error::Config(format!(
            "{}: comparison requires square images, got {}x{}",
            path.display(),
            img.width(),
            img.height()
        )));
    }
    Ok(img)
}

fn run_encode(args: &EncodeArgs) -> Result<()> {
    let img = load_square_image(&args.input)?;
    let (seed_b, seed_e, seed_mono) = derive_seeds(args.seed);
    let stream = match args.mode.as_str() {
        "nonscalable" => encode_nonscalable(&img, args.me, args.re, seed_mono)?,
        mode => {
            let base_width = args.base_width.unwrap_or(img.width() / 2);
            let preview_width = (args.mb as f64).sqrt().round() as usize;
            if preview_width * preview_width != args.mb {
                return Err(Error::Config(format!("mb = {} is not a perfect square", args.mb)));
            }
            let config = SensingConfig::new(
                img.width(),
                base_width,
                preview_width,
                args.me,
                seed_b,
                seed_e,
            )?;
            match mode {
                "predictive" => encode(&img, &config, args.rb, args.re)?,
                "separate" => encode_separate(&img, &config, args.rb, args.re)?,
                other => return Err(Error::Config(format!("unknown mode '{other}'"))),
            }
        }
    };
    fs::write(&args.output, serialize(&stream))?;
    let report = rate_report(&stream, &img, None, None)?;
    println!(
        "wrote {} ({:.4} bpp net, {:.4} bpp gross)",
        args.output.display(),
        report.bpp_total_net,
        report.bpp_total_gross
    );
    Ok(())
}

fn read_stream(path: &Path) -> Result<ScalableBitstream> {
    parse(&fs::read(path)?)
}

fn run_decode(args: &DecodeArgs) -> Result<()> {
    let stream = read_stream(&args.input)?;
    let params = args.solver.params();
    if args.out_base.is_none() && args.out_enh.is_none() {
        return Err(Error::Config("nothing to do: pass --out-base and/or --out-enh".into()));
    }
    if let Some(path) = &args.out_base {
        let img = decode_base(&stream, &params)?;
        save_pgm(&img, path)?;
        println!("wrote base layer {}", path.display());
    }
    if let Some(path) = &args.out_enh {
        let img = decode_enhancement(&stream, &params)?;
        save_pgm(&img, path)?;
        println!("wrote enhancement layer {}", path.display());
    }
    Ok(())
}

fn run_preview(args: &PreviewArgs) -> Result<()> {
    let stream = read_stream(&args.input)?;
    let img = decode_preview(&stream)?;
    save_pgm(&img, &args.output)?;
    println!("wrote preview {}", args.output.display());
    Ok(())
}

fn run_eval(args: &EvalArgs) -> Result<()> {
    let reference = load_pgm(&args.reference)?;
    let test = load_pgm(&args.test)?;
    let p = psnr(&reference, &test)?;
    if p.is_infinite() {
        println!("psnr: inf");
    } else {
        println!("psnr: {p:.4} dB");
    }
    Ok(())
}

/// One comparison cell: a method evaluated at a rate point.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub image: String,
    pub bpp: f64,
    pub method: &'static str,
    pub m: usize,
    pub r: u8,
    pub psnr: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub images: Vec<PathBuf>,
    pub rates: Vec<f64>,
    pub seeds: Vec<u64>,
    pub base_width: Option<usize>,
    pub preview_width: Option<usize>,
    pub r_b: u8,
    pub r_e: u8,
    pub r_grid: Vec<u8>,
    pub solver: SolverParams,
}

impl ExperimentSpec {
    fn validate(&self) -> Result<()> {
        if self.images.is_empty() || self.rates.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("images, rates and seeds must be nonempty".into()));
        }
        if self.r_grid.is_empty() {
            return Err(Error::Config("non-scalable R grid must be nonempty".into()));
        }
        Ok(())
    }
}

/// Enhancement-layer measurement count that fills `rate` bpp after the base
/// layer's share.
pub fn enhancement_measurements(rate: f64, n: usize, m_b: usize, r_b: u8, r_e: u8) -> Result<usize> {
    let budget = rate * n as f64 - (m_b * r_b as usize) as f64;
    let m_e = (budget / r_e as f64).floor();
    if m_e < 1.0 {
        return Err(Error::Config(format!(
            "rate {rate} bpp leaves no enhancement budget after the base layer"
        )));
    }
    Ok(m_e as usize)
}

fn decode_full_psnr(
    stream: &ScalableBitstream,
    original: &Image,
    params: &SolverParams,
) -> Result<f64> {
    let recon = decode_enhancement(stream, params)?;
    psnr(original, &recon)
}

/// Runs every (image, rate, seed) cell for the three pipelines and streams
/// CSV rows to `out`, flushing as it goes. Returns the rows for summarizing.
pub fn run_comparison<W: Write>(spec: &ExperimentSpec, out: &mut W) -> Result<Vec<ComparisonRow>> {
    spec.validate()?;
    let mut images = spec.images.clone();
    images.sort();
    let mut rates = spec.rates.clone();
    rates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut seeds = spec.seeds.clone();
    seeds.sort_unstable();
    let mut r_grid = spec.r_grid.clone();
    r_grid.sort_unstable();

    writeln!(
        out,
        "# scalecs compare: rb={} re={} r_grid={} seeds={} base_width={} preview_width={}",
        spec.r_b,
        spec.r_e,
        r_grid.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(";"),
        seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(";"),
        spec.base_width.map_or("auto".into(), |v| v.to_string()),
        spec.preview_width.map_or("auto".into(), |v| v.to_string()),
    )?;
    writeln!(out, "image,bpp,method,m,R,psnr,seed")?;

    let mut rows = Vec::new();
    for path in &images {
        let img = load_square_image(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let n = img.width() * img.height();
        let base_width = spec.base_width.unwrap_or(img.width() / 2);
        let preview_width = spec.preview_width.unwrap_or(base_width / 2);
        for &rate in &rates {
            for &seed in &seeds {
                let (seed_b, seed_e, seed_mono) = derive_seeds(seed);
                let m_b = preview_width * preview_width;
                let m_e = enhancement_measurements(rate, n, m_b, spec.r_b, spec.r_e)?;
                let config = SensingConfig::new(
                    img.width(),
                    base_width,
                    preview_width,
                    m_e,
                    seed_b,
                    seed_e,
                )?;

                let mut cell = Vec::with_capacity(3);
                let stream = encode(&img, &config, spec.r_b, spec.r_e)?;
                let bpp = rate_report(&stream, &img, None, None)?.bpp_total_net;
                cell.push(ComparisonRow {
                    image: name.clone(),
                    bpp,
                    method: "predictive",
                    m: m_e,
                    r: spec.r_e,
                    psnr: decode_full_psnr(&stream, &img, &spec.solver)?,
                    seed,
                });

                let stream = encode_separate(&img, &config, spec.r_b, spec.r_e)?;
                cell.push(ComparisonRow {
                    image: name.clone(),
                    bpp,
                    method: "separate",
                    m: m_e,
                    r: spec.r_e,
                    psnr: decode_full_psnr(&stream, &img, &spec.solver)?,
                    seed,
                });

                // Non-scalable: best (m, R) grid point under the same net rate.
                let mut best: Option<ComparisonRow> = None;
                for &r in &r_grid {
                    let m = ((rate * n as f64) / r as f64).floor() as usize;
                    if m == 0 || m > n {
                        continue;
                    }
                    let stream = encode_nonscalable(&img, m, r, seed_mono)?;
                    let p = decode_full_psnr(&stream, &img, &spec.solver)?;
                    if best.as_ref().is_none_or(|b| p > b.psnr) {
                        best = Some(ComparisonRow {
                            image: name.clone(),
                            bpp: rate_report(&stream, &img, None, None)?.bpp_total_net,
                            method: "nonscalable",
                            m,
                            r,
                            psnr: p,
                            seed,
                        });
                    }
                }
                cell.push(best.ok_or_else(|| {
                    Error::Config(format!("no feasible non-scalable grid point at {rate} bpp"))
                })?);

                for row in &cell {
                    writeln!(
                        out,
                        "{},{:.6},{},{},{},{:.4},{}",
                        row.image, row.bpp, row.method, row.m, row.r, row.psnr, row.seed
                    )?;
                }
                out.flush()?;
                rows.extend(cell);
            }
        }
    }
    Ok(rows)
}

/// Per-(image, rate) PSNR gains of the predictive pipeline, seed-averaged.
#[derive(Debug, Clone)]
pub struct GainSummary {
    pub image: String,
    pub bpp: f64,
    pub gain_vs_separate: f64,
    pub gain_vs_nonscalable: f64,
    pub seeds: usize,
}

pub fn summarize_gains(rows: &[ComparisonRow]) -> Vec<GainSummary> {
    let mut keys: Vec<(String, u64)> = rows
        .iter()
        .map(|r| (r.image.clone(), r.bpp.to_bits()))
        .collect();
    keys.sort();
    keys.dedup();
    let mut out = Vec::new();
    for (image, bpp_bits) in keys {
        let bpp = f64::from_bits(bpp_bits);
        let mean = |method: &str| {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.image == image && r.bpp.to_bits() == bpp_bits && r.method == method)
                .map(|r| r.psnr)
                .collect();
            (vals.iter().sum::<f64>() / vals.len().max(1) as f64, vals.len())
        };
        let (pred, n_pred) = mean("predictive");
        let (sep, _) = mean("separate");
        let (mono, _) = mean("nonscalable");
        out.push(GainSummary {
            image,
            bpp,
            gain_vs_separate: pred - sep,
            gain_vs_nonscalable: pred - mono,
            seeds: n_pred,
        });
    }
    out
}

fn run_compare(args: &CompareArgs) -> Result<()> {
    let spec = ExperimentSpec {
        images: args.images.clone(),
        rates: args.rates.clone(),
        seeds: args.seeds.clone(),
        base_width: args.base_width,
        preview_width: args.preview_width,
        r_b: args.rb,
        r_e: args.re,
        r_grid: args.r_grid.clone(),
        solver: args.solver.params(),
    };
    let file = fs::File::create(&args.output)?;
    let mut writer = BufWriter::new(file);
    let rows = run_comparison(&spec, &mut writer)?;
    writer.flush()?;

    let summary_path = args.output.with_extension("summary.csv");
    let mut summary = BufWriter::new(fs::File::create(&summary_path)?);
    writeln!(summary, "image,bpp,gain_vs_separate,gain_vs_nonscalable,seeds")?;
    for g in summarize_gains(&rows) {
        writeln!(
            summary,
            "{},{:.6},{:.4},{:.4},{}",
            g.image, g.bpp, g.gain_vs_separate, g.gain_vs_nonscalable, g.seeds
        )?;
    }
    summary.flush()?;
    println!(
        "wrote {} and {}",
        args.output.display(),
        summary_path.display()
    );
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Encode(args) => run_encode(args),
        Command::Decode(args) => run_decode(args),
        Command::Preview(args) => run_preview(args),
        Command::Eval(args) => run_eval(args),
        Command::Compare(args) => run_compare(args),
    }
}

/// Binary entry point: parse, run, report errors on stderr with exit code 1.
pub fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_derivation_is_stable() {
        let (a, b, c) = derive_seeds(7);
        assert_eq!((a, b, c), derive_seeds(7));
        assert!(a != b && b != c && a != c);
    }

    #[test]
    fn enhancement_budget_arithmetic() {
        // 1.0 bpp at n = 16384 with a 1024x5-bit base leaves (16384-5120)/5.
        let m_e = enhancement_measurements(1.0, 16384, 1024, 5, 5).unwrap();
        assert_eq!(m_e, (16384 - 5120) / 5);
        assert!(enhancement_measurements(0.3, 16384, 1024, 5, 5).is_err());
    }

    #[test]
    fn cli_parses_spec_example_flags() {
        let cli = Cli::try_parse_from([
            "scalecs", "encode", "--in", "lena.pgm", "--mb", "4096", "--me", "16500", "--rb",
            "5", "--re", "5", "--seed", "7", "--out", "lena.scs",
        ])
        .unwrap();
        match cli.command {
            Command::Encode(args) => {
                assert_eq!(args.mb, 4096);
                assert_eq!(args.me, 16500);
                assert_eq!(args.seed, 7);
            }
            _ => panic!("wrong subcommand"),
        }
    }
}
