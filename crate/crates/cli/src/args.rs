use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use depfusion_core::config::ParamInit;
use depfusion_core::pgmf::FusionVariant;
use depfusion_core::ssm::Discretization;
use depfusion_core::verify::Suite;
use depfusion_core::wavelet::Basis;
use depfusion_core::DType;

/// Median over this many interleaved repeats per size.
pub const DEFAULT_REPEATS: usize = 15;

fn parse_dtype(s: &str) -> Result<DType, String> {
    match s {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        other => Err(format!("unknown dtype {other:?} (expected f32 or f64)")),
    }
}

#[derive(Debug, Parser)]
#[command(name = "depfusion", version, about = "Dual-domain enhancement, priority-guided fusion and their verification suites")]
pub struct Cli {
    /// JSON run configuration; flags given here override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_dtype, value_name = "f32|f64")]
    pub dtype: Option<DType>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Enhance a P6 (or P5) image with the wavelet/Fourier pipeline.
    Enhance(EnhanceArgs),
    /// Fuse an RGB and an IR feature tensor.
    Fuse(FuseArgs),
    /// Run a verification suite and write a JSON report.
    Verify(VerifyArgs),
    /// Time the fusion stages at doubling token counts.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    pub input: PathBuf,
    /// Parameter bundle directory to load.
    #[arg(long, value_name = "DIR")]
    pub params: Option<PathBuf>,
    #[arg(long, value_name = "random|identity")]
    pub init: Option<ParamInit>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long, value_name = "haar|sym2")]
    pub basis: Option<Basis>,
    #[arg(long, value_delimiter = ',', value_name = "K,K,K")]
    pub kernel_sizes: Option<Vec<usize>>,
    #[arg(long, value_name = "zoh|euler_b")]
    pub discretization: Option<Discretization>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    pub rgb: PathBuf,
    pub ir: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub params: Option<PathBuf>,
    #[arg(long, value_name = "a|b|c|d")]
    pub variant: Option<FusionVariant>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long, value_name = "zoh|euler_b")]
    pub discretization: Option<Discretization>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(default_value = "all", value_name = "reconstruction|ssm|decay|gradients|all")]
    pub suite: Suite,
    /// Negative control: perturb the Haar analysis filter.
    #[arg(long)]
    pub mutate_haar: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Token counts, strictly increasing.
    #[arg(long, value_delimiter = ',', default_values_t = depfusion_core::verify::COMPLEXITY_SIZES)]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_REPEATS)]
    pub repeats: usize,
}
