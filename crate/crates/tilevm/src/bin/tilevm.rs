//! Thin command-line shell over the tilevm library: layout algebra queries,
//! weight packing and transformation, program execution, and oracle
//! verification. No semantics live here.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::HashMap;
use std::path::PathBuf;
use tilevm::dtype::{ScalarType, ScalarValue};
use tilevm::interp::{self, run, BlockOrder, RunOptions};
use tilevm::ir::{validate, BoundsMode, Program};
use tilevm::layout::parse_layout;
use tilevm::packed::{read_tensor_file, write_tensor_file, PackedBuffer, Tensor};

#[derive(Parser)]
#[command(name = "tilevm", about = "Tile-level VM: layouts, packing, execution, verification")]
struct Cli {
    /// Emit machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Layout algebra: evaluate, compose, divide, render.
    #[command(subcommand)]
    Layout(LayoutCmd),
    /// Quantize a float tensor (JSON) into a packed TLUS file plus a scales
    /// sidecar.
    Pack(PackArgs),
    /// Dequantize a TLUS file back to a float tensor (JSON).
    Unpack(UnpackArgs),
    /// Rearrange packed weights into per-tile contiguous byte streams.
    Transform(TransformArgs),
    /// Validate and execute a program, writing output tensors and a trace.
    Run(RunArgs),
    /// Execute a program and print its trace as JSON lines.
    Trace(RunArgs),
    /// Run the built-in matmul demo against the oracle.
    Verify(VerifyArgs),
}

#[derive(Subcommand)]
enum LayoutCmd {
    /// Print the logical index a (thread, slot) pair maps to.
    Eval { expr: String, thread: usize, slot: usize },
    /// Print the normalized representation of a layout or product.
    Show { expr: String },
    /// Compose two layouts (left over right).
    Compose { f: String, g: String },
    /// Divide a layout by a factor, printing the quotient.
    Divide { h: String, g: String },
    /// Render the layout as a grid of t<thread>:<slot> cells.
    Grid { expr: String },
}

#[derive(Args)]
struct PackArgs {
    /// JSON input: {"dims": [...], "data": [...floats...]}.
    #[arg(long)]
    input: PathBuf,
    /// Target dtype spec, e.g. u4, i6, f6e3m2.
    #[arg(long)]
    dtype: String,
    #[arg(long)]
    output: PathBuf,
    /// Elements per scale group; defaults to one group per tensor.
    #[arg(long)]
    group_size: Option<usize>,
    /// Where to write the scales sidecar (JSON array).
    #[arg(long)]
    scales: Option<PathBuf>,
}

#[derive(Args)]
struct UnpackArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Scales sidecar written by pack; omit for scale 1.
    #[arg(long)]
    scales: Option<PathBuf>,
    #[arg(long)]
    group_size: Option<usize>,
}

#[derive(Args)]
struct TransformArgs {
    /// Packed 2-d weight tensor (TLUS).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 16)]
    bk: usize,
    #[arg(long, default_value_t = 16)]
    bn: usize,
    /// Register layout the kernel will reinterpret tiles into; defaults to
    /// the built-in choice for the tile size.
    #[arg(long)]
    layout: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    /// Program JSON file.
    #[arg(long)]
    program: PathBuf,
    /// Scalar arguments, name=value. Repeatable.
    #[arg(long = "arg")]
    args: Vec<String>,
    /// Input buffers, name=path-to-TLUS. Repeatable.
    #[arg(long = "input")]
    inputs: Vec<String>,
    /// Directory for output tensors (run only).
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Trace destination (run only; trace prints to stdout).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Override every load's bounds mode: strict or zero-fill.
    #[arg(long)]
    bounds: Option<String>,
    /// Block execution order: row-major or shuffled:<seed>.
    #[arg(long)]
    block_order: Option<String>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Weight dtype spec, e.g. u4, i6, f6e3m2.
    dtype: String,
    m: usize,
    n: usize,
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    block_order: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct FloatTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

fn parse_dtype(s: &str) -> Result<ScalarType> {
    s.parse::<ScalarType>().map_err(|e| anyhow!("{e}"))
}

fn parse_block_order(s: Option<&str>) -> Result<BlockOrder> {
    match s {
        None | Some("row-major") => Ok(BlockOrder::RowMajor),
        Some(other) => match other.strip_prefix("shuffled:") {
            Some(seed) => Ok(BlockOrder::Shuffled(seed.parse()?)),
            None => bail!("block order must be row-major or shuffled:<seed>"),
        },
    }
}

fn parse_bounds(s: Option<&str>) -> Result<Option<BoundsMode>> {
    match s {
        None => Ok(None),
        Some("strict") => Ok(Some(BoundsMode::Strict)),
        Some("zero-fill") | Some("zero_fill") => Ok(Some(BoundsMode::ZeroFill)),
        Some(other) => bail!("bounds must be strict or zero-fill, got {other:?}"),
    }
}

fn layout_cmd(cmd: &LayoutCmd, json: bool) -> Result<()> {
    match cmd {
        LayoutCmd::Eval { expr, thread, slot } => {
            let l = parse_layout(expr)?;
            let idx = l.evaluate(*thread, *slot)?;
            if json {
                println!("{}", json!({"index": idx}));
            } else {
                let parts: Vec<String> = idx.iter().map(|v| v.to_string()).collect();
                println!("({})", parts.join(", "));
            }
        }
        LayoutCmd::Show { expr } => {
            let l = parse_layout(expr)?;
            if json {
                println!("{}", serde_json::to_string(&l)?);
            } else {
                println!("{l}");
                println!("shape: {:?}", l.shape());
                println!("mode_shape: {:?}", l.mode_shape());
                println!("spatial_modes: {:?}", l.spatial_modes());
                println!("local_modes: {:?}", l.local_modes());
            }
        }
        LayoutCmd::Compose { f, g } => {
            let h = parse_layout(f)?.compose(&parse_layout(g)?)?;
            if json {
                println!("{}", serde_json::to_string(&h)?);
            } else {
                println!("{h}");
            }
        }
        LayoutCmd::Divide { h, g } => {
            match parse_layout(h)?.divide(&parse_layout(g)?)? {
                Some(q) => {
                    if json {
                        println!("{}", serde_json::to_string(&q)?);
                    } else {
                        println!("{q}");
                    }
                }
                None => bail!("{h} is not divisible by {g}"),
            }
        }
        LayoutCmd::Grid { expr } => {
            print!("{}", parse_layout(expr)?.render_grid()?);
        }
    }
    Ok(())
}

fn pack_cmd(a: &PackArgs, json: bool) -> Result<()> {
    let dtype = parse_dtype(&a.dtype)?;
    let ft: FloatTensor = serde_json::from_reader(std::fs::File::open(&a.input)?)
        .context("reading float tensor JSON")?;
    let count: usize = ft.dims.iter().product();
    if ft.data.len() != count {
        bail!("dims {:?} need {count} values, got {}", ft.dims, ft.data.len());
    }
    let group = a.group_size.unwrap_or(count.max(1));
    if count % group != 0 {
        bail!("group size {group} does not divide {count} elements");
    }
    // One scale per group: the max-magnitude value maps onto the dtype's
    // largest representable code.
    let mut scales = Vec::with_capacity(count / group);
    let mut buf = PackedBuffer::zeroed(dtype, count);
    for g in 0..count / group {
        let chunk = &ft.data[g * group..(g + 1) * group];
        let peak = chunk.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = if peak == 0.0 { 1.0 } else { peak / dtype.max_value() };
        scales.push(scale);
        for (j, v) in chunk.iter().enumerate() {
            let raw = dtype.encode(&ScalarValue::Float(dtype, v / scale));
            buf.store_element(g * group + j, raw)?;
        }
    }
    write_tensor_file(&a.output, &Tensor::new(ft.dims.clone(), buf)?)?;
    if let Some(path) = &a.scales {
        serde_json::to_writer(std::fs::File::create(path)?, &scales)?;
    }
    if json {
        println!(
            "{}",
            json!({"dims": ft.dims, "dtype": dtype.to_string(), "groups": scales.len()})
        );
    } else {
        println!(
            "packed {:?} as {dtype} ({} scale group{})",
            ft.dims,
            scales.len(),
            if scales.len() == 1 { "" } else { "s" }
        );
    }
    Ok(())
}

fn unpack_cmd(a: &UnpackArgs, json: bool) -> Result<()> {
    let t = read_tensor_file(&a.input)?;
    let count = t.data.count();
    let scales: Vec<f64> = match &a.scales {
        Some(path) => serde_json::from_reader(std::fs::File::open(path)?)?,
        None => vec![1.0],
    };
    let group = a.group_size.unwrap_or_else(|| count / scales.len().max(1));
    let data = t.data.dequantize(&scales, group)?;
    let ft = FloatTensor { dims: t.dims.clone(), data };
    serde_json::to_writer(std::fs::File::create(&a.output)?, &ft)?;
    if json {
        println!("{}", json!({"dims": t.dims, "dtype": t.dtype().to_string()}));
    } else {
        println!("unpacked {:?} {} tensor", t.dims, t.dtype());
    }
    Ok(())
}

fn transform_cmd(a: &TransformArgs, json: bool) -> Result<()> {
    let w = read_tensor_file(&a.input)?;
    let layout = match &a.layout {
        Some(expr) => parse_layout(expr)?,
        None => interp::default_weight_layout(a.bk, a.bn, w.dtype())?,
    };
    let out = interp::transform_weights(&w, a.bk, a.bn, &layout)?;
    write_tensor_file(&a.output, &out)?;
    if json {
        println!(
            "{}",
            json!({"tiles": [out.dims[0], out.dims[1]], "tile_bytes": out.dims[2],
                   "layout": layout.to_expr()})
        );
    } else {
        println!(
            "{}x{} tiles of {} bytes, register layout {layout}",
            out.dims[0], out.dims[1], out.dims[2]
        );
    }
    Ok(())
}

fn load_program(path: &PathBuf) -> Result<Program> {
    let text = std::fs::read_to_string(path)?;
    let p = Program::parse(&text)?;
    let diags = validate(&p);
    if !diags.is_empty() {
        for d in &diags {
            eprintln!("{d}");
        }
        bail!("program failed validation with {} diagnostic(s)", diags.len());
    }
    Ok(p)
}

fn run_program(a: &RunArgs) -> Result<tilevm::interp::RunResult> {
    let p = load_program(&a.program)?;
    let mut args = HashMap::new();
    for kv in &a.args {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| anyhow!("--arg wants name=value, got {kv:?}"))?;
        args.insert(k.to_string(), v.parse::<i64>().context("scalar argument")?);
    }
    let mut inputs = HashMap::new();
    for kv in &a.inputs {
        let (k, path) = kv
            .split_once('=')
            .ok_or_else(|| anyhow!("--input wants name=path, got {kv:?}"))?;
        inputs.insert(k.to_string(), read_tensor_file(std::path::Path::new(path))?);
    }
    let opts = RunOptions {
        block_order: parse_block_order(a.block_order.as_deref())?,
        bounds_override: parse_bounds(a.bounds.as_deref())?,
        ..RunOptions::default()
    };
    Ok(run(&p, &args, inputs, &opts)?)
}

fn run_cmd(a: &RunArgs, trace_only: bool) -> Result<()> {
    let r = run_program(a)?;
    if trace_only {
        print!("{}", r.trace_lines());
        return Ok(());
    }
    if let Some(dir) = &a.output_dir {
        std::fs::create_dir_all(dir)?;
        let mut names: Vec<&String> = r.globals.keys().collect();
        names.sort();
        for name in names {
            write_tensor_file(&dir.join(format!("{name}.tlus")), &r.globals[name])?;
        }
    }
    if let Some(path) = &a.trace {
        std::fs::write(path, r.trace_lines())?;
    }
    println!(
        "ran {} instruction(s), {} output tensor(s)",
        r.trace.len(),
        r.globals.len()
    );
    Ok(())
}

fn verify_cmd(a: &VerifyArgs, json: bool) -> Result<()> {
    let dtype = parse_dtype(&a.dtype)?;
    let opts = RunOptions {
        block_order: parse_block_order(a.block_order.as_deref())?,
        ..RunOptions::default()
    };
    let rep = tilevm::demo::verify(dtype, a.m, a.n, a.k, a.seed, &opts)?;
    if json {
        println!(
            "{}",
            json!({"pass": rep.bit_exact, "max_abs_diff": rep.max_abs_diff,
                   "dtype": dtype.to_string(), "m": a.m, "n": a.n, "k": a.k, "seed": a.seed})
        );
    } else {
        println!(
            "{}: {dtype} {}x{}x{} seed {} (max abs diff {})",
            if rep.bit_exact { "PASS" } else { "FAIL" },
            a.m,
            a.n,
            a.k,
            a.seed,
            rep.max_abs_diff
        );
    }
    if !rep.bit_exact {
        std::process::exit(1);
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let r = match &cli.cmd {
        Cmd::Layout(cmd) => layout_cmd(cmd, cli.json),
        Cmd::Pack(a) => pack_cmd(a, cli.json),
        Cmd::Unpack(a) => unpack_cmd(a, cli.json),
        Cmd::Transform(a) => transform_cmd(a, cli.json),
        Cmd::Run(a) => run_cmd(a, false),
        Cmd::Trace(a) => run_cmd(a, true),
        Cmd::Verify(a) => verify_cmd(a, cli.json),
    };
    if let Err(e) = r {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
