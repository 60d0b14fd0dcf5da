//! Built-in demo: an FP16 × quantized-weight matmul program over 16×16×16
//! tiles with 32 threads per block, plus the harness that checks it
//! bit-for-bit against [`oracle_matmul`](crate::interp::oracle_matmul).
//!
//! The weight pipeline: weights are pre-transformed offline with
//! [`transform_weights`](crate::interp::transform_weights), loaded on-kernel
//! as whole u8 rows, reinterpreted to the quantized dtype at zero cost, cast
//! to f16 and fed to Mma.

use crate::dtype::ScalarType;
use crate::interp::{self, compatible_u8_layout, oracle_matmul, run, RunOptions, RunResult};
use crate::ir::Program;
use crate::layout::{parse_layout, Layout};
use crate::packed::{PackedBuffer, Tensor};
use half::f16;
use rand::{Rng, SeedableRng};
use std::collections::HashMap;
use thiserror::Error;

pub const BM: usize = 16;
pub const BN: usize = 16;
pub const BK: usize = 16;
pub const THREADS: usize = 32;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("{0} ({1}) must be a positive multiple of {2}")]
    Divisibility(&'static str, usize, usize),
    #[error(transparent)]
    Run(#[from] interp::RunError),
}

/// Register layout of the activation tile (f16[16,16], 8 values per thread).
pub fn activation_layout() -> Layout {
    parse_layout("spatial(8,4).local(2,4)").expect("static layout")
}

/// Register layout of the quantized weight tile after reinterpretation.
pub fn weight_layout() -> Layout {
    parse_layout("local(2,1).spatial(4,8).local(2,2)").expect("static layout")
}

/// Bytes each thread holds for one weight tile: 8 weights x `bits` bits is
/// exactly `bits` bytes, whole for every 1–8-bit dtype.
pub fn weight_bytes_per_thread(dtype: ScalarType) -> usize {
    BK * BN / THREADS * dtype.bits() as usize / 8
}

/// Build the demo program for a given weight dtype. Parameters: scalars
/// `m, n, k` and buffers `a: *f16[m,k]`, `w: *u8` (transformed weights),
/// `c: *f16[m,n]`.
pub fn demo_program(dtype: ScalarType) -> Program {
    let n_bytes = weight_bytes_per_thread(dtype);
    let tile_bytes = THREADS * n_bytes;
    let u8_layout = compatible_u8_layout(n_bytes, THREADS)
        .to_expr()
        .expect("primitive product");
    let a_layout = "spatial(8,4).local(2,4)";
    let w_layout = "local(2,1).spatial(4,8).local(2,2)";
    let text = format!(
        r#"{{
  "name": "matmul_f16_{dtype}",
  "grid": ["m / {BM}", "n / {BN}"],
  "params": [
    {{"name": "m", "type": "i32"}},
    {{"name": "n", "type": "i32"}},
    {{"name": "k", "type": "i32"}},
    {{"name": "a", "type": "*f16"}},
    {{"name": "w", "type": "*u8"}},
    {{"name": "c", "type": "*f16"}}
  ],
  "body": [
    {{"op": "BlockIndices", "out": ["bm", "bn"]}},
    {{"op": "GlobalView", "ptr": "a", "dtype": "f16", "shape": ["m", "k"], "out": "av"}},
    {{"op": "GlobalView", "ptr": "w", "dtype": "u8",
      "shape": ["(k / {BK}) * (n / {BN}) * {tile_bytes}"], "out": "wv"}},
    {{"op": "GlobalView", "ptr": "c", "dtype": "f16", "shape": ["m", "n"], "out": "cv"}},
    {{"op": "AllocateRegister", "dtype": "f32", "layout": "{a_layout}",
      "out": "acc", "init": 0.0}},
    {{"for": "kb", "stop": "k / {BK}", "body": [
      {{"op": "LoadGlobal", "src": "av", "offsets": ["bm * {BM}", "kb * {BK}"],
        "dtype": "f16", "layout": "{a_layout}", "out": "at"}},
      {{"op": "LoadGlobal", "src": "wv",
        "offsets": ["(kb * (n / {BN}) + bn) * {tile_bytes}"],
        "dtype": "u8", "layout": "{u8_layout}", "out": "wu"}},
      {{"op": "Reinterpret", "src": "wu", "dtype": "{dtype}",
        "layout": "{w_layout}", "out": "wq"}},
      {{"op": "Cast", "src": "wq", "dtype": "f16", "out": "wf"}},
      {{"op": "Mma", "a": "at", "b": "wf", "c": "acc", "out": "acc"}}
    ]}},
    {{"op": "Cast", "src": "acc", "dtype": "f16", "out": "cf"}},
    {{"op": "StoreGlobal", "dst": "cv", "offsets": ["bm * {BM}", "bn * {BN}"], "src": "cf"}}
  ]
}}"#
    );
    Program::parse(&text).expect("generated program parses")
}

/// Result of one verification run.
#[derive(Debug)]
pub struct VerifyReport {
    pub max_abs_diff: f64,
    pub bit_exact: bool,
    pub result: RunResult,
}

/// Deterministic random inputs for a verification instance.
pub fn random_inputs(
    dtype: ScalarType,
    m: usize,
    n: usize,
    k: usize,
    seed: u64,
) -> (Vec<f16>, Tensor) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<f16> = (0..m * k)
        .map(|_| f16::from_f32(rng.gen_range(-2.0..2.0)))
        .collect();
    let raws: Vec<u64> = (0..k * n)
        .map(|_| rng.gen_range(0..(1u64 << dtype.bits())))
        .collect();
    let w = Tensor::new(vec![k, n], PackedBuffer::from_raws(dtype, &raws).unwrap())
        .expect("consistent dims");
    (a, w)
}

/// Run the demo program on seeded random inputs and compare against the
/// oracle, bit for bit.
pub fn verify(
    dtype: ScalarType,
    m: usize,
    n: usize,
    k: usize,
    seed: u64,
    opts: &RunOptions,
) -> Result<VerifyReport, DemoError> {
    for (what, v, tile) in [("M", m, BM), ("N", n, BN), ("K", k, BK)] {
        if v == 0 || v % tile != 0 {
            return Err(DemoError::Divisibility(what, v, tile));
        }
    }
    let (a, w) = random_inputs(dtype, m, n, k, seed);
    let wt = interp::transform_weights(&w, BK, BN, &weight_layout())?;
    let expect = oracle_matmul(&a, m, k, &w, &[1.0], k * n)?;

    let a_raws: Vec<u64> = a.iter().map(|v| v.to_bits() as u64).collect();
    let inputs = HashMap::from([
        (
            "a".to_string(),
            Tensor::new(
                vec![m, k],
                PackedBuffer::from_raws(ScalarType::f16(), &a_raws).unwrap(),
            )
            .expect("consistent dims"),
        ),
        ("w".to_string(), wt),
        (
            "c".to_string(),
            Tensor::new(vec![m, n], PackedBuffer::zeroed(ScalarType::f16(), m * n))
                .expect("consistent dims"),
        ),
    ]);
    let args = HashMap::from([
        ("m".to_string(), m as i64),
        ("n".to_string(), n as i64),
        ("k".to_string(), k as i64),
    ]);
    let p = demo_program(dtype);
    let result = run(&p, &args, inputs, opts)?;
    let got = &result.globals["c"].data;
    let mut max_abs_diff = 0.0f64;
    let mut bit_exact = true;
    for (idx, want) in expect.iter().enumerate() {
        let raw = got.load_element(idx).expect("in range") as u16;
        if raw != want.to_bits() {
            bit_exact = false;
        }
        let diff = (f16::from_bits(raw).to_f64() - want.to_f64()).abs();
        if diff > max_abs_diff {
            max_abs_diff = diff;
        }
    }
    Ok(VerifyReport {
        max_abs_diff,
        bit_exact,
        result,
    })
}
