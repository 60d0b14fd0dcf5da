//! Author a program as JSON, validate it, execute it, and read the trace.
//!
//! Run with: cargo run --example run_program

use std::collections::HashMap;
use tilevm::dtype::ScalarType;
use tilevm::interp::{run, RunOptions};
use tilevm::ir::{validate, Program};
use tilevm::packed::{PackedBuffer, Tensor};

const PROGRAM: &str = r#"{
  "name": "axpy_tiles",
  "grid": ["n / 8"],
  "params": [
    {"name": "n", "type": "i32"},
    {"name": "alpha_num", "type": "i32"},
    {"name": "x", "type": "*f32"},
    {"name": "y", "type": "*f32"}
  ],
  "body": [
    {"op": "BlockIndices", "out": ["b"]},
    {"op": "GlobalView", "ptr": "x", "dtype": "f32", "shape": ["n"], "out": "xv"},
    {"op": "GlobalView", "ptr": "y", "dtype": "f32", "shape": ["n"], "out": "yv"},
    {"op": "LoadGlobal", "src": "xv", "offsets": ["b * 8"], "dtype": "f32",
     "layout": "spatial(4).local(2)", "out": "xt"},
    {"op": "LoadGlobal", "src": "yv", "offsets": ["b * 8"], "dtype": "f32",
     "layout": "spatial(4).local(2)", "out": "yt"},
    {"if": "alpha_num % 2 == 0",
     "then": [{"op": "Elementwise", "func": "mul", "args": ["xt", 2.0], "out": "xt"}],
     "else": [{"op": "Elementwise", "func": "mul", "args": ["xt", 3.0], "out": "xt"}]},
    {"op": "Elementwise", "func": "add", "args": ["xt", "yt"], "out": "yt"},
    {"op": "Print", "src": "yt"},
    {"op": "StoreGlobal", "dst": "yv", "offsets": ["b * 8"], "src": "yt"}
  ]
}"#;

fn f32_tensor(vals: &[f32]) -> Tensor {
    let raws: Vec<u64> = vals.iter().map(|v| v.to_bits() as u64).collect();
    Tensor::new(
        vec![vals.len()],
        PackedBuffer::from_raws(ScalarType::f32(), &raws).unwrap(),
    )
    .unwrap()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let p = Program::parse(PROGRAM)?;
    let diags = validate(&p);
    assert!(diags.is_empty(), "{diags:?}");

    let n = 16usize;
    let x: Vec<f32> = (0..n).map(|k| k as f32).collect();
    let y: Vec<f32> = vec![100.0; n];
    let args = HashMap::from([("n".to_string(), n as i64), ("alpha_num".to_string(), 3)]);
    let inputs = HashMap::from([
        ("x".to_string(), f32_tensor(&x)),
        ("y".to_string(), f32_tensor(&y)),
    ]);
    let r = run(&p, &args, inputs, &RunOptions::default())?;

    let out = &r.globals["y"].data;
    for k in 0..n {
        let v = f32::from_bits(out.load_element(k)? as u32);
        assert_eq!(v, 3.0 * x[k] + 100.0);
    }
    println!("y = 3x + y verified over {n} elements, {} blocks", n / 8);

    println!("\ntrace:");
    print!("{}", r.trace_lines());
    Ok(())
}
