//! Run the built-in FP16 x quantized-weight matmul demo for several weight
//! dtypes and check each against the dequantization oracle, bit for bit.
//!
//! Run with: cargo run --release --example verify_matmul

use tilevm::demo::verify;
use tilevm::dtype::{representative_float_types, ScalarType};
use tilevm::interp::{BlockOrder, RunOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (m, n, k, seed) = (32usize, 64usize, 64usize, 42u64);
    let mut dtypes = vec![
        ScalarType::uint(4)?,
        ScalarType::uint(1)?,
        ScalarType::int(6)?,
        ScalarType::int(3)?,
    ];
    dtypes.extend(representative_float_types());

    for dtype in &dtypes {
        let rep = verify(*dtype, m, n, k, seed, &RunOptions::default())?;
        println!(
            "{}: {dtype:>6} {m}x{n}x{k}  max abs diff {}",
            if rep.bit_exact { "PASS" } else { "FAIL" },
            rep.max_abs_diff
        );
        assert!(rep.bit_exact);
    }

    // Blocks are independent: a shuffled execution order cannot change the
    // result.
    let shuffled = RunOptions {
        block_order: BlockOrder::Shuffled(7),
        ..RunOptions::default()
    };
    let rep = verify(ScalarType::int(6)?, m, n, k, seed, &shuffled)?;
    println!("PASS:    i6 {m}x{n}x{k}  shuffled block order, still bit-exact");
    assert!(rep.bit_exact);
    Ok(())
}
