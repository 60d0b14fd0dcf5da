//! The low-precision weight pipeline: pre-transform packed weights into
//! per-tile byte streams, load them as whole u8 rows, and reinterpret in
//! registers at zero cost.
//!
//! Run with: cargo run --example weight_pipeline

use tilevm::dtype::ScalarType;
use tilevm::interp::{compatible_u8_layout, default_weight_layout, transform_weights};
use tilevm::layout::parse_layout;
use tilevm::packed::{PackedBuffer, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // A sub-byte weight element generally straddles byte boundaries, so a
    // thread cannot fetch its weights with ordinary loads. The fix: repack
    // offline so each thread's weights sit in whole bytes it can load
    // directly.
    let i6 = ScalarType::int(6)?;
    let (k, n) = (32usize, 64usize);
    let raws: Vec<u64> = (0..k * n).map(|e| (e as u64 * 23 + 9) % 64).collect();
    let w = Tensor::new(vec![k, n], PackedBuffer::from_raws(i6, &raws)?)?;

    // The kernel will hold each 16x16 tile in this register layout: 32
    // threads x 8 weights = 48 bits = 6 whole bytes per thread.
    let reg = parse_layout("local(2,1).spatial(4,8).local(2,2)")?;
    let (bk, bn) = (16usize, 16usize);
    let wt = transform_weights(&w, bk, bn, &reg)?;
    println!(
        "i6[{k},{n}] -> u8[{}, {}, {}]  ({} bytes per tile)",
        wt.dims[0], wt.dims[1], wt.dims[2], wt.dims[2]
    );

    // On the load side, the gcd rule picks the byte-granular layout:
    // n bytes per thread -> local(n/gcd(n,16)).spatial(T).local(gcd(n,16)).
    let n_bytes = reg.num_locals() * i6.bits() as usize / 8;
    let u8l = compatible_u8_layout(n_bytes, reg.num_threads());
    println!("u8 load layout: {u8l}");

    // Round trip one tile by hand: gather thread 3's bytes, slice its bit
    // string into 6-bit slots, and compare with the source tensor.
    let t = 3usize;
    let mut stream = vec![0u8; n_bytes];
    for (i, b) in stream.iter_mut().enumerate() {
        let j = u8l.evaluate(t, i)?[0];
        *b = wt.data.bytes()[j]; // tile (0, 0) starts at offset 0
    }
    for i in 0..reg.num_locals() {
        let idx = reg.evaluate(t, i)?;
        let want = raws[idx[0] * n + idx[1]];
        let got = tilevm::packed::load_bits(&stream, i * 6, 6);
        assert_eq!(got, want);
        println!("thread {t} slot {i} -> W[{},{}] = {want}", idx[0], idx[1]);
    }

    // For other tile sizes there is a built-in layout chooser.
    for (bk, bn) in [(8usize, 8usize), (8, 32), (32, 32)] {
        let l = default_weight_layout(bk, bn, ScalarType::uint(3)?)?;
        println!("u3 {bk}x{bn} tile -> {l} ({} threads)", l.num_threads());
    }
    Ok(())
}
