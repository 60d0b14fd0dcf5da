//! Sub-byte packing: compact bit storage, minifloat codecs, casting, and the
//! TLUS tensor file format.
//!
//! Run with: cargo run --example packing

use tilevm::dtype::{ScalarType, ScalarValue};
use tilevm::packed::{read_tensor_file, write_tensor_file, PackedBuffer, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Ten u3 values use ceil(30/8) = 4 bytes; element 2 straddles a byte
    // boundary and is reassembled transparently.
    let u3 = ScalarType::uint(3)?;
    let raws: Vec<u64> = vec![5, 1, 7, 0, 3, 6, 2, 4, 7, 1];
    let buf = PackedBuffer::from_raws(u3, &raws)?;
    println!("u3 x {} -> {} bytes: {:02x?}", raws.len(), buf.bytes().len(), buf.bytes());
    for (k, want) in raws.iter().enumerate() {
        assert_eq!(buf.load_element(k)?, *want);
    }

    // Minifloats have a sign bit, E exponent bits, M mantissa bits, with
    // subnormals and no Inf/NaN. f6e3m2 covers ±[0.0625, 28]:
    let f6 = ScalarType::float(3, 2)?;
    println!("\nf6e3m2 code space:");
    let mut values: Vec<f64> = f6.code_space().map(|c| f6.decode(c).unwrap().as_f64()).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!("{} codes from {} to {}", values.len(), values[0], values[values.len() - 1]);

    // Encoding rounds to nearest-even and saturates at the largest finite
    // value instead of overflowing to infinity.
    for v in [0.07, 1.3, 27.0, 1e9] {
        let code = f6.encode(&ScalarValue::Float(f6, v));
        let back = f6.decode(code)?.as_f64();
        println!("encode({v:>8}) -> {code:#04x} -> {back}");
    }

    // Casting re-encodes element-wise; every i6 integer survives a trip
    // through f16 exactly.
    let i6 = ScalarType::int(6)?;
    let ints: Vec<u64> = (0..64).collect();
    let qbuf = PackedBuffer::from_raws(i6, &ints)?;
    let as_f16 = qbuf.cast(ScalarType::f16())?;
    for k in 0..64 {
        assert_eq!(qbuf.decode_element(k)?.as_f64(), as_f16.decode_element(k)?.as_f64());
    }
    println!("\ni6 -> f16 cast preserves all 64 codes");

    // Tensors travel as TLUS files: a small self-describing binary header
    // plus the packed payload.
    let t = Tensor::new(vec![2, 5], buf)?;
    let path = std::env::temp_dir().join("packing_example.tlus");
    write_tensor_file(&path, &t)?;
    let back = read_tensor_file(&path)?;
    assert_eq!(back.dims, vec![2, 5]);
    assert_eq!(back.data.bytes(), t.data.bytes());
    println!("TLUS round trip ok: {} ({} byte payload)", path.display(), t.data.bytes().len());
    std::fs::remove_file(&path).ok();
    Ok(())
}
