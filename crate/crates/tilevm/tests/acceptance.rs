//! Acceptance gate: one test per criterion, each printing a single pass line.
//! Run with `cargo test --test acceptance -- --nocapture` to see them.

use half::f16;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::time::Instant;
use tilevm::demo;
use tilevm::dtype::ScalarType;
use tilevm::interp::{
    compatible_u8_layout, default_weight_layout, oracle_matmul, run, transform_weights,
    BlockOrder, RunOptions,
};
use tilevm::ir::{validate, DiagKind, Program};
use tilevm::layout::{parse_layout, unravel, Layout};
use tilevm::packed::{packed_len, PackedBuffer, Tensor};

fn pass(criterion: usize, what: &str, t: Instant) {
    println!(
        "PASS criterion {criterion}: {what} ({:.2}s)",
        t.elapsed().as_secs_f64()
    );
}

/// A random rank-2 primitive layout with small extents.
fn random_primitive(rng: &mut ChaCha8Rng, max_dim: usize) -> Layout {
    let d0 = rng.gen_range(1..=max_dim);
    let d1 = rng.gen_range(1..=max_dim);
    let dims = [d0, d1];
    match rng.gen_range(0..4) {
        0 => Layout::local(&dims),
        1 => Layout::spatial(&dims),
        2 => Layout::column_local(&dims),
        _ => Layout::column_spatial(&dims),
    }
    .expect("positive extents")
}

#[test]
fn criterion_1_layout_algebra() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA11CE);

    // Associativity over >= 1000 random primitive triples, <= 4096 elements.
    let mut triples = 0;
    while triples < 1000 {
        let f = random_primitive(&mut rng, 4);
        let g = random_primitive(&mut rng, 4);
        let h = random_primitive(&mut rng, 4);
        if f.num_elements() * g.num_elements() * h.num_elements() > 4096 {
            continue;
        }
        let left = f.compose(&g).unwrap().compose(&h).unwrap();
        let right = f.compose(&g.compose(&h).unwrap()).unwrap();
        assert_eq!(
            left.mapping_table(),
            right.mapping_table(),
            "associativity failed for {f} ; {g} ; {h}"
        );

        // Bijectivity and invert∘evaluate identity for every layout built.
        for l in [&f, &g, &h, &left] {
            let table = l.mapping_table();
            let mut seen = vec![false; table.len()];
            for &v in &table {
                assert!(!seen[v], "{l} is not injective");
                seen[v] = true;
            }
            let locals = l.num_locals();
            for t in 0..l.num_threads() {
                for i in 0..locals {
                    let idx = l.evaluate(t, i).unwrap();
                    assert_eq!(l.invert(&idx).unwrap(), (t, i), "{l} at ({t},{i})");
                }
            }
        }
        triples += 1;
    }

    // divide(compose(f, g), g) == f on >= 1000 random pairs.
    let mut pairs = 0;
    while pairs < 1000 {
        let f = random_primitive(&mut rng, 4);
        let g = random_primitive(&mut rng, 4);
        if f.num_elements() * g.num_elements() > 4096 {
            continue;
        }
        let h = f.compose(&g).unwrap();
        let q = h.divide(&g).unwrap().unwrap_or_else(|| {
            panic!("divide({h}, {g}) returned no quotient");
        });
        assert!(q.equivalent(&f), "divide({h}, {g}) = {q}, expected {f}");
        pairs += 1;
    }

    // Published identities.
    let q = parse_layout("local(2,4)")
        .unwrap()
        .divide(&parse_layout("local(1,2)").unwrap())
        .unwrap()
        .unwrap();
    assert!(q.equivalent(&parse_layout("local(2,2)").unwrap()));

    let l = parse_layout("local(2,1).spatial(8,4).local(1,2)").unwrap();
    for t in 0..32 {
        for i in 0..4 {
            let idx = l.evaluate(t, i).unwrap();
            assert_eq!(idx, vec![t / 4 + i / 2 * 8, t % 4 * 2 + i % 2]);
        }
    }
    assert_eq!(unravel(11, &[4, 2, 8]).unwrap(), vec![0, 1, 3]);

    assert!(t0.elapsed().as_secs() < 10, "criterion 1 exceeded 10 s");
    pass(1, "layout algebra: associativity, bijectivity, divide, published identities", t0);
}

#[test]
fn criterion_2_packing() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xBEEF);
    let types = tilevm::dtype::sweep_types();

    let mut vectors = 0;
    while vectors < 10_000 {
        for ty in &types {
            let count = rng.gen_range(1..=65usize);
            let raws: Vec<u64> = (0..count)
                .map(|_| rng.gen_range(0..(1u64 << ty.bits())))
                .collect();
            let buf = PackedBuffer::from_raws(*ty, &raws).unwrap();
            assert_eq!(
                buf.bytes().len(),
                (count * ty.bits() as usize).div_ceil(8),
                "length formula for {ty}"
            );
            assert_eq!(buf.bytes().len(), packed_len(count, ty.bits()));
            for (k, want) in raws.iter().enumerate() {
                assert_eq!(buf.load_element(k).unwrap(), *want, "{ty} element {k}");
            }
            // Random in-place overwrite must not disturb neighbors.
            let k = rng.gen_range(0..count);
            let nv = rng.gen_range(0..(1u64 << ty.bits()));
            let mut buf2 = buf.clone();
            buf2.store_element(k, nv).unwrap();
            for j in 0..count {
                let want = if j == k { nv } else { raws[j] };
                assert_eq!(buf2.load_element(j).unwrap(), want);
            }
            vectors += 1;
        }
    }

    // encode∘decode identity over the full code space of each sub-byte type.
    for ty in &types {
        for code in ty.code_space() {
            let v = ty.decode(code).unwrap();
            assert_eq!(ty.encode(&v), code, "{ty} code {code:#x}");
        }
    }

    assert!(t0.elapsed().as_secs() < 10, "criterion 2 exceeded 10 s");
    pass(2, "packing: round trips, length formula, code-space identity", t0);
}

#[test]
fn criterion_3_reinterpretation() {
    let t0 = Instant::now();

    // The published compatibility pair: u8 local(3).spatial(32) holds 32
    // threads x 24 bits, exactly what i6 with the column layout needs.
    let u8l = parse_layout("local(3).spatial(32)").unwrap();
    let i6l = parse_layout("local(2,1).column_spatial(4,8).local(2,1)").unwrap();
    assert_eq!(u8l.num_threads(), 32);
    assert_eq!(i6l.num_threads(), 32);
    assert_eq!(u8l.num_locals() * 8, 24);
    assert_eq!(i6l.num_locals() * 6, 24);

    let text = |mid: &str| {
        format!(
            r#"{{
          "name": "r", "grid": [1],
          "params": [{{"name": "x", "type": "*u8"}}, {{"name": "y", "type": "*u8"}}],
          "body": [
            {{"op": "GlobalView", "ptr": "x", "dtype": "u8", "shape": [96], "out": "xv"}},
            {{"op": "GlobalView", "ptr": "y", "dtype": "u8", "shape": [96], "out": "yv"}},
            {{"op": "LoadGlobal", "src": "xv", "offsets": [0], "dtype": "u8",
              "layout": "local(3).spatial(32)", "out": "t"}},
            {mid}
            {{"op": "Reinterpret", "src": "u", "dtype": "u8",
              "layout": "local(3).spatial(32)", "out": "v"}},
            {{"op": "StoreGlobal", "dst": "yv", "offsets": [0], "src": "v"}}
          ]
        }}"#
        )
    };
    let good = Program::parse(&text(
        r#"{"op": "Reinterpret", "src": "t", "dtype": "i6",
            "layout": "local(2,1).column_spatial(4,8).local(2,1)", "out": "u"},"#,
    ))
    .unwrap();
    assert!(validate(&good).is_empty());
    let raws: Vec<u64> = (0..96u64).map(|k| (k * 131 + 7) % 256).collect();
    let inputs = HashMap::from([
        (
            "x".to_string(),
            Tensor::new(vec![96], PackedBuffer::from_raws(ScalarType::u8t(), &raws).unwrap())
                .unwrap(),
        ),
        (
            "y".to_string(),
            Tensor::new(vec![96], PackedBuffer::zeroed(ScalarType::u8t(), 96)).unwrap(),
        ),
    ]);
    let r = run(&good, &HashMap::new(), inputs.clone(), &RunOptions::default()).unwrap();
    let got: Vec<u64> = (0..96)
        .map(|k| r.globals["y"].data.load_element(k).unwrap())
        .collect();
    assert_eq!(got, raws, "lossless round trip through i6");

    // compatible_u8_layout reproduces the published n=3, T=32 choice.
    let l = compatible_u8_layout(3, 32);
    assert!(l.equivalent(&parse_layout("local(3).spatial(32)").unwrap()));

    // Incompatible bit counts: rejected statically...
    let bad = Program::parse(&text(
        r#"{"op": "Reinterpret", "src": "t", "dtype": "i6",
            "layout": "local(2,1).spatial(4,8).local(1,1)", "out": "u"},"#,
    ))
    .unwrap();
    let diags = validate(&bad);
    assert!(
        diags.iter().any(|d| d.kind == DiagKind::ReinterpretIncompatible),
        "{diags:?}"
    );
    // ...and dynamically, when executed unvalidated.
    let err = run(&bad, &HashMap::new(), inputs, &RunOptions::default()).unwrap_err();
    assert!(err.to_string().contains("24 bits"), "{err}");
    assert!(err.to_string().contains("incompatible"), "{err}");

    pass(3, "reinterpretation: published pair lossless, gcd rule, rejections", t0);
}

/// Criterion 4/5 dtype sweep: u1..u8, i2..i8 and the representative
/// minifloat splits.
fn sweep() -> Vec<ScalarType> {
    tilevm::dtype::sweep_types()
}

#[test]
fn criterion_4_weight_pipeline() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xD00D);
    for dtype in sweep() {
        for bk in [8usize, 16, 32] {
            for bn in [8usize, 16, 32] {
                // Random dims up to 128 x 256 in tile multiples.
                let k = bk * rng.gen_range(1..=128 / bk);
                let n = bn * rng.gen_range(1..=256 / bn);
                let raws: Vec<u64> = (0..k * n)
                    .map(|_| rng.gen_range(0..(1u64 << dtype.bits())))
                    .collect();
                let w =
                    Tensor::new(vec![k, n], PackedBuffer::from_raws(dtype, &raws).unwrap())
                        .unwrap();
                let reg = default_weight_layout(bk, bn, dtype).unwrap();
                let wt = transform_weights(&w, bk, bn, &reg).unwrap();
                assert_eq!(wt.dims, vec![k / bk, n / bn, bk * bn * dtype.bits() as usize / 8]);

                // Kernel-side pipeline: LoadGlobal (whole u8 rows) →
                // Reinterpret → Cast(f16) → StoreGlobal, one tile per block.
                let tile_bytes = wt.dims[2];
                let n_bytes = tile_bytes / reg.num_threads();
                let u8l = compatible_u8_layout(n_bytes, reg.num_threads())
                    .to_expr()
                    .unwrap();
                let regl = reg.to_expr().unwrap();
                let p = Program::parse(&format!(
                    r#"{{
                  "name": "pipeline", "grid": ["k / {bk}", "n / {bn}"],
                  "params": [
                    {{"name": "k", "type": "i32"}}, {{"name": "n", "type": "i32"}},
                    {{"name": "w", "type": "*u8"}}, {{"name": "o", "type": "*f16"}}
                  ],
                  "body": [
                    {{"op": "BlockIndices", "out": ["kb", "nb"]}},
                    {{"op": "GlobalView", "ptr": "w", "dtype": "u8",
                      "shape": ["(k / {bk}) * (n / {bn}) * {tile_bytes}"], "out": "wv"}},
                    {{"op": "GlobalView", "ptr": "o", "dtype": "f16", "shape": ["k", "n"], "out": "ov"}},
                    {{"op": "LoadGlobal", "src": "wv",
                      "offsets": ["(kb * (n / {bn}) + nb) * {tile_bytes}"],
                      "dtype": "u8", "layout": "{u8l}", "out": "wu"}},
                    {{"op": "Reinterpret", "src": "wu", "dtype": "{dtype}",
                      "layout": "{regl}", "out": "wq"}},
                    {{"op": "Cast", "src": "wq", "dtype": "f16", "out": "wf"}},
                    {{"op": "StoreGlobal", "dst": "ov", "offsets": ["kb * {bk}", "nb * {bn}"], "src": "wf"}}
                  ]
                }}"#
                ))
                .unwrap();
                assert!(validate(&p).is_empty(), "{dtype} {bk}x{bn}");
                let inputs = HashMap::from([
                    ("w".to_string(), wt),
                    (
                        "o".to_string(),
                        Tensor::new(vec![k, n], PackedBuffer::zeroed(ScalarType::f16(), k * n))
                            .unwrap(),
                    ),
                ]);
                let args = HashMap::from([
                    ("k".to_string(), k as i64),
                    ("n".to_string(), n as i64),
                ]);
                let r = run(&p, &args, inputs, &RunOptions::default()).unwrap();
                for e in 0..k * n {
                    let got =
                        f16::from_bits(r.globals["o"].data.load_element(e).unwrap() as u16);
                    let want =
                        f16::from_f64(w.data.decode_element(e).unwrap().as_f64());
                    assert_eq!(
                        got.to_bits(),
                        want.to_bits(),
                        "{dtype} {bk}x{bn} [{k},{n}] element {e}"
                    );
                }
            }
        }
    }
    assert!(t0.elapsed().as_secs() < 60, "criterion 4 exceeded 60 s");
    pass(4, "weight pipeline round trip across all dtypes and tile sizes", t0);
}

#[test]
fn criterion_5_oracle_equivalence() {
    let t0 = Instant::now();
    let mut seed = 100u64;
    for dtype in sweep() {
        for m in [16usize, 32] {
            for n in [32usize, 64] {
                for k in [64usize, 128] {
                    seed += 1;
                    let rep = demo::verify(dtype, m, n, k, seed, &RunOptions::default())
                        .unwrap();
                    assert!(
                        rep.bit_exact,
                        "{dtype} {m}x{n}x{k}: max abs diff {}",
                        rep.max_abs_diff
                    );
                    assert_eq!(rep.max_abs_diff, 0.0);
                }
            }
        }
    }
    assert!(t0.elapsed().as_secs() < 300, "criterion 5 exceeded 5 min");
    pass(5, "end-to-end demo == oracle, bit-exact, full dtype/shape sweep", t0);
}

#[test]
fn criterion_6_determinism_and_block_independence() {
    let t0 = Instant::now();
    let dtype = ScalarType::int(6).unwrap();
    let (m, n, k, seed) = (32, 64, 64, 7u64);
    let base = demo::verify(dtype, m, n, k, seed, &RunOptions::default()).unwrap();
    let repeat = demo::verify(dtype, m, n, k, seed, &RunOptions::default()).unwrap();
    assert_eq!(
        base.result.globals["c"].data.bytes(),
        repeat.result.globals["c"].data.bytes(),
        "repeated runs must be byte-identical"
    );
    assert_eq!(
        base.result.trace_lines(),
        repeat.result.trace_lines(),
        "repeated traces must be byte-identical"
    );
    for shuffle_seed in [1u64, 1234, 0xFEED] {
        let opts = RunOptions {
            block_order: BlockOrder::Shuffled(shuffle_seed),
            ..RunOptions::default()
        };
        let shuffled = demo::verify(dtype, m, n, k, seed, &opts).unwrap();
        assert_eq!(
            base.result.globals["c"].data.bytes(),
            shuffled.result.globals["c"].data.bytes(),
            "block order {shuffle_seed} changed the output"
        );
        assert!(shuffled.bit_exact);
    }
    pass(6, "determinism and shuffled-block-order independence", t0);
}

#[test]
fn criterion_7_validation_soundness() {
    let t0 = Instant::now();

    // Malformed corpus: each program must produce the expected diagnostic.
    let preamble = r#"
        {"op": "GlobalView", "ptr": "x", "dtype": "f16", "shape": [16, 16], "out": "xv"},
        {"op": "LoadGlobal", "src": "xv", "offsets": [0, 0], "dtype": "f16",
         "layout": "spatial(4,4).local(4,4)", "out": "t"}"#;
    let with_body = |body: &str| {
        format!(
            r#"{{"name": "m", "grid": [1],
                 "params": [{{"name": "x", "type": "*f16"}}, {{"name": "p", "type": "*u4"}}],
                 "body": [{body}]}}"#
        )
    };
    let corpus: Vec<(String, DiagKind)> = vec![
        // scope / name errors
        (with_body(r#"{"op": "Cast", "src": "ghost", "dtype": "f16", "out": "y"}"#),
         DiagKind::UndefinedName),
        (with_body(r#"{"op": "GlobalView", "ptr": "ghost", "dtype": "f16", "shape": [4], "out": "v"}"#),
         DiagKind::UndefinedName),
        (with_body(r#"{"op": "StoreGlobal", "dst": "nowhere", "offsets": [0], "src": "nothing"}"#),
         DiagKind::UndefinedName),
        (with_body(r#"{"op": "Print", "src": "ghost"}"#), DiagKind::UndefinedName),
        (with_body(r#"{"op": "LoadShared", "src": "никто", "offsets": [0], "dtype": "f16",
                       "layout": "local(4)", "out": "t"}"#),
         DiagKind::UndefinedName),
        (with_body(&format!(
            r#"{preamble}, {{"op": "GlobalView", "ptr": "t", "dtype": "f16", "shape": [4], "out": "v"}}"#)),
         DiagKind::ScopeMisuse),
        (with_body(&format!(
            r#"{preamble}, {{"op": "AllocateGlobal", "dtype": "f16", "shape": ["t"], "out": "g"}}"#)),
         DiagKind::ScopeMisuse),
        (with_body(&format!(
            r#"{preamble}, {{"op": "Cast", "src": "xv", "dtype": "f16", "out": "y"}}"#)),
         DiagKind::ScopeMisuse),
        // grid
        (r#"{"name": "g", "grid": ["zz"], "params": [], "body": []}"#.to_string(),
         DiagKind::GridExpr),
        (r#"{"name": "g", "grid": ["q * 2"], "params": [{"name": "m", "type": "i32"}], "body": []}"#
            .to_string(),
         DiagKind::GridExpr),
        // rank / shape
        (with_body(&format!(
            r#"{preamble}, {{"op": "StoreGlobal", "dst": "xv", "offsets": [0], "src": "t"}}"#)),
         DiagKind::RankMismatch),
        (with_body(
            r#"{"op": "GlobalView", "ptr": "x", "dtype": "f16", "shape": [16, 16], "out": "xv"},
               {"op": "LoadGlobal", "src": "xv", "offsets": [0], "dtype": "f16",
                "layout": "local(16)", "out": "t"}"#),
         DiagKind::RankMismatch),
        // dtype
        (with_body(
            r#"{"op": "GlobalView", "ptr": "x", "dtype": "f16", "shape": [16, 16], "out": "xv"},
               {"op": "LoadGlobal", "src": "xv", "offsets": [0, 0], "dtype": "f32",
                "layout": "spatial(4,4).local(4,4)", "out": "t"}"#),
         DiagKind::DtypeMismatch),
        (with_body(&format!(
            r#"{preamble},
               {{"op": "AllocateShared", "dtype": "f32", "shape": [16, 16], "out": "sm"}},
               {{"op": "StoreShared", "dst": "sm", "offsets": [0, 0], "src": "t"}}"#)),
         DiagKind::DtypeMismatch),
        (with_body(&format!(
            r#"{preamble},
               {{"op": "AllocateShared", "dtype": "f32", "shape": [16, 16], "out": "sm"}},
               {{"op": "CopyGlobalToShared", "src": "xv", "offsets": [0, 0], "dst": "sm"}}"#)),
         DiagKind::DtypeMismatch),
        // reinterpret
        (with_body(&format!(
            r#"{preamble}, {{"op": "Reinterpret", "src": "t", "dtype": "u4",
                "layout": "spatial(4,4).local(4,4)", "out": "u"}}"#)),
         DiagKind::ReinterpretIncompatible),
        (with_body(&format!(
            r#"{preamble}, {{"op": "Reinterpret", "src": "t", "dtype": "f16",
                "layout": "spatial(8,4).local(2,4)", "out": "u"}}"#)),
         DiagKind::ReinterpretIncompatible),
        // mma
        (with_body(&format!(
            r#"{preamble},
               {{"op": "AllocateRegister", "dtype": "f32", "layout": "spatial(4,4).local(4,4)", "out": "c"}},
               {{"op": "AllocateRegister", "dtype": "f16", "layout": "spatial(4,4).local(2,4)", "out": "b"}},
               {{"op": "Mma", "a": "t", "b": "b", "c": "c", "out": "d"}}"#)),
         DiagKind::MmaContract),
        (with_body(&format!(
            r#"{preamble},
               {{"op": "AllocateRegister", "dtype": "u4", "layout": "spatial(4,4).local(4,4)", "out": "q"}},
               {{"op": "AllocateRegister", "dtype": "f32", "layout": "spatial(4,4).local(4,4)", "out": "c"}},
               {{"op": "Mma", "a": "t", "b": "q", "c": "c", "out": "d"}}"#)),
         DiagKind::MmaContract),
        (with_body(&format!(
            r#"{preamble},
               {{"op": "AllocateRegister", "dtype": "f16", "layout": "spatial(4,4).local(4,4)", "out": "c"}},
               {{"op": "Mma", "a": "t", "b": "t", "c": "c", "out": "d"}}"#)),
         DiagKind::MmaContract),
        // elementwise
        (with_body(&format!(
            r#"{preamble}, {{"op": "Elementwise", "func": "add", "args": ["t"], "out": "y"}}"#)),
         DiagKind::ElementwiseContract),
        (with_body(&format!(
            r#"{preamble}, {{"op": "Elementwise", "func": "neg", "args": [1.5], "out": "y"}}"#)),
         DiagKind::ElementwiseContract),
        (with_body(&format!(
            r#"{preamble},
               {{"op": "AllocateRegister", "dtype": "f16", "layout": "spatial(16,1).local(1,16)", "out": "u"}},
               {{"op": "Elementwise", "func": "add", "args": ["t", "u"], "out": "y"}}"#)),
         DiagKind::LayoutMismatch),
        // redefinition
        (with_body(&format!(
            r#"{preamble}, {{"op": "AllocateRegister", "dtype": "f32",
                "layout": "spatial(4,4).local(4,4)", "out": "t"}}"#)),
         DiagKind::Redefinition),
        (r#"{"name": "d", "grid": [1],
             "params": [{"name": "m", "type": "i32"}, {"name": "m", "type": "i32"}],
             "body": []}"#.to_string(),
         DiagKind::Redefinition),
    ];
    assert!(corpus.len() >= 20, "corpus has only {} programs", corpus.len());
    for (idx, (text, want)) in corpus.iter().enumerate() {
        let p = Program::parse(text).unwrap_or_else(|e| panic!("corpus[{idx}] parse: {e}"));
        let diags = validate(&p);
        assert!(
            diags.iter().any(|d| d.kind == *want),
            "corpus[{idx}] expected {want:?}, got {diags:?}"
        );
    }

    // Conversely: valid programs must not raise static-class errors at
    // runtime. Run the demo for every dtype; any RunError here would be a
    // soundness hole.
    for dtype in sweep() {
        let p = demo::demo_program(dtype);
        assert!(validate(&p).is_empty(), "{dtype}");
        demo::verify(dtype, 16, 32, 32, 1, &RunOptions::default())
            .unwrap_or_else(|e| panic!("validated program failed at runtime for {dtype}: {e}"));
    }

    pass(7, "validation corpus: every malformed program diagnosed, valid ones run", t0);
}

/// Secondary gate (not numbered in the criteria): the oracle itself is
/// cross-checked against a second, naively indexed dequantization.
#[test]
fn oracle_cross_check() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dtype = ScalarType::float(2, 1).unwrap();
    let (m, k, n) = (4usize, 8usize, 6usize);
    let raws: Vec<u64> = (0..k * n)
        .map(|_| rng.gen_range(0..(1u64 << dtype.bits())))
        .collect();
    let w = Tensor::new(vec![k, n], PackedBuffer::from_raws(dtype, &raws).unwrap()).unwrap();
    let a: Vec<f16> = (0..m * k)
        .map(|_| f16::from_f32(rng.gen_range(-1.0..1.0)))
        .collect();
    let got = oracle_matmul(&a, m, k, &w, &[1.0], k * n).unwrap();
    // Independent path: decode raw codes by hand via ScalarValue.
    for mi in 0..m {
        for ni in 0..n {
            let mut acc = 0.0f32;
            for ki in 0..k {
                let wv = dtype.decode(raws[ki * n + ni]).unwrap().as_f64() as f32;
                acc += a[mi * k + ki].to_f32() * wv;
            }
            assert_eq!(got[mi * n + ni], f16::from_f32(acc), "({mi},{ni})");
        }
    }
    pass(0, "oracle cross-check against naive dequantization", t0);
}
