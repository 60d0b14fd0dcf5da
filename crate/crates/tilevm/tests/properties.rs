//! Randomized invariants via proptest, complementing the fixed-seed
//! acceptance suite.

use proptest::prelude::*;
use tilevm::dtype::ScalarType;
use tilevm::expr::parse_expr;
use tilevm::layout::{parse_layout, Layout};
use tilevm::packed::{packed_len, PackedBuffer};

fn arb_dtype() -> impl Strategy<Value = ScalarType> {
    prop_oneof![
        (1u8..=8).prop_map(|b| ScalarType::uint(b).unwrap()),
        (2u8..=8).prop_map(|b| ScalarType::int(b).unwrap()),
        (1u8..=4, 1u8..=4)
            .prop_filter("width cap", |(e, m)| e + m + 1 <= 8)
            .prop_map(|(e, m)| ScalarType::float(e, m).unwrap()),
    ]
}

fn arb_primitive() -> impl Strategy<Value = Layout> {
    (0..4u8, 1usize..=4, 1usize..=4).prop_map(|(class, d0, d1)| {
        let dims = [d0, d1];
        match class {
            0 => Layout::local(&dims),
            1 => Layout::spatial(&dims),
            2 => Layout::column_local(&dims),
            _ => Layout::column_spatial(&dims),
        }
        .unwrap()
    })
}

proptest! {
    #[test]
    fn pack_round_trip(dtype in arb_dtype(), seed_raws in proptest::collection::vec(any::<u64>(), 1..80)) {
        let raws: Vec<u64> = seed_raws.iter().map(|r| r & ((1u64 << dtype.bits()) - 1)).collect();
        let buf = PackedBuffer::from_raws(dtype, &raws).unwrap();
        prop_assert_eq!(buf.bytes().len(), packed_len(raws.len(), dtype.bits()));
        for (k, want) in raws.iter().enumerate() {
            prop_assert_eq!(buf.load_element(k).unwrap(), *want);
        }
    }

    #[test]
    fn encode_decode_code_space(dtype in arb_dtype()) {
        for code in dtype.code_space() {
            let v = dtype.decode(code).unwrap();
            prop_assert_eq!(dtype.encode(&v), code);
        }
    }

    #[test]
    fn layout_bijective_and_invertible(l in arb_primitive(), r in arb_primitive()) {
        let h = l.compose(&r).unwrap();
        let mut seen = vec![false; h.num_elements()];
        for t in 0..h.num_threads() {
            for i in 0..h.num_locals() {
                let idx = h.evaluate(t, i).unwrap();
                prop_assert_eq!(h.invert(&idx).unwrap(), (t, i));
                let flat = tilevm::layout::ravel(&idx, h.shape()).unwrap();
                prop_assert!(!seen[flat]);
                seen[flat] = true;
            }
        }
    }

    #[test]
    fn divide_recovers_left_factor(f in arb_primitive(), g in arb_primitive()) {
        let h = f.compose(&g).unwrap();
        let q = h.divide(&g).unwrap();
        prop_assert!(q.is_some(), "compose({}, {}) not divisible by right factor", f, g);
        prop_assert!(q.unwrap().equivalent(&f));
    }

    #[test]
    fn layout_serde_round_trip(f in arb_primitive(), g in arb_primitive()) {
        let h = f.compose(&g).unwrap();
        let json = serde_json::to_string(&h).unwrap();
        let back: Layout = serde_json::from_str(&json).unwrap();
        prop_assert!(back.equivalent(&h));
        if let Some(expr) = h.to_expr() {
            prop_assert!(parse_layout(&expr).unwrap().equivalent(&h));
        }
    }

    #[test]
    fn expr_display_parse_round_trip(a in -100i64..100, b in 1i64..50, c in -20i64..20) {
        let text = format!("(x * {a} + cdiv(y, {b})) % {} - {c}", b + 1);
        let e = parse_expr(&text).unwrap();
        let back = parse_expr(&e.to_string()).unwrap();
        let env = std::collections::HashMap::from([
            ("x".to_string(), a), ("y".to_string(), b),
        ]);
        prop_assert_eq!(e.eval(&env).unwrap(), back.eval(&env).unwrap());
    }
}
