//! Tour of the layout algebra: primitives, Kronecker composition, division,
//! evaluation/inversion, and grid rendering.
//!
//! Run with: cargo run --example layout_algebra

use tilevm::layout::{parse_layout, Layout};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Primitives: local keeps a tile inside one thread, spatial spreads it
    // one element per thread. Column variants order the threads/slots with
    // the first dimension varying fastest.
    let local = Layout::local(&[2, 2])?;
    let spatial = Layout::spatial(&[4, 2])?;
    println!("local(2,2)       = {local}");
    println!("spatial(4,2)     = {spatial}");

    // Composition nests the right layout inside each cell of the left one.
    // This is the m16n8k16 tensor-core fragment layout for operand C:
    let frag = parse_layout("local(2,1).spatial(8,4).local(1,2)")?;
    println!("\nmma fragment     = {frag}");
    println!("threads={} locals={}", frag.num_threads(), frag.num_locals());
    // Its closed form is f(t, i) = (t/4 + i/2*8, t%4*2 + i%2):
    for (t, i) in [(0usize, 0usize), (5, 2), (31, 3)] {
        let idx = frag.evaluate(t, i)?;
        println!("f({t:2}, {i}) = {idx:?}");
        assert_eq!(idx, vec![t / 4 + i / 2 * 8, t % 4 * 2 + i % 2]);
        // evaluate and invert are inverse bijections:
        assert_eq!(frag.invert(&idx)?, (t, i));
    }

    // Division peels a right factor off: divide(compose(f, g), g) == f.
    let f = parse_layout("spatial(2,2)")?;
    let g = parse_layout("local(1,2)")?;
    let h = f.compose(&g)?;
    let q = h.divide(&g)?.expect("h is divisible by g");
    println!("\n({f}) . ({g}) = {h}");
    println!("quotient by ({g}) = {q}");
    assert!(q.equivalent(&f));

    // Not every divisor works; an indivisible pair yields None, not an error.
    let odd = parse_layout("spatial(1,4)")?;
    assert!(h.divide(&odd)?.is_none());
    println!("({h}) / ({odd}) = not divisible");

    // Render who owns what: each cell is t<thread>:<slot>.
    let small = parse_layout("spatial(2,2).local(1,2)")?;
    println!("\n{small} as a grid:");
    print!("{}", small.render_grid()?);
    Ok(())
}
