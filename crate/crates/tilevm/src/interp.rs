//! Deterministic execution of validated programs: grid iteration, block-level
//! instruction semantics over simulated global/shared/register storage, the
//! low-precision weight pipeline, and the independent reference oracle.

use crate::dtype::{ScalarType, ScalarValue};
use crate::expr::Expr;
use crate::ir::{BoundsMode, Instruction, MapOp, Operand, ParamType, Program, Stmt};
use crate::layout::{ravel, Layout};
use crate::packed::{packed_len, PackedBuffer, Tensor};
use half::f16;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde_json::{json, Value};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("launch: {0}")]
    Launch(String),
    #[error("block {block:?} at {path}: {msg}")]
    At {
        block: Vec<usize>,
        path: String,
        msg: String,
    },
    #[error("{0}")]
    Pipeline(String),
}

/// Order in which the machine walks the launch grid. Blocks are independent,
/// so outputs must not depend on this; tests exercise the shuffled mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockOrder {
    RowMajor,
    Shuffled(u64),
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub block_order: BlockOrder,
    /// Per-block shared memory capacity in bytes.
    pub shared_capacity: usize,
    /// Override every LoadGlobal's bounds mode (CLI `--bounds` flag).
    pub bounds_override: Option<BoundsMode>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            block_order: BlockOrder::RowMajor,
            shared_capacity: 64 * 1024,
            bounds_override: None,
        }
    }
}

#[derive(Debug)]
pub struct RunResult {
    /// Final global memory: mutated inputs plus workspace allocations.
    pub globals: HashMap<String, Tensor>,
    /// One record per executed instruction, in execution order.
    pub trace: Vec<Value>,
}

impl RunResult {
    /// The trace in its external JSON-lines form.
    pub fn trace_lines(&self) -> String {
        let mut s = String::new();
        for r in &self.trace {
            s.push_str(&r.to_string());
            s.push('\n');
        }
        s
    }
}

/// A register tensor: values live in per-thread bit strings, thread-major.
/// Slot `i` of thread `t` is packed element `t·L + i`, so the whole tensor is
/// one compact buffer of `T·L` elements.
#[derive(Debug, Clone)]
struct Reg {
    dtype: ScalarType,
    layout: Layout,
    buf: PackedBuffer,
}

impl Reg {
    fn zeroed(dtype: ScalarType, layout: Layout) -> Reg {
        let n = layout.num_threads() * layout.num_locals();
        Reg {
            dtype,
            layout,
            buf: PackedBuffer::zeroed(dtype, n),
        }
    }

    fn slot(&self, t: usize, i: usize) -> usize {
        t * self.layout.num_locals() + i
    }
}

#[derive(Debug, Clone)]
struct View {
    buffer: String,
    dims: Vec<usize>,
}

#[derive(Debug, Clone)]
struct SharedT {
    dtype: ScalarType,
    dims: Vec<usize>,
    offset: usize,
}

struct BlockCtx {
    coords: Vec<usize>,
    env: HashMap<String, i64>,
    views: HashMap<String, View>,
    shared: HashMap<String, SharedT>,
    arena: Vec<u8>,
    arena_top: usize,
    regs: HashMap<String, Reg>,
}

struct Exec<'a> {
    opts: &'a RunOptions,
    globals: HashMap<String, Tensor>,
    trace: Vec<Value>,
}

/// Execute a validated program over named input buffers. Deterministic:
/// identical inputs produce bit-identical outputs and traces regardless of
/// block order.
pub fn run(
    p: &Program,
    args: &HashMap<String, i64>,
    inputs: HashMap<String, Tensor>,
    opts: &RunOptions,
) -> Result<RunResult, RunError> {
    for q in &p.params {
        match q.ty {
            ParamType::Scalar(_) => {
                if !args.contains_key(&q.name) {
                    return Err(RunError::Launch(format!(
                        "missing scalar argument {:?}",
                        q.name
                    )));
                }
            }
            ParamType::Pointer(pt) => match inputs.get(&q.name) {
                None => {
                    return Err(RunError::Launch(format!(
                        "missing input buffer {:?}",
                        q.name
                    )))
                }
                Some(t) if t.dtype() != pt => {
                    return Err(RunError::Launch(format!(
                        "buffer {:?} is {}, parameter wants {pt}",
                        q.name,
                        t.dtype()
                    )))
                }
                Some(_) => {}
            },
        }
    }
    let grid = p
        .eval_grid(args)
        .map_err(|e| RunError::Launch(e.to_string()))?;
    let total: usize = grid.iter().product();
    let mut order: Vec<usize> = (0..total).collect();
    if let BlockOrder::Shuffled(seed) = opts.block_order {
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    }

    let mut ex = Exec {
        opts,
        globals: inputs,
        trace: Vec::with_capacity(total * p.body.len()),
    };
    for flat in order {
        let coords = crate::layout::unravel(flat, &grid)
            .map_err(|e| RunError::Launch(e.to_string()))?;
        let mut env: HashMap<String, i64> = args.clone();
        env.retain(|k, _| p.params.iter().any(|q| q.name == *k));
        let mut blk = BlockCtx {
            coords,
            env,
            views: HashMap::new(),
            shared: HashMap::new(),
            arena: vec![0u8; opts.shared_capacity],
            arena_top: 0,
            regs: HashMap::new(),
        };
        ex.body(&p.body, &mut blk, "body")?;
    }
    Ok(RunResult {
        globals: ex.globals,
        trace: ex.trace,
    })
}

impl Exec<'_> {
    fn fail<T>(&self, blk: &BlockCtx, path: &str, msg: String) -> Result<T, RunError> {
        Err(RunError::At {
            block: blk.coords.clone(),
            path: path.to_string(),
            msg,
        })
    }

    fn eval(&self, e: &Expr, blk: &BlockCtx, path: &str) -> Result<i64, RunError> {
        e.eval(&blk.env).map_err(|err| RunError::At {
            block: blk.coords.clone(),
            path: path.to_string(),
            msg: err.to_string(),
        })
    }

    fn eval_shape(&self, es: &[Expr], blk: &BlockCtx, path: &str) -> Result<Vec<usize>, RunError> {
        es.iter()
            .map(|e| {
                let v = self.eval(e, blk, path)?;
                if v <= 0 {
                    return self.fail(blk, path, format!("shape extent {e} = {v}"));
                }
                Ok(v as usize)
            })
            .collect()
    }

    fn eval_offsets(&self, es: &[Expr], blk: &BlockCtx, path: &str) -> Result<Vec<i64>, RunError> {
        es.iter().map(|e| self.eval(e, blk, path)).collect()
    }

    fn body(&mut self, body: &[Stmt], blk: &mut BlockCtx, path: &str) -> Result<(), RunError> {
        for (k, stmt) in body.iter().enumerate() {
            match stmt {
                Stmt::Instr(ins) => {
                    let p = format!("{path}[{k}].{}", ins.opcode());
                    self.instr(ins, blk, &p)?;
                }
                Stmt::If {
                    cond,
                    then_body,
                    else_body,
                } => {
                    let p = format!("{path}[{k}].if");
                    if self.eval(cond, blk, &p)? != 0 {
                        self.body(then_body, blk, &format!("{p}.then"))?;
                    } else {
                        self.body(else_body, blk, &format!("{p}.else"))?;
                    }
                }
                Stmt::For {
                    var,
                    start,
                    stop,
                    step,
                    body,
                } => {
                    let p = format!("{path}[{k}].for");
                    let start = self.eval(start, blk, &p)?;
                    let stop = self.eval(stop, blk, &p)?;
                    let step = self.eval(step, blk, &p)?;
                    if step <= 0 {
                        return self.fail(blk, &p, format!("non-positive step {step}"));
                    }
                    let mut v = start;
                    while v < stop {
                        blk.env.insert(var.clone(), v);
                        self.body(body, blk, &p)?;
                        v += step;
                    }
                    blk.env.remove(var);
                }
                Stmt::While { cond, body } => {
                    let p = format!("{path}[{k}].while");
                    while self.eval(cond, blk, &p)? != 0 {
                        self.body(body, blk, &p)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn view<'b>(&self, blk: &'b BlockCtx, name: &str, path: &str) -> Result<&'b View, RunError> {
        match blk.views.get(name) {
            Some(v) => Ok(v),
            None => self.fail(blk, path, format!("no global view named {name:?}")),
        }
    }

    fn reg<'b>(
        regs: &'b HashMap<String, Reg>,
        blk: &BlockCtx,
        name: &str,
        path: &str,
    ) -> Result<&'b Reg, RunError> {
        regs.get(name).ok_or_else(|| RunError::At {
            block: blk.coords.clone(),
            path: path.to_string(),
            msg: format!("no register tensor named {name:?}"),
        })
    }

    /// Resolve view coordinates (offset + tile index) to a flat element index,
    /// or None when out of bounds.
    fn flat_index(dims: &[usize], offsets: &[i64], idx: &[usize]) -> Option<usize> {
        let mut coords = Vec::with_capacity(dims.len());
        for d in 0..dims.len() {
            let c = offsets[d] + idx[d] as i64;
            if c < 0 || c as usize >= dims[d] {
                return None;
            }
            coords.push(c as usize);
        }
        ravel(&coords, dims).ok()
    }

    fn define_reg(
        &mut self,
        blk: &mut BlockCtx,
        name: &str,
        reg: Reg,
        path: &str,
    ) -> Result<(), RunError> {
        if let Some(old) = blk.regs.get(name) {
            if old.dtype != reg.dtype || !old.layout.equivalent(&reg.layout) {
                return self.fail(
                    blk,
                    path,
                    format!("in-place write to {name:?} changes dtype or layout"),
                );
            }
        }
        blk.regs.insert(name.to_string(), reg);
        Ok(())
    }

    fn record(&mut self, blk: &BlockCtx, op: &str, detail: Value) {
        let mut rec = json!({"block": blk.coords, "op": op});
        if let (Value::Object(m), Value::Object(d)) = (&mut rec, detail) {
            m.extend(d);
        }
        self.trace.push(rec);
    }

    fn instr(&mut self, ins: &Instruction, blk: &mut BlockCtx, path: &str) -> Result<(), RunError> {
        match ins {
            Instruction::BlockIndices { out } => {
                if out.len() != blk.coords.len() {
                    return self.fail(
                        blk,
                        path,
                        format!(
                            "grid rank {} but {} output names",
                            blk.coords.len(),
                            out.len()
                        ),
                    );
                }
                for (name, c) in out.iter().zip(&blk.coords) {
                    blk.env.insert(name.clone(), *c as i64);
                }
                self.record(blk, "BlockIndices", json!({"out": out}));
            }
            Instruction::GlobalView {
                ptr,
                dtype,
                shape,
                out,
            } => {
                let dims = self.eval_shape(shape, blk, path)?;
                let buf = match self.globals.get(ptr) {
                    Some(t) => t,
                    None => return self.fail(blk, path, format!("no buffer bound to {ptr:?}")),
                };
                if buf.dtype() != *dtype {
                    return self.fail(
                        blk,
                        path,
                        format!("buffer {ptr:?} is {}, view wants {dtype}", buf.dtype()),
                    );
                }
                let need: usize = dims.iter().product();
                if need > buf.data.count() {
                    return self.fail(
                        blk,
                        path,
                        format!("view of {need} elements over buffer of {}", buf.data.count()),
                    );
                }
                blk.views.insert(
                    out.clone(),
                    View {
                        buffer: ptr.clone(),
                        dims: dims.clone(),
                    },
                );
                self.record(blk, "GlobalView", json!({"out": out, "shape": dims}));
            }
            Instruction::AllocateGlobal { dtype, shape, out } => {
                let dims = self.eval_shape(shape, blk, path)?;
                let count: usize = dims.iter().product();
                match self.globals.get(out) {
                    None => {
                        let t = Tensor::new(dims.clone(), PackedBuffer::zeroed(*dtype, count))
                            .expect("consistent dims");
                        self.globals.insert(out.clone(), t);
                    }
                    Some(t) if t.dtype() == *dtype && t.dims == dims => {}
                    Some(t) => {
                        return self.fail(
                            blk,
                            path,
                            format!(
                                "workspace {out:?} already allocated as {} {:?}",
                                t.dtype(),
                                t.dims
                            ),
                        )
                    }
                }
                blk.views.insert(
                    out.clone(),
                    View {
                        buffer: out.clone(),
                        dims: dims.clone(),
                    },
                );
                self.record(blk, "AllocateGlobal", json!({"out": out, "shape": dims}));
            }
            Instruction::AllocateShared { dtype, shape, out } => {
                let dims = self.eval_shape(shape, blk, path)?;
                let count: usize = dims.iter().product();
                let bytes = packed_len(count, dtype.bits());
                let offset = (blk.arena_top + 15) & !15;
                if offset + bytes > blk.arena.len() {
                    return self.fail(
                        blk,
                        path,
                        format!(
                            "shared capacity exhausted: need {bytes} B at offset {offset}, capacity {}",
                            blk.arena.len()
                        ),
                    );
                }
                blk.arena_top = offset + bytes;
                blk.shared.insert(
                    out.clone(),
                    SharedT {
                        dtype: *dtype,
                        dims: dims.clone(),
                        offset,
                    },
                );
                self.record(
                    blk,
                    "AllocateShared",
                    json!({"out": out, "shape": dims, "offset": offset, "bytes": bytes}),
                );
            }
            Instruction::AllocateRegister {
                dtype,
                layout,
                out,
                init,
            } => {
                let mut reg = Reg::zeroed(*dtype, layout.clone());
                if let Some(v) = init {
                    let raw = dtype.encode(&ScalarValue::Float(*dtype, *v));
                    for k in 0..reg.buf.count() {
                        reg.buf.store_element(k, raw).expect("in range");
                    }
                }
                self.define_reg(blk, out, reg, path)?;
                self.record(blk, "AllocateRegister", json!({"out": out}));
            }
            Instruction::LoadGlobal {
                src,
                offsets,
                dtype,
                layout,
                out,
                bounds,
            } => {
                let bounds = self.opts.bounds_override.unwrap_or(*bounds);
                let offs = self.eval_offsets(offsets, blk, path)?;
                let view = self.view(blk, src, path)?.clone();
                let buf = &self.globals[&view.buffer];
                if buf.dtype() != *dtype {
                    return self.fail(
                        blk,
                        path,
                        format!("view is {}, register wants {dtype}", buf.dtype()),
                    );
                }
                let mut reg = Reg::zeroed(*dtype, layout.clone());
                for t in 0..layout.num_threads() {
                    for i in 0..layout.num_locals() {
                        let idx = layout.evaluate(t, i).map_err(|e| RunError::At {
                            block: blk.coords.clone(),
                            path: path.to_string(),
                            msg: e.to_string(),
                        })?;
                        let raw = match Self::flat_index(&view.dims, &offs, &idx) {
                            Some(k) => buf.data.load_element(k).expect("bounded"),
                            None => match bounds {
                                BoundsMode::ZeroFill => 0,
                                BoundsMode::Strict => {
                                    return self.fail(
                                        blk,
                                        path,
                                        format!(
                                            "out-of-bounds load at offsets {offs:?} + index {idx:?} in view {:?} {:?}",
                                            src, view.dims
                                        ),
                                    )
                                }
                            },
                        };
                        let k = reg.slot(t, i);
                        reg.buf.store_element(k, raw).expect("in range");
                    }
                }
                self.define_reg(blk, out, reg, path)?;
                self.record(
                    blk,
                    "LoadGlobal",
                    json!({"src": src, "offsets": offs, "out": out}),
                );
            }
            Instruction::StoreGlobal { dst, offsets, src } => {
                let offs = self.eval_offsets(offsets, blk, path)?;
                let view = self.view(blk, dst, path)?.clone();
                let reg = Self::reg(&blk.regs, blk, src, path)?.clone();
                if self.globals[&view.buffer].dtype() != reg.dtype {
                    return self.fail(blk, path, "store dtype mismatch".into());
                }
                for t in 0..reg.layout.num_threads() {
                    for i in 0..reg.layout.num_locals() {
                        let idx = reg.layout.evaluate(t, i).expect("in range");
                        let k = match Self::flat_index(&view.dims, &offs, &idx) {
                            Some(k) => k,
                            None => {
                                return self.fail(
                                    blk,
                                    path,
                                    format!(
                                        "out-of-bounds store at offsets {offs:?} + index {idx:?} in view {dst:?} {:?}",
                                        view.dims
                                    ),
                                )
                            }
                        };
                        let raw = reg.buf.load_element(reg.slot(t, i)).expect("in range");
                        self.globals
                            .get_mut(&view.buffer)
                            .unwrap()
                            .data
                            .store_element(k, raw)
                            .expect("bounded");
                    }
                }
                self.record(
                    blk,
                    "StoreGlobal",
                    json!({"dst": dst, "offsets": offs, "src": src}),
                );
            }
            Instruction::CopyGlobalToShared { src, offsets, dst } => {
                let offs = self.eval_offsets(offsets, blk, path)?;
                let view = self.view(blk, src, path)?.clone();
                let sh = match blk.shared.get(dst) {
                    Some(s) => s.clone(),
                    None => {
                        return self.fail(blk, path, format!("no shared tensor named {dst:?}"))
                    }
                };
                if view.dims.len() != sh.dims.len() {
                    return self.fail(blk, path, "rank mismatch in copy".into());
                }
                let buf = &self.globals[&view.buffer];
                let count: usize = sh.dims.iter().product();
                let bits = sh.dtype.bits();
                for e in 0..count {
                    let idx = crate::layout::unravel(e, &sh.dims).expect("in range");
                    let k = match Self::flat_index(&view.dims, &offs, &idx) {
                        Some(k) => k,
                        None => {
                            return self.fail(
                                blk,
                                path,
                                format!("copy source out of bounds at {idx:?}"),
                            )
                        }
                    };
                    let raw = buf.data.load_element(k).expect("bounded");
                    crate::packed::store_bits(
                        &mut blk.arena[sh.offset..],
                        e * bits as usize,
                        bits,
                        raw,
                    );
                }
                self.record(
                    blk,
                    "CopyGlobalToShared",
                    json!({"src": src, "offsets": offs, "dst": dst}),
                );
            }
            Instruction::LoadShared {
                src,
                offsets,
                dtype,
                layout,
                out,
            } => {
                let offs = self.eval_offsets(offsets, blk, path)?;
                let sh = match blk.shared.get(src) {
                    Some(s) => s.clone(),
                    None => {
                        return self.fail(blk, path, format!("no shared tensor named {src:?}"))
                    }
                };
                if sh.dtype != *dtype {
                    return self.fail(blk, path, "shared dtype mismatch".into());
                }
                let bits = sh.dtype.bits();
                let mut reg = Reg::zeroed(*dtype, layout.clone());
                for t in 0..layout.num_threads() {
                    for i in 0..layout.num_locals() {
                        let idx = layout.evaluate(t, i).expect("in range");
                        let k = match Self::flat_index(&sh.dims, &offs, &idx) {
                            Some(k) => k,
                            None => {
                                return self.fail(
                                    blk,
                                    path,
                                    format!("shared load out of bounds at {idx:?}"),
                                )
                            }
                        };
                        let raw = crate::packed::load_bits(
                            &blk.arena[sh.offset..],
                            k * bits as usize,
                            bits,
                        );
                        reg.buf.store_element(reg.slot(t, i), raw).expect("in range");
                    }
                }
                self.define_reg(blk, out, reg, path)?;
                self.record(
                    blk,
                    "LoadShared",
                    json!({"src": src, "offsets": offs, "out": out}),
                );
            }
            Instruction::StoreShared { dst, offsets, src } => {
                let offs = self.eval_offsets(offsets, blk, path)?;
                let reg = Self::reg(&blk.regs, blk, src, path)?.clone();
                let sh = match blk.shared.get(dst) {
                    Some(s) => s.clone(),
                    None => {
                        return self.fail(blk, path, format!("no shared tensor named {dst:?}"))
                    }
                };
                if sh.dtype != reg.dtype {
                    return self.fail(blk, path, "shared dtype mismatch".into());
                }
                let bits = sh.dtype.bits();
                for t in 0..reg.layout.num_threads() {
                    for i in 0..reg.layout.num_locals() {
                        let idx = reg.layout.evaluate(t, i).expect("in range");
                        let k = match Self::flat_index(&sh.dims, &offs, &idx) {
                            Some(k) => k,
                            None => {
                                return self.fail(
                                    blk,
                                    path,
                                    format!("shared store out of bounds at {idx:?}"),
                                )
                            }
                        };
                        let raw = reg.buf.load_element(reg.slot(t, i)).expect("in range");
                        crate::packed::store_bits(
                            &mut blk.arena[sh.offset..],
                            k * bits as usize,
                            bits,
                            raw,
                        );
                    }
                }
                self.record(
                    blk,
                    "StoreShared",
                    json!({"dst": dst, "offsets": offs, "src": src}),
                );
            }
            Instruction::Reinterpret {
                src,
                dtype,
                layout,
                out,
            } => {
                let reg = Self::reg(&blk.regs, blk, src, path)?;
                let src_bits = reg.layout.num_locals() * reg.dtype.bits() as usize;
                let dst_bits = layout.num_locals() * dtype.bits() as usize;
                if reg.layout.num_threads() != layout.num_threads() || src_bits != dst_bits {
                    return self.fail(
                        blk,
                        path,
                        format!(
                            "incompatible reinterpret: {} threads x {src_bits} bits vs {} threads x {dst_bits} bits",
                            reg.layout.num_threads(),
                            layout.num_threads()
                        ),
                    );
                }
                // Bits per thread match, so the packed byte string carries
                // over verbatim; only the typing changes.
                let count = layout.num_threads() * layout.num_locals();
                let buf =
                    PackedBuffer::from_bytes(*dtype, count, reg.buf.bytes().to_vec())
                        .expect("same byte length");
                let new = Reg {
                    dtype: *dtype,
                    layout: layout.clone(),
                    buf,
                };
                self.define_reg(blk, out, new, path)?;
                self.record(blk, "Reinterpret", json!({"src": src, "out": out}));
            }
            Instruction::Cast { src, dtype, out } => {
                let reg = Self::reg(&blk.regs, blk, src, path)?;
                let new = Reg {
                    dtype: *dtype,
                    layout: reg.layout.clone(),
                    buf: reg.buf.cast(*dtype).expect("register cast is total"),
                };
                self.define_reg(blk, out, new, path)?;
                self.record(blk, "Cast", json!({"src": src, "out": out}));
            }
            Instruction::Mma { a, b, c, out } => {
                let ra = Self::reg(&blk.regs, blk, a, path)?.clone();
                let rb = Self::reg(&blk.regs, blk, b, path)?.clone();
                let rc = Self::reg(&blk.regs, blk, c, path)?.clone();
                let (sa, sb, sc) = (ra.layout.shape(), rb.layout.shape(), rc.layout.shape());
                if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] || sc != [sa[0], sb[1]] {
                    return self.fail(
                        blk,
                        path,
                        format!("mma shapes do not conform: A{sa:?} B{sb:?} C{sc:?}"),
                    );
                }
                if rc.dtype != ScalarType::f32() {
                    return self.fail(blk, path, "mma accumulator must be f32".into());
                }
                let (m, kdim, n) = (sa[0], sa[1], sb[1]);
                let fetch = |r: &Reg, idx: &[usize]| -> f32 {
                    let (t, i) = r.layout.invert(idx).expect("bijective layout");
                    r.buf
                        .decode_element(r.slot(t, i))
                        .expect("in range")
                        .as_f64() as f32
                };
                let mut d = Reg::zeroed(rc.dtype, rc.layout.clone());
                for mi in 0..m {
                    for ni in 0..n {
                        let mut acc = fetch(&rc, &[mi, ni]);
                        for ki in 0..kdim {
                            acc += fetch(&ra, &[mi, ki]) * fetch(&rb, &[ki, ni]);
                        }
                        let (t, i) = d.layout.invert(&[mi, ni]).expect("bijective");
                        let raw = d
                            .dtype
                            .encode(&ScalarValue::Float(d.dtype, acc as f64));
                        d.buf.store_element(d.slot(t, i), raw).expect("in range");
                    }
                }
                self.define_reg(blk, out, d, path)?;
                self.record(blk, "Mma", json!({"a": a, "b": b, "c": c, "out": out}));
            }
            Instruction::Elementwise { func, args, out } => {
                if args.len() != func.arity() {
                    return self.fail(
                        blk,
                        path,
                        format!("{func:?} takes {} args, got {}", func.arity(), args.len()),
                    );
                }
                let mut sig: Option<Reg> = None;
                for arg in args {
                    if let Operand::Tensor(name) = arg {
                        let r = Self::reg(&blk.regs, blk, name, path)?;
                        match &sig {
                            None => sig = Some(r.clone()),
                            Some(s) => {
                                if s.dtype != r.dtype || !s.layout.equivalent(&r.layout) {
                                    return self.fail(
                                        blk,
                                        path,
                                        "elementwise operands disagree".into(),
                                    );
                                }
                            }
                        }
                    }
                }
                let proto = match sig {
                    Some(s) => s,
                    None => {
                        return self.fail(blk, path, "elementwise needs a tensor operand".into())
                    }
                };
                let count = proto.buf.count();
                let mut new = Reg::zeroed(proto.dtype, proto.layout.clone());
                for k in 0..count {
                    let mut vals = Vec::with_capacity(args.len());
                    for arg in args {
                        vals.push(match arg {
                            Operand::Imm(v) => *v,
                            Operand::Tensor(name) => blk.regs[name]
                                .buf
                                .decode_element(k)
                                .expect("in range")
                                .as_f64(),
                        });
                    }
                    let v = match func {
                        MapOp::Add => vals[0] + vals[1],
                        MapOp::Sub => vals[0] - vals[1],
                        MapOp::Mul => vals[0] * vals[1],
                        MapOp::Div => vals[0] / vals[1],
                        MapOp::Neg => -vals[0],
                    };
                    let raw = new.dtype.encode(&ScalarValue::Float(new.dtype, v));
                    new.buf.store_element(k, raw).expect("in range");
                }
                self.define_reg(blk, out, new, path)?;
                self.record(blk, "Elementwise", json!({"out": out}));
            }
            Instruction::Synchronize {} => {
                self.record(blk, "Synchronize", json!({}));
            }
            Instruction::Print { src, msg } => {
                let mut detail = serde_json::Map::new();
                if let Some(m) = msg {
                    detail.insert("msg".into(), json!(m));
                }
                if let Some(name) = src {
                    if let Some(r) = blk.regs.get(name) {
                        let vals: Vec<f64> = (0..r.buf.count())
                            .map(|k| r.buf.decode_element(k).expect("in range").as_f64())
                            .collect();
                        detail.insert("tensor".into(), json!(name));
                        detail.insert("values".into(), json!(vals));
                    } else if let Some(v) = blk.env.get(name) {
                        detail.insert("scalar".into(), json!(name));
                        detail.insert("value".into(), json!(v));
                    } else {
                        return self.fail(blk, path, format!("nothing named {name:?} to print"));
                    }
                }
                self.record(blk, "Print", Value::Object(detail));
            }
        }
        Ok(())
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// The gcd rule for picking a byte-granular load layout: `n` bytes per thread
/// across `T` threads becomes `local(n2).spatial(T).local(n1)` with
/// `n1 = gcd(n, 16)` and `n2 = n / n1`.
pub fn compatible_u8_layout(n_bytes_per_thread: usize, threads: usize) -> Layout {
    let n1 = gcd(n_bytes_per_thread, 16);
    let n2 = n_bytes_per_thread / n1;
    Layout::local(&[n2])
        .and_then(|l| l.compose(&Layout::spatial(&[threads])?))
        .and_then(|l| l.compose(&Layout::local(&[n1])?))
        .expect("1-d primitives always compose")
}

/// Pick a register layout for a `dtype[BK, BN]` weight tile: the largest
/// power-of-two thread count T ≤ 32 whose per-thread share is whole bytes,
/// with threads split across the tile as `spatial(t0, T/t0).local(..)`.
pub fn default_weight_layout(bk: usize, bn: usize, dtype: ScalarType) -> Result<Layout, RunError> {
    let bits = dtype.bits() as usize;
    for shift in (0..=5usize).rev() {
        let threads = 1usize << shift;
        if bk * bn % threads != 0 || (bk * bn / threads) * bits % 8 != 0 {
            continue;
        }
        let t0 = gcd(threads, bk);
        let t1 = threads / t0;
        if bn % t1 != 0 {
            continue;
        }
        return Layout::spatial(&[t0, t1])
            .and_then(|l| l.compose(&Layout::local(&[bk / t0, bn / t1])?))
            .map_err(|e| RunError::Pipeline(e.to_string()));
    }
    Err(RunError::Pipeline(format!(
        "no whole-byte thread split for a {bk}x{bn} tile of {dtype}"
    )))
}

/// Pre-transform a `dtype[K, N]` weight tensor into tiles of contiguous u8
/// streams, ordered so that a plain byte-granular LoadGlobal followed by
/// Reinterpret lands every weight in the register slot that `reg_layout`
/// assigns it. Output dims: `[K/BK, N/BN, BK·BN·bits/8]`.
pub fn transform_weights(
    w: &Tensor,
    bk: usize,
    bn: usize,
    reg_layout: &Layout,
) -> Result<Tensor, RunError> {
    let err = |m: String| RunError::Pipeline(m);
    if w.dims.len() != 2 {
        return Err(err(format!("weights must be 2-d, got {:?}", w.dims)));
    }
    let (k, n) = (w.dims[0], w.dims[1]);
    if k % bk != 0 || n % bn != 0 {
        return Err(err(format!("tile {bk}x{bn} does not divide {k}x{n}")));
    }
    if reg_layout.shape() != [bk, bn] {
        return Err(err(format!(
            "register layout shape {:?} != tile {bk}x{bn}",
            reg_layout.shape()
        )));
    }
    let bits = w.dtype().bits() as usize;
    let threads = reg_layout.num_threads();
    let locals = reg_layout.num_locals();
    let bits_per_thread = locals * bits;
    if bits_per_thread % 8 != 0 {
        return Err(err(format!(
            "{locals} weights x {bits} bits = {bits_per_thread} bits per thread, not whole bytes"
        )));
    }
    let n_bytes = bits_per_thread / 8;
    let u8_layout = compatible_u8_layout(n_bytes, threads);
    let tile_bytes = threads * n_bytes;
    let (tk, tn) = (k / bk, n / bn);
    let mut out = vec![0u8; tk * tn * tile_bytes];
    let mut stream = vec![0u8; n_bytes];
    for kb in 0..tk {
        for nb in 0..tn {
            let base = (kb * tn + nb) * tile_bytes;
            for t in 0..threads {
                // Assemble thread t's weight bit string in slot order...
                stream.iter_mut().for_each(|b| *b = 0);
                for i in 0..locals {
                    let idx = reg_layout.evaluate(t, i).expect("in range");
                    let src = (kb * bk + idx[0]) * n + nb * bn + idx[1];
                    let raw = w.data.load_element(src).expect("bounded");
                    crate::packed::store_bits(&mut stream, i * bits, w.dtype().bits(), raw);
                }
                // ...then scatter its bytes to where the u8 load expects them.
                for (i, byte) in stream.iter().enumerate() {
                    let j = u8_layout.evaluate(t, i).expect("in range")[0];
                    out[base + j] = *byte;
                }
            }
        }
    }
    let count = out.len();
    Ok(Tensor::new(
        vec![tk, tn, tile_bytes],
        PackedBuffer::from_bytes(ScalarType::u8t(), count, out).expect("sized"),
    )
    .expect("consistent dims"))
}

/// Reference matmul used for verification: dequantize the whole weight tensor
/// to f32, run the naive triple loop with f32 accumulation in ascending k,
/// and round to f16. Shares no code with the interpreter's Mma path.
pub fn oracle_matmul(
    a: &[f16],
    m: usize,
    kdim: usize,
    w: &Tensor,
    scales: &[f64],
    group_size: usize,
) -> Result<Vec<f16>, RunError> {
    if w.dims.len() != 2 || w.dims[0] != kdim {
        return Err(RunError::Pipeline(format!(
            "weights {:?} do not conform with K={kdim}",
            w.dims
        )));
    }
    if a.len() != m * kdim {
        return Err(RunError::Pipeline("A has the wrong element count".into()));
    }
    let n = w.dims[1];
    let deq = w
        .data
        .dequantize(scales, group_size)
        .map_err(|e| RunError::Pipeline(e.to_string()))?;
    let wq: Vec<f32> = deq.into_iter().map(|v| v as f32).collect();
    let mut out = Vec::with_capacity(m * n);
    for mi in 0..m {
        for ni in 0..n {
            let mut acc = 0.0f32;
            for ki in 0..kdim {
                acc += a[mi * kdim + ki].to_f32() * wq[ki * n + ni];
            }
            out.push(f16::from_f32(acc));
        }
    }
    Ok(out)
}
