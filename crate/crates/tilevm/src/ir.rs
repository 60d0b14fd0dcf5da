//! Thread-block-level virtual machine IR: programs, structured control flow,
//! the block-level instruction set, and static validation.
//!
//! Programs are exchanged as JSON: `{name, grid, params, body}` with
//! instructions as `{op, ...}` objects, expressions as strings and register
//! layouts in the layout text grammar (see `docs/program-schema.md`).

use crate::dtype::{ScalarKind, ScalarType};
use crate::expr::{parse_expr, Expr, ExprError};
use crate::layout::{parse_layout, Layout};
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use std::collections::HashMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IrError {
    #[error("program parse error: {0}")]
    Parse(String),
    #[error("launch error: {0}")]
    Launch(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Serialize a [`Layout`] as its text-grammar expression inside programs.
mod layout_expr {
    use super::*;

    pub fn serialize<S: Serializer>(l: &Layout, s: S) -> Result<S::Ok, S::Error> {
        match l.to_expr() {
            Some(e) => s.serialize_str(&e),
            None => Err(serde::ser::Error::custom(
                "layout has no primitive-product expression",
            )),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Layout, D::Error> {
        let s = String::deserialize(d)?;
        parse_layout(&s).map_err(de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamType {
    Scalar(ScalarType),
    Pointer(ScalarType),
}

impl fmt::Display for ParamType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamType::Scalar(t) => write!(f, "{t}"),
            ParamType::Pointer(t) => write!(f, "*{t}"),
        }
    }
}

impl Serialize for ParamType {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ParamType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<ParamType, D::Error> {
        let s = String::deserialize(d)?;
        if let Some(rest) = s.strip_prefix('*') {
            Ok(ParamType::Pointer(rest.parse().map_err(de::Error::custom)?))
        } else {
            Ok(ParamType::Scalar(s.parse().map_err(de::Error::custom)?))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ParamType,
}

/// Out-of-bounds policy for `LoadGlobal`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundsMode {
    #[default]
    Strict,
    ZeroFill,
}

/// Scalar operand of an elementwise op: a register tensor name or an
/// immediate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Operand {
    Tensor(String),
    Imm(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapOp {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
}

impl MapOp {
    pub fn arity(self) -> usize {
        match self {
            MapOp::Neg => 1,
            _ => 2,
        }
    }
}

/// The thread-block-level instruction set. Register-producing instructions
/// write to `out`; naming an existing register makes the write in-place and
/// requires an exact dtype/layout match.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op")]
pub enum Instruction {
    /// Bind the block's grid coordinates to scalar names.
    BlockIndices { out: Vec<String> },
    /// Bind a pointer parameter plus dtype/shape to a bounds-checked global
    /// region.
    GlobalView {
        ptr: String,
        dtype: ScalarType,
        shape: Vec<Expr>,
        out: String,
    },
    /// Allocate a tensor in the machine's global workspace.
    AllocateGlobal {
        dtype: ScalarType,
        shape: Vec<Expr>,
        out: String,
    },
    /// Allocate a tensor in the block's shared memory.
    AllocateShared {
        dtype: ScalarType,
        shape: Vec<Expr>,
        out: String,
    },
    /// Allocate a register tensor, zero or constant filled.
    AllocateRegister {
        dtype: ScalarType,
        #[serde(with = "layout_expr")]
        layout: Layout,
        out: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        init: Option<f64>,
    },
    /// Gather a tile from a global view into registers.
    LoadGlobal {
        src: String,
        offsets: Vec<Expr>,
        dtype: ScalarType,
        #[serde(with = "layout_expr")]
        layout: Layout,
        out: String,
        #[serde(default, skip_serializing_if = "is_default_bounds")]
        bounds: BoundsMode,
    },
    /// Scatter a register tensor into a global view.
    StoreGlobal {
        dst: String,
        offsets: Vec<Expr>,
        src: String,
    },
    /// Synchronous tile copy from a global view into a shared tensor.
    CopyGlobalToShared {
        src: String,
        offsets: Vec<Expr>,
        dst: String,
    },
    /// Gather a tile from a shared tensor into registers.
    LoadShared {
        src: String,
        offsets: Vec<Expr>,
        dtype: ScalarType,
        #[serde(with = "layout_expr")]
        layout: Layout,
        out: String,
    },
    /// Scatter a register tensor into a shared tensor.
    StoreShared {
        dst: String,
        offsets: Vec<Expr>,
        src: String,
    },
    /// Retype a register tensor without moving any bits; requires equal
    /// thread count and bits per thread.
    Reinterpret {
        src: String,
        dtype: ScalarType,
        #[serde(with = "layout_expr")]
        layout: Layout,
        out: String,
    },
    /// Elementwise dtype conversion, layout preserved.
    Cast {
        src: String,
        dtype: ScalarType,
        out: String,
    },
    /// D = A * B + C with f32 accumulation in ascending-k order.
    Mma {
        a: String,
        b: String,
        c: String,
        out: String,
    },
    /// Map-style arithmetic over register tensors and immediates.
    Elementwise {
        func: MapOp,
        args: Vec<Operand>,
        out: String,
    },
    /// Barrier marker; a recorded no-op under sequential block semantics.
    Synchronize {},
    /// Append a tensor snapshot or message to the trace.
    Print {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        src: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        msg: Option<String>,
    },
}

fn is_default_bounds(b: &BoundsMode) -> bool {
    *b == BoundsMode::Strict
}

impl Instruction {
    pub fn opcode(&self) -> &'static str {
        match self {
            Instruction::BlockIndices { .. } => "BlockIndices",
            Instruction::GlobalView { .. } => "GlobalView",
            Instruction::AllocateGlobal { .. } => "AllocateGlobal",
            Instruction::AllocateShared { .. } => "AllocateShared",
            Instruction::AllocateRegister { .. } => "AllocateRegister",
            Instruction::LoadGlobal { .. } => "LoadGlobal",
            Instruction::StoreGlobal { .. } => "StoreGlobal",
            Instruction::CopyGlobalToShared { .. } => "CopyGlobalToShared",
            Instruction::LoadShared { .. } => "LoadShared",
            Instruction::StoreShared { .. } => "StoreShared",
            Instruction::Reinterpret { .. } => "Reinterpret",
            Instruction::Cast { .. } => "Cast",
            Instruction::Mma { .. } => "Mma",
            Instruction::Elementwise { .. } => "Elementwise",
            Instruction::Synchronize {} => "Synchronize",
            Instruction::Print { .. } => "Print",
        }
    }
}

/// A structured statement: control flow or a single instruction.
#[derive(Debug, Clone)]
pub enum Stmt {
    If {
        cond: Expr,
        then_body: Vec<Stmt>,
        else_body: Vec<Stmt>,
    },
    For {
        var: String,
        start: Expr,
        stop: Expr,
        step: Expr,
        body: Vec<Stmt>,
    },
    While {
        cond: Expr,
        body: Vec<Stmt>,
    },
    Instr(Instruction),
}

// Hand-rolled statement (de)serialization so parse failures keep opcode
// context instead of serde's untagged "no variant matched".
impl Serialize for Stmt {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        match self {
            Stmt::Instr(i) => i.serialize(s),
            Stmt::If {
                cond,
                then_body,
                else_body,
            } => {
                let mut m = s.serialize_map(None)?;
                m.serialize_entry("if", cond)?;
                m.serialize_entry("then", then_body)?;
                if !else_body.is_empty() {
                    m.serialize_entry("else", else_body)?;
                }
                m.end()
            }
            Stmt::For {
                var,
                start,
                stop,
                step,
                body,
            } => {
                let mut m = s.serialize_map(None)?;
                m.serialize_entry("for", var)?;
                m.serialize_entry("start", start)?;
                m.serialize_entry("stop", stop)?;
                m.serialize_entry("step", step)?;
                m.serialize_entry("body", body)?;
                m.end()
            }
            Stmt::While { cond, body } => {
                let mut m = s.serialize_map(None)?;
                m.serialize_entry("while", cond)?;
                m.serialize_entry("body", body)?;
                m.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for Stmt {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Stmt, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        stmt_from_value(&v).map_err(de::Error::custom)
    }
}

fn expr_from(v: &serde_json::Value, what: &str) -> Result<Expr, String> {
    match v {
        serde_json::Value::Number(n) => Ok(Expr::Lit(
            n.as_i64().ok_or_else(|| format!("{what}: non-integer literal"))?,
        )),
        serde_json::Value::String(s) => parse_expr(s).map_err(|e| format!("{what}: {e}")),
        other => Err(format!("{what}: expected expression, got {other}")),
    }
}

fn body_from(v: &serde_json::Value, what: &str) -> Result<Vec<Stmt>, String> {
    let arr = v
        .as_array()
        .ok_or_else(|| format!("{what}: expected a statement list"))?;
    arr.iter().map(|s| stmt_from_value(s)).collect()
}

fn stmt_from_value(v: &serde_json::Value) -> Result<Stmt, String> {
    let obj = v.as_object().ok_or("statement must be a JSON object")?;
    if let Some(cond) = obj.get("if") {
        return Ok(Stmt::If {
            cond: expr_from(cond, "if condition")?,
            then_body: body_from(obj.get("then").ok_or("if: missing `then`")?, "then")?,
            else_body: match obj.get("else") {
                Some(e) => body_from(e, "else")?,
                None => vec![],
            },
        });
    }
    if let Some(var) = obj.get("for") {
        return Ok(Stmt::For {
            var: var.as_str().ok_or("for: variable must be a string")?.to_string(),
            start: match obj.get("start") {
                Some(e) => expr_from(e, "for start")?,
                None => Expr::Lit(0),
            },
            stop: expr_from(obj.get("stop").ok_or("for: missing `stop`")?, "for stop")?,
            step: match obj.get("step") {
                Some(e) => expr_from(e, "for step")?,
                None => Expr::Lit(1),
            },
            body: body_from(obj.get("body").ok_or("for: missing `body`")?, "for body")?,
        });
    }
    if let Some(cond) = obj.get("while") {
        return Ok(Stmt::While {
            cond: expr_from(cond, "while condition")?,
            body: body_from(obj.get("body").ok_or("while: missing `body`")?, "while body")?,
        });
    }
    let op = obj
        .get("op")
        .and_then(|o| o.as_str())
        .ok_or("statement is neither control flow nor an instruction with `op`")?;
    serde_json::from_value::<Instruction>(v.clone())
        .map(Stmt::Instr)
        .map_err(|e| format!("instruction {op:?}: {e}"))
}

/// A thread-block-level program: name, grid shape, parameters and body.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Program {
    pub name: String,
    pub grid: Vec<Expr>,
    pub params: Vec<Param>,
    pub body: Vec<Stmt>,
}

impl Program {
    /// Parse from the canonical JSON form.
    pub fn parse(text: &str) -> Result<Program, IrError> {
        serde_json::from_str(text).map_err(|e| IrError::Parse(e.to_string()))
    }

    /// Serialize to the canonical JSON form; `parse ∘ serialize` is identity.
    pub fn serialize(&self) -> String {
        serde_json::to_string_pretty(self).expect("program serialization is total")
    }

    /// Evaluate the grid shape under launch arguments; extents must be
    /// positive.
    pub fn eval_grid(&self, args: &HashMap<String, i64>) -> Result<Vec<usize>, IrError> {
        self.grid
            .iter()
            .map(|e| {
                let v = e.eval(args).map_err(|err| IrError::Launch(err.to_string()))?;
                if v <= 0 {
                    return Err(IrError::Launch(format!(
                        "grid extent {e} evaluated to {v}"
                    )));
                }
                Ok(v as usize)
            })
            .collect()
    }
}

/// Categories of validation diagnostics, stable for tests and tooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagKind {
    UndefinedName,
    Redefinition,
    GridExpr,
    ScopeMisuse,
    RankMismatch,
    ShapeMismatch,
    DtypeMismatch,
    LayoutMismatch,
    ReinterpretIncompatible,
    MmaContract,
    ElementwiseContract,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostic {
    pub kind: DiagKind,
    pub path: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {:?}: {}", self.path, self.kind, self.message)
    }
}

/// Static symbol classes tracked by the validator.
#[derive(Debug, Clone, PartialEq)]
enum Sym {
    Scalar,
    GlobalView { dtype: ScalarType, rank: usize },
    Shared { dtype: ScalarType, rank: usize, shape: Option<Vec<usize>> },
    Register { dtype: ScalarType, layout: Layout },
}

struct Validator {
    diags: Vec<Diagnostic>,
}

impl Validator {
    fn diag(&mut self, kind: DiagKind, path: &str, message: String) {
        self.diags.push(Diagnostic {
            kind,
            path: path.to_string(),
            message,
        });
    }

    fn check_exprs(&mut self, exprs: &[Expr], scope: &HashMap<String, Sym>, path: &str) {
        let mut vars = Vec::new();
        for e in exprs {
            e.free_vars(&mut vars);
        }
        for v in vars {
            match scope.get(&v) {
                Some(Sym::Scalar) => {}
                Some(_) => self.diag(
                    DiagKind::ScopeMisuse,
                    path,
                    format!("{v:?} names a tensor where a scalar is required"),
                ),
                None => self.diag(
                    DiagKind::UndefinedName,
                    path,
                    format!("undefined scalar {v:?}"),
                ),
            }
        }
    }

    /// Register a definition; an existing name is an in-place destination and
    /// must match exactly.
    fn define(&mut self, scope: &mut HashMap<String, Sym>, name: &str, sym: Sym, path: &str) {
        match scope.get(name) {
            None => {
                scope.insert(name.to_string(), sym);
            }
            Some(existing) if *existing == sym => {}
            Some(existing) => self.diag(
                DiagKind::Redefinition,
                path,
                format!("{name:?} already defined as {existing:?}, incompatible with {sym:?}"),
            ),
        }
    }

    fn register(
        &mut self,
        scope: &HashMap<String, Sym>,
        name: &str,
        path: &str,
    ) -> Option<(ScalarType, Layout)> {
        match scope.get(name) {
            Some(Sym::Register { dtype, layout }) => Some((*dtype, layout.clone())),
            Some(other) => {
                self.diag(
                    DiagKind::ScopeMisuse,
                    path,
                    format!("{name:?} is {other:?}, expected a register tensor"),
                );
                None
            }
            None => {
                self.diag(
                    DiagKind::UndefinedName,
                    path,
                    format!("undefined register tensor {name:?}"),
                );
                None
            }
        }
    }

    fn static_shape(exprs: &[Expr]) -> Option<Vec<usize>> {
        exprs
            .iter()
            .map(|e| match e {
                Expr::Lit(v) if *v > 0 => Some(*v as usize),
                _ => None,
            })
            .collect()
    }

    fn instr(&mut self, ins: &Instruction, scope: &mut HashMap<String, Sym>, path: &str) {
        match ins {
            Instruction::BlockIndices { out } => {
                for name in out {
                    self.define(scope, name, Sym::Scalar, path);
                }
            }
            Instruction::GlobalView { ptr, dtype, shape, out } => {
                match scope.get(ptr) {
                    Some(Sym::Scalar) => {}
                    Some(other) => self.diag(
                        DiagKind::ScopeMisuse,
                        path,
                        format!("GlobalView pointer {ptr:?} is {other:?}"),
                    ),
                    None => self.diag(
                        DiagKind::UndefinedName,
                        path,
                        format!("undefined pointer parameter {ptr:?}"),
                    ),
                }
                self.check_exprs(shape, scope, path);
                self.define(
                    scope,
                    out,
                    Sym::GlobalView { dtype: *dtype, rank: shape.len() },
                    path,
                );
            }
            Instruction::AllocateGlobal { dtype, shape, out } => {
                self.check_exprs(shape, scope, path);
                self.define(
                    scope,
                    out,
                    Sym::GlobalView { dtype: *dtype, rank: shape.len() },
                    path,
                );
            }
            Instruction::AllocateShared { dtype, shape, out } => {
                self.check_exprs(shape, scope, path);
                self.define(
                    scope,
                    out,
                    Sym::Shared {
                        dtype: *dtype,
                        rank: shape.len(),
                        shape: Self::static_shape(shape),
                    },
                    path,
                );
            }
            Instruction::AllocateRegister { dtype, layout, out, .. } => {
                self.define(
                    scope,
                    out,
                    Sym::Register { dtype: *dtype, layout: layout.clone() },
                    path,
                );
            }
            Instruction::LoadGlobal { src, offsets, dtype, layout, out, .. } => {
                self.check_exprs(offsets, scope, path);
                match scope.get(src) {
                    Some(Sym::GlobalView { dtype: vd, rank }) => {
                        if offsets.len() != *rank || layout.rank() != *rank {
                            self.diag(
                                DiagKind::RankMismatch,
                                path,
                                format!(
                                    "view rank {rank}, offsets rank {}, tile rank {}",
                                    offsets.len(),
                                    layout.rank()
                                ),
                            );
                        }
                        if vd != dtype {
                            self.diag(
                                DiagKind::DtypeMismatch,
                                path,
                                format!("view dtype {vd}, register dtype {dtype}"),
                            );
                        }
                    }
                    Some(other) => self.diag(
                        DiagKind::ScopeMisuse,
                        path,
                        format!("LoadGlobal source {src:?} is {other:?}"),
                    ),
                    None => self.diag(
                        DiagKind::UndefinedName,
                        path,
                        format!("undefined global view {src:?}"),
                    ),
                }
                self.define(
                    scope,
                    out,
                    Sym::Register { dtype: *dtype, layout: layout.clone() },
                    path,
                );
            }
            Instruction::StoreGlobal { dst, offsets, src } => {
                self.check_exprs(offsets, scope, path);
                let reg = self.register(scope, src, path);
                match scope.get(dst) {
                    Some(Sym::GlobalView { dtype: vd, rank }) => {
                        if let Some((rd, layout)) = reg {
                            if layout.rank() != *rank || offsets.len() != *rank {
                                self.diag(
                                    DiagKind::RankMismatch,
                                    path,
                                    format!(
                                        "view rank {rank}, offsets rank {}, register rank {}",
                                        offsets.len(),
                                        layout.rank()
                                    ),
                                );
                            }
                            if rd != *vd {
                                self.diag(
                                    DiagKind::DtypeMismatch,
                                    path,
                                    format!("register dtype {rd}, view dtype {vd}"),
                                );
                            }
                        }
                    }
                    Some(other) => self.diag(
                        DiagKind::ScopeMisuse,
                        path,
                        format!("StoreGlobal destination {dst:?} is {other:?}"),
                    ),
                    None => self.diag(
                        DiagKind::UndefinedName,
                        path,
                        format!("undefined global view {dst:?}"),
                    ),
                }
            }
            Instruction::CopyGlobalToShared { src, offsets, dst } => {
                self.check_exprs(offsets, scope, path);
                let src_dtype = match scope.get(src) {
                    Some(Sym::GlobalView { dtype, .. }) => Some(*dtype),
                    Some(other) => {
                        self.diag(
                            DiagKind::ScopeMisuse,
                            path,
                            format!("copy source {src:?} is {other:?}"),
                        );
                        None
                    }
                    None => {
                        self.diag(
                            DiagKind::UndefinedName,
                            path,
                            format!("undefined global view {src:?}"),
                        );
                        None
                    }
                };
                match scope.get(dst) {
                    Some(Sym::Shared { dtype, .. }) => {
                        if let Some(sd) = src_dtype {
                            if sd != *dtype {
                                self.diag(
                                    DiagKind::DtypeMismatch,
                                    path,
                                    format!("copy from {sd} view into {dtype} shared tensor"),
                                );
                            }
                        }
                    }
                    Some(other) => self.diag(
                        DiagKind::ScopeMisuse,
                        path,
                        format!("copy destination {dst:?} is {other:?}"),
                    ),
                    None => self.diag(
                        DiagKind::UndefinedName,
                        path,
                        format!("undefined shared tensor {dst:?}"),
                    ),
                }
            }
            Instruction::LoadShared { src, offsets, dtype, layout, out } => {
                self.check_exprs(offsets, scope, path);
                match scope.get(src) {
                    Some(Sym::Shared { dtype: sd, rank, .. }) => {
                        if sd != dtype {
                            self.diag(
                                DiagKind::DtypeMismatch,
                                path,
                                format!("shared dtype {sd}, register dtype {dtype}"),
                            );
                        }
                        if offsets.len() != *rank || layout.rank() != *rank {
                            self.diag(
                                DiagKind::RankMismatch,
                                path,
                                format!("shared rank {rank} vs tile rank {}", layout.rank()),
                            );
                        }
                    }
                    Some(other) => self.diag(
                        DiagKind::ScopeMisuse,
                        path,
                        format!("LoadShared source {src:?} is {other:?}"),
                    ),
                    None => self.diag(
                        DiagKind::UndefinedName,
                        path,
                        format!("undefined shared tensor {src:?}"),
                    ),
                }
                self.define(
                    scope,
                    out,
                    Sym::Register { dtype: *dtype, layout: layout.clone() },
                    path,
                );
            }
            Instruction::StoreShared { dst, offsets, src } => {
                self.check_exprs(offsets, scope, path);
                let reg = self.register(scope, src, path);
                match scope.get(dst) {
                    Some(Sym::Shared { dtype, .. }) => {
                        if let Some((rd, _)) = reg {
                            if rd != *dtype {
                                self.diag(
                                    DiagKind::DtypeMismatch,
                                    path,
                                    format!("register dtype {rd}, shared dtype {dtype}"),
                                );
                            }
                        }
                    }
                    Some(other) => self.diag(
                        DiagKind::ScopeMisuse,
                        path,
                        format!("StoreShared destination {dst:?} is {other:?}"),
                    ),
                    None => self.diag(
                        DiagKind::UndefinedName,
                        path,
                        format!("undefined shared tensor {dst:?}"),
                    ),
                }
            }
            Instruction::Reinterpret { src, dtype, layout, out } => {
                if let Some((sd, sl)) = self.register(scope, src, path) {
                    let src_bits = sl.num_locals() * sd.bits() as usize;
                    let dst_bits = layout.num_locals() * dtype.bits() as usize;
                    if sl.num_threads() != layout.num_threads() || src_bits != dst_bits {
                        self.diag(
                            DiagKind::ReinterpretIncompatible,
                            path,
                            format!(
                                "source: {} threads x {src_bits} bits, target: {} threads x {dst_bits} bits",
                                sl.num_threads(),
                                layout.num_threads()
                            ),
                        );
                    }
                }
                self.define(
                    scope,
                    out,
                    Sym::Register { dtype: *dtype, layout: layout.clone() },
                    path,
                );
            }
            Instruction::Cast { src, dtype, out } => {
                if let Some((_, layout)) = self.register(scope, src, path) {
                    self.define(
                        scope,
                        out,
                        Sym::Register { dtype: *dtype, layout },
                        path,
                    );
                }
            }
            Instruction::Mma { a, b, c, out } => {
                let ra = self.register(scope, a, path);
                let rb = self.register(scope, b, path);
                let rc = self.register(scope, c, path);
                if let (Some((da, la)), Some((db, lb)), Some((dc, lc))) = (ra, rb, rc) {
                    for (name, d) in [(a, da), (b, db)] {
                        let std_float =
                            d.kind() == ScalarKind::Float && d.bits() >= 16;
                        if !std_float {
                            self.diag(
                                DiagKind::MmaContract,
                                path,
                                format!(
                                    "operand {name:?} has dtype {d}; low-precision inputs must be Cast to a standard float first"
                                ),
                            );
                        }
                    }
                    if dc != ScalarType::f32() {
                        self.diag(
                            DiagKind::MmaContract,
                            path,
                            format!("accumulator {c:?} must be f32, got {dc}"),
                        );
                    }
                    let (sa, sb, sc) = (la.shape(), lb.shape(), lc.shape());
                    let conforms = sa.len() == 2
                        && sb.len() == 2
                        && sc.len() == 2
                        && sa[1] == sb[0]
                        && sa[0] == sc[0]
                        && sb[1] == sc[1];
                    if !conforms {
                        self.diag(
                            DiagKind::MmaContract,
                            path,
                            format!("shapes do not conform: A{sa:?} B{sb:?} C{sc:?}"),
                        );
                    }
                    self.define(
                        scope,
                        out,
                        Sym::Register { dtype: dc, layout: lc },
                        path,
                    );
                }
            }
            Instruction::Elementwise { func, args, out } => {
                if args.len() != func.arity() {
                    self.diag(
                        DiagKind::ElementwiseContract,
                        path,
                        format!("{func:?} takes {} args, got {}", func.arity(), args.len()),
                    );
                }
                let mut sig: Option<(ScalarType, Layout)> = None;
                for arg in args {
                    if let Operand::Tensor(name) = arg {
                        if let Some((d, l)) = self.register(scope, name, path) {
                            match &sig {
                                None => sig = Some((d, l)),
                                Some((d0, l0)) => {
                                    if *d0 != d || !l0.equivalent(&l) {
                                        self.diag(
                                            DiagKind::LayoutMismatch,
                                            path,
                                            format!(
                                                "elementwise operands disagree: {d0}/{l0} vs {d}/{l}"
                                            ),
                                        );
                                    }
                                }
                            }
                        }
                    }
                }
                match sig {
                    Some((d, l)) => self.define(
                        scope,
                        out,
                        Sym::Register { dtype: d, layout: l },
                        path,
                    ),
                    None => self.diag(
                        DiagKind::ElementwiseContract,
                        path,
                        "elementwise needs at least one tensor operand".into(),
                    ),
                }
            }
            Instruction::Synchronize {} => {}
            Instruction::Print { src, .. } => {
                if let Some(name) = src {
                    if !scope.contains_key(name) {
                        self.diag(
                            DiagKind::UndefinedName,
                            path,
                            format!("Print of undefined name {name:?}"),
                        );
                    }
                }
            }
        }
    }

    fn body(&mut self, body: &[Stmt], scope: &mut HashMap<String, Sym>, path: &str) {
        for (k, stmt) in body.iter().enumerate() {
            match stmt {
                Stmt::Instr(ins) => {
                    let p = format!("{path}[{k}].{}", ins.opcode());
                    self.instr(ins, scope, &p);
                }
                Stmt::If { cond, then_body, else_body } => {
                    let p = format!("{path}[{k}].if");
                    self.check_exprs(std::slice::from_ref(cond), scope, &p);
                    // Branch-local definitions stay branch-local.
                    let mut then_scope = scope.clone();
                    self.body(then_body, &mut then_scope, &format!("{p}.then"));
                    let mut else_scope = scope.clone();
                    self.body(else_body, &mut else_scope, &format!("{p}.else"));
                }
                Stmt::For { var, start, stop, step, body } => {
                    let p = format!("{path}[{k}].for");
                    self.check_exprs(
                        &[start.clone(), stop.clone(), step.clone()],
                        scope,
                        &p,
                    );
                    let mut inner = scope.clone();
                    self.define(&mut inner, var, Sym::Scalar, &p);
                    self.body(body, &mut inner, &p);
                }
                Stmt::While { cond, body } => {
                    let p = format!("{path}[{k}].while");
                    self.check_exprs(std::slice::from_ref(cond), scope, &p);
                    let mut inner = scope.clone();
                    self.body(body, &mut inner, &p);
                }
            }
        }
    }
}

/// Statically validate a program; an empty Vec means well-formed.
pub fn validate(p: &Program) -> Vec<Diagnostic> {
    let mut v = Validator { diags: vec![] };
    // Grid expressions may reference only parameters and literals.
    let param_names: Vec<&str> = p.params.iter().map(|q| q.name.as_str()).collect();
    let mut vars = Vec::new();
    for g in &p.grid {
        g.free_vars(&mut vars);
    }
    for name in vars {
        if !param_names.contains(&name.as_str()) {
            v.diag(
                DiagKind::GridExpr,
                "grid",
                format!("grid shape references non-parameter {name:?}"),
            );
        }
    }
    let mut scope: HashMap<String, Sym> = HashMap::new();
    for q in &p.params {
        if scope.insert(q.name.clone(), Sym::Scalar).is_some() {
            v.diag(
                DiagKind::Redefinition,
                "params",
                format!("duplicate parameter {:?}", q.name),
            );
        }
    }
    v.body(&p.body, &mut scope, "body");
    v.diags
}
