//! A desk-scale, CPU-executed model of tile-level GPU programming: an
//! algebraic layout system for register tensors distributed across threads,
//! arbitrary 1–8-bit data types with compact storage, a thread-block-level
//! instruction set, and a deterministic interpreter that runs low-precision
//! matmul programs and verifies them bit-for-bit against a dequantization
//! oracle.
//!
//! - [`layout`] — distributed layouts: primitives, Kronecker composition,
//!   division, evaluation/inversion.
//! - [`dtype`] — scalar types including sub-byte ints and minifloats.
//! - [`packed`] — gap-free bit packing and the TLUS tensor file format.
//! - [`expr`] / [`ir`] — the program format: integer expressions,
//!   instructions, static validation.
//! - [`interp`] — the virtual machine, the weight pipeline, and the oracle.
//! - [`demo`] — the built-in FP16 × quantized-weight matmul program.

pub mod demo;
pub mod dtype;
pub mod expr;
pub mod interp;
pub mod ir;
pub mod layout;
pub mod packed;
