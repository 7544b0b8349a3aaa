//! ropsmith: ROP gadget discovery, semantic cataloging, and chain compilation
//! for x86-64 ELF binaries.
//!
//! The pipeline: load an image, scan it Galileo-style for gadgets, determine
//! each gadget's semantics (frame geometry, typed claims, summaries), verify
//! claims symbolically, build a queryable catalog, then compile payloads
//! (register setting, memory writes, syscalls, calls) into concrete stack
//! layouts. A built-in emulator validates every compiled chain end to end.

pub mod badchars;
pub mod binfront;
pub mod catalog;
pub mod chaincomp;
pub mod chainemu;
pub mod cli;
pub mod gadgetscan;
pub mod platform;
pub mod regs;
pub mod semantics;
pub mod sym;
pub mod verifier;

pub use binfront::{load_image, BinaryImage};
pub use gadgetscan::{galileo_scan, Gadget, ScanConfig};
