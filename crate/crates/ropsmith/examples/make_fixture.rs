//! Writes the kitchen-sink test image to a path, for CLI smoke runs.

#[path = "../tests/common/mod.rs"]
mod common;

fn main() {
    let path = std::env::args().nth(1).expect("usage: make_fixture <path>");
    let (_blob, elf) = common::rich_image_bytes();
    std::fs::write(&path, elf).unwrap();
}
