//! Fixture-generation helper: decode seeded random byte windows and dump the
//! successes for cross-checking against a reference disassembler. See
//! tools/check_decoder_against_objdump.py.

use ropsmith::binfront::decode_instruction;
use ropsmith::semantics::splitmix64;

fn main() {
    let count: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(10_000);
    let mut emitted = 0usize;
    let mut cursor = 0x5EEDu64;
    let mut tries = 0usize;
    while emitted < count && tries < count * 400 {
        tries += 1;
        cursor = splitmix64(cursor);
        let len = 1 + (cursor % 15) as usize;
        let bytes: Vec<u8> = (0..len)
            .map(|i| (splitmix64(cursor ^ (0xB17E + i as u64)) & 0xFF) as u8)
            .collect();
        if let Ok(i) = decode_instruction(&bytes, 0, 0) {
            println!(
                "{}\t{}\t{}",
                hex::encode(&bytes[..i.len as usize]),
                i.len,
                i
            );
            emitted += 1;
        }
    }
    eprintln!("emitted {emitted} samples from {tries} windows");
}
