//! Frozen decoder behavior. The golden file was generated from seeded random
//! byte windows and cross-checked against GNU objdump (10,000 samples, zero
//! mismatches) with tools/check_decoder_against_objdump.py at fixture
//! generation time; this test pins the decoder to that agreed behavior.

use ropsmith::binfront::decode_instruction;

const GOLDEN: &str = include_str!("golden/decoder_samples.tsv");

#[test]
fn decoder_matches_frozen_reference_samples() {
    let mut checked = 0;
    for line in GOLDEN.lines() {
        let mut parts = line.split('\t');
        let bytes = hex::decode(parts.next().unwrap()).unwrap();
        let len: u8 = parts.next().unwrap().parse().unwrap();
        let text = parts.next().unwrap();
        let i = decode_instruction(&bytes, 0, 0).unwrap_or_else(|e| {
            panic!("golden sample no longer decodes: {} ({e})", hex::encode(&bytes))
        });
        assert_eq!(i.len, len, "length drift on {}", hex::encode(&bytes));
        assert_eq!(i.to_string(), text, "text drift on {}", hex::encode(&bytes));
        checked += 1;
    }
    assert!(checked >= 2000);
}
