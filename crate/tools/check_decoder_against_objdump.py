#!/usr/bin/env python3
"""Cross-check the subset decoder against GNU objdump.

Reads tab-separated samples (hex_bytes, length, text) on stdin, lays every
sample out in one binary image at 16-byte-aligned offsets padded with int3,
disassembles the image once with objdump, and compares mnemonic, operands,
and consumed length at each sample offset.

Run at fixture-generation time:
    cargo run -p ropsmith --example gen_decoder_samples 10000 \
        | python3 tools/check_decoder_against_objdump.py
"""

import re
import subprocess
import sys
import tempfile

STRIDE = 32  # samples are <= 15 bytes


def normalize(text: str) -> str:
    t = text.strip().lower()
    # objdump spells out no-op rex prefixes; the semantics are unchanged
    t = re.sub(r"^rex(\.[a-z]+)? ", "", t)
    # the 0x90 nop encoding with rex bits displays as xchg; hardware treats
    # every 90-form as nop
    if t in ("xchg rax,rax", "xchg eax,eax"):
        t = "nop"

    t = t.replace("movabs", "mov")
    for noise in ("qword ptr ", "dword ptr ", "qword ptr", "dword ptr"):
        t = t.replace(noise, "")
    t = re.sub(r"\s+", " ", t)
    t = t.replace(" ,", ",").replace(", ", ",")
    t = t.replace("[ ", "[").replace(" ]", "]")
    # objdump renders "no index" SIB encodings with the riz pseudo-register
    t = re.sub(r"\+riz\*\d+", "", t)
    # canonicalize xchg operand order (objdump may swap them)
    m = re.match(r"^xchg (\S+),(\S+)$", t)
    if m:
        a, b = sorted([m.group(1), m.group(2)])
        t = f"xchg {a},{b}"
    # strip +0x0-style zero displacements and 0x-prefix widths
    t = re.sub(r"\+0x0\]", "]", t)
    # drop objdump's explicit *1 index scales
    t = t.replace("*1+", "+").replace("*1]", "]")
    return t


def norm_imm(t: str) -> str:
    """Map integer literals to one canonical decimal form.

    Sign-extension display differs between the decoders (objdump prints
    unsigned, the subset decoder prints signed); fold the all-ones upper half
    so 32- and 64-bit renderings of the same immediate agree.
    """

    def canon(value: int) -> str:
        v = value % (1 << 64)
        if v >> 32 == 0xFFFFFFFF:
            v &= 0xFFFFFFFF
        return str(v)

    def repl(m):
        tok = m.group(0)
        neg = tok.startswith("-")
        raw = tok.lstrip("-")
        value = int(raw, 16) if raw.startswith("0x") else int(raw)
        return canon(-value if neg else value)

    return re.sub(r"-?(?:0x[0-9a-f]+|\d+)", repl, t)


def main() -> int:
    samples = []
    for line in sys.stdin:
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 3:
            continue
        samples.append((bytes.fromhex(parts[0]), int(parts[1]), parts[2]))
    if not samples:
        print("no samples on stdin", file=sys.stderr)
        return 2

    image = bytearray()
    for raw, _, _ in samples:
        pad = STRIDE - len(raw)
        image += raw + b"\xcc" * pad

    with tempfile.NamedTemporaryFile(suffix=".bin") as f:
        f.write(image)
        f.flush()
        out = subprocess.run(
            [
                "objdump", "-D", "-b", "binary", "-m", "i386:x86-64",
                "-M", "intel", f.name,
            ],
            capture_output=True,
            text=True,
            check=True,
        ).stdout

    # offset -> (consumed_bytes, text); continuation lines carry bytes only
    ref = {}
    last_off = None
    for line in out.splitlines():
        m = re.match(r"^\s*([0-9a-f]+):\s*((?:[0-9a-f]{2} )+)\s*\t?(.*)$", line)
        if not m:
            continue
        off = int(m.group(1), 16)
        blen = len(m.group(2).split())
        text = m.group(3).strip()
        if text:
            ref[off] = (blen, text)
            last_off = off
        elif last_off is not None:
            old_len, old_text = ref[last_off]
            ref[last_off] = (old_len + blen, old_text)

    mismatches = 0
    for i, (raw, length, text) in enumerate(samples):
        off = i * STRIDE
        if off not in ref:
            print(f"sample {i}: objdump produced nothing at {off:#x}")
            mismatches += 1
            continue
        rlen, rtext = ref[off]
        if rlen != length:
            print(f"sample {i}: length {length} vs objdump {rlen}: {raw.hex()} "
                  f"({text!r} vs {rtext!r})")
            mismatches += 1
            continue
        a, b = norm_imm(normalize(text)), norm_imm(normalize(rtext))
        if a != b:
            print(f"sample {i}: text {a!r} vs objdump {b!r} ({raw.hex()})")
            mismatches += 1

    print(f"{len(samples)} samples, {mismatches} mismatches", file=sys.stderr)
    return 0 if mismatches == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
