# Copyright 2026 The Strata Authors
# SPDX-License-Identifier: Apache-2.0
"""End-to-end checks of the strata command line.

usage: test_cli.py STRATA_BINARY GOLDEN_HELP [--update-golden]
"""

import json
import os
import struct
import subprocess
import sys
import tempfile
import zlib

SUBCOMMANDS = ["data-gen", "train-tok", "train-dit", "reconstruct", "generate", "allocate", "eval", "serve"]

TINY = {
    "seed": 3,
    "tokenizer": {"patch_width": 16, "ae_width": 16, "ae_heads": 2, "ae_layers": 1},
    "dit": {"width": 16, "heads": 2, "layers": 1, "steps": 4},
    "dit_plan": {"steps": 20, "batch": 2, "log_every": 10},
}

failures = []


def check(cond, what):
    print(("ok   " if cond else "FAIL ") + what)
    if not cond:
        failures.append(what)


def run(binary, *args, cwd, expect=0):
    p = subprocess.run([binary, *args], cwd=cwd, capture_output=True, text=True)
    if p.returncode != expect:
        print(p.stdout, p.stderr, sep="\n")
    check(p.returncode == expect, f"exit {expect}: {' '.join(args)}")
    return p


def help_text(binary):
    out = [subprocess.run([binary, "--help"], capture_output=True, text=True, check=True).stdout]
    for sub in SUBCOMMANDS:
        out.append(subprocess.run([binary, sub, "--help"], capture_output=True, text=True, check=True).stdout)
    return "\n".join(out)


def read_latents(path):
    with open(os.path.join(path, "manifest.json")) as f:
        manifest = json.load(f)
    with open(os.path.join(path, "weights.bin"), "rb") as f:
        blob = f.read()
    entry = next(t for t in manifest["tensors"] if t["name"] == "values")
    count = 1
    for s in entry["shape"]:
        count *= s
    start = entry["byte_offset"]
    return manifest["config"], blob[start:start + 4 * count]


def constant_png(path, size, rgb):
    raw = b"".join(b"\x00" + bytes(rgb) * size for _ in range(size))

    def chunk(kind, data):
        body = kind + data
        return struct.pack(">I", len(data)) + body + struct.pack(">I", zlib.crc32(body) & 0xFFFFFFFF)

    with open(path, "wb") as f:
        f.write(b"\x89PNG\r\n\x1a\n")
        f.write(chunk(b"IHDR", struct.pack(">IIBBBBB", size, size, 8, 2, 0, 0, 0)))
        f.write(chunk(b"IDAT", zlib.compress(raw)))
        f.write(chunk(b"IEND", b""))


def main():
    binary, golden = os.path.abspath(sys.argv[1]), sys.argv[2]
    text = help_text(binary)
    if "--update-golden" in sys.argv:
        with open(golden, "w") as f:
            f.write(text)
        print("golden help updated")
        return 0
    with open(golden) as f:
        check(f.read() == text, "--help output matches the golden file")

    with tempfile.TemporaryDirectory() as d:
        with open(os.path.join(d, "tiny.json"), "w") as f:
            json.dump(TINY, f)

        # Corpus determinism and flag-over-config precedence.
        with open(os.path.join(d, "c5.json"), "w") as f:
            json.dump({"corpus": {"count": 5}}, f)
        run(binary, "--config", "c5.json", "data-gen", "--out", "a.json", cwd=d)
        run(binary, "--config", "c5.json", "data-gen", "--count", "7", "--out", "b.json", cwd=d)
        with open(os.path.join(d, "a.json")) as f:
            check(len(json.load(f)) == 5, "config sets the corpus size")
        with open(os.path.join(d, "b.json")) as f:
            check(len(json.load(f)) == 7, "flag overrides the config")
        run(binary, "data-gen", "--count", "8", "--out", "c1.json", cwd=d)
        run(binary, "data-gen", "--count", "8", "--out", "c2.json", cwd=d)
        run(binary, "--seed", "1", "data-gen", "--count", "8", "--out", "c3.json", cwd=d)
        read = lambda n: open(os.path.join(d, n), "rb").read()
        check(read("c1.json") == read("c2.json"), "data-gen is deterministic")
        check(read("c1.json") != read("c3.json"), "data-gen depends on --seed")

        # Tiny training so generation has checkpoints to load.
        run(binary, "--config", "tiny.json", "train-tok", "--corpus", "c1.json", "--steps", "8", "--batch", "2",
            "--heldout", "4", "--log-every", "4", "--out", "ck/tokenizer", cwd=d)
        p = run(binary, "--config", "tiny.json", "train-dit", "--tokenizer", "ck/tokenizer", "--corpus", "c1.json",
                "--out", "ck/dit", cwd=d)
        check(json.loads(p.stdout)["steps"] == 20, "train-dit takes its plan from the config")

        gen = ["--config", "tiny.json", "generate", "--ckpt-dir", "ck", "--cfg", "2"]
        run(binary, *gen, "--levels", "1", "--out", "g1", cwd=d)
        run(binary, *gen, "--levels", "4", "--out", "g4", cwd=d)
        run(binary, *gen, "--levels", "4", "--out", "g4b", cwd=d)
        cfg1, z1 = read_latents(os.path.join(d, "g1", "latents"))
        cfg4, z4 = read_latents(os.path.join(d, "g4", "latents"))
        n, dim = cfg4["levels"], cfg4["dim"]
        patches = len(cfg4["budget"])
        row = 4 * dim
        same = all(z1[(p * n) * row:(p * n + 1) * row] == z4[(p * n) * row:(p * n + 1) * row] for p in range(patches))
        check(same, "level-1 latents of --levels 1 and --levels 4 are bitwise equal")
        check(z1 != z4, "higher levels are generated with --levels 4")
        check(read("g4/sample.png") == read("g4b/sample.png"), "generate is deterministic under a fixed seed")
        run(binary, *gen, "--levels", "1", "--seed", "9", "--out", "g9", cwd=d)
        check(read_latents(os.path.join(d, "g9", "latents"))[1] != z1, "generate depends on --seed")

        p = run(binary, *gen, "--progressive", "--height", "64", "--width", "64", "--out", "gp", cwd=d)
        files = json.loads(p.stdout)["files"]
        check(files == [f"level_{i}.png" for i in range(1, 5)], "progressive writes one PNG per level")
        check(all(os.path.exists(os.path.join(d, "gp", f)) for f in files), "progressive PNGs exist")
        run(binary, *gen, "--grid-t", "2", "--fps", "2", "--levels", "1", "--out", "gv", cwd=d)
        check(len([f for f in os.listdir(os.path.join(d, "gv", "sample")) if f.endswith(".png")]) == 4, "video generation writes every frame")

        constant_png(os.path.join(d, "flat.png"), 32, (90, 140, 200))
        p = run(binary, "allocate", "--input", "flat.png", cwd=d)
        grid = json.loads(p.stdout)["tokens_per_patch"]
        check(all(t == 2 for r in grid for t in r), "allocate on a constant image gives the uniform target grid")

        p = run(binary, "reconstruct", "--tokenizer", "ck/tokenizer", "--input", "flat.png", "--levels", "2",
                "--out", "r.png", cwd=d)
        check("psnr" in json.loads(p.stdout) and os.path.exists(os.path.join(d, "r.png")), "reconstruct a PNG")
        p = run(binary, "eval", "--tokenizer", "ck/tokenizer", "--count", "4", "--multiscale", cwd=d)
        check(len(json.loads(p.stdout)["psnr_per_level"]) == 4, "eval reports PSNR per level")

        # Contract violations exit 1 with a message.
        for args in (["generate", "--bogus"], ["generate", "--ckpt-dir", "missing", "--out", "x"],
                     [*gen, "--levels", "5", "--out", "x"], [*gen, "--height", "30", "--out", "x"],
                     ["reconstruct", "--tokenizer", "ck/tokenizer", "--input", "nope.png"],
                     ["data-gen", "--count", "3"], []):
            p = run(binary, *args, cwd=d, expect=1)
            check(p.stderr.strip() != "", f"message on stderr for {' '.join(args) or '(no command)'}")

    print(f"{len(failures)} failure(s)")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
