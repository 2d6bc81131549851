"""Quick end-to-end check of the numdev Python bindings.

Build and install first:

    pip install ./crates/python --no-build-isolation
    python python/smoke_test.py
"""

import math
import struct

import numdev

SMALL = """
seeds = 2

[attention]
seq_len = 32
head_dim = 8
block_rows = 8
block_cols = 8
sram_elems = 0

[sweep]
seq_lens = [16, 32]

[train]
seeds = 2
steps = 20
checkpoint_every = 10

[train.task]
examples = 16
batch_size = 8
"""


def as_f32(x):
    return struct.unpack("f", struct.pack("f", x))[0]


def check_formats():
    bf16 = numdev.FloatFormat.parse("bf16")
    assert bf16 == numdev.BF16 == numdev.FloatFormat(8, 7)
    assert {numdev.FP16, numdev.FloatFormat(5, 10)} == {numdev.FP16}
    assert (bf16.exponent_bits, bf16.mantissa_bits) == (8, 7)
    assert numdev.FP16.max_finite == 65504.0
    assert numdev.quantize(1 + 2**-9, "bf16") == 1.0
    assert numdev.quantize(1 + 3 * 2**-9, bf16) == 1 + 2**-7
    assert numdev.quantize(math.inf, "fp16") == math.inf
    assert math.isnan(numdev.quantize(math.nan, "fp16"))
    xs = [0.1, -2.5e-8, 3.4e38, 123456.789]
    assert numdev.quantize_list(xs, "fp32") == [as_f32(x) for x in xs]
    assert numdev.ulp(1.0, "fp16") == 2**-10
    try:
        numdev.FloatFormat(1, 3)
    except ValueError:
        pass
    else:
        raise AssertionError("exponent_bits = 1 accepted")


def check_kernels():
    q, k, v = (numdev.Matrix.random(32, 8, seed=7, format="bf16", stream=s) for s in range(3))
    assert q.shape == (32, 8) and q.format == numdev.BF16
    base = numdev.baseline_attention(q, k, v, "bf16")
    flash = numdev.flash_attention(q, k, v, "bf16", 8, 8)
    gap = numdev.max_difference(flash, base)
    assert 0 < gap < 0.5, gap
    mean, std = numdev.diff_stats(flash, base)
    assert abs(mean) <= gap and std >= 0

    q64, k64, v64 = (m.to_format("fp64") for m in (q, k, v))
    exact = numdev.baseline_attention(q64, k64, v64, "fp64")
    tiled = numdev.flash_attention(q64, k64, v64, "fp64", 8, 8)
    assert numdev.max_difference(exact, tiled) < 1e-12

    ident = numdev.Matrix([[1.0, 0.0], [0.0, 1.0]])
    m = numdev.Matrix([[1.0, 2.0], [3.0, 4.0]])
    assert numdev.matmul(ident, m, "fp64").to_list() == m.to_list()
    assert numdev.wasserstein_1d([0.0, 1.0], [1.0, 2.0]) == 1.0


def check_sweeps_and_training():
    toml, digest = numdev.resolve_config(SMALL)
    assert len(digest) == 64 and "seq_len = 32" in toml
    result = numdev.sweep("seqlen", SMALL)
    csv = result.csv()
    assert csv.startswith("# resolved-config-sha256: ")
    assert csv == numdev.sweep("seqlen", SMALL).csv()
    assert len(result) == len(result.rows()) == 4
    points = result.summary()
    assert [p["value"] for p in points] == [16, 32]

    run = numdev.train_run(SMALL, seed=1, variant="flash")
    assert len(run["losses"]) == 20
    assert [step for step, _ in run["checkpoints"]] == [0, 10, 20]

    out = numdev.train_compare(SMALL)
    finals = out["final_wasserstein"]
    assert set(finals) == {"flash-vs-baseline", "different-init", "fp16-vs-fp32"}
    assert all(len(v) == 2 for v in finals.values())
    assert len(out["csv"]) == 2

    try:
        numdev.resolve_config("seeds = 0")
    except ValueError as e:
        assert "out of range" in str(e)
    else:
        raise AssertionError("seeds = 0 accepted")


def main():
    check_formats()
    check_kernels()
    check_sweeps_and_training()
    for name, passed, detail in numdev.validate():
        assert passed, f"{name}: {detail}"
    print("numdev python smoke test: ok")


if __name__ == "__main__":
    main()
