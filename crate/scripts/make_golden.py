"""Writes the golden files used by the core integration tests.

Both files are produced here without the Rust code so the tests compare the
library against an independent rendering of the documented formats.
"""
import math
import os

OUT = os.path.join(os.path.dirname(__file__), "..", "crates", "core", "tests", "golden")


def ts_kernel_depth1(x, y):
    xty = sum(a * b for a, b in zip(x, y))
    xx = sum(a * a for a in x)
    yy = sum(b * b for b in y)
    theta = math.acos(max(-1.0, min(1.0, xty / math.sqrt(xx * yy))))
    return xty * (1.0 - theta / math.pi)


def fmt(v):
    # shortest round-trip decimal without exponent, integers without ".0"
    if v == int(v):
        return str(int(v))
    return repr(v)


def gram():
    points = [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
    labels = [0, 1, 0]
    lines = []
    for p, (x, y) in enumerate(zip(points, labels)):
        fields = [str(y), f"0:{p + 1}"]
        fields += [f"{q + 1}:{fmt(ts_kernel_depth1(x, z))}" for q, z in enumerate(points)]
        lines.append(" ".join(fields) + "\n")
    with open(os.path.join(OUT, "toy-ts-depth1.gram"), "w", newline="\n") as f:
        f.writelines(lines)


def filter_value(f, p):
    if f == 5:
        return 0.25
    return float((p * (f + 1)) % 17) - 8.0


def gray(values):
    lo, hi = min(values), max(values)
    if hi == lo:
        return [128] * len(values)
    return [int(math.floor(255.0 * (v - lo) / (hi - lo) + 0.5)) for v in values]


def filters():
    k, side, gutter, grid = 16, 32, 2, 4
    width = height = grid * side + (grid - 1) * gutter
    pixels = bytearray(width * height)
    for f in range(k):
        g = gray([filter_value(f, p) for p in range(side * side)])
        oy, ox = (f // grid) * (side + gutter), (f % grid) * (side + gutter)
        for r in range(side):
            for c in range(side):
                pixels[(oy + r) * width + ox + c] = g[r * side + c]
    with open(os.path.join(OUT, "filters-16x32x32.pgm"), "wb") as f:
        f.write(f"P5\n{width} {height}\n255\n".encode())
        f.write(bytes(pixels))


if __name__ == "__main__":
    os.makedirs(OUT, exist_ok=True)
    gram()
    filters()
