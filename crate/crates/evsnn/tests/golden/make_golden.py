"""Writes the golden EVDS and EVWT files with an encoder independent of the
Rust code. Run from this directory: python3 make_golden.py"""
import struct

def evds():
    batches = [
        (3, 7, 3_000_000, [(0, 1, 2, 1), (150_000, 239, 179, 0), (2_999_999, 0, 0, 1)]),
        (0, 65535, 1000, []),
        (23, 1, 100, [(5, 65535, 65535, 0), (5, 4, 4, 1)]),
    ]
    out = b"EVDS" + struct.pack("<H", 1)
    for label, subject, duration, events in batches:
        out += struct.pack("<HHQQ", label, subject, duration, len(events))
        for ts, x, y, pol in events:
            out += struct.pack("<QHHB", ts, x, y, pol)
    return out

def evwt():
    out = b"EVWT" + struct.pack("<H", 1)
    # channels, height, width, steps, classes, blocks
    out += struct.pack("<6I", 1, 6, 7, 2, 2, 1)
    out += struct.pack("<IIddB", 2, 3, 0.5, 1.0, 0)
    out += struct.pack("<ddB", 0.75, 0.5, 1)
    out += struct.pack("<d", 25.0)
    shapes = [[2, 1, 3, 3], [2], [2, 8], [2]]
    out += struct.pack("<I", len(shapes))
    for j, shape in enumerate(shapes):
        out += struct.pack("<I", len(shape)) + struct.pack(f"<{len(shape)}I", *shape)
        n = 1
        for d in shape:
            n *= d
        values = [(j + 1) * 0.5 + i * 0.125 - 1.0 for i in range(n)]
        if j == 3:
            values = [0.1, -1e-300]
        out += struct.pack(f"<{n}d", *values)
    return out

if __name__ == "__main__":
    with open("dataset_v1.evds", "wb") as f:
        f.write(evds())
    with open("checkpoint_v1.evwt", "wb") as f:
        f.write(evwt())
