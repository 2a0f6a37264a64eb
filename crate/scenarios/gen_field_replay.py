#!/usr/bin/env python3
"""Writes field_2d_replay.csv: a scripted operator command for field_2d.toml.

Piecewise-constant headings blended with a short cosine ramp, plus a small
deterministic wobble so the command is not perfectly straight.
"""
import csv
import math
import pathlib

DT = 0.05
DURATION = 30.0
RAMP = 0.8

# (start time, vx, vy)
LEGS = [
    (0.0, 0.4, 1.2),
    (6.0, -0.8, 1.0),
    (12.0, 0.0, 1.2),
    (20.0, 1.2, 0.3),
    (26.0, 0.0, 0.0),
]


def command(t):
    vx, vy = 0.0, 0.0
    for i, (start, lx, ly) in enumerate(LEGS):
        if t < start:
            break
        prev = LEGS[i - 1][1:] if i else (0.0, 0.0)
        s = min((t - start) / RAMP, 1.0)
        w = 0.5 - 0.5 * math.cos(math.pi * s)
        vx = prev[0] + w * (lx - prev[0])
        vy = prev[1] + w * (ly - prev[1])
    if t < LEGS[-1][0]:
        vx += 0.1 * math.sin(1.3 * t)
        vy += 0.05 * math.sin(0.7 * t + 0.4)
    return vx, vy


def main():
    out = pathlib.Path(__file__).with_name("field_2d_replay.csv")
    n = int(round(DURATION / DT))
    with out.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["t", "vx", "vy"])
        for i in range(n + 1):
            t = i * DT
            vx, vy = command(t)
            w.writerow([f"{t:.3f}", f"{vx:.6f}", f"{vy:.6f}"])


if __name__ == "__main__":
    main()
