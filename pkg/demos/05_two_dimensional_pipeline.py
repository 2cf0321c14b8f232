"""
A 2-D system through the whole pipeline
=======================================

The bundled ``planar_levy`` config describes

    dX = (3X - Y^2) dt + X dB1 + dL1
    dY = (2X + Y)   dt + Y dB2 + dL2

with independent truncated 1-stable jumps. ``run_pipeline`` simulates, learns,
identifies, solves both exit problems on a 100x100 grid over (-1, 1)^2 for the
true and learned models, and compares them. The same happens with

    levykoop pipeline --config planar_levy --out out/planar_levy
"""
import json

from levykoop import ExperimentConfig, run_pipeline

cfg = ExperimentConfig.load("planar_levy")
out = "out/demo_05"
run_pipeline(cfg, out)

print(open(f"{out}/tables.txt").read())
print("field errors:", json.dumps(json.load(open(f"{out}/metrics.json")), indent=2))
