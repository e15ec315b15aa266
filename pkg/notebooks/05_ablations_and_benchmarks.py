"""
Ablations, the gamma sweep, and the topology benchmark
======================================================

The same studies the command line exposes (`mmfusion ablate`,
`mmfusion gamma-sweep`, `mmfusion bench-attention`), driven here through the
library so the artifacts can be inspected inline. Tiny settings keep the
whole script in the tens-of-seconds range.
"""

import csv
import json
import os
import tempfile

from mmfusion.cli import main

workdir = tempfile.mkdtemp(prefix="mmfusion_demo_")
config = {
    "text_encoder": {"d_model": 16, "n_heads": 2, "n_layers": 1, "ffn_width": 32,
                     "embedding_dim": 8, "share_layers": True, "max_len": 16},
    "image_encoder": {"d_model": 16, "n_heads": 2, "n_layers": 1, "ffn_width": 32,
                      "embedding_dim": 16, "share_layers": False, "max_len": 32},
    "trainer": {"epochs": 6, "batch_size": 8, "lr_text": 1e-3, "lr_image": 1e-3,
                "lr_other": 1e-3, "weight_decay": 5e-4},
    "data": {"n_classes": 4, "samples_per_class": 20, "image_size": 16,
             "patch_size": 4, "vocab_size": 24, "sentence_len": [4, 7],
             "noise_level": 0.05, "seed": 0},
    "seed": 0,
}
cfg_path = os.path.join(workdir, "config.json")
with open(cfg_path, "w") as fh:
    json.dump(config, fh)

# 1. The module on/off grid: every (attention, channels, auxiliary losses)
#    combination trained once with a shared seed.
abl_dir = os.path.join(workdir, "ablation")
main(["ablate", "--config", cfg_path, "--out", abl_dir])
with open(os.path.join(abl_dir, "ablation.csv")) as fh:
    for row in csv.DictReader(fh):
        print("HAM={HAM} RM={RM} MLF={MLF}  acc={accuracy:.6s} "
              "F1={macro_F1:.6s}".format(**row))

# 2. The gamma sweep over {0, 0.1, ..., 0.5}: gamma trades the interaction
#    loss against the two unimodal auxiliary losses.
sweep_dir = os.path.join(workdir, "sweep")
main(["gamma-sweep", "--config", cfg_path, "--out", sweep_dir])
with open(os.path.join(sweep_dir, "gamma_sweep.csv")) as fh:
    for row in csv.DictReader(fh):
        print("gamma={gamma:>4s}  acc={accuracy:.6s}".format(**row))
print(open(os.path.join(sweep_dir, "gamma_sweep_notes.json")).read())

# 3. Topology benchmark: parameter counts are exact, timings are reported
#    but machine-dependent (the reference JSON records the full-scale
#    numbers this comparison mirrors, which are not reproducible here).
bench_dir = os.path.join(workdir, "bench")
main(["bench-attention", "--config", cfg_path, "--out", bench_dir,
      "--repeats", "15"])
print(open(os.path.join(bench_dir, "bench_reference.json")).read())
print("artifacts under:", workdir)
