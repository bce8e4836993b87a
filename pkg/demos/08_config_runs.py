"""Driving everything from a YAML file, as the command line does.

Equivalent shell session:

    fedtext synth --per-class 100 --out data
    fedtext run data/config.yaml --out runs/demo
    fedtext predict --model runs/demo --text "calm3 w1 w2"
"""
import tempfile
from pathlib import Path

import yaml

from fedtext.cli import main

work = Path(tempfile.mkdtemp())
main(["synth", "--per-class", "100", "--out", str(work / "data")])
cfg_path = work / "data" / "config.yaml"
cfg = yaml.safe_load(cfg_path.read_text())
cfg["federation"].update(rounds=4, distribution="table1")
cfg_path.write_text(yaml.safe_dump(cfg))
print(cfg_path.read_text())

main(["run", str(cfg_path), "--out", str(work / "run")])
print(sorted(p.name for p in (work / "run").iterdir()))
main(["predict", "--model", str(work / "run"), "--text", "calm3 w1 w2", "--text", "abyss0 abyss4 w7"])

# A broken config fails fast and names the field.
cfg["model"]["cell"] = "transformer"
cfg_path.write_text(yaml.safe_dump(cfg))
print("exit code:", main(["run", str(cfg_path)]))
