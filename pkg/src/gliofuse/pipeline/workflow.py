"""The full command chain (generate through evaluate) as one call."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .cli import run_cli


@dataclass
class WorkflowSettings:
    cases: int = 6
    shape: tuple[int, int, int] = (32, 32, 32)
    seed: int = 0
    seg_epochs: int = 20
    cls_epochs: int = 20
    grid: bool = True
    preset: str = "desk"


def end_to_end(workdir, settings: WorkflowSettings = WorkflowSettings()) -> dict:
    """Run every stage under ``workdir`` and return the parsed report.

    Raises ``RuntimeError`` naming the first stage that exits non-zero.
    """
    w = Path(workdir)
    s = settings
    common = ["--preset", s.preset, "--seed", str(s.seed)]
    stages = [
        ["generate", "--cases", str(s.cases), "--out", str(w / "raw"), "--shape", *map(str, s.shape)],
        ["preprocess", "--data", str(w / "raw"), "--out", str(w / "prep"), "--target", *map(str, s.shape)],
        ["train-seg", "--mode", "2d", "--data", str(w / "prep"), "--out", str(w / "models"),
         "--epochs", str(s.seg_epochs)],
        ["train-seg", "--mode", "3d", "--data", str(w / "prep"), "--out", str(w / "models"),
         "--epochs", str(s.seg_epochs), "--base", "4"],
        ["fuse", "--data", str(w / "prep"), "--seg2d", str(w / "models" / "seg2d.ckpt"),
         "--seg3d", str(w / "models" / "seg3d.ckpt"), "--out", str(w / "fused")] + (["--grid"] if s.grid else []),
        ["train-cls", "--fused", str(w / "fused"), "--data", str(w / "prep"), "--out", str(w / "models"),
         "--epochs", str(s.cls_epochs)],
    ]
    for argv in stages:
        code = run_cli([argv[0], *common, *argv[1:]])
        if code != 0:
            raise RuntimeError(f"stage {argv[0]} exited with {code}")
    code = run_cli(["evaluate", "--pred-dir", str(w / "fused"), "--data", str(w / "prep"),
                    "--cls", str(w / "models" / "cls.ckpt"), "--out", str(w / "report")])
    if code != 0:
        raise RuntimeError(f"stage evaluate exited with {code}")
    return json.loads((w / "report" / "report.json").read_text())
