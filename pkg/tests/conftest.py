"""Shared fixtures.

The desk-scale models (forecaster, warpers for every training regime) are
expensive, so they are trained once per session inside one Workbench and
reused by the acceptance suite and the trained-model tests.
"""
import sys
import time
from dataclasses import replace
from pathlib import Path

import pytest
import torch

torch.set_num_threads(1)
sys.path.insert(0, str(Path(__file__).parent))

from futureseg.harness import Workbench, load_config, run_ablation_grid, run_pipeline  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
DESK_CONFIG = ROOT / "configs" / "desk.yaml"

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE = {}
CRITERIA = {
    1: "exact-math oracles",
    2: "gradient checks",
    3: "warp identities",
    4: "AP oracle equivalence",
    5: "flow forecasting skill",
    6: "flow error trend over horizon",
    7: "training-regime ordering",
    8: "oracle-flow dominance",
    9: "cross-entropy collapse",
    10: "determinism",
}


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    ran = [c for c in CRITERIA if c in ACCEPTANCE]
    if not ran and not any("test_acceptance" in str(a) for a in terminalreporter.config.args):
        return
    terminalreporter.section("acceptance criteria")
    for c, name in CRITERIA.items():
        if c in ACCEPTANCE:
            ok, detail = ACCEPTANCE[c]
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  [{c:>2}] {name}: {detail}")
        else:
            terminalreporter.write_line(f"FAIL  [{c:>2}] {name}: not evaluated (error or deselected)")


@pytest.fixture(scope="session")
def desk_cfg():
    return load_config(DESK_CONFIG)


@pytest.fixture(scope="session")
def desk_bench(desk_cfg):
    bench = Workbench(desk_cfg)
    t0 = time.time()
    bench.ofnet()
    bench.ofnet_seconds = time.time() - t0
    return bench


@pytest.fixture(scope="session")
def desk_grid(desk_cfg, desk_bench):
    t0 = time.time()
    grid = run_ablation_grid(desk_cfg, desk_bench)
    grid_seconds = time.time() - t0
    return grid, grid_seconds


@pytest.fixture(scope="session")
def desk_main_cfg(desk_cfg):
    """The full method: pretrained on ground-truth flows, last two layers finetuned."""
    return replace(desk_cfg, method="masknet", pretrain=True, finetune=True, finetune_layers=2)


@pytest.fixture(scope="session")
def desk_oracle(desk_cfg, desk_bench):
    """Warper pretrained on ground-truth flows and fed ground-truth flows, per horizon."""
    return {h: run_pipeline(replace(desk_cfg, horizon=h, pretrain=True, finetune=False,
                                    flow_feeding="oracle", name=f"oracle/{h}"), desk_bench)
            for h in ("short", "mid")}
