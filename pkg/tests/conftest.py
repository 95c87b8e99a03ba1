import numpy as np
import pytest

from saec.config import RunConfig
from saec.env import InpaintingEnv, SyntheticSource
from saec.trainer import Trainer

# small enough that a full gradient step takes a few milliseconds
TINY_RUN = dict(image_size=16, z_dim=4, widths=(4, 8), batch_size=4, min_buffer=4, grad_steps=2,
                buffer_capacity=64, eval_samples=3, iterations=4, checkpoint_interval=2)


def tiny_config(**overrides) -> RunConfig:
    return RunConfig().replace(**{**TINY_RUN, **overrides})


def tiny_trainer(**overrides) -> Trainer:
    cfg = tiny_config(**overrides)
    env = InpaintingEnv(SyntheticSource(cfg.dataset, cfg.image_channels, cfg.image_size), cfg.horizon,
                        cfg.reward, cfg.reward_mode, cfg.reward_scale, cfg.mask_fill)
    return Trainer(cfg, env)


def snapshot(trainer: Trainer) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in trainer.state_arrays().items()}


@pytest.fixture
def out_root(tmp_path, monkeypatch):
    monkeypatch.delenv("SAEC_OUTPUT_ROOT", raising=False)
    return tmp_path


# criterion number -> (passed, detail); filled by test_acceptance and printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")
