import numpy as np
import pytest

import kwscascade as k
from kwscascade.synthetic import (
    make_random_embedding_model,
    make_tone_acoustic_model,
    synth_keyword_audio,
    synth_noise,
)

_ACCEPTANCE_RESULTS = []


def record_acceptance(number, description, passed, detail=""):
    """Collect one acceptance-criterion verdict for the end-of-run summary."""
    _ACCEPTANCE_RESULTS.append((number, description, passed, detail))
    line = f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'} - {description}"
    if detail:
        line += f" ({detail})"
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, description, passed, detail in sorted(_ACCEPTANCE_RESULTS):
        status = "PASS" if passed else "FAIL"
        line = f"  {number:>2}. {status}  {description}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def frontend_config():
    return k.FrontendConfig()


@pytest.fixture(scope="session")
def tone_stage1_model(frontend_config):
    return make_tone_acoustic_model(frontend_config, 3, name="stage1")


@pytest.fixture(scope="session")
def tone_stage2_model(frontend_config):
    return make_tone_acoustic_model(frontend_config, 3, stacked_frames=2, name="stage2")


@pytest.fixture(scope="session")
def embedding_model(frontend_config):
    return make_random_embedding_model(frontend_config, dim=64)


@pytest.fixture(scope="session")
def keyword_audio(frontend_config):
    """(samples, keyword_end_ms) with noise before and after the keyword."""
    rng = np.random.default_rng(5)
    kw, end_ms = synth_keyword_audio(frontend_config, 3, unit_ms=150)
    samples = np.concatenate([synth_noise(8000, rng), kw, synth_noise(24000, rng)])
    return samples, end_ms + 500
