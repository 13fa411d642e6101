import numpy as np
import pytest

from oobmimo.scenario import WaveformSpec

# criterion number -> (passed, detail), filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def small_waveform():
    """A short frame that keeps unit tests fast."""
    return WaveformSpec(num_subcarriers=64, num_active_subcarriers=48, num_ofdm_symbols=4,
                        rrc_span_symbols=32, edge_window_samples=4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
