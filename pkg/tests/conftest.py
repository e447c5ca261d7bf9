import numpy as np
import pytest

from facelm.face_model import generate_landmarks, synth_core


@pytest.fixture(scope="session")
def core_small():
    return synth_core(42, 4, 3)


@pytest.fixture(scope="session")
def core8():
    return synth_core(3, 8, 8)


@pytest.fixture(scope="session")
def neutral_and_open(core8):
    w_id = np.eye(8)[0]
    return generate_landmarks(core8, w_id, np.eye(8)[0]), generate_landmarks(core8, w_id, np.eye(8)[1])


def triple_loop_contract(data, w_id, w_exp):
    """Independent oracle: explicit sum over every core entry."""
    n0, n1, n2 = data.shape
    out = np.zeros(n0)
    for a in range(n0):
        s = 0.0
        for j in range(n1):
            for k in range(n2):
                s += data[a, j, k] * w_exp[j] * w_id[k]
        out[a] = s
    return out.reshape(-1, 3)


# (criterion, passed, detail) rows collected by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(ACCEPTANCE, key=lambda r: int(r[0].split()[0][1:])):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
