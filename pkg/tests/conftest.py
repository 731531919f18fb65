import numpy as np
import pytest

from dnanas.space import SupernetConfig


@pytest.fixture
def tiny_space():
    """Two blocks, two ops, 8px input: small enough for exhaustive checks."""
    return SupernetConfig.build(
        teacher_widths=[4, 6],
        strides=[2, 1],
        cells=[[(1, 3), (2, 3)], [(2, 4)]],
        ops=[(3, 3), (5, 3)],
        input_size=8,
        stem_width=4,
        student_stem_width=3,
        num_classes=3,
        teacher_layers=[1, 1],
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from helpers import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(RESULTS):
        terminalreporter.write_line(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}  [{detail}]")
