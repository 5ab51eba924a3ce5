import numpy as np
import pytest

from seisbt import dataset, synthcat


@pytest.fixture(scope="session")
def tiny_synth():
    """A small catalog shared by tests that only need realistic inputs."""
    cfg = synthcat.SynthConfig(n_events=12, seed=3)
    catalog, records = synthcat.generate_catalog(cfg)
    return cfg, catalog, records


@pytest.fixture(scope="session")
def tiny_dataset(tiny_synth):
    _, catalog, records = tiny_synth
    return dataset.build(catalog, records)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


VERDICTS: dict[str, str] = {}


def record_verdict(criterion: int, passed: bool, detail: str) -> None:
    line = f"criterion {criterion:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    VERDICTS[f"{criterion:02d}"] = line
    print(line, flush=True)


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[key])
