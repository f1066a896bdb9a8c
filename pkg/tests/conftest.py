from __future__ import annotations

import pytest

from mlet.synthdata import GeneratorSpec, generate

SMALL_SPEC = dict(field_sizes=[60, 40], zipf=[1.1], dense_dim=2, n_train=1500, n_val=100,
                  n_test=600)


@pytest.fixture(scope="session")
def small_ds():
    return generate(GeneratorSpec(**SMALL_SPEC), seed=0)


@pytest.fixture(scope="session")
def small_data_file(tmp_path_factory, small_ds):
    from mlet.synthdata import write_dataset

    path = tmp_path_factory.mktemp("data") / "small.bin"
    write_dataset(small_ds, path)
    return path


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "SUMMARY", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(lines):
        terminalreporter.write_line(lines[key])
