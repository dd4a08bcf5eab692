import pytest

from neurotact.drum_sim import conditions, generate_dataset

CRITERIA = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Two textures, all 15 conditions, 4 trials per cell."""
    root = tmp_path_factory.mktemp("small")
    return generate_dataset(root, trials=4, seed=3, textures=["A", "L"], conds=conditions())


@pytest.fixture(scope="session")
def record_criterion(request):
    lines = request.config.stash.setdefault(CRITERIA, [])

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def desk_suite(tmp_path_factory):
    """One full default desk-scale suite run through the CLI; returns paths and wall time."""
    import time
    from neurotact import cli

    root = tmp_path_factory.mktemp("desk")
    data, out = root / "data", root / "out"
    t = time.time()
    code = cli.main(["suite", "--dataset", str(data), "--out", str(out)])
    return {"code": code, "data": data, "out": out, "seconds": time.time() - t, "root": root}
