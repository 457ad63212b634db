import time
from dataclasses import dataclass

import pytest

from vnmix import ablation, dataset, training
from vnmix.networks import Pipeline

ACCEPTANCE = pytest.StashKey[list]()

DESK_SCENES, DESK_SIZE, DESK_SEED = 32, (64, 64), 0


@dataclass
class DeskRun:
    curve: list[dict]
    seconds: float
    evaluation: ablation.Evaluation
    pipeline: Pipeline


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per criterion; the lines are repeated in the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(criterion: str, ok: bool, detail: str) -> bool:
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def desk_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    m = dataset.synthesize_dataset(DESK_SCENES, DESK_SIZE, DESK_SEED, root / "data")
    return m, root


def _desk_run(desk_data, condition: int) -> DeskRun:
    m, root = desk_data
    train = dataset.load_batch(m, m.ids("train"))
    test = dataset.load_batch(m, m.ids("test"))
    cond = ablation.CONDITIONS[condition]
    cfg = training.TrainConfig.preset("desk", seed=DESK_SEED)
    start = time.perf_counter()
    res = training.train(train, Pipeline(cond.topology()), cond.weights(), cfg,
                         out=root / f"condition{condition:02d}")
    seconds = time.perf_counter() - start
    return DeskRun(res.curve, seconds, ablation.evaluate(res.pipeline, test), res.pipeline)


@pytest.fixture(scope="session")
def desk_full(desk_data):
    return _desk_run(desk_data, 1)


@pytest.fixture(scope="session")
def desk_direct(desk_data):
    return _desk_run(desk_data, 5)
