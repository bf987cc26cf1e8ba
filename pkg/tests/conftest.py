import pytest

from sawgan import trainer


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        outcome = "PASS" if report.passed else ("FAIL" if report.failed else "SKIP")
        print(f"\nACCEPTANCE {name}: {outcome}", flush=True)


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory):
    """A miniature completed training run shared by CLI/service tests."""
    cfg = trainer.TrainConfig(
        total_steps=10, batch_size=4, eval_every=0, eval_pool=96,
        eval_at_start=False, checkpoint_every=0, grid_rows=2, grid_cols=2,
        seed=7,
    )
    run_dir = tmp_path_factory.mktemp("tiny_run")
    return trainer.train(cfg, run_dir)


@pytest.fixture(scope="session")
def tiny_checkpoint(tiny_run):
    return tiny_run / "ckpt_final.pt"
