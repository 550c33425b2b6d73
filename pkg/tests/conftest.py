import pytest

from bcdnet.config import ExperimentConfig

TINY = dict(input_height=48, input_width=16, downsample=4, backbone_channels=16, subnet_width=8, P=2, A=2,
            num_train_ids=4, imgs_per_train_id=4, num_test_ids=3, imgs_per_test_id=6, epochs=2,
            batches_per_epoch=2, lr_milestones=[1], num_cameras=3)


@pytest.fixture
def tiny_config() -> ExperimentConfig:
    """A configuration that trains in well under a second."""
    return ExperimentConfig(**TINY)


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record():
    """Store one acceptance verdict; the terminal summary prints them in order."""

    def _record(criterion: int, passed: bool, detail: str) -> None:
        ACCEPTANCE[criterion] = (passed, detail)
        print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'} - {detail}")

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'} - {detail}")
