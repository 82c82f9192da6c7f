"""One test per registered verification experiment.

Each experiment bundles the checks that certify a headline behavior of
the library: Gram positivity, exact gradients, mode-family orders,
broadband spectral floors, invisible-direction detection, recovery
under refinement, rank agreement between routes, down-sampled row
consistency, solver agreement, and byte-level determinism. ``pytest -v``
therefore prints one pass/fail line per criterion, and a failure
message carries the experiment's own check lines.
"""

import pytest

from fcmlab.experiments import EXPERIMENT_NAMES, run_experiment


@pytest.mark.parametrize("name", EXPERIMENT_NAMES)
def test_criterion(name):
    result = run_experiment(name)
    report = "\n".join(result.lines())
    print(report)
    assert result.passed, report
