"""Full-scale validation checks, one test per numbered criterion.

These drive the same registry as ``loopsoup validate --level full`` and
print the one-line verdict for each check. They are the slow end of the
suite: the first-shell tail alone runs millions of staged replicas.
Budget roughly half an hour on one core for the whole file.
"""

import pytest

from loopsoup import validate

_IDS = [f"{i:02d}-{name}"
        for i, name in enumerate(validate.criterion_names(), 1)]


@pytest.mark.parametrize("index", range(1, len(_IDS) + 1), ids=_IDS)
def test_criterion(index):
    result = validate.run_criterion(index, "full")
    print(result.line())
    assert not result.skipped, result.line()
    assert result.passed, result.line()
