"""The demo scenario's decision log and journal against committed goldens.

These files pin the decision-log and journal formats. Regenerate with
TWIN_REGEN_GOLDENS=1 after a deliberate format change and review the diff.
"""

import os

import pytest

from conftest import DEMO_CONFIG, DEMO_SCENARIO, GOLDEN_DIR

from twinrt.cli import main as cli_main

GOLDENS = ("demo_decisions.log", "demo_journal.ndjson")


@pytest.fixture(scope="module")
def demo_outputs(tmp_path_factory):
    out = tmp_path_factory.mktemp("demo")
    journal = out / "demo_journal.ndjson"
    decisions = out / "demo_decisions.log"
    code = cli_main(["scenario", str(DEMO_SCENARIO), "--config", str(DEMO_CONFIG),
                     "--journal", str(journal), "--decisions", str(decisions)])
    assert code == 0
    return {"demo_journal.ndjson": journal.read_bytes(),
            "demo_decisions.log": decisions.read_bytes()}


@pytest.mark.parametrize("name", GOLDENS)
def test_demo_output_matches_golden(demo_outputs, name):
    path = GOLDEN_DIR / name
    if os.environ.get("TWIN_REGEN_GOLDENS"):
        path.write_bytes(demo_outputs[name])
    assert demo_outputs[name] == path.read_bytes(), f"{name} differs from golden"
