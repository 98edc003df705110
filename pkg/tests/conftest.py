from __future__ import annotations

import pytest

from frag.corpus import parse_workflow

SAMPLE_FLOW = """\
type: flow
scope: global
requirement: Every day, look up incident tasks that do not have assignees and close them.
trigger:
  annotation: every day
  type: daily
steps:
  - annotation: look up incident tasks without assignee
    definition: look_up_records
    inputs:
      - name: table
        value: incident_task
        table: incident_task
      - name: conditions
        condition: assigned_toISEMPTY^active=true
  - annotation: close each of them
    definition: update_record
    inputs:
      - name: table
        table: incident_task
      - name: values
        value: state=3
"""


@pytest.fixture
def sample_doc():
    return parse_workflow(SAMPLE_FLOW)


@pytest.fixture(scope="session")
def tiny_work(tmp_path_factory):
    """A work directory holding every stage output of the tiny preset."""
    from frag.pipeline import run_pipeline, run_preset

    root = tmp_path_factory.mktemp("work")
    run_pipeline(root, run_preset("tiny"))
    return root


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    props = dict(report.user_properties)
    if "criterion" in props:
        _CRITERIA[props["criterion"]] = (report.outcome, props.get("detail", ""))


_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        outcome, detail = _CRITERIA[number]
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {detail}")
