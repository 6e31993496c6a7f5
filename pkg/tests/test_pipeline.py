import sys
from pathlib import Path

import numpy as np
import orjson
import pandas as pd
import pytest

project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from dotenv import load_dotenv

load_dotenv()

from main import run_cli
from src.utils.data_models import ResultDocument
from src.utils.json_helper import render_json
from workflow.core.errors import NotConverged, SchemaError
from workflow.core.formatters import grid_from_payload, grid_payload
from workflow.core.validators import parse_instance
from workflow.graph import create_workflow, exit_code, initial_state, output_text, process_batch, process_instance

EXAMPLE1 = {
    "version": "ironkit-1",
    "mode": "iron",
    "axes": [{"points": [0, 1], "probs": [0.5, 0.5]}, {"points": [0, 1], "probs": [0.5, 0.5]}],
    "alpha": [[6, 0], [0, 6]],
}


def _run(argv, tmp_path, name="result.json"):
    output = tmp_path / name
    code = run_cli([*argv, "-o", str(output)])
    document = orjson.loads(output.read_bytes()) if output.exists() else None
    return code, document


@pytest.mark.parametrize("name", ["example1_iron", "access_example", "example5_contract", "sosd_spread"])
def test_fixtures_verify(name, tmp_path):
    code, document = _run(["fixture", name, "--quiet"], tmp_path)
    assert code == 0, document
    assert document["status"] == "verified"
    assert all(report["passed"] for report in document["certificates"].values())


def test_example1_document(tmp_path):
    code, document = _run(["fixture", "example1_iron", "--quiet"], tmp_path)
    assert code == 0
    assert document["version"] == "ironkit-1"
    assert document["mode"] == "iron"
    np.testing.assert_allclose(grid_from_payload(document["outputs"]["alpha_bar"]), [[2, 2], [2, 6]], atol=1e-6)
    assert document["outputs"]["partition"] is not None


def test_sosd_document(tmp_path):
    code, document = _run(["fixture", "sosd_spread", "--quiet"], tmp_path)
    assert code == 0
    outputs = document["outputs"]
    assert outputs["second_order"]["verdict"] is True
    assert outputs["first_order"]["verdict"] is False
    assert grid_from_payload(outputs["g_bar"]).tolist() == pytest.approx([0.25, 0.75, 1.0])


def test_dyadic_fixture(tmp_path):
    code, document = _run(["fixture", "example3_dyadic", "--quiet"], tmp_path)
    assert code == 0, document["certificates"]
    assert [row["level"] for row in document["outputs"]["convergence"]] == [3, 4]
    assert document["outputs"]["level"] == 5


def test_output_is_deterministic(tmp_path):
    _, first = _run(["fixture", "access_example", "--quiet"], tmp_path, "a.json")
    _, second = _run(["fixture", "access_example", "--quiet"], tmp_path, "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert first["instance_digest"] == second["instance_digest"]


def test_csv_rows(tmp_path):
    csv = tmp_path / "rows.csv"
    code, _ = _run(["fixture", "example1_iron", "--quiet", "--csv", str(csv)], tmp_path)
    assert code == 0
    frame = pd.read_csv(csv)
    assert len(frame) == 4
    assert list(frame.columns[:4]) == ["i0", "i1", "x0", "x1"]
    assert frame["alpha_bar"].tolist() == pytest.approx([2, 2, 2, 6], abs=1e-6)
    assert frame["cell"].tolist() == [0, 0, 0, 1]


def test_solve_from_file(tmp_path):
    instance = tmp_path / "instance.json"
    instance.write_bytes(orjson.dumps(EXAMPLE1))
    code, document = _run(["solve", str(instance), "--quiet", "--method", "flow"], tmp_path)
    assert code == 0
    assert document["certificates"]["ironing"]["passed"]


def test_shape_mismatch_is_a_schema_error():
    state = process_instance({**EXAMPLE1, "alpha": [[6, 0, 1], [0, 6, 1]]})
    assert exit_code(state) == 2
    assert state["error"]["type"] == "SchemaError"
    assert state["error"]["path"] == "/alpha"


def test_unknown_mode():
    state = process_instance({**EXAMPLE1, "mode": "auction"})
    assert exit_code(state) == 2
    assert state["error"]["path"] == "/mode"


def test_unknown_field_is_rejected():
    state = process_instance({**EXAMPLE1, "extra": 1})
    assert exit_code(state) == 2
    assert state["error"]["type"] == "SchemaError"


def test_version_tag():
    state = process_instance({**EXAMPLE1, "version": "ironkit-0"})
    assert exit_code(state) == 2
    assert state["error"]["type"] == "VersionError"
    error = orjson.loads(output_text(state))
    assert error["status"] == "error"
    assert error["error"]["path"] == "/version"


def test_parse_instance():
    instance = parse_instance(orjson.dumps(EXAMPLE1))
    assert instance.mode == "iron"
    assert instance.options.phi is None
    with pytest.raises(SchemaError) as excinfo:
        parse_instance(orjson.dumps({**EXAMPLE1, "options": {"phi": "cubic"}}))
    assert excinfo.value.path == "/options/phi"
    with pytest.raises(SchemaError):
        parse_instance(orjson.dumps({k: v for k, v in EXAMPLE1.items() if k != "axes"}))


def test_invalid_json():
    state = process_instance(b"{not json")
    assert exit_code(state) == 2
    assert state["error"]["type"] == "ParseError"


def test_bad_probabilities_report_their_axis():
    axes = [{"points": [0, 1], "probs": [0.5, 0.6]}, {"points": [0, 1], "probs": [0.5, 0.5]}]
    state = process_instance({**EXAMPLE1, "axes": axes})
    assert exit_code(state) == 2
    assert state["error"]["type"] == "BadProbs"
    assert state["error"]["path"] == "/axes/0/probs"


def test_sweep_cap_is_a_convergence_failure():
    state = process_instance({**EXAMPLE1, "options": {"max_sweeps": 1}})
    assert exit_code(state) == 3
    assert state["error"]["type"] == "NotConverged"


def test_batch_keeps_input_order(tmp_path):
    documents = [EXAMPLE1, {**EXAMPLE1, "version": "nope"}, {**EXAMPLE1, "alpha": [[1, 2], [3, 4]]}]
    states = process_batch(documents, max_workers=3)
    assert [exit_code(s) for s in states] == [0, 2, 0]

    batch = tmp_path / "batch.json"
    batch.write_bytes(orjson.dumps(documents))
    code, results = _run(["batch", str(batch), "--quiet"], tmp_path)
    assert code == 2
    assert [r["status"] for r in results] == ["verified", "error", "verified"]


def test_batch_must_be_an_array(tmp_path):
    batch = tmp_path / "batch.json"
    batch.write_bytes(orjson.dumps(EXAMPLE1))
    code, result = _run(["batch", str(batch), "--quiet"], tmp_path)
    assert code == 2
    assert result["error"]["type"] == "SchemaError"


def test_usage_errors(tmp_path):
    assert run_cli(["fixture", "no_such_fixture"]) == 1
    assert run_cli(["solve", str(tmp_path / "missing.json")]) == 1
    assert run_cli(["solve", "x.json", "--phi", "cubic"]) == 1
    assert run_cli(["frobnicate"]) == 1


def test_fixture_listing():
    assert run_cli(["fixtures"]) == 0


@pytest.mark.parametrize("name", ["example1_iron", "access_example", "example5_contract", "sosd_spread"])
def test_result_document_survives_a_reparse(name, tmp_path):
    code, document = _run(["fixture", name, "--quiet"], tmp_path)
    assert code == 0
    assert ResultDocument.model_validate(document).model_dump() == document
    text = (tmp_path / "result.json").read_text()
    assert render_json(document) == text
    assert orjson.loads(render_json(document)) == document


@pytest.mark.parametrize("seed", range(10))
def test_grid_payload_keeps_every_digit(seed):
    values = np.random.default_rng(seed).normal(scale=1e3, size=(3, 2, 2))
    restored = grid_from_payload(orjson.loads(render_json(grid_payload(values))))
    assert restored.shape == values.shape
    assert np.array_equal(restored, values)


def test_workflow_graph_layout():
    nodes = set(create_workflow().get_graph().nodes)
    assert {"intake", "solve", "verification", "report"} <= nodes


def test_failed_stage_skips_the_report():
    state = create_workflow().invoke(initial_state({**EXAMPLE1, "version": "ironkit-0"}))
    assert state["current_stage"] == "intake_error"
    assert not state.get("result_document")
    assert not state.get("solution")


def test_solver_failure_stops_at_solve():
    state = create_workflow().invoke(initial_state({**EXAMPLE1, "options": {"max_sweeps": 1}}))
    assert state["current_stage"] == "solve_error"
    assert "verification" not in state["processing_time"]
    assert not state.get("result_document")


def test_solver_error_in_a_check_fails_only_that_check(fixtures_dir, monkeypatch):
    def stalled(*args, **kwargs):
        raise NotConverged("flow solve stalled")

    monkeypatch.setattr("workflow.nodes.verification.majorizes", stalled)
    state = process_instance((fixtures_dir / "sosd_spread.json").read_bytes())
    assert exit_code(state) == 4
    assert state["error"] is None
    document = orjson.loads(output_text(state))
    assert document["status"] == "unverified"
    assert "oracle_flow_agree" in str(document["certificates"])


def test_unexpected_error_in_a_check_is_not_swallowed(fixtures_dir, monkeypatch):
    def broken(*args, **kwargs):
        raise RuntimeError("bug in the flow check")

    monkeypatch.setattr("workflow.nodes.verification.majorizes", broken)
    state = process_instance((fixtures_dir / "sosd_spread.json").read_bytes())
    assert exit_code(state) == 4
    assert state["error"]["type"] == "RuntimeError"
    assert state["current_stage"] == "verification_error"
