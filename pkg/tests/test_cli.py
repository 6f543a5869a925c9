import csv
import json

import pytest

from cli import main, parse_domain
from config import get_settings
from errors import UsageError
from geometry import Ball, Box


def _json(path):
    with open(path) as fh:
        return json.load(fh)


def _diagnostics(capsys):
    err = capsys.readouterr().err
    return [json.loads(line) for line in err.splitlines() if line.startswith("{")]


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


@pytest.fixture
def params_file(workdir, params):
    path = workdir / "params.json"
    path.write_text(json.dumps(params.model_dump()))
    return str(path)


@pytest.fixture
def cert_file(workdir, cert):
    path = workdir / "cert.json"
    path.write_text(json.dumps(cert.model_dump()))
    return str(path)


def test_parse_domain():
    assert parse_domain("auto") is None
    box = parse_domain("box:1,0.5@0,1", 2)
    assert isinstance(box, Box)
    assert box.center.tolist() == [0.0, 1.0]
    ball = parse_domain("ball:0,0,2")
    assert isinstance(ball, Ball) and ball.radius == 2.0
    with pytest.raises(UsageError):
        parse_domain("simplex:1,2")
    with pytest.raises(UsageError):
        parse_domain("box:1,1,1", 2)


def test_construct_writes_params_and_manifest(workdir):
    assert main(["construct", "--dim", "2", "--out", "p.json", "--family-out", "f.json"]) == 0
    params = _json(workdir / "p.json")
    assert params["r"] == pytest.approx(0.84)
    assert [m["label"] for m in _json(workdir / "f.json")["maps"]] == ["S", "ST"]
    manifest = _json(workdir / "p.json.manifest.json")
    assert manifest["status"] == "passed"
    assert manifest["exit_code"] == 0
    assert manifest["config"]["command"] == "construct"
    assert manifest["config"]["dim"] == 2
    assert manifest["outputs"] == ["p.json", "f.json"]


def test_check_passes_for_found_parameters(workdir, params_file):
    assert main(["check", params_file, "--covering", "--spacing", "0.05"]) == 0
    report = _json(workdir / "check.json")
    assert report["passed"]
    assert report["covering"]["covered"]


def test_check_failure_names_the_inequality(workdir, params, capsys):
    bad = params.model_copy(update={"a": 1.5})
    (workdir / "bad.json").write_text(json.dumps(bad.model_dump()))
    assert main(["check", "bad.json"]) == 1
    diagnostic = _diagnostics(capsys)[-1]
    assert diagnostic["error"] == "VerificationError"
    assert "ar<1" in diagnostic["detail"]["failed"]
    assert _json(workdir / "check.json.manifest.json")["status"] == "failed"


def test_usage_errors_exit_with_two(workdir, capsys):
    assert main(["construct"]) == 2
    assert _diagnostics(capsys)[-1]["error"] == "UsageError"
    assert main(["check", "missing.json"]) == 2
    assert _json(workdir / "check.json.manifest.json")["status"] == "error"
    (workdir / "broken.json").write_text("{not json")
    assert main(["check", "broken.json"]) == 2


def test_invalid_parameter_file_is_a_usage_error(workdir):
    (workdir / "short.json").write_text(json.dumps({"m": 3, "r": 0.9, "s": 0.3, "a": 1.05, "v": [0.8]}))
    assert main(["check", "short.json"]) == 2


def test_fixed_points_and_words(workdir, params_file):
    assert main(["fixed-points", params_file, "--length", "3", "--out", "fp.csv", "--words-out", "words.json"]) == 0
    with open(workdir / "fp.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x1", "x2"]
    assert len(rows) == 9
    words = _json(workdir / "words.json")["words"]
    assert words[0] == ["S", "S", "S"]


def test_fixed_points_budget_error(workdir, params_file, capsys):
    assert main(["fixed-points", params_file, "--length", "5", "--word-budget", "16"]) == 1
    assert _diagnostics(capsys)[-1]["error"] == "BudgetExceededError"


def test_chaos_game_cloud(workdir, params_file):
    assert main(["attractor", params_file, "--method", "chaos", "--n-points", "500", "--out", "cloud.csv"]) == 0
    with open(workdir / "cloud.csv") as fh:
        assert len(fh.readlines()) == 501


def test_certify_from_a_family_needs_a_domain(workdir, params_file):
    assert main(["construct", "--dim", "2", "--out", "p.json", "--family-out", "f.json"]) == 0
    assert main(["certify", "f.json"]) == 2


def test_failed_certificate_exits_with_one(workdir, capsys):
    family = {"dim": 2, "maps": [{"label": "H", "kind": "affine", "matrix": [[0.5, 0.0], [0.0, 0.5]], "shift": [0.0, 0.0]}]}
    (workdir / "h.json").write_text(json.dumps(family))
    assert main(["certify", "h.json", "--domain", "box:1,1", "--spacing", "0.1"]) == 1
    assert _json(workdir / "cert.json")["status"] == "failed"
    assert _diagnostics(capsys)[-1]["detail"]["failed"] == ["covering"]


def test_family_entry_without_label_is_a_usage_error(workdir, capsys):
    family = {"dim": 2, "maps": [{"kind": "affine", "matrix": [[0.5, 0.0], [0.0, 0.5]], "shift": [0.0, 0.0]}]}
    (workdir / "nolabel.json").write_text(json.dumps(family))
    assert main(["certify", "nolabel.json", "--domain", "box:1,1"]) == 2
    diagnostic = _diagnostics(capsys)[-1]
    assert diagnostic["error"] == "UsageError"
    assert diagnostic["detail"]["field"] == "maps[0].label"
    assert _json(workdir / "cert.json.manifest.json")["status"] == "error"


def test_malformed_family_files_exit_with_two(workdir):
    (workdir / "list.json").write_text(json.dumps([1, 2]))
    assert main(["certify", "list.json", "--domain", "box:1,1"]) == 2
    (workdir / "empty.json").write_text(json.dumps({"maps": []}))
    assert main(["certify", "empty.json", "--domain", "box:1,1"]) == 2
    bad_matrix = {"maps": [{"label": "H", "matrix": [[0.5, 0.0]], "shift": [0.0, 0.0]}]}
    (workdir / "matrix.json").write_text(json.dumps(bad_matrix))
    assert main(["certify", "matrix.json", "--domain", "box:1,1"]) == 2


@pytest.mark.parametrize("domain", ["box:", "box:@1,1", "ball:", "ball:0,0,-1", "box:1,-1", "box:a,b"])
def test_unparsable_domains_are_usage_errors(domain):
    with pytest.raises(UsageError):
        parse_domain(domain, 2)


def test_empty_box_domain_exits_with_two(workdir, capsys):
    family = {"dim": 2, "maps": [{"label": "H", "kind": "affine", "matrix": [[0.5, 0.0], [0.0, 0.5]], "shift": [0.0, 0.0]}]}
    (workdir / "h.json").write_text(json.dumps(family))
    assert main(["certify", "h.json", "--domain", "box:"]) == 2
    assert _diagnostics(capsys)[-1]["error"] == "UsageError"


def test_branch_and_orbit_from_a_certificate(workdir, cert_file):
    assert main(["branch", cert_file, "--target", "0.3,0.2,0.1", "--start", "0,0"]) == 0
    plan = _json(workdir / "plan.json")
    assert plan["verified"]
    assert len(plan["word"]) <= plan["bound"] + plan["slack"]
    assert main(["orbit", cert_file, "--radius", "0.1", "--count", "4"]) == 0
    plans = _json(workdir / "orbit.json")["plans"]
    assert len(plans) == 4
    assert plans[1]["start_step"] == plans[0]["end_step"]


def test_branch_target_outside_the_domain(workdir, cert_file, capsys):
    assert main(["branch", cert_file, "--target", "5,5,0.1"]) == 1
    assert _diagnostics(capsys)[-1]["error"] == "DomainError"


def test_trial_rejects_large_epsilon(workdir, cert_file):
    assert main(["trial", cert_file, "--epsilon", "0.5", "--trials", "2"]) == 1
    assert not _json(workdir / "trial.json")["precheck_passed"]


def test_blender_then_mix(workdir, cert_file):
    code = main([
        "blender", cert_file, "--nmax", "20", "--spacing", "0.25",
        "--strip-budget", "4096", "--strips", "strips.csv",
    ])
    assert code == 0
    report = _json(workdir / "blender.json")
    assert report["passed"]
    assert report["product"]["window"] == 1
    assert (workdir / "strips.csv").exists()
    code = main([
        "mix", "blender.json", "--u", "1:0,0,0.3", "--v", "2:0.2,0.1,0.3",
        "--nmin", "20", "--horizon", "30",
    ])
    assert code == 0
    assert _json(workdir / "mix.json")["passed"]


def test_blender_with_a_wider_window(workdir, cert_file):
    assert main(["blender", cert_file, "--window", "2", "--eps", "0.001", "--nmax", "4", "--spacing", "0.25"]) == 1
    report = _json(workdir / "blender.json")
    assert report["window"] == 2
    assert report["epsilon"] == 0.001


def test_mix_needs_a_product(workdir, params_file):
    assert main(["mix", params_file, "--u", "1:0,0,0.3", "--v", "2:0,0,0.3"]) == 2


def test_seed_from_the_environment(workdir, params_file, monkeypatch):
    monkeypatch.setenv("IFS_SEED", "42")
    get_settings.cache_clear()
    assert main(["attractor", params_file, "--method", "chaos", "--n-points", "10", "--seed", "1"]) == 0
    manifest = _json(workdir / "attractor.csv.manifest.json")
    assert manifest["config"]["seed"] == 42
    assert manifest["config"]["options"]["method"] == "chaos"


def test_record_appends_to_the_ledger(workdir, params_file, ledger):
    from database import SessionLocal
    from models import RunRecord

    assert main(["check", params_file, "--record"]) == 0
    db = SessionLocal()
    try:
        records = db.query(RunRecord).all()
        assert len(records) == 1
        assert records[0].command == "check"
        assert records[0].status == "passed"
        assert records[0].manifest_dict["config"]["inputs"] == [params_file]
    finally:
        db.close()
