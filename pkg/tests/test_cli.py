import json
import math
from pathlib import Path

import pytest

from quadgrowth.cli import main
from quadgrowth.output import sha256

ROOT = Path(__file__).resolve().parents[1]
EXAMPLES = ROOT / "configs" / "examples"


def _cfg(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_example_action_matches_closed_form(tmp_path):
    out = tmp_path / "o"
    assert main(["classical", "action", "--config", str(EXAMPLES / "action_harmonic.toml"), "--out", str(out)]) == 0
    line = (out / "action.csv").read_text().splitlines()[1].split(",")
    t, x, y, S = (float(v) for v in line[:4])
    exact = ((x * x + y * y) * math.cos(t) - 2 * x * y) / (2 * math.sin(t))
    assert S == pytest.approx(exact, rel=1e-10)


def test_manifest_lists_every_output(tmp_path):
    out = tmp_path / "o"
    assert main(["classical", "flow", "--config", str(EXAMPLES / "flow_harmonic.toml"), "--out", str(out)]) == 0
    m = _manifest(out)
    assert m["command"] == "classical" and m["operation"] == "flow"
    listed = {e["file"] for e in m["outputs"]}
    on_disk = {p.name for p in out.iterdir()} - {"manifest.json"}
    assert listed == on_disk
    for e in m["outputs"]:
        data = (out / e["file"]).read_bytes()
        assert e["sha256"] == sha256(data) and e["bytes"] == len(data)
    assert {"config_hash", "params", "seed", "version", "wall_time_s"} <= set(m)


def test_rerun_is_byte_identical(tmp_path):
    cfg = str(EXAMPLES / "verify_perturbed.toml")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["verify-potential", "--config", cfg, "--out", str(a), "--seed", "3"]) == 0
    assert main(["verify-potential", "--config", cfg, "--out", str(b), "--seed", "3", "--workers", "1"]) == 0
    ma, mb = _manifest(a), _manifest(b)
    assert ma["outputs"] == mb["outputs"]
    assert ma["config_hash"] == mb["config_hash"]


def test_seed_changes_config_hash(tmp_path):
    cfg = str(EXAMPLES / "verify_perturbed.toml")
    assert main(["verify-potential", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "1"]) == 0
    assert main(["verify-potential", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "2"]) == 0
    assert _manifest(tmp_path / "a")["config_hash"] != _manifest(tmp_path / "b")["config_hash"]


def test_environment_overrides(tmp_path, monkeypatch):
    out = tmp_path / "env_out"
    monkeypatch.setenv("QUADGROWTH_CONFIG", str(EXAMPLES / "bvp_harmonic.toml"))
    monkeypatch.setenv("QUADGROWTH_OUT", str(out))
    monkeypatch.setenv("QUADGROWTH_SEED", "11")
    assert main(["classical", "bvp"]) == 0
    assert _manifest(out)["seed"] == 11
    flag_out = tmp_path / "flag_out"
    assert main(["classical", "bvp", "--out", str(flag_out), "--seed", "5"]) == 0
    assert _manifest(flag_out)["seed"] == 5


def test_malformed_config_exit_2_and_no_outputs(tmp_path, capsys):
    cfg = _cfg(tmp_path, "[potential\nname = 'harmonic'\n")
    out = tmp_path / "o"
    assert main(["classical", "bvp", "--config", str(cfg), "--out", str(out)]) == 2
    assert not out.exists()
    assert "ConfigError" in capsys.readouterr().err


@pytest.mark.parametrize(
    "text",
    [
        '[potential]\nname = "harmonic"\n[bvp]\nx = [1.0]\ny = [-1.0]\nt = 0.5\ntol_typo = 1e-9\n',
        '[potential]\nname = "harmonic"\nomega = 2.0\n[bvp]\nx = [1.0]\ny = [-1.0]\nt = 0.5\n',
        '[potential]\nname = "harmonic"\n[bvp]\nx = [1.0]\ny = [-1.0]\nt = 0.5\n[extra]\na = 1\n',
        '[potential]\nname = "harmonic"\n[bvp]\nx = [1.0]\ny = [-1.0]\nt = "half"\n',
        '[potential]\nname = "cubic"\n[bvp]\nx = [1.0]\ny = [-1.0]\nt = 0.5\n',
    ],
)
def test_invalid_configs_exit_2(tmp_path, text):
    out = tmp_path / "o"
    assert main(["classical", "bvp", "--config", str(_cfg(tmp_path, text)), "--out", str(out)]) == 2
    assert not out.exists()


def test_meta_table_is_allowed(tmp_path):
    text = '[meta]\nnote = "x"\n[potential]\nname = "harmonic"\n[bvp]\nx = [1.0]\ny = [-1.0]\nt = 0.5\n'
    assert main(["classical", "bvp", "--config", str(_cfg(tmp_path, text)), "--out", str(tmp_path / "o")]) == 0


def test_missing_config_file_exit_2(tmp_path):
    assert main(["classical", "bvp", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path / "o")]) == 2


def test_focal_violation_exit_3(tmp_path):
    # harmonic focal time is pi
    text = '[potential]\nname = "harmonic"\n[bvp]\nx = [1.0]\ny = [-1.0]\nt = 3.5\n'
    out = tmp_path / "o"
    assert main(["classical", "bvp", "--config", str(_cfg(tmp_path, text)), "--out", str(out)]) == 3
    assert not out.exists()


def test_non_convergence_exit_4(tmp_path):
    text = (
        '[potential]\nname = "perturbed_quadratic"\ndelta = 0.5\neps = 0.3\nk = 1.0\n'
        "[bvp]\nx = [4.0]\ny = [-4.0]\nt = 1.0\nmax_iter = 1\ntol = 1e-300\n"
    )
    out = tmp_path / "o"
    assert main(["classical", "bvp", "--config", str(_cfg(tmp_path, text)), "--out", str(out)]) == 4
    assert not out.exists()


def test_bad_workers_exit_2(tmp_path):
    cfg = str(EXAMPLES / "bvp_harmonic.toml")
    assert main(["classical", "bvp", "--config", cfg, "--out", str(tmp_path / "o"), "--workers", "0"]) == 2


def test_unknown_operation_is_a_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["classical", "teleport", "--config", "x.toml"])
    assert exc.value.code == 2


def test_ground_state_profile_matches_closed_form(tmp_path):
    text = "[ground_state]\nL = 3.2\nn = 64\nradius = 2.0\n"
    out = tmp_path / "o"
    assert main(["nls", "ground-state", "--config", str(_cfg(tmp_path, text)), "--out", str(out)]) == 0
    rows = [r.split(",") for r in (out / "profile.csv").read_text().splitlines()[1:]]
    for x, w, _ in rows:
        assert float(w) == pytest.approx((1 + 2 * float(x) ** 2 / 3) ** -0.5, rel=1e-12)
    for _, w, ref in rows:
        assert float(w) == pytest.approx(float(ref), rel=1e-12)
