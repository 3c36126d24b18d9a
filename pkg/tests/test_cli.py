import hashlib
import io

import pytest

from card.cli import main
from card.generator import init_params, load_checkpoint, save_checkpoint
from card.manifest import write_manifest
from card.sim import scenario_manifest

THREE = """\
[agents]
planner
  role = Planner
  base_model = gpt-4o-mini
searcher
  role = Searcher
  base_model = gpt-4o-mini
  plugins = Google
critic
  role = Critic
  base_model = gpt-4o
[conditions]
*
  input_price = 0.15 USD/1M tokens
  output_price = 0.6 USD/1M tokens
  model_quality = 0.35
searcher
  tool_quality = 0.9
"""


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), out, err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture
def files(tmp_path):
    manifest = tmp_path / "three.txt"
    manifest.write_text(THREE)
    ckpt = tmp_path / "ckpt.txt"
    save_checkpoint(init_params(seed=3), ckpt)
    return tmp_path, manifest, ckpt


def test_generate_prints_masked_grid(files):
    _, manifest, ckpt = files
    code, out, _ = run("generate", "--manifest", str(manifest), "--checkpoint", str(ckpt), "--query", "Why?")
    assert code == 0
    grid = out.splitlines()[:3]
    for k, row in enumerate(grid):
        assert row.split("|")[1].split()[k] == "Masked"
    assert "schedule:" in out and "edges:" in out


def test_generate_is_deterministic(files):
    _, manifest, ckpt = files
    args = ("generate", "--manifest", str(manifest), "--checkpoint", str(ckpt), "--query", "Why?", "--machine")
    assert run(*args) == run(*args)
    assert "Masked" not in run(*args)[1]


def test_missing_checkpoint_is_exit_2(files):
    tmp, manifest, _ = files
    code, _, err = run("generate", "--manifest", str(manifest), "--checkpoint", str(tmp / "gone.txt"), "--query", "q")
    assert code == 2 and "gone.txt" in err


def test_manifest_parse_error_is_exit_2_with_position(files):
    tmp, _, ckpt = files
    bad = tmp / "bad.txt"
    bad.write_text("[agents]\nx\n  colour = red\n")
    code, _, err = run("generate", "--manifest", str(bad), "--checkpoint", str(ckpt), "--query", "q")
    assert code == 2 and "bad.txt:3:3:" in err


def test_validation_failure_is_exit_3(files):
    _, manifest, ckpt = files
    code, _, _ = run("generate", "--manifest", str(manifest), "--checkpoint", str(ckpt), "--query", "q",
                     "--tau", "1.5")
    assert code == 3


def test_adapt_identical_manifests(files):
    _, manifest, ckpt = files
    code, out, _ = run("adapt", "--checkpoint", str(ckpt), "--manifest", str(manifest),
                       "--new-manifest", str(manifest), "--query", "q")
    assert code == 0
    assert "changed entries: 0;" in out and "topology identical: yes" in out
    assert out.rstrip().endswith("unchanged")


def test_adapt_changed_feature(files):
    tmp, manifest, ckpt = files
    new = tmp / "new.txt"
    new.write_text(THREE.replace("tool_quality = 0.9", "tool_quality = 0.2"))
    digest = hashlib.sha256(ckpt.read_bytes()).hexdigest()
    code, out, _ = run("adapt", "--checkpoint", str(ckpt), "--manifest", str(manifest),
                       "--new-manifest", str(new), "--query", "q")
    assert code == 0 and "changed entries: 0;" not in out
    assert f"checkpoint sha256 {digest} unchanged" in out
    assert hashlib.sha256(ckpt.read_bytes()).hexdigest() == digest


def test_adapt_roster_mismatch_is_exit_3(files):
    tmp, manifest, ckpt = files
    other = tmp / "other.txt"
    other.write_text(THREE.replace("critic\n  role", "judge\n  role"))
    code, _, _ = run("adapt", "--checkpoint", str(ckpt), "--manifest", str(manifest),
                     "--new-manifest", str(other), "--query", "q")
    assert code == 3


def test_report_bundled_and_errors(tmp_path):
    code, out, _ = run("report", "--bundled", "--reference-only")
    assert code == 0 and "Matrix 1 vs Matrix 3" in out
    code, out, _ = run("report", "--bundled", "--json", "--convention", "upper-without-first")
    assert code == 0 and '"r": 0.9797' in out
    one = tmp_path / "one.txt"
    one.write_text("Masked 0.5\n0.2 Masked\n")
    assert run("report", str(one))[0] == 2
    three = tmp_path / "three.txt"
    three.write_text("Masked 0.5 0.1\n0.2 Masked 0.3\n0.4 0.6 Masked\n")
    assert run("report", str(one), str(three))[0] == 3
    broken = tmp_path / "broken.txt"
    broken.write_text("Masked 0.5\n0.2 oops\n")
    code, _, err = run("report", str(one), str(broken))
    assert code == 2 and "broken.txt:2:5" in err


def test_train_zero_steps_writes_initial_checkpoint(tmp_path):
    code, out, _ = run("train", "--steps", "0", "--tasks", "8", "--seed", "5", "--out", str(tmp_path))
    assert code == 0 and "final mean utility" in out
    assert load_checkpoint(tmp_path / "checkpoint.txt") == init_params(seed=5)
    assert (tmp_path / "metrics.tsv").read_text() == "step\tloss\tmean_utility\tsoft_cost\tbaseline\n"


def test_train_metrics_are_reproducible(tmp_path, monkeypatch):
    outs = []
    for name in ("a", "b"):
        monkeypatch.setenv("CARD_OUTPUT_DIR", str(tmp_path / name))
        monkeypatch.setenv("CARD_SEED", "2")
        assert run("train", "--steps", "4", "--tasks", "8", "--samples", "2", "--batch-size", "2")[0] == 0
        outs.append((tmp_path / name / "metrics.tsv").read_bytes())
    assert outs[0] == outs[1] and len(outs[0].splitlines()) == 5


def test_env_seed_must_be_integer(tmp_path, monkeypatch):
    monkeypatch.setenv("CARD_SEED", "abc")
    assert run("train", "--steps", "0", "--out", str(tmp_path))[0] == 3


def test_train_non_finite_is_exit_4(tmp_path, monkeypatch):
    monkeypatch.setattr("card.sim.SimEnvironment.utility", lambda self, *a, **k: float("nan"))
    code, _, err = run("train", "--steps", "1", "--tasks", "4", "--out", str(tmp_path))
    assert code == 4 and "non-finite" in err


def test_train_from_manifest(tmp_path):
    manifest = tmp_path / "weak.txt"
    manifest.write_text(write_manifest(scenario_manifest("weak-model")))
    code, out, _ = run("train", "--manifest", str(manifest), "--steps", "2", "--tasks", "4", "--samples", "2",
                       "--batch-size", "2", "--out", str(tmp_path / "run"))
    assert code == 0 and (tmp_path / "run" / "checkpoint.txt").exists()


def test_simulate(tmp_path):
    code, out, _ = run("simulate", "--scenario", "weak-model", "--tasks", "8", "--repeats", "2")
    assert code == 0 and "mean utility" in out
    code, out, _ = run("simulate", "--task", "1", "--tasks", "4")
    assert code == 0 and out.splitlines()[2].startswith("round\tagent")
    path = tmp_path / "s.txt"
    assert run("simulate", "--scenario", "strong-tool", "--write-manifest", str(path))[0] == 0
    assert "[conditions]" in path.read_text()
    assert run("simulate", "--scenario", "mixed", "--write-manifest", str(path))[0] == 3
    assert run("simulate", "--task", "99", "--tasks", "4")[0] == 3


def test_unknown_command_is_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["explode"], io.StringIO(), io.StringIO())
    assert info.value.code == 2
