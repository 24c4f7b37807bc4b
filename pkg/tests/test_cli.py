import subprocess
import sys
from pathlib import Path

import pytest

from boxfuse.cli import build_parser, main
from boxfuse.detections import read_predictions, write_predictions
from boxfuse.suppression import suppress_set

DATA = Path(__file__).parent / "data"
HEADER = "image_id,label,score,xmin,ymin,xmax,ymax\n"


def test_softnms_matches_golden(tmp_path):
    out = tmp_path / "b.csv"
    assert main(["softnms", "--in", str(DATA / "softnms_in.csv"), "--out", str(out), "--sigma", "0.5"]) == 0
    assert out.read_bytes() == (DATA / "softnms_golden.csv").read_bytes()


def test_softnms_rejects_zero_sigma(tmp_path, capsys):
    code = main(["softnms", "--in", str(DATA / "softnms_in.csv"), "--out", str(tmp_path / "b.csv"), "--sigma", "0"])
    assert code == 2
    err = capsys.readouterr().err.strip()
    assert "sigma must be > 0" in err
    assert len(err.splitlines()) == 1
    assert not (tmp_path / "b.csv").exists()


def test_empty_input(tmp_path):
    src = tmp_path / "a.csv"
    src.write_text(HEADER)
    for cmd in ("nms", "softnms"):
        out = tmp_path / f"{cmd}.csv"
        assert main([cmd, "--in", str(src), "--out", str(out)]) == 0
        assert out.read_text() == HEADER


def test_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text(HEADER + "img1,Car,1.2,0.1,0.1,0.3,0.3\n")
    assert main(["nms", "--in", str(bad), "--out", str(tmp_path / "o.csv")]) == 1
    assert ":2:" in capsys.readouterr().err
    assert main(["nms", "--in", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "o.csv")]) == 3
    assert main(["nms", "--in", str(DATA / "softnms_in.csv"), "--out", str(tmp_path / "no" / "dir" / "o.csv")]) == 3
    assert main(["nms", "--iou", "abc", "--in", "x", "--out", "y"]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["ensemble", "--in", str(DATA / "model_a.csv"), "--out", str(tmp_path / "o.csv"), "--k", "0"]) == 2
    assert main(["nms", "--in", str(DATA / "softnms_in.csv"), "--out", str(tmp_path / "o.csv"), "--threads", "0"]) == 2


def test_threads_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("BOXFUSE_THREADS", "nope")
    assert main(["nms", "--in", str(DATA / "softnms_in.csv"), "--out", str(tmp_path / "o.csv")]) == 2
    monkeypatch.setenv("BOXFUSE_THREADS", "4")
    assert main(["nms", "--in", str(DATA / "softnms_in.csv"), "--out", str(tmp_path / "o.csv")]) == 0


def test_ensemble_single_input_k1_reduces_to_input(tmp_path):
    nmsd = tmp_path / "nmsd.csv"
    write_predictions(suppress_set(read_predictions(DATA / "softnms_in.csv"), algorithm="nms"), nmsd)
    out = tmp_path / "o.csv"
    assert main(["ensemble", "--in", str(nmsd), "--out", str(out), "--k", "1", "--mode", "score", "--iou", "0.5"]) == 0
    assert out.read_bytes() == nmsd.read_bytes()


def test_ensemble_duplicate_inputs(tmp_path):
    single = tmp_path / "single.csv"
    double = tmp_path / "double.csv"
    src = str(DATA / "ensemble_golden.csv")
    assert main(["ensemble", "--in", src, "--out", str(single), "--k", "2"]) == 0
    assert main(["ensemble", "--in", src, src, "--out", str(double), "--k", "2"]) == 0
    assert double.read_bytes() == single.read_bytes()


def test_ensemble_matches_golden(tmp_path):
    out, sub = tmp_path / "o.csv", tmp_path / "s.csv"
    models = [str(DATA / f"model_{n}.csv") for n in "abc"]
    assert main(["ensemble", "--in", *models, "--out", str(out), "--submission", str(sub)]) == 0
    assert out.read_bytes() == (DATA / "ensemble_golden.csv").read_bytes()
    assert sub.read_bytes() == (DATA / "ensemble_submission_golden.csv").read_bytes()


def test_ensemble_golden_is_the_mean_of_the_three_models():
    models = [read_predictions(DATA / f"model_{n}.csv") for n in "abc"]
    fused = read_predictions(DATA / "ensemble_golden.csv")
    for img in fused:
        for f in fused[img]:
            # each golden object has exactly one detection per model near it
            matches = [min(m[img], key=lambda d: sum(abs(a - b) for a, b in zip(d.box.as_tuple(), f.box.as_tuple())))
                       for m in models]
            assert f.score == pytest.approx(sum(d.score for d in matches) / 3, abs=2e-6)
            for i, c in enumerate(f.box.as_tuple()):
                assert c == pytest.approx(sum(d.box.as_tuple()[i] for d in matches) / 3, abs=2e-6)


def test_eval_perfect_and_worked_example(tmp_path, capsys):
    gt = str(DATA / "ap_gt.csv")
    perfect = tmp_path / "p.csv"
    perfect.write_text(HEADER + "i1,A,0.5,0.1,0.1,0.3,0.3\ni2,A,0.4,0.6,0.6,0.9,0.9\n")
    assert main(["eval", "--pred", str(perfect), "--gt", gt]) == 0
    assert capsys.readouterr().out.splitlines()[-1] == "mAP=1.000000"
    report = tmp_path / "r.csv"
    assert main(["eval", "--pred", str(DATA / "ap_pred.csv"), "--gt", gt, "--out", str(report)]) == 0
    assert capsys.readouterr().out.splitlines()[-1] == "mAP=0.833333"
    assert report.read_text().splitlines() == [
        "label,ap,tp,fp,fn,gt_count",
        "A,0.833333,2,1,0,2",
        "__mAP__,0.833333,,,,",
    ]


def test_eval_disjoint_vocabularies_warns(tmp_path, capsys):
    pred = tmp_path / "p.csv"
    pred.write_text(HEADER + "i1,Z,0.5,0.1,0.1,0.3,0.3\n")
    assert main(["eval", "--pred", str(pred), "--gt", str(DATA / "ap_gt.csv")]) == 0
    captured = capsys.readouterr()
    assert captured.out.splitlines()[-1] == "mAP=0.000000"
    assert "warning" in captured.err


def run_simulate(out, *extra):
    return main(["simulate", "--seed", "42", "--images", "40", "--out", str(out), *extra])


def tree(path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir())}


def test_simulate_is_deterministic(tmp_path):
    assert run_simulate(tmp_path / "a") == 0
    assert run_simulate(tmp_path / "b", "--threads", "4") == 0
    a = tree(tmp_path / "a")
    assert set(a) == {"gt.csv", "ablation.csv", "summary.csv", *(f"det{i}.csv" for i in range(5))}
    assert a == tree(tmp_path / "b")


def test_simulate_noiseless(tmp_path):
    assert run_simulate(tmp_path, "--jitter", "0", "--miss", "0", "--fp", "0") == 0
    rows = (tmp_path / "ablation.csv").read_text().splitlines()[1:]
    assert rows and all(r.split(",")[1] == "1.000000" for r in rows)


def test_simulate_requires_seed(tmp_path):
    assert main(["simulate", "--out", str(tmp_path)]) == 2
    assert run_simulate(tmp_path, "--methods", "bogus") == 2


def test_every_flag_is_documented():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.__class__.__name__ == "_SubParsersAction")
    assert set(sub.choices) == {"nms", "softnms", "ensemble", "eval", "simulate"}
    for name, p in sub.choices.items():
        for action in p._actions:
            if action.option_strings and action.dest != "help":
                assert action.help, f"{name} {action.option_strings} has no help"
                if action.default not in (None, False) and not isinstance(action.default, bool) and action.nargs != 0:
                    assert "default" in action.help, f"{name} {action.option_strings} hides its default"


def test_module_entry_point_help():
    result = subprocess.run([sys.executable, "-m", "boxfuse", "ensemble", "--help"], capture_output=True, text=True)
    assert result.returncode == 0
    assert "--all-members" in result.stdout
