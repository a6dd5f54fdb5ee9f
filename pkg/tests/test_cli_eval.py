import json
import logging

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from repgelan.boxes import parse_detections
from repgelan.cli import main
from repgelan.data import write_pgm
from repgelan.estimator import RepGelanDetector
from repgelan.evaluate import evaluate_samples, run_eval
from repgelan.exceptions import FormatError
from repgelan.graph import same_graph
from repgelan.weights import save_weights

from planted import EXPECTED_AP50, EXPECTED_AP50_95, write_planted


@pytest.fixture
def planted(tmp_path):
    return write_planted(tmp_path)


class TestEvaluate:
    def test_planted(self, planted):
        data, pred = planted
        r = run_eval(data, pred_dir=pred)
        assert (r.precision, r.recall) == (0.8, 0.8)
        assert (r.ap50, r.ap50_95) == (EXPECTED_AP50, EXPECTED_AP50_95)
        assert (r.n_images, r.n_ground_truths, r.n_detections, r.empty) == (4, 5, 5, False)

    def test_conf_filters_pr_only(self, planted):
        data, pred = planted
        r = run_eval(data, pred_dir=pred, conf_thresh=0.65)
        # only the 0.9, 0.8 and 0.7 detections count for P/R
        assert (r.precision, r.recall) == (1.0, 0.6)
        assert r.ap50 == EXPECTED_AP50

    def test_missing_label_skipped(self, planted, caplog):
        data, pred = planted
        (data / "labels" / "img3.txt").unlink()
        with caplog.at_level(logging.WARNING):
            r = run_eval(data, pred_dir=pred)
        assert r.n_skipped == 1 and r.n_images == 4 and r.n_ground_truths == 4
        assert "img3" in caplog.text
        assert "skipped" in r.table()

    def test_missing_prediction_file(self, planted):
        data, pred = planted
        (pred / "img2.txt").unlink()
        assert run_eval(data, pred_dir=pred).recall == 0.6

    def test_unreadable_image(self, planted):
        data, pred = planted
        (data / "images" / "img1.pgm").write_bytes(b"P2\n1 1\n255\n0\n")
        with pytest.raises(FormatError, match="img1"):
            run_eval(data, pred_dir=pred)

    def test_bad_label(self, planted):
        data, pred = planted
        (data / "labels" / "img1.txt").write_text("0 0.5 0.5 0.5 0.5\n0 2 0.5 0.1 0.1\n")
        with pytest.raises(FormatError, match="line 2"):
            run_eval(data, pred_dir=pred)

    def test_empty(self):
        r = evaluate_samples([])
        assert r.empty and (r.precision, r.recall, r.ap50, r.ap50_95) == (0, 0, 0, 0)
        assert "empty" in r.table()

    def test_with_model(self, tmp_path, toy_graph):
        (tmp_path / "images").mkdir()
        (tmp_path / "labels").mkdir()
        write_pgm(tmp_path / "images" / "a.pgm", np.zeros((128, 128), int))
        (tmp_path / "labels" / "a.txt").write_text("0 0.5 0.5 0.2 0.2\n")
        r = run_eval(tmp_path, graph=toy_graph, conf_thresh=0.05)
        assert r.n_images == 1 and 0 <= r.precision <= 1
        with pytest.raises(ValueError):
            run_eval(tmp_path)

    def test_report_json_fields(self, planted):
        d = json.loads(run_eval(planted[0], pred_dir=planted[1]).to_json())
        for key in ("precision", "recall", "ap50", "ap50_95", "params_millions", "gflops"):
            assert key in d


class TestCli:
    def test_eval_with_pred(self, planted, tmp_path, capsys):
        data, pred = planted
        out = tmp_path / "report.json"
        assert main(["eval", "--data", str(data), "--pred", str(pred), "--conf", "0.25",
                     "--iou-nms", "0.45", "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        assert report["ap50"] == EXPECTED_AP50 and report["precision"] == 0.8
        assert "AP50:95" in capsys.readouterr().out

    def test_eval_with_cfg_accounting(self, planted, tmp_path):
        data, pred = planted
        out = tmp_path / "r.json"
        main(["eval", "--data", str(data), "--pred", str(pred), "--cfg", "toy.cfg", "--size", "128", "--out", str(out)])
        report = json.loads(out.read_text())
        assert report["params_millions"] > 0 and report["gflops"] > 0

    def test_build(self, capsys):
        assert main(["build", "toy.cfg", "--size", "128"]) == 0
        out = capsys.readouterr().out
        assert "16.DDetect" in out and "strides [8, 16, 32]" in out

    def test_build_error_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("nc: 1\nlayers:\n  - [-1, 1, Foo, []]\n")
        assert main(["build", str(bad)]) == 2
        assert "Foo" in capsys.readouterr().err

    def test_flops_json(self, capsys):
        assert main(["flops", "toy.cfg", "--size", "128", "--nodes"]) == 0
        d = json.loads(capsys.readouterr().out)
        assert d["input_size"] == 128 and len(d["nodes"]) == 17 and "comparison" not in d

    def test_flops_targets(self, capsys):
        main(["flops", "toy.cfg", "--size", "128", "--target-params", "1.0", "--target-gflops", "1.0"])
        captured = capsys.readouterr()
        d = json.loads(captured.out)
        assert d["comparison"]["params"]["within"] is False
        assert "total" in captured.err

    def test_fuse_check(self, tmp_path, capsys):
        path = tmp_path / "fused.rgw"
        assert main(["fuse", "toy.cfg", "--check", "--conf", "0.05", "--save", str(path)]) == 0
        assert "fusion check passed" in capsys.readouterr().out
        assert path.read_bytes()[:4] == b"RGW1"

    def test_detect(self, tmp_path, capsys):
        img = tmp_path / "x.pgm"
        write_pgm(img, np.random.default_rng(0).integers(0, 256, (128, 128)))
        assert main(["detect", "toy.cfg", str(img), "--conf", "0.05", "--iou", "0.45"]) == 0
        dets = parse_detections(capsys.readouterr().out)
        assert dets and all(0.05 <= d.score < 1 for d in dets)

    def test_detect_bad_size(self, tmp_path, capsys):
        img = tmp_path / "x.pgm"
        write_pgm(img, np.zeros((100, 100), int))
        assert main(["detect", "toy.cfg", str(img)]) == 2

    def test_selfcheck(self, capsys):
        assert main(["selfcheck"]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out and out.count("PASS") == 8


class TestEstimator:
    def test_fit_predict_score(self, rng):
        est = RepGelanDetector("toy.cfg", input_size=128, conf_thresh=0.05, random_state=1).fit()
        assert est.strides_ == [8, 16, 32] and est.n_params_ > 0 and est.gflops_ > 0
        X = rng.random((2, 128, 128)).astype(np.float32)
        preds = est.predict(X)
        assert len(preds) == 2
        y = [[(0, 32, 32, 64, 64)], []]
        assert 0.0 <= est.score(X, y) <= 1.0
        assert 0.0 <= est.score_range(X, y) <= 1.0

    def test_clone_and_params(self):
        est = RepGelanDetector("toy.cfg", input_size=128)
        c = clone(est)
        assert c.get_params() == est.get_params()
        c.set_params(fuse=False)
        assert not c.fit().graph_.is_fused

    def test_unfitted(self):
        with pytest.raises(NotFittedError):
            RepGelanDetector("toy.cfg").predict(np.zeros((1, 128, 128)))

    def test_weights(self, toy_graph, tmp_path):
        path = tmp_path / "w.rgw"
        save_weights(toy_graph, path)
        est = RepGelanDetector("toy.cfg", input_size=128, weights=str(path), fuse=False, random_state=7).fit()
        assert same_graph(est.graph_, toy_graph)

    def test_bad_input(self):
        est = RepGelanDetector("toy.cfg", input_size=128).fit()
        with pytest.raises(ValueError):
            est.predict(np.zeros((1, 3, 128, 128)))
