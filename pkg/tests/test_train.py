"""Optimizer arithmetic, evaluation semantics, and a short training run."""

import numpy as np
import pytest

from msq.dataset import DatasetConfig, gen_dataset
from msq.model import ToyNetConfig
from msq.ms_module import MsModuleConfig
from msq.train import (CSV_HEADER, TrainConfig, ensemble_predict, evaluate,
                       lr_at_epoch, sgd_nesterov_step, temporal_average,
                       train)


class TestSgdNesterov:
    def test_single_step_oracle(self):
        w = {"w": np.array([1.0])}
        g = {"w": np.array([0.5])}
        v = {"w": np.array([0.0])}
        sgd_nesterov_step(w, g, v, lr=0.1, momentum=0.9)
        assert v["w"][0] == pytest.approx(0.5)
        assert w["w"][0] == pytest.approx(0.905)

    def test_zero_momentum_is_plain_sgd(self):
        w = {"w": np.array([2.0, -1.0])}
        g = {"w": np.array([0.5, 0.25])}
        v = {"w": np.zeros(2)}
        sgd_nesterov_step(w, g, v, lr=0.1, momentum=0.0)
        assert np.allclose(w["w"], [2.0 - 0.05, -1.0 - 0.025])

    def test_zero_gradient_decays_velocity(self):
        w = {"w": np.array([1.0])}
        g = {"w": np.array([0.0])}
        v = {"w": np.array([1.0])}
        sgd_nesterov_step(w, g, v, lr=0.1, momentum=0.9)
        assert v["w"][0] == pytest.approx(0.9)
        assert w["w"][0] == pytest.approx(1.0 - 0.1 * 0.81)

    def test_multi_step_recurrence(self):
        # five steps with constant gradient match a scalar unroll
        w = {"w": np.array([1.0])}
        v = {"w": np.array([0.0])}
        g = {"w": np.array([0.3])}
        ws, vs = 1.0, 0.0
        for _ in range(5):
            sgd_nesterov_step(w, g, v, lr=0.05, momentum=0.9)
            vs = 0.9 * vs + 0.3
            ws -= 0.05 * (0.3 + 0.9 * vs)
        assert w["w"][0] == pytest.approx(ws, abs=1e-12)
        assert v["w"][0] == pytest.approx(vs, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            sgd_nesterov_step({"w": np.zeros(2)}, {"w": np.zeros(3)},
                              {"w": np.zeros(2)}, 0.1, 0.9)


class TestLrSchedule:
    def test_piecewise_decay(self):
        cfg = TrainConfig(lr=0.01, decay_epochs=(15, 25), decay_factor=0.1)
        assert lr_at_epoch(cfg, 0) == pytest.approx(0.01)
        assert lr_at_epoch(cfg, 14) == pytest.approx(0.01)
        assert lr_at_epoch(cfg, 15) == pytest.approx(0.001)
        assert lr_at_epoch(cfg, 24) == pytest.approx(0.001)
        assert lr_at_epoch(cfg, 25) == pytest.approx(0.0001)
        assert lr_at_epoch(cfg, 29) == pytest.approx(0.0001)


class TestTemporalAverage:
    def test_mean_over_frames(self):
        logits = np.arange(24, dtype=np.float64).reshape(2, 3, 4)
        avg, _ = temporal_average(logits)
        assert np.allclose(avg, logits.mean(axis=1))

    def test_vjp_distributes(self):
        logits = np.zeros((2, 4, 3))
        _, vjp = temporal_average(logits)
        (dl,) = vjp(np.ones((2, 3)))
        assert np.allclose(dl, 0.25)


class _StubModel:
    """Duck-typed model returning canned per-frame logits."""

    def __init__(self, table):
        self.table = np.asarray(table, dtype=np.float64)

    def forward(self, clips, train=False):
        n, t = clips.shape[:2]
        return np.broadcast_to(self.table[None, None], (n, t) + self.table.shape
                               ).reshape(n, t, -1)[:, :, :self.table.size]


class TestEvaluate:
    def _clips(self, n):
        return np.zeros((n, 2, 1, 4, 4), dtype=np.float32)

    def test_perfect_model(self):
        labels = np.array([3, 3, 3, 3])
        model = _StubModel(np.eye(8)[3] * 10.0)
        assert evaluate(model, self._clips(4), labels) == 1.0

    def test_constant_logits_tie_break(self):
        # ties argmax to index 0: balanced labels give exactly 1/8
        labels = np.arange(8) % 8
        model = _StubModel(np.zeros(8))
        assert evaluate(model, self._clips(8), labels) == pytest.approx(0.125)

    def test_manual_count_fixture(self):
        # 10 clips, predictions fixed to class 2; labels hit it 3 times
        labels = np.array([2, 0, 2, 1, 5, 2, 7, 4, 6, 3])
        model = _StubModel(np.eye(8)[2])
        assert evaluate(model, self._clips(10), labels) == pytest.approx(0.3)

    def test_batching_invariance(self):
        labels = np.array([2, 0, 2, 1, 5, 2, 7, 4, 6, 3])
        model = _StubModel(np.eye(8)[2])
        assert (evaluate(model, self._clips(10), labels, batch_size=3)
                == evaluate(model, self._clips(10), labels, batch_size=64))


class _StubCfg:
    def __init__(self, classes):
        self.classes = classes


class _EnsembleStub(_StubModel):
    def __init__(self, table, classes=8):
        super().__init__(table)
        self.cfg = _StubCfg(classes)


class TestEnsemblePredict:
    def test_identical_models_match_single(self):
        logits = np.arange(8.0)
        m = _EnsembleStub(logits)
        clip = np.zeros((2, 1, 4, 4), dtype=np.float32)
        single = ensemble_predict([m], clip)
        double = ensemble_predict([m, m], clip)
        assert np.allclose(single, double)
        assert single.sum() == pytest.approx(1.0)
        assert np.argmax(single) == 7

    def test_average_of_two(self):
        a = _EnsembleStub(np.eye(8)[1] * 50.0)
        b = _EnsembleStub(np.eye(8)[5] * 50.0)
        clip = np.zeros((2, 1, 4, 4), dtype=np.float32)
        scores = ensemble_predict([a, b], clip)
        assert scores[1] == pytest.approx(0.5, abs=1e-6)
        assert scores[5] == pytest.approx(0.5, abs=1e-6)

    def test_class_count_mismatch(self):
        with pytest.raises(ValueError):
            ensemble_predict([_EnsembleStub(np.zeros(8), 8),
                              _EnsembleStub(np.zeros(4), 4)],
                             np.zeros((2, 1, 4, 4)))

    def test_empty_list(self):
        with pytest.raises(ValueError):
            ensemble_predict([], np.zeros((2, 1, 4, 4)))


@pytest.fixture(scope="module")
def short_run():
    data = gen_dataset(DatasetConfig(frames=4, train_clips=64,
                                     test_clips=64), 0)
    net = ToyNetConfig(frames=4, stage_widths=(8, 16, 16),
                       ms=MsModuleConfig(k=3, transform_widths=(4, 4, 4)),
                       seed=0)
    tcfg = TrainConfig(epochs=2, batch_size=16, seed=0)
    return train(net, data, tcfg)


class TestShortTrainingRun:
    def test_initial_loss_near_uniform(self, short_run):
        _, rows, _ = short_run
        assert rows[0][1] == pytest.approx(np.log(8.0), abs=0.15)

    def test_loss_decreases(self, short_run):
        _, rows, _ = short_run
        assert rows[-1][1] < rows[0][1]

    def test_csv_layout(self, short_run):
        _, rows, csv = short_run
        lines = csv.strip().split("\n")
        assert lines[0] == CSV_HEADER
        assert len(lines) == len(rows) + 1
        fields = lines[1].split(",")
        assert int(fields[0]) == 0
        assert float(fields[1]) == pytest.approx(rows[0][1], abs=1e-6)
