import numpy as np
import pytest

from mird import tensor as T
from mird.data import SyntheticSpec, generate
from mird.tensor import Tensor
from mird.trainer import (MIRD, TRACE_HEADER, LatentBundle, Regressor, TrainConfig, Trainer,
                          compute_losses, desk_profile, predict, regression_loss, run_training,
                          total_loss)

from helpers import tiny_batch, tiny_config


@pytest.fixture(scope="module")
def data():
    return generate(SyntheticSpec(n_train=24, n_val=8, n_test=8, n_unlabeled=24, d_v=3, d_a=2, vocab=7))


def small_cfg(**kw):
    return tiny_config(**{"batch_size": 8, "epochs": 2, **kw})


class TestRegressor:
    def test_zero_weights_give_bias(self, rng):
        reg = Regressor(rng, 8, 4)
        for p in reg.parameters():
            p.data[...] = 0.0
        reg.l2.bias.data[...] = 0.75
        bundle = LatentBundle(*(Tensor(rng.normal(size=(3, 2))) for _ in range(4)))
        out = predict(bundle, reg)
        assert out.shape == (3,)
        np.testing.assert_array_equal(out.data, 0.75)

    def test_concatenation_order_matters(self, rng):
        reg = Regressor(rng, 8, 4)
        zs = [Tensor(rng.normal(size=(3, 2))) for _ in range(4)]
        a = predict(LatentBundle(*zs), reg).data
        b = predict(LatentBundle(zs[1], zs[0], zs[2], zs[3]), reg).data
        assert not np.allclose(a, b)
        np.testing.assert_array_equal(LatentBundle(*zs).p.data, np.hstack([z.data for z in zs]))


class TestLosses:
    def test_unit_errors(self):
        assert regression_loss(Tensor([1.0, 2.0]), [0.0, 3.0]).item() == pytest.approx(0.0, abs=1e-7)

    def test_perfect(self):
        assert regression_loss(Tensor([1.0, 2.0]), [1.0, 2.0]).item() == pytest.approx(np.log(1e-8))
        assert np.log(1e-8) == pytest.approx(-18.42, abs=5e-3)

    def test_errors_of_two(self):
        assert regression_loss(Tensor([2.0, -2.0]), [0.0, 0.0]).item() == pytest.approx(np.log(4.0), abs=1e-8)

    def test_empty(self):
        with pytest.raises(ValueError):
            regression_loss(Tensor(np.zeros(0)), np.zeros(0))

    def test_total_loss(self):
        assert total_loss(1.0, 2.0, 3.0, 0.0).item() == 3.0
        base = total_loss(1.0, 2.0, 3.0, 0.1).item() - 3.0
        assert total_loss(1.0, 2.0, 3.0, 0.2).item() - 3.0 == pytest.approx(2 * base)


class TestConfig:
    @pytest.mark.parametrize("field, value", [("inner_steps", 0), ("batch_size", 1), ("split_rate", -1.0),
                                              ("alpha", -0.1), ("mode", "xyz"), ("epochs", 0)])
    def test_invalid(self, field, value):
        with pytest.raises(ValueError):
            TrainConfig(**{field: value}).validate()

    def test_published_defaults(self):
        cfg = TrainConfig()
        assert (cfg.batch_size, cfg.epochs, cfg.inner_steps, cfg.lr_mi, cfg.lr_main, cfg.d, cfg.alpha,
                cfg.epsilon) == (32, 100, 5, 1e-3, 1e-5, 64, 0.1, 1.0)

    def test_desk_profile_overrides(self):
        assert desk_profile(seed=3).seed == 3
        assert desk_profile().split_rate == 3.0
        assert TrainConfig(split_rate=3.0, batch_size=32).n_unlabeled == 96


class TestStep:
    def test_unlabeled_rows_do_not_reach_regression(self, rng):
        cfg = tiny_config()
        model = MIRD(cfg, 2, 2, 5)
        batch = tiny_batch(rng, n=6, labeled=[True, True, True, False, False, False])
        bundle = model.encode(batch)
        out = compute_losses(model, cfg, batch, bundle)
        out["l_reg"].backward()
        for z in bundle.as_dict().values():
            assert not np.any(z.grad[3:])
            assert np.any(z.grad[:3])
        batch.labels[3:] = 1e6
        assert compute_losses(model, cfg, batch)["l_reg"].item() == out["l_reg"].item()

    def test_alternation_and_isolation(self, data):
        cfg = small_cfg(split_rate=1.0)
        tr = Trainer(cfg, data.train, data.unlabeled)
        events = []
        var_step, main_step = tr.opt_var.step, tr.opt.step

        def snap(ps):
            return [p.data.copy() for p in ps]

        def wrapped_var(*a, **k):
            before = snap(tr.theta)
            var_step(*a, **k)
            events.append(("var", all(np.array_equal(x, p.data) for x, p in zip(before, tr.theta))))

        def wrapped_main(*a, **k):
            before = snap(tr.theta_var)
            main_step(*a, **k)
            events.append(("main", all(np.array_equal(x, p.data) for x, p in zip(before, tr.theta_var))))

        tr.opt_var.step, tr.opt.step = wrapped_var, wrapped_main
        tr.fit()
        kinds = [e[0] for e in events]
        assert kinds == (["var"] * 5 + ["main"]) * (len(kinds) // 6)
        assert all(ok for _, ok in events)
        assert tr.trace.updates == [(5, 1)] * 6

    def test_theta_and_theta_var_partition(self, data):
        model = MIRD(small_cfg(), 3, 2, 7)
        names = [n for n, _ in model.named_parameters()]
        th, tv = [n for n, _ in model.theta()], [n for n, _ in model.theta_var()]
        assert sorted(th + tv) == sorted(names) and not set(th) & set(tv)
        assert all(n.startswith("estimators.q.") for n in tv) and len(tv) == 9 * 6

    def test_non_mim_modes_skip_estimators(self, data):
        for mode in ("oc", "nc"):
            _, trace = run_training(small_cfg(mode=mode), data.train)
            assert all(u == (0, 1) for u in trace.updates)
            assert np.all(np.isnan(trace.mi_series()))
        _, trace = run_training(small_cfg(mode="nc"), data.train)
        assert all(r.l_mim == 0.0 for r in trace.records)

    def test_batch_size_guard(self, data):
        with pytest.raises(ValueError, match="batch_size"):
            run_training(small_cfg(batch_size=1), data.train)

    def test_labeled_unlabeled_warning(self, data):
        _, trace = run_training(small_cfg(split_rate=0.5), data.train, data.val)
        assert any("labels ignored" in w for w in trace.warnings)

    def test_split_zero_ignores_pool(self, data):
        a = run_training(small_cfg(), data.train, data.unlabeled)[1].to_csv()
        b = run_training(small_cfg(), data.train, None)[1].to_csv()
        assert a == b


class TestTrace:
    def test_one_record_per_epoch_and_header(self, data):
        _, trace = run_training(small_cfg(epochs=3), data.train, val=data.val)
        assert [r.epoch for r in trace.records] == [1, 2, 3]
        lines = trace.to_csv().splitlines()
        assert lines[0] == ",".join(TRACE_HEADER)
        assert lines[0] == "epoch,l_reg,l_recon,l_mim,val_acc,val_f1,val_mae,val_corr"
        assert len(lines) == 4

    def test_deterministic(self, data):
        runs = [run_training(small_cfg(split_rate=1.0), data.train, data.unlabeled, val=data.val)
                for _ in range(2)]
        assert runs[0][1].to_csv() == runs[1][1].to_csv()
        for (n, a), (_, b) in zip(runs[0][0].named_parameters(), runs[1][0].named_parameters()):
            np.testing.assert_array_equal(a.data, b.data, err_msg=n)

    def test_mode_argument_overrides(self, data):
        _, trace = run_training(small_cfg(), data.train, mode="oc")
        assert all(u == (0, 1) for u in trace.updates)
