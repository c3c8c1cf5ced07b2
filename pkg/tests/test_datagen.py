import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import two_bus
from icnnopf.datagen import (
    Dataset,
    DatasetError,
    LabeledSample,
    NoFeasibleSamples,
    PerturbationConfig,
    dumps_dataset,
    generate,
    import_labeled,
    load_dataset,
    loads_dataset,
    sample_loads,
    save_dataset,
    split,
    split_counts,
)
from icnnopf.lp import INFEASIBLE
from icnnopf.opf import value_and_gradient


def sample(i, z=1.0, status="optimal", n=2, form="dc"):
    y = None if status != "optimal" else [0.5] * (n if form == "dc" else 2 * n)
    return LabeledSample(
        id=i,
        seed=i,
        alpha=1.0,
        formulation=form,
        pd=np.ones(n),
        qd=None if form == "dc" else np.ones(n),
        z=z if status == "optimal" else None,
        y=None if y is None else np.array(y),
        status=status,
    )


class TestPerturbationConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [{"alpha_range": (0.0, 1.0)}, {"alpha_range": (1.2, 1.0)}, {"eta_std": -0.1}, {"fractions": (0.5, 0.5, 0.5)}],
    )
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ValueError):
            PerturbationConfig(**kwargs)

    def test_lognormal_moments(self):
        cfg = PerturbationConfig(eta_std=0.05)
        mu, sigma = cfg.lognormal_params()
        assert sigma == pytest.approx(math.sqrt(math.log(1 + 0.05**2)), rel=1e-15)
        draws = np.random.default_rng(2024).lognormal(mu, sigma, 10**6)
        assert draws.mean() == pytest.approx(1.0, abs=5e-4)
        assert draws.std() == pytest.approx(0.05, rel=1e-3)


class TestSampleLoads:
    def test_degenerate_noise_gives_reference(self, case14):
        cfg = PerturbationConfig(alpha_range=(1.0, 1.0), eta_std=0.0, count=3)
        pd, qd = sample_loads(case14, cfg, 2)
        np.testing.assert_array_equal(pd, case14.pd)
        np.testing.assert_array_equal(qd, case14.qd)

    def test_deterministic_and_order_independent(self, case14):
        cfg = PerturbationConfig(count=50, seed=9)
        later = sample_loads(case14, cfg, 40)
        for i in range(40):
            sample_loads(case14, cfg, i)
        again = sample_loads(case14, cfg, 40)
        np.testing.assert_array_equal(later[0], again[0])
        assert not np.array_equal(sample_loads(case14, cfg, 39)[0], later[0])

    def test_same_factor_on_active_and_reactive(self, case14):
        pd, qd = sample_loads(case14, PerturbationConfig(count=1), 0)
        both = (case14.pd != 0) & (case14.qd != 0)
        np.testing.assert_allclose(pd[both] / case14.pd[both], qd[both] / case14.qd[both], rtol=1e-14)

    def test_alpha_within_range(self, case2):
        cfg = PerturbationConfig(alpha_range=(0.7, 0.9), eta_std=0.0, count=200)
        ratios = [sample_loads(case2, cfg, i)[0].sum() / case2.pd.sum() for i in range(200)]
        assert 0.7 <= min(ratios) and max(ratios) <= 0.9

    def test_index_out_of_range(self, case2):
        with pytest.raises(IndexError):
            sample_loads(case2, PerturbationConfig(count=2), 2)


class TestGenerate:
    def test_toy_all_feasible_and_split(self):
        ds = generate(two_bus(), PerturbationConfig(alpha_range=(0.5, 1.0), count=100, seed=3))
        assert ds.counts() == {"train": 40, "valid": 30, "test": 30, "infeasible": 0}
        assert all(s.optimal and s.y.shape == (2,) and s.qd is None for s in ds.samples)

    def test_monotone_in_alpha(self):
        ds = generate(two_bus(), PerturbationConfig(alpha_range=(0.5, 1.0), eta_std=0.0, count=60, seed=1))
        z = [s.z for s in sorted(ds.samples, key=lambda s: s.alpha)]
        assert np.all(np.diff(z) >= -1e-9)

    def test_capacity_violation_excluded(self):
        ds = generate(two_bus(pmax=2.0), PerturbationConfig(alpha_range=(1.5, 3.0), eta_std=0.0, count=40, seed=2))
        bad = [s for s in ds.samples if not s.optimal]
        assert bad and all(s.status == INFEASIBLE and s.split is None and s.y is None for s in bad)
        assert ds.counts()["infeasible"] == len(bad)
        assert sum(ds.counts()[k] for k in ("train", "valid", "test")) == 40 - len(bad)
        assert ds.meta["feasible_fraction"] == pytest.approx(1 - len(bad) / 40)

    def test_all_infeasible_fails(self):
        with pytest.raises(NoFeasibleSamples):
            generate(two_bus(pmax=1.0), PerturbationConfig(alpha_range=(2.0, 3.0), eta_std=0.0, count=5))

    def test_deterministic_bytes(self, case5):
        cfg = PerturbationConfig(count=15, seed=11)
        assert dumps_dataset(generate(case5, cfg)) == dumps_dataset(generate(case5, cfg))

    def test_labels_reproduce_on_resolve(self, case14_small, case14):
        for s in case14_small.samples[:20]:
            v = value_and_gradient(case14, s.pd)
            assert abs(v.z - s.z) <= 1e-8 * abs(s.z)

    def test_gradient_labels_match_finite_differences(self, case14_small, case14):
        eps, checked = 1e-5, 0
        for s in case14_small.samples[:10]:
            for k in np.flatnonzero(case14.pd):
                e = np.zeros(case14.n_bus)
                e[k] = eps
                zp = value_and_gradient(case14, s.pd + e).z
                zm = value_and_gradient(case14, s.pd - e).z
                fwd, bwd = (zp - s.z) / eps, (s.z - zm) / eps
                if abs(fwd - bwd) > 1e-4 * (1 + abs(fwd)):
                    continue  # kink of the value function
                assert s.y[k] == pytest.approx((zp - zm) / (2 * eps), abs=1e-4 * (1 + abs(fwd)))
                checked += 1
        assert checked > 50


class TestSplit:
    def base(self, n):
        return Dataset("toy", "h", [sample(i) for i in range(n)])

    def test_ten_samples(self):
        assert split(self.base(10), (0.4, 0.3, 0.3), 0).counts() == {"train": 4, "valid": 3, "test": 3, "infeasible": 0}

    def test_same_seed_same_assignment(self):
        a = [s.split for s in split(self.base(25), seed=5).samples]
        b = [s.split for s in split(self.base(25), seed=5).samples]
        c = [s.split for s in split(self.base(25), seed=6).samples]
        assert a == b and a != c

    def test_all_train(self):
        assert {s.split for s in split(self.base(7), (1.0, 0.0, 0.0)).samples} == {"train"}

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            split(self.base(2), (0.4, 0.3, 0.3))

    def test_infeasible_unassigned(self):
        ds = Dataset("toy", "h", [sample(0), sample(1, status=INFEASIBLE), sample(2), sample(3)])
        out = split(ds, (0.5, 0.25, 0.25))
        assert out.samples[1].split is None
        assert sorted(s.split for s in out.feasible) == ["test", "train", "valid"]


@settings(max_examples=60, deadline=None)
@given(
    st.integers(3, 400),
    st.lists(st.floats(0.05, 1.0), min_size=3, max_size=3),
)
def test_split_counts_within_one(n, raw):
    fr = np.array(raw) / sum(raw)
    fr[-1] = 1.0 - fr[:-1].sum()
    counts = split_counts(n, fr)
    assert sum(counts) == n
    assert all(abs(c - n * f) < 1 for c, f in zip(counts, fr))


class TestPersistence:
    def test_round_trip(self, tmp_path):
        ds = generate(two_bus(), PerturbationConfig(alpha_range=(0.5, 1.6), count=30, seed=8))
        path = save_dataset(ds, tmp_path / "d.jsonl")
        back = import_labeled(path)
        assert back == ds
        assert dumps_dataset(back) == path.read_text()

    def test_line_schema(self, tmp_path):
        ds = generate(two_bus(), PerturbationConfig(count=5, seed=1))
        lines = dumps_dataset(ds).splitlines()
        assert set(json.loads(lines[0])) == {"schema_version", "case", "config_hash"}
        assert all(
            set(json.loads(ln)) == {"id", "seed", "alpha", "formulation", "pd", "qd", "z", "y", "status", "split"}
            for ln in lines[1:]
        )

    def test_floats_round_trip_exactly(self):
        ds = Dataset("toy", "h", [sample(0, z=0.1 + 0.2)])
        assert loads_dataset(dumps_dataset(ds)).samples[0].z == 0.1 + 0.2

    def test_missing_y_on_optimal(self):
        text = dumps_dataset(split(Dataset("toy", "h", [sample(i) for i in range(3)]), (1.0, 0.0, 0.0)))
        lines = text.splitlines()
        obj = json.loads(lines[2])
        obj["y"] = None
        lines[2] = json.dumps(obj)
        with pytest.raises(DatasetError) as err:
            loads_dataset("\n".join(lines))
        assert err.value.where == "line 3.y"

    def test_wrong_gradient_length(self):
        bad = dumps_dataset(Dataset("toy", "h", [sample(0)])).replace('"y": [0.5, 0.5]', '"y": [0.5]')
        with pytest.raises(DatasetError, match="line 2.y"):
            loads_dataset(bad)

    def test_version_mismatch(self):
        text = dumps_dataset(Dataset("toy", "h", [sample(0)])).replace('"schema_version": 1', '"schema_version": 7')
        with pytest.raises(DatasetError, match="unsupported"):
            loads_dataset(text)

    def test_handwritten_soc_file_is_usable(self, tmp_path):
        from icnnopf.certify import EnvelopePair, theorem2_bound
        from icnnopf.icnn import NetConfig, init
        from icnnopf.trainer import TrainConfig, fit_scalers, train

        rows = [
            {"schema_version": 1, "case": "hand", "config_hash": "none"},
            {"id": 0, "seed": 0, "alpha": 0.9, "formulation": "soc", "pd": [0.9, 0.0], "qd": [0.2, 0.0],
             "z": 9.1, "y": [10.0, 10.1, 0.3, 0.0], "status": "optimal", "split": "train"},
            {"id": 1, "seed": 1, "alpha": 1.0, "formulation": "soc", "pd": [1.0, 0.0], "qd": [0.25, 0.0],
             "z": 10.2, "y": [10.1, 10.2, 0.35, 0.0], "status": "optimal", "split": "valid"},
            {"id": 2, "seed": 2, "alpha": 1.1, "formulation": "soc", "pd": [1.1, 0.0], "qd": [0.3, 0.0],
             "z": 11.3, "y": [10.2, 10.3, 0.4, 0.0], "status": "optimal", "split": "test"},
        ]
        path = tmp_path / "soc.jsonl"
        path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        ds = import_labeled(path)
        assert ds.formulation == "soc"
        b, z, y = ds.arrays("train")
        assert b.shape == (1, 4)
        model = fit_scalers(init(NetConfig(4, (4,), True, 0)), b, z)
        model, _ = train(model, ds, TrainConfig(max_epochs=3))
        cert = theorem2_bound(EnvelopePair(b, z, y), model)
        assert cert.bound == 0.0  # a single point has zero diameter

    def test_mixed_formulations_rejected(self, tmp_path):
        ds = Dataset("toy", "h", [sample(0), sample(1, form="soc")])
        path = tmp_path / "mixed.jsonl"
        path.write_text(dumps_dataset(ds))
        with pytest.raises(DatasetError, match="formulation"):
            import_labeled(path)

    def test_load_from_disk(self, tmp_path):
        ds = Dataset("toy", "h", [sample(0)])
        assert load_dataset(save_dataset(ds, tmp_path / "x.jsonl")) == ds
