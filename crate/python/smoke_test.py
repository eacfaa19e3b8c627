"""Smoke test for the zonepred extension.

Build first, e.g. `cd crates/python && maturin develop --release`.
"""

import math

import zonepred


def rmse(a, b):
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)) / len(a))


def main():
    s = zonepred.Series.simulate("noiseless", seed=3, days=40)
    assert len(s) == 40 * 96
    assert s.channel_names == ["P_heat", "T_amb", "I_sol", "T_z"]
    y = s.channel("T_z")

    k = 30 * 96 + 37
    pred = zonepred.predict_bst(s, k, width=181, lam=1e-6)
    err = rmse(pred, y[k : k + 96])
    print(f"bst noiseless rmse {err:.2e} K")
    assert err < 1e-3

    # Noiseless regressors are collinear, so the batch fit refuses them.
    try:
        zonepred.ArxModel.fit(s, 0, 20 * 96)
    except ValueError as e:
        assert "identifiable" in str(e)
    else:
        raise AssertionError("collinear regressors accepted")

    year = zonepred.Series.simulate("heavy", seed=5, days=90)
    model = zonepred.ArxModel.fit(year, 0, 30 * 96)
    assert len(model.theta) == 3 * 4
    k = 40 * 96
    arx_pred = model.predict(year, k)
    print(f"arx rmse {rmse(arx_pred, year.channel('T_z')[k:k + 96]):.3f} K")
    model.alpha = 287 / 288
    assert model.update(year, k)

    gappy = s.with_gaps(0.05, seed=1)
    assert 0.03 < gappy.missing_fraction() < 0.07

    names = zonepred.variant_names()
    assert len(names) == 69

    name = "bst_adaptive-most_recent-w181-l1e2"
    report = zonepred.run_variant(year, name, eval_stride=96)
    assert report["variant"]["family"] == "bst_adaptive"
    print(f"{name} rmse {report['rmse']:.3f} K over {len(report['instants'])} instants")
    assert report["rmse"] < 2.0
    assert len(report["per_step_mean"]) == 96

    try:
        zonepred.run_variant(year, "not-a-variant")
    except ValueError:
        pass
    else:
        raise AssertionError("bad variant name accepted")
    print("ok")


if __name__ == "__main__":
    main()
