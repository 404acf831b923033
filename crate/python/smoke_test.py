"""Smoke test for the ouflow Python extension.

Build and install first, e.g. `pip install --no-build-isolation ./crates/python`.
"""

import math

import ouflow


def main():
    model = ouflow.CorrelationModel.solenoidal(length_scale=1.0, dim=2, drift=0.5)
    assert model.dim == 2
    assert math.isclose(model.beta_l, 1.0) and math.isclose(model.beta_n, 3.0)

    spectrum = model.spectrum()
    assert all(math.isclose(a, b, abs_tol=1e-12) for a, b in zip(spectrum, [0.5, -1.5]))
    assert math.isclose(model.lyapunov_dimension(), 4.0 / 3.0)
    assert math.isclose(ouflow.lyapunov_dimension([0.5, -1.5]), 4.0 / 3.0)
    assert ouflow.closed_form_spectrum(1.0, 3.0, 0.5, 2) == spectrum

    tensor = model.build_tensor([0.3, -0.2])
    assert len(tensor) == 2 and math.isclose(tensor[0][1], tensor[1][0])

    exps, ses = ouflow.estimate_spectrum(model, horizon=20.0, replicas=4, seed=3)
    assert len(exps) == 2 and len(ses) == 2 and exps[0] > exps[1]

    frames = ouflow.simulate(model, [[0.0, 0.0], [1.0, 0.0]], horizon=1.0, seed=7, stride=10)
    assert math.isclose(frames[-1][0], 1.0) and len(frames[-1][1]) == 2

    law = ouflow.RadialLaw(model)
    verdict = law.verdict()
    assert verdict["classification"] == "recurrent" and verdict["normalizable"]
    assert law.scale_function(1.0) == 0.0
    assert 0.0 < law.invariant_cdf(1.0) < 1.0

    cloud = ouflow.pullback_cloud(model, 2000, 10.0, seed=1)
    fit = ouflow.correlation_dimension(cloud)
    assert 0.0 < fit["estimate"] < 2.5
    estimate, half = ouflow.pointwise_dimension(cloud)
    assert 0.0 < estimate < 2.5 and half >= 0.0

    try:
        ouflow.CorrelationModel.potential(drift=-1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("negative drift accepted")

    print(f"spectrum {exps} +- {ses}")
    print(f"correlation dimension {fit['estimate']:.3f} +- {fit['ci_halfwidth']:.3f}")
    print("ok")


if __name__ == "__main__":
    main()
