"""Smoke test for the regime_grad_py extension module."""

import math

import regime_grad_py as rg


def main():
    scene = rg.Scene.synthetic(0, 6)
    assert len(scene) == 6
    assert rg.Scene.from_text(scene.to_text()) == scene

    params = scene.params()
    assert sorted(params) == ["col", "op", "pos", "rot", "scale"]
    assert rg.Scene.from_text(scene.with_params(params).to_text()) == scene

    cam = rg.Camera(0, (0.0, 0.0), 2.0)
    w, h, pixels = rg.render(scene, cam)
    assert (w, h) == (32, 32) and len(pixels) == w * h
    assert all(0.0 <= c <= 1.0 for px in pixels for c in px)

    loss, grad = rg.backward(scene, cam, scene)
    assert loss == 0.0
    init = scene.perturbed(1, 0.05)
    loss, grad = rg.backward(init, cam, scene)
    assert loss > 0.0 and set(grad) == set(params)

    ok, errs = rg.grad_check(0)
    assert ok, errs

    near = {k: [1.0] * len(v) for k, v in params.items()}
    far = {k: [-1.0] + [0.0] * (len(v) - 1) for k, v in params.items()}
    update, conflicts = rg.reconcile(near, far, "project")
    assert all(conflicts.values())
    for k in update:
        dot = sum(a * b for a, b in zip(update[k], far[k]))
        assert dot >= -1e-9, (k, dot)

    v = rg.variance_decompose([[1.0], [3.0]], [[11.0], [13.0]])
    assert math.isclose(v["sigma2_b"], 25.0) and math.isclose(v["sigma2_w"], 1.0)

    try:
        rg.reconcile(near, far, "bogus")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown operator accepted")

    summary = rg.train({"iterations": "20", "sampler": "balanced"})
    assert summary["iterations"] == 20 and summary["psnr_all"] > 0.0

    print("smoke test ok")


if __name__ == "__main__":
    main()
