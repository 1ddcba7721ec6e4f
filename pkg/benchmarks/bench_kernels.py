"""Time the hot kernels and one training step under both backends.

    python benchmarks/bench_kernels.py            # runs both backends in subprocesses
    python benchmarks/bench_kernels.py --inner    # current backend only, JSON on stdout
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np


def inner(repeat: int) -> dict:
    from vicnet import _accel as acc
    from vicnet import battery
    from vicnet.models import build_mobile_unet, build_unet
    from vicnet.nn.train import TrainConfig, train

    rng = np.random.default_rng(0)
    x = rng.standard_normal((64, 128, 32)).astype(np.float32)
    w = rng.standard_normal((32, 3)).astype(np.float32)
    d = rng.standard_normal((64, 126, 32)).astype(np.float32)
    g, b = np.ones(32, np.float32), np.zeros(32, np.float32)
    alpha = np.full(32, 0.1, np.float32)
    cols = rng.standard_normal((64, 126, 32, 3)).astype(np.float32)
    ref = acc.batchnorm_train(x, g, b, 1e-3)
    cases = {
        "depthwise_forward": lambda: acc.depthwise_forward(x, w, 1, 126),
        "depthwise_backward": lambda: acc.depthwise_backward(x, w, d, 1),
        "col2im": lambda: acc.col2im(cols, 1, 128),
        "prelu_forward": lambda: acc.prelu_forward(x, alpha),
        "prelu_backward": lambda: acc.prelu_backward(x, alpha, x),
        "batchnorm_train": lambda: acc.batchnorm_train(x, g, b, 1e-3),
        "batchnorm_backward": lambda: acc.batchnorm_backward(x, ref[1], g, ref[4]),
        "simulate_charge": lambda: battery.simulate_charge(battery.ModuleModel(), "FastB", 0.13, 0.91),
    }
    for arch, build in (("unet", build_unet), ("mobile-unet", build_mobile_unet)):
        spec = build()
        xs = rng.standard_normal((256, 2, 128)).astype(np.float32)
        ys = rng.standard_normal((256, 3, 128)).astype(np.float32)

        def epoch(spec=spec, xs=xs, ys=ys):
            p = spec.graph.init_params(np.random.default_rng(0))
            train(spec.graph, p, (xs, ys), (xs[:64], ys[:64]), TrainConfig(max_epochs=1, batch_size=64))
        cases[f"train_epoch_{arch}_256"] = epoch
    out = {}
    for name, fn in cases.items():
        fn()  # compile / warm up
        out[name] = min(timeit.repeat(fn, number=1, repeat=repeat))
    return {"backend": acc.BACKEND, "seconds": out}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--inner", action="store_true")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if args.inner:
        print(json.dumps(inner(args.repeat)))
        return
    results = {}
    for flag in ("", "1"):
        env = dict(os.environ, VICNET_DISABLE_NUMBA=flag)
        proc = subprocess.run([sys.executable, __file__, "--inner", "--repeat", str(args.repeat)], env=env,
                              capture_output=True, text=True, check=True)
        r = json.loads(proc.stdout.strip().splitlines()[-1])
        results[r["backend"]] = r["seconds"]
    nb, np_ = results.get("numba", {}), results["numpy"]
    print(f"{'case':<28} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for name in np_:
        a = nb.get(name)
        sa = f"{1e3 * a:10.2f}" if a is not None else f"{'n/a':>10}"
        sp = f"{np_[name] / a:8.2f}" if a else f"{'':>8}"
        print(f"{name:<28} {sa} {1e3 * np_[name]:10.2f} {sp}")


if __name__ == "__main__":
    main()
