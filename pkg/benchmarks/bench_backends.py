"""Compare the compiled kernel backend against the pure numpy fallback.

Times each kernel in isolation, then one full training step (episode
forward + backward) under both backends.  The episode-level comparison
runs in subprocesses because the backend is chosen at import time.

Usage: python benchmarks/bench_backends.py [--episodes 20]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np


def best_of(fn, repeats=5, inner=200):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        best = min(best, (time.perf_counter() - t0) / inner)
    return best


def bench_kernels():
    from cntm._kernels import pure

    try:
        from cntm._kernels import _core as core
    except ImportError:
        print("compiled backend not built; nothing to compare")
        return

    rng = np.random.default_rng(0)
    n, m, d = 64, 48, 128
    x = rng.uniform(-3, 3, 4 * d)
    cprev = rng.uniform(-1, 1, d)
    M = rng.uniform(-1, 1, (n, m))
    k = rng.uniform(-1, 1, m)
    w = rng.dirichlet(np.ones(n))
    s = rng.dirichlet(np.ones(3))
    e = rng.uniform(0, 1, m)
    a = rng.uniform(-1, 1, m)
    g2 = rng.uniform(-1, 1, (n, m))
    gates = pure.lstm_gates(x, cprev)

    cases = [
        ("sigmoid(512)", lambda K: K.sigmoid(x)),
        ("softmax(64)", lambda K: K.softmax(w)),
        ("oneplus(512)", lambda K: K.oneplus(x)),
        ("cosine_rows(64x48)", lambda K: K.cosine_rows(M, k, 1e-8)),
        ("circ_conv(64,3)", lambda K: K.circ_conv(w, s)),
        ("pow_norm(64)", lambda K: K.pow_norm(w, 2.3)),
        ("lstm_gates(128)", lambda K: K.lstm_gates(x, cprev)),
        ("lstm_gates_bwd(128)",
         lambda K: K.lstm_gates_bwd(cprev, cprev, cprev, *gates[2:])),
        ("erase_add(64x48)", lambda K: K.erase_add(M, w, e, a)),
        ("erase_add_bwd(64x48)", lambda K: K.erase_add_bwd(g2, M, w, e, a)),
    ]
    print(f"{'kernel':24s} {'pure us':>10s} {'compiled us':>12s} {'speedup':>8s}")
    for name, fn in cases:
        tp = best_of(lambda: fn(pure)) * 1e6
        tc = best_of(lambda: fn(core)) * 1e6
        print(f"{name:24s} {tp:10.2f} {tc:12.2f} {tp / tc:7.2f}x")


EPISODE_SNIPPET = r"""
import time
import numpy as np
from cntm import autodiff as ad
from cntm import graphs as G, harness as H, model as M
import cntm

ds = G.generate_dataset(10, 5, seed=7)
cfg = H.TrainConfig(max_steps=1, seed=1, batch_size=1, model="cntm",
                    controller_width=64, head_width=128, mem_rows=48,
                    mem_cols=32, walk_length=10, early_stop=False)
params = H.init_params(cfg.model_config(10), 0)
N = @EPISODES@
t0 = time.perf_counter()
for i in range(N):
    ep = G.build_episode(ds.entries[i % 5], None, 10, i)
    with ad.record() as rec:
        loss = M.episode_loss(ep, params, ds.codebook, ds.nodes)
        rec.backward(loss)
    params.zero_grad()
dt = (time.perf_counter() - t0) / N * 1000
print(f"{cntm.kernel_backend}: {dt:.2f} ms/episode (forward+backward)")
"""


def bench_episode(episodes):
    code = EPISODE_SNIPPET.replace("@EPISODES@", str(episodes))
    for label, env_extra in (("compiled", {}), ("pure", {"CNTM_PURE_KERNELS": "1"})):
        env = dict(os.environ, **env_extra)
        sys.stdout.flush()
        subprocess.run([sys.executable, "-c", code], env=env, check=True)


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--episodes", type=int, default=20)
    args = ap.parse_args()
    print("== kernel microbenchmarks ==")
    bench_kernels()
    print()
    print("== full episode step (48x32 memory, 64 controller, 128 head) ==")
    bench_episode(args.episodes)
