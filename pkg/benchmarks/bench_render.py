"""Benchmark: compiled rasterizer vs the pure-Python (numpy) fallback.

Both backends are exercised on the real environment render path (top view
plus gripper-centered crop per frame) and checked for byte-identical
output before timing.

Usage: python3 benchmarks/bench_render.py [--frames N]
"""

import argparse
import statistics
import time

import numpy as np

from hilc import render
from hilc.env import Action, EnvConfig, SimEnv


def time_backend(fn, shape_lists, repeats=3):
    """Median over repeats of mean seconds/frame for one full pass."""
    per_pass = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for args in shape_lists:
            fn(*args)
        per_pass.append((time.perf_counter() - t0) / len(shape_lists))
    return statistics.median(per_pass)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--frames", type=int, default=300)
    args = parser.parse_args()

    # collect representative render calls by driving the env with a seeded
    # random walk (two rasterizations per env frame: top view + crop)
    cfg = EnvConfig()
    env = SimEnv(cfg)
    rng = np.random.default_rng(0)
    calls = []

    env.reset(0)
    n_env_steps = max(1, args.frames // 2)
    states = []
    for _ in range(n_env_steps):
        states.append(env.state)
        env.step(Action(*rng.uniform(-1, 1, 2), rng.random()))

    # the exact (geometry, shape list) arguments the env uses per frame
    from hilc.env import BACKGROUND

    size = cfg.image_size
    win = cfg.crop_window
    for st in states:
        shapes = env._shape_list(st)
        calls.append(
            (size, size, 0.0, 0.0, cfg.arena_size[0] / size, shapes, BACKGROUND)
        )
        calls.append((
            size, size,
            st.gripper_pos[0] - win / 2, st.gripper_pos[1] - win / 2,
            win / size, shapes, BACKGROUND,
        ))

    # correctness: byte-identical across backends on every frame
    from hilc._render_py import render_shapes as py_render

    compiled = render.render_shapes
    for a in calls:
        assert np.array_equal(compiled(*a), py_render(*a)), "backend mismatch"
    print(f"backends byte-identical on {len(calls)} frames "
          f"(active backend: {render.BACKEND})")

    t_py = time_backend(py_render, calls)
    print(f"python  : {1e6 * t_py:9.1f} us/frame")
    if render.BACKEND == "compiled":
        t_c = time_backend(compiled, calls)
        print(f"compiled: {1e6 * t_c:9.1f} us/frame   ({t_py / t_c:.1f}x faster)")
    else:
        print("compiled backend unavailable; only the fallback was timed")


if __name__ == "__main__":
    main()
