"""Exact event-driven continuous-time random walks, killed on exit from a
finite volume, with exact local times."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernel import JumpKernel, Volume
from .rng import uniforms


class Unresolved(RuntimeError):
    pass


@dataclass(frozen=True)
class Horizon:
    ell: float


@dataclass(frozen=True)
class ExitVolume:
    volume: Volume


@dataclass(frozen=True, eq=False)
class WalkPath:
    """Sites x_0 = a, x_1, ... and jump times t_1 < t_2 < ...; the walk sits at
    x_k on [t_k, t_{k+1}) with t_0 = 0.

    If `exit_index` is set, sites[exit_index] is the first site outside the
    volume and jump_times[exit_index - 1] is the exit time. `resolved` is the
    time up to which the record is complete.
    """

    sites: np.ndarray
    jump_times: np.ndarray
    resolved: float
    exit_index: int | None = None

    @property
    def start(self) -> np.ndarray:
        return self.sites[0]

    @property
    def exit_time(self) -> float | None:
        if self.exit_index is None:
            return None
        if self.exit_index == 0:
            return 0.0
        return float(self.jump_times[self.exit_index - 1])

    def interval_bounds(self) -> np.ndarray:
        """Start and end of each holding interval, clipped at `resolved`."""
        t = np.concatenate([[0.0], self.jump_times, [np.inf]])
        k = len(self.sites)
        return np.stack([t[:k], np.minimum(t[1: k + 1], self.resolved)], axis=1)

    def position(self, t: float) -> np.ndarray:
        if t > self.resolved:
            raise Unresolved(f"t = {t} beyond resolved time {self.resolved}")
        return self.sites[np.searchsorted(self.jump_times, t, side="right")]

    def to_text(self) -> str:
        """Replay format: one line `t site` per visit, t the arrival time."""
        times = np.concatenate([[0.0], self.jump_times])
        lines = [f"{float(t)!r} " + " ".join(str(int(v)) for v in s) for t, s in zip(times, self.sites)]
        return "\n".join(lines) + f"\n# resolved {float(self.resolved)!r}\n"


def local_time(path: WalkPath, s: float, t: float, volume: Volume | None = None) -> dict:
    """tau_{[s,t],x}: time spent at x during [s, t], restricted to the volume
    and to times before exit. Returns a map site -> time."""
    if t < s:
        raise ValueError("window must have s <= t")
    if t > path.resolved:
        raise Unresolved(f"t = {t} beyond resolved time {path.resolved}")
    bounds = path.interval_bounds()
    stop = len(path.sites) if path.exit_index is None else path.exit_index
    out: dict = {}
    for k in range(stop):
        lo, hi = max(bounds[k, 0], s), min(bounds[k, 1], t)
        if hi <= lo:
            continue
        x = tuple(int(v) for v in path.sites[k])
        if volume is not None and x not in volume:
            continue
        out[x] = out.get(x, 0.0) + (hi - lo)
    return out


def exit_time(path: WalkPath, volume: Volume) -> float:
    """inf{t : X_t not in the volume}, from the jump record."""
    idx = volume.lookup(path.sites)
    out = np.nonzero(idx < 0)[0]
    if len(out) == 0:
        raise Unresolved("path never leaves the volume within its record")
    k = int(out[0])
    return 0.0 if k == 0 else float(path.jump_times[k - 1])


@dataclass(frozen=True, eq=False)
class PathBatch:
    """Holding intervals of many paths, sorted by (path, step).

    Only intervals inside the volume (when killed) and before the horizon are
    kept. `exit_time` is the kill time (inf if the path never left within its
    horizon); `censored` flags paths stopped by the horizon before exiting.
    """

    n_paths: int
    path: np.ndarray
    site: np.ndarray
    t0: np.ndarray
    t1: np.ndarray
    exit_time: np.ndarray
    censored: np.ndarray
    coords: np.ndarray
    first_index: int = 0

    @property
    def durations(self) -> np.ndarray:
        return self.t1 - self.t0

    def occupation(self, n_sites: int) -> np.ndarray:
        """Matrix (n_paths, n_sites) of total time at each volume site."""
        flat = np.bincount(self.path * n_sites + self.site, weights=self.durations,
                           minlength=self.n_paths * n_sites)
        return flat.reshape(self.n_paths, n_sites)

    def path_start(self) -> np.ndarray:
        """Index of each interval's path's first interval."""
        first = np.r_[True, self.path[1:] != self.path[:-1]]
        return np.maximum.accumulate(np.where(first, np.arange(len(self.path)), 0))

    def prior_local_time(self, weights: np.ndarray | None = None) -> np.ndarray:
        """Time spent at the interval's own site before the interval starts;
        with `weights`, the sum of weights over earlier intervals at that site."""
        n = len(self.path)
        if n == 0:
            return np.zeros(0)
        order = np.lexsort((self.t0, self.site, self.path))
        w = self.durations if weights is None else weights
        p, s, dur = self.path[order], self.site[order], w[order]
        first = np.r_[True, (p[1:] != p[:-1]) | (s[1:] != s[:-1])]
        c = np.cumsum(dur)
        base = np.maximum.accumulate(np.where(first, np.arange(n), 0))
        excl = c - dur - (c[base] - dur[base])
        out = np.empty(n)
        out[order] = excl
        return out

    def cumulative_before(self, inc: np.ndarray) -> np.ndarray:
        """Exclusive running sum of `inc` within each path."""
        c = np.cumsum(inc)
        start = self.path_start()
        return c - inc - (c[start] - inc[start])

    def dense_local_times(self, n_sites: int) -> np.ndarray:
        """tau_{[0, t0_k]} for every interval k as an (intervals, sites) array."""
        inc = np.zeros((len(self.path), n_sites))
        inc[np.arange(len(self.path)), self.site] = self.durations
        c = np.cumsum(inc, axis=0)
        start = self.path_start()
        return c - inc - (c[start] - inc[start])


def sample_batch(kernel: JumpKernel, start, n_paths: int, seed: int, *,
                 volume: Volume | None = None, horizon: float | None = None,
                 first_index: int = 0, stream: int = 0, max_steps: int = 1_000_000) -> PathBatch:
    """Sample paths first_index, ..., first_index + n_paths - 1.

    Path i uses the Philox counter (step, stream, i), so it is a pure function
    of (seed, stream, i). Holding times are Exp(hatJ); jumps have law
    J_+(y)/hatJ. Stops at exit from `volume`, at `horizon`, or both.
    """
    if volume is None and horizon is None:
        raise ValueError("need a volume, a horizon or both")
    d = kernel.d
    start = np.asarray(start, dtype=np.int64).reshape(-1, d)
    if len(start) == 1:
        start = np.repeat(start, n_paths, axis=0)
    cum = np.cumsum(kernel.probs)
    cum[-1] = 1.0
    ell = np.inf if horizon is None else float(horizon)

    pos = start.copy()
    now = np.zeros(n_paths)
    ids = np.arange(n_paths)
    exit_t = np.full(n_paths, np.inf)
    censored = np.zeros(n_paths, dtype=bool)
    rec_path, rec_site, rec_t0, rec_t1, rec_xy = [], [], [], [], []

    if volume is not None:
        site_idx = volume.lookup(pos)
        outside = site_idx < 0
        exit_t[outside] = 0.0
        alive = ~outside
    else:
        site_idx = np.zeros(n_paths, dtype=np.int64)
        alive = np.ones(n_paths, dtype=bool)

    step = 0
    while np.any(alive) and step < max_steps:
        a = np.nonzero(alive)[0]
        u = uniforms(seed, stream, ids[a] + first_index, step)
        hold = -np.log(u[:, 0]) / kernel.hatJ
        t_end = now[a] + hold
        hit_h = t_end >= ell
        t_rec = np.minimum(t_end, ell)
        rec_path.append(a)
        rec_site.append(site_idx[a])
        rec_t0.append(now[a])
        rec_t1.append(t_rec)
        rec_xy.append(pos[a])
        # horizon reached: stop without exit
        done_h = a[hit_h]
        censored[done_h] = volume is not None
        alive[done_h] = False
        go = a[~hit_h]
        jump = np.searchsorted(cum, u[~hit_h, 1], side="right")
        jump = np.minimum(jump, len(cum) - 1)
        pos[go] = pos[go] + kernel.sites[jump]
        now[go] = t_end[~hit_h]
        if volume is not None:
            si = volume.lookup(pos[go])
            left = si < 0
            exit_t[go[left]] = now[go[left]]
            alive[go[left]] = False
            site_idx[go] = si
        step += 1
    if np.any(alive):
        raise Unresolved(f"{int(alive.sum())} paths still running after {max_steps} steps")

    path = np.concatenate(rec_path) if rec_path else np.zeros(0, dtype=np.int64)
    order = np.lexsort((np.concatenate(rec_t0), path)) if len(path) else np.zeros(0, dtype=np.int64)
    return PathBatch(
        n_paths,
        path[order],
        np.concatenate(rec_site)[order],
        np.concatenate(rec_t0)[order],
        np.concatenate(rec_t1)[order],
        exit_t,
        censored,
        np.concatenate(rec_xy)[order],
        first_index,
    )


def sample_path(kernel: JumpKernel, a, stop, seed: int, index: int = 0, stream: int = 0) -> WalkPath:
    """One path; stop is Horizon(ell) or ExitVolume(volume)."""
    a = np.asarray(a, dtype=np.int64)
    if isinstance(stop, Horizon):
        b = sample_batch(kernel, a, 1, seed, horizon=stop.ell, first_index=index, stream=stream)
        sites = b.coords
        jt = b.t0[1:]
        # the horizon interval ends at ell; the jump that would follow is unknown
        return WalkPath(sites, jt, stop.ell, None)
    vol = stop.volume
    if a.tolist() and tuple(a.tolist()) not in vol:
        return WalkPath(a[None, :], np.zeros(0), 0.0, 0)
    b = sample_batch(kernel, a, 1, seed, volume=vol, first_index=index, stream=stream)
    inside = b.coords
    ex = float(b.exit_time[0])
    # reconstruct the exit site from the same counter
    k = len(inside) - 1
    u = uniforms(seed, stream, np.array([index]), k)
    cum = np.cumsum(kernel.probs)
    cum[-1] = 1.0
    j = min(int(np.searchsorted(cum, u[0, 1], side="right")), len(cum) - 1)
    exit_site = inside[-1] + kernel.sites[j]
    sites = np.vstack([inside, exit_site[None, :]])
    jt = np.concatenate([b.t0[1:], [ex]])
    return WalkPath(sites, jt, ex, len(sites) - 1)
