"""Surrogate search over embedding coordinates and the random-search baseline.

The surrogate is inverse-distance-weighted k-nearest-neighbour regression on
2-D atlas coordinates.  Each round predicts every unevaluated candidate,
evaluates the best predicted ones and feeds the measured accuracies back.
"""
from __future__ import annotations

import csv
import math
import queue
import threading
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np
from scipy.special import gammaln

INIT_MODES = ("relu-plus-random", "baselines")


class MissingRowError(KeyError):
    """A benchmark lookup found no row; replay must not hide this."""


class SearchError(ValueError):
    pass


@dataclass
class SearchConfig:
    k: int = 3
    budget: int = 100
    init: str = "relu-plus-random"
    n_random_init: int = 7
    batch_width: int = 1
    trials: int = 1
    seed: int = 0
    filter_invalid: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise SearchError(f"k must be >= 1, got {self.k}")
        if self.init not in INIT_MODES:
            raise SearchError(f"init must be one of {INIT_MODES}, got {self.init!r}")
        if self.batch_width < 1:
            raise SearchError(f"batch_width must be >= 1, got {self.batch_width}")
        if self.trials < 1:
            raise SearchError(f"trials must be >= 1, got {self.trials}")
        if self.n_random_init < 0:
            raise SearchError("n_random_init must be >= 0")
        if self.budget < self.init_size:
            raise SearchError(f"budget {self.budget} is smaller than the init set ({self.init_size})")

    @property
    def init_size(self) -> int:
        return 1 + self.n_random_init if self.init == "relu-plus-random" else 8


@dataclass
class SearchSpace:
    """Candidate functions with their atlas coordinates and spectrum validity.

    ``coords`` may be None for spaces used only by random search.
    ``baselines`` maps baseline names (relu, tanh, ...) to the canonical of the
    function representing them in this space.
    """

    canonicals: list[str]
    coords: np.ndarray | None
    valid: np.ndarray
    chance: float
    baselines: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.valid = np.asarray(self.valid, dtype=bool)
        if len(set(self.canonicals)) != len(self.canonicals):
            raise SearchError("duplicate canonicals in search space")
        if len(self.valid) != len(self.canonicals):
            raise SearchError("validity flags do not match the canonicals")
        if self.coords is not None:
            self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 2)
            if len(self.coords) != len(self.canonicals):
                raise SearchError("coordinates do not match the canonicals")

    def __len__(self) -> int:
        return len(self.canonicals)


class SurrogateState:
    """Evaluated points, remaining candidates and filtered functions."""

    def __init__(self):
        self.evaluated: dict[str, tuple[np.ndarray, float]] = {}
        self.candidates: dict[str, np.ndarray] = {}
        self.filtered: set[str] = set()

    @classmethod
    def from_space(cls, space: SearchSpace, filter_invalid: bool = True) -> "SurrogateState":
        if space.coords is None:
            raise SearchError("surrogate search needs atlas coordinates")
        st = cls()
        for c, xy, ok in zip(space.canonicals, space.coords, space.valid):
            if filter_invalid and not ok:
                st.filtered.add(c)
            else:
                st.candidates[c] = xy
        return st

    def add_candidate(self, canonical: str, coord: np.ndarray) -> None:
        if canonical not in self.evaluated and canonical not in self.filtered:
            self.candidates[canonical] = np.asarray(coord, dtype=np.float64)

    def record(self, canonical: str, coord: np.ndarray, acc: float) -> bool:
        """Merge one result; repeated results for the same key are ignored."""
        if canonical in self.evaluated:
            return False
        if not math.isfinite(acc):
            raise SearchError(f"non-finite accuracy for {canonical!r}")
        self.candidates.pop(canonical, None)
        self.evaluated[canonical] = (np.asarray(coord, dtype=np.float64), float(acc))
        return True

    def evaluated_arrays(self) -> tuple[list[str], np.ndarray, np.ndarray]:
        names = sorted(self.evaluated)
        xy = np.array([self.evaluated[c][0] for c in names]).reshape(-1, 2)
        acc = np.array([self.evaluated[c][1] for c in names])
        return names, xy, acc


def knr_predict_many(state: SurrogateState, coords: np.ndarray, k: int = 3) -> np.ndarray:
    """Inverse-distance-weighted mean of the ``k`` nearest evaluated accuracies.

    Neighbour ties are broken by canonical string.  A query at zero distance
    from evaluated points returns the mean accuracy of those exact matches.
    """
    if not state.evaluated:
        raise SearchError("no evaluated functions to regress from")
    _, xy, acc = state.evaluated_arrays()
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    d = np.sqrt(((coords[:, None, :] - xy[None, :, :]) ** 2).sum(axis=2))
    kk = min(k, len(acc))
    nn = np.argsort(d, axis=1, kind="stable")[:, :kk]
    dn = np.take_along_axis(d, nn, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = 1.0 / dn
        pred = (w * acc[nn]).sum(axis=1) / w.sum(axis=1)
    zero = d == 0
    hit = zero.any(axis=1)
    if hit.any():
        pred[hit] = (zero[hit] * acc).sum(axis=1) / zero[hit].sum(axis=1)
    return pred


def knr_predict(state: SurrogateState, coord: np.ndarray, k: int = 3) -> float:
    return float(knr_predict_many(state, np.asarray(coord)[None, :], k)[0])


def select_next(state: SurrogateState, k: int = 3, width: int = 1) -> list[str]:
    """Top-``width`` candidates by prediction; equal predictions go to the
    lexicographically smaller canonical."""
    if not state.candidates:
        return []
    names = sorted(state.candidates)
    pred = knr_predict_many(state, np.array([state.candidates[c] for c in names]), k)
    order = sorted(range(len(names)), key=lambda i: (-pred[i], names[i]))
    return [names[i] for i in order[:width]]


# --- traces -----------------------------------------------------------------------


@dataclass
class Evaluation:
    step: int
    canonical: str
    accuracy: float
    predicted: float = float("nan")


@dataclass
class SearchTrace:
    evaluations: list[Evaluation] = field(default_factory=list)
    algorithm: str = ""
    seed: int = 0

    def __len__(self) -> int:
        return len(self.evaluations)

    def best_so_far(self) -> np.ndarray:
        return np.maximum.accumulate(np.array([e.accuracy for e in self.evaluations], dtype=np.float64)) \
            if self.evaluations else np.zeros(0)

    def canonicals(self) -> list[str]:
        return [e.canonical for e in self.evaluations]

    def write_csv(self, path: str | Path) -> None:
        best = self.best_so_far()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "canonical", "accuracy", "predicted", "best_so_far"])
            for e, b in zip(self.evaluations, best):
                w.writerow([e.step, e.canonical, repr(e.accuracy), repr(e.predicted), repr(float(b))])

    @classmethod
    def read_csv(cls, path: str | Path) -> "SearchTrace":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([Evaluation(int(r["step"]), r["canonical"], float(r["accuracy"]), float(r["predicted"]))
                    for r in rows])


def _safe_eval(evaluator: Callable[[str], float], canonical: str, chance: float) -> float:
    try:
        acc = float(evaluator(canonical))
    except MissingRowError:
        raise
    except Exception:
        return chance
    return acc if math.isfinite(acc) else chance


def _init_set(cfg: SearchConfig, space: SearchSpace, pool: Sequence[str], rng: np.random.Generator) -> list[str]:
    avail = set(pool)
    if cfg.init == "baselines":
        return [c for c in dict.fromkeys(space.baselines.values()) if c in avail]
    picks = []
    relu = space.baselines.get("relu")
    if relu in avail:
        picks.append(relu)
    rest = sorted(avail - set(picks))
    n = min(cfg.n_random_init, len(rest))
    picks += [rest[i] for i in rng.choice(len(rest), size=n, replace=False)]
    return picks


def run_search(
    cfg: SearchConfig,
    evaluator: Callable[[str], float],
    space: SearchSpace,
    seed: int | None = None,
    algorithm: str = "knr",
) -> SearchTrace:
    """One surrogate search trial: evaluate the init set, then repeat
    predict -> select -> evaluate until the budget is spent."""
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    state = SurrogateState.from_space(space, cfg.filter_invalid)
    trace = SearchTrace(algorithm=algorithm, seed=seed)

    def run(canonical: str, predicted: float) -> None:
        coord = state.candidates[canonical]
        acc = _safe_eval(evaluator, canonical, space.chance)
        state.record(canonical, coord, acc)
        trace.evaluations.append(Evaluation(len(trace.evaluations) + 1, canonical, acc, predicted))

    for c in _init_set(cfg, space, sorted(state.candidates), rng)[: cfg.budget]:
        run(c, float("nan"))
    while len(trace) < cfg.budget and state.candidates:
        width = min(cfg.batch_width, cfg.budget - len(trace))
        if not state.evaluated:
            picks = [sorted(state.candidates)[int(rng.integers(len(state.candidates)))]]
            preds = [float("nan")]
        else:
            picks = select_next(state, cfg.k, width)
            preds = knr_predict_many(state, np.array([state.candidates[c] for c in picks]), cfg.k)
        for c, p in zip(picks, preds):
            run(c, float(p))
    return trace


def random_search(
    cfg: SearchConfig,
    evaluator: Callable[[str], float],
    space: SearchSpace,
    seed: int | None = None,
) -> SearchTrace:
    """Uniform sampling without replacement over the whole (unfiltered) space."""
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    names = sorted(space.canonicals)
    order = rng.permutation(len(names))[: cfg.budget]
    trace = SearchTrace(algorithm="random", seed=seed)
    for i in order:
        acc = _safe_eval(evaluator, names[i], space.chance)
        trace.evaluations.append(Evaluation(len(trace.evaluations) + 1, names[i], acc))
    return trace


def expected_best_random(values: Sequence[float], m: int) -> float:
    """Expected maximum of ``m`` draws without replacement from ``values``."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    n = len(v)
    if not 1 <= m <= n:
        raise SearchError(f"need 1 <= m <= {n}")
    # P(max is the i-th smallest, 1-based) = C(i-1, m-1) / C(n, m)
    i = np.arange(1, n + 1)
    logp = np.full(n, -np.inf)
    ok = i >= m
    logp[ok] = (gammaln(i[ok]) - gammaln(m) - gammaln(i[ok] - m + 1)) - (
        gammaln(n + 1) - gammaln(m + 1) - gammaln(n - m + 1))
    return float(np.sum(np.exp(logp) * v))


# --- aggregate curves ------------------------------------------------------------


@dataclass
class Curve:
    algorithm: str
    mean: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    trials: int

    @property
    def steps(self) -> np.ndarray:
        return np.arange(1, len(self.mean) + 1)


def best_so_far_matrix(traces: Sequence[SearchTrace], budget: int) -> np.ndarray:
    """Trials x budget matrix; a trace that ran out of candidates keeps its last best."""
    out = np.empty((len(traces), budget))
    for r, t in enumerate(traces):
        b = t.best_so_far()
        if len(b) == 0:
            raise SearchError("empty trace")
        out[r, : len(b)] = b[:budget]
        out[r, len(b):] = b[-1]
    return out


def aggregate(traces: Sequence[SearchTrace], budget: int, algorithm: str = "") -> Curve:
    """Mean best-so-far and ``mean +- 1.96 * std / sqrt(trials)`` per step."""
    m = best_so_far_matrix(traces, budget)
    mean = m.mean(axis=0)
    n = m.shape[0]
    half = 1.96 * m.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    return Curve(algorithm or (traces[0].algorithm if traces else ""), mean, mean - half, mean + half, n)


def write_curves(path: str | Path, curves: Sequence[Curve]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["algorithm", "step", "mean", "ci_low", "ci_high"])
        for c in curves:
            for s, m, lo, hi in zip(c.steps, c.mean, c.ci_low, c.ci_high):
                w.writerow([c.algorithm, int(s), repr(float(m)), repr(float(lo)), repr(float(hi))])


def read_curves(path: str | Path) -> list[Curve]:
    rows: dict[str, list] = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.setdefault(r["algorithm"], []).append(
                (int(r["step"]), float(r["mean"]), float(r["ci_low"]), float(r["ci_high"])))
    out = []
    for name, vals in rows.items():
        vals.sort()
        a = np.array(vals)
        out.append(Curve(name, a[:, 1], a[:, 2], a[:, 3], 0))
    return out


# --- parallel protocol ---------------------------------------------------------------


@dataclass
class CandidateInfo:
    canonical: str
    valid: bool
    features: object = None


class Embedder(Protocol):
    def fit(self, infos: Sequence[CandidateInfo]) -> np.ndarray: ...

    def place(self, info: CandidateInfo) -> np.ndarray: ...


def parallel_search(
    cfg: SearchConfig,
    evaluator: Callable[[str], float],
    stream: Iterable[str],
    featurize: Callable[[str], CandidateInfo],
    embedder: Embedder,
    chance: float,
    baselines: dict[str, str] | None = None,
    threshold: int = 200,
    workers: int = 2,
    seed: int | None = None,
) -> SearchTrace:
    """Producer/evaluator search.

    A producer thread featurises candidates from ``stream`` and posts them to
    the coordinator.  Once ``threshold`` valid candidates are pooled (or the
    stream ends) the atlas is fitted once; later arrivals are placed with
    ``embedder.place``.  Up to ``workers`` evaluations run concurrently and
    results are merged by canonical key as they complete.
    """
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    inbox: queue.Queue = queue.Queue()
    stop = threading.Event()

    def produce():
        try:
            for c in stream:
                if stop.is_set():
                    break
                inbox.put(("info", featurize(c)))
        except Exception as exc:  # surfaced to the coordinator
            inbox.put(("error", exc))
        finally:
            inbox.put(("done", None))

    producer = threading.Thread(target=produce, daemon=True)
    producer.start()

    pending: list[CandidateInfo] = []
    done = False

    def take(block: bool) -> None:
        nonlocal done
        while True:
            try:
                kind, item = inbox.get(block=block)
            except queue.Empty:
                return
            if kind == "error":
                stop.set()
                raise item
            if kind == "done":
                done = True
                return
            pending.append(item)
            block = False

    while not done and sum(i.valid for i in pending) < threshold:
        take(block=True)

    state = SurrogateState()
    valid = [i for i in pending if i.valid]
    for i in pending:
        if not i.valid and cfg.filter_invalid:
            state.filtered.add(i.canonical)
    if not valid:
        stop.set()
        raise SearchError("no valid candidates produced")
    coords = embedder.fit(valid)
    for info, xy in zip(valid, coords):
        state.add_candidate(info.canonical, xy)
    pending.clear()

    space = SearchSpace([i.canonical for i in valid], coords, np.ones(len(valid), bool), chance, baselines or {})
    init = _init_set(cfg, space, sorted(state.candidates), rng)[: cfg.budget]
    trace = SearchTrace(algorithm="knr-parallel", seed=seed)
    inflight: dict = {}

    def absorb_new():
        take(block=False)
        for info in pending:
            if info.valid:
                state.add_candidate(info.canonical, embedder.place(info))
            elif cfg.filter_invalid:
                state.filtered.add(info.canonical)
        pending.clear()

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        while True:
            absorb_new()
            while len(inflight) < workers and len(trace) + len(inflight) < cfg.budget:
                if init:
                    c, p = init.pop(0), float("nan")
                elif state.candidates and state.evaluated:
                    c = select_next(state, cfg.k, 1)[0]
                    p = knr_predict(state, state.candidates[c], cfg.k)
                elif state.candidates and not inflight:
                    names = sorted(state.candidates)
                    c, p = names[int(rng.integers(len(names)))], float("nan")
                else:
                    break
                coord = state.candidates.pop(c)
                inflight[pool.submit(_safe_eval, evaluator, c, chance)] = (c, coord, p)
            if not inflight:
                if len(trace) >= cfg.budget or (done and not state.candidates):
                    break
                take(block=True)
                continue
            finished, _ = wait(list(inflight), return_when=FIRST_COMPLETED)
            for fut in sorted(finished, key=lambda f: inflight[f][0]):
                c, coord, p = inflight.pop(fut)
                acc = fut.result()
                if state.record(c, coord, acc):
                    trace.evaluations.append(Evaluation(len(trace) + 1, c, acc, p))
    stop.set()
    return trace
