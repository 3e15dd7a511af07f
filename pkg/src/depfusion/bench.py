"""Monte Carlo harness for the synthetic sequential and networked protocols.

Every point of a sweep draws fresh parameters and data per seed, runs each
method on the same data and summarizes medians and standard deviations.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import metrics, synth
from .iid import majority_vote, map_labels, moment_match
from .moments import estimate_lagged_moments
from .networked import MrfConfig, icm, mrf_em
from .optim import MomentFitConfig, fit_transition
from .sequential import (
    HmmParams,
    baum_welch,
    emission_logprobs,
    mv_hmm_params,
    viterbi,
)

SEQ_METHODS = ("MV", "MM", "MM+HMM", "MM+EM", "MV+EM", "oracle")
NET_METHODS = ("MV", "MM", "MM+EM", "MV+EM", "oracle")
FIGURES = ("seq-N", "seq-M", "net-N")


@dataclass
class BenchConfig:
    k: int = 4
    m: int = 10
    n: int = 1000
    seg_len: int = 40
    mean_degree: float = 5.0
    delta: float | None = None  # None: number of learners
    missing_rate: float = 0.0
    em_iters: int = 100
    tol: float = 1e-6


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(x) for x in key]))


def _segments(n: int, seg_len: int) -> list[int]:
    full, rest = divmod(n, seg_len)
    return [seg_len] * full + ([rest] if rest else [])


def seq_trial(cfg: BenchConfig, seed: int, mm_config: MomentFitConfig | None = None) -> dict:
    """One sequential run; returns ``{method: {fscore, cm_error, t_error}}``."""
    rng = _rng(seed, cfg.n, cfg.m, cfg.k, 1)
    k = cfg.k
    while True:
        t_true = synth.gen_transition(k, rng)
        if synth.is_irreducible(t_true):
            break
    gam_true = synth.gen_confusions(cfg.m, k, rng)
    y, part = synth.gen_markov_labels(t_true, _segments(cfg.n, cfg.seg_len), rng)
    resp = synth.gen_responses(y, gam_true, cfg.missing_rate, rng)

    def record(labels, gam, trans):
        return {
            "fscore": metrics.sequence_fscore(y, labels, k, part),
            "cm_error": metrics.confusion_error(gam_true, gam),
            "t_error": metrics.transition_error(t_true, trans),
        }

    out = {}
    mv = majority_vote(resp)
    mv_params = mv_hmm_params(resp, part)
    out["MV"] = record(mv.labels, mv.confusions, mv_params.transition)

    fit = moment_match(resp, mm_config)
    tfit = fit_transition(estimate_lagged_moments(resp, part), fit.confusions)
    out["MM"] = record(map_labels(resp, fit.confusions, fit.prior), fit.confusions, tfit.transition)

    mm_params = HmmParams(tfit.transition, fit.prior, fit.confusions)
    lab = viterbi(emission_logprobs(resp, mm_params.confusions), mm_params, part)
    out["MM+HMM"] = record(lab, mm_params.confusions, mm_params.transition)

    for name, init in (("MM+EM", mm_params), ("MV+EM", mv_params)):
        bw = baum_welch(resp, part, init, max_iters=cfg.em_iters, tol=cfg.tol)
        lab = viterbi(emission_logprobs(resp, bw.params.confusions), bw.params, part)
        out[name] = record(lab, bw.params.confusions, bw.params.transition)

    # true parameters only
    oracle = HmmParams(t_true, synth.stationary_distribution(t_true), gam_true)
    lab = viterbi(emission_logprobs(resp, gam_true), oracle, part)
    out["oracle"] = record(lab, gam_true, t_true)
    return out


def net_trial(cfg: BenchConfig, seed: int, mm_config: MomentFitConfig | None = None) -> dict:
    """One networked run on an SBM graph; ``t_error`` is NaN throughout."""
    rng = _rng(seed, cfg.n, cfg.m, cfg.k, 2)
    k = cfg.k
    gam_true = synth.gen_confusions(cfg.m, k, rng)
    p_in, p_out = synth.sbm_probabilities(cfg.n, k, cfg.mean_degree)
    graph, y = synth.gen_sbm_graph(cfg.n, k, p_in, p_out, rng)
    resp = synth.gen_responses(y, gam_true, cfg.missing_rate, rng)
    mrf = MrfConfig(delta=float(cfg.m if cfg.delta is None else cfg.delta), em_max_iters=cfg.em_iters, em_tol=cfg.tol)

    def record(labels, gam):
        return {
            "fscore": metrics.fscore(y, labels, k),
            "cm_error": metrics.confusion_error(gam_true, gam),
            "t_error": float("nan"),
        }

    out = {}
    mv = majority_vote(resp)
    out["MV"] = record(mv.labels, mv.confusions)
    fit = moment_match(resp, mm_config)
    mm_labels = map_labels(resp, fit.confusions, fit.prior)
    out["MM"] = record(mm_labels, fit.confusions)
    res = mrf_em(resp, graph, mm_labels, fit.confusions, mrf)
    out["MM+EM"] = record(res.labels, res.confusions)
    res = mrf_em(resp, graph, mv.labels, mv.confusions, mrf)
    out["MV+EM"] = record(res.labels, res.confusions)
    uniform = np.full(k, 1.0 / k)
    start = map_labels(resp, gam_true, uniform)
    out["oracle"] = record(icm(resp, gam_true, graph, start, mrf), gam_true)
    return out


def _summarize(runs: list[dict], methods) -> dict:
    summary = {}
    for meth in methods:
        entry = {}
        for key in ("fscore", "cm_error", "t_error"):
            vals = np.array([r[meth][key] for r in runs], dtype=float)
            if np.all(np.isnan(vals)):
                entry[key] = {"median": None, "std": None}
            else:
                entry[key] = {"median": float(np.median(vals)), "std": float(np.std(vals))}
        summary[meth] = entry
    return summary


def run_sweep(figure: str, sizes, seeds, cfg: BenchConfig | None = None, mm_config=None) -> dict:
    """Sweep ``n`` (seq-N, net-N) or ``m`` (seq-M) over ``sizes``."""
    if figure not in FIGURES:
        raise ValueError(f"unknown figure {figure!r}; choose from {', '.join(FIGURES)}")
    base = cfg or BenchConfig()
    trial, methods = (net_trial, NET_METHODS) if figure == "net-N" else (seq_trial, SEQ_METHODS)
    axis = "m" if figure == "seq-M" else "n"
    points = []
    for size in sizes:
        point_cfg = BenchConfig(**{**asdict(base), axis: int(size)})
        runs = [trial(point_cfg, s, mm_config) for s in seeds]
        points.append({
            axis: int(size),
            "summary": _summarize(runs, methods),
            "runs": [{"seed": int(s), **r} for s, r in zip(seeds, runs)],
        })
    return {"figure": figure, "axis": axis, "config": asdict(base), "seeds": [int(s) for s in seeds],
            "methods": list(methods), "points": points}


def sweep_table(result: dict) -> list[list]:
    """Flatten a sweep into rows ``[axis value, method, metric, median, std]``."""
    rows = []
    axis = result["axis"]
    for point in result["points"]:
        for meth, entry in point["summary"].items():
            for key, stats in entry.items():
                rows.append([point[axis], meth, key, stats["median"], stats["std"]])
    return rows
