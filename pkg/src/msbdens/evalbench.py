"""Leave-one-out evaluation, matched ratios and in-repo baselines.

The baselines (global mean, k-nearest-neighbor regression and
principal-component ridge) stand in for external competitors; every report
names the baseline it was compared against.

Two LOO modes:

``exact``
    every fold rebuilds whitening, graph, tree (or baseline fit) on the
    n-1 remaining rows.
``fast``
    x-only structure (whitening, kernel graph and tree for the model;
    whitening, principal axes and neighbor search for the baselines) is
    built once on all rows; each fold refits only what depends on the
    responses.  Flagged in every report.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from .dataio import Dataset, fit_whitening
from .model import PipelineConfig, build_structure, fit_samples
from .predict import point_predict, point_predict_path
from .simgen import generate

__all__ = [
    "EvalError",
    "EvalReport",
    "ratio_r",
    "baseline_predict",
    "PCRidge",
    "loo_evaluate",
    "loo_baseline",
    "ReplicateResult",
    "compare_replicates",
    "write_report_csv",
    "format_summary",
    "EXACT_MODE_MAX_N",
]

EXACT_MODE_MAX_N = 200
BASELINES = ("global_mean", "knn", "pc_ridge")


class EvalError(ValueError):
    pass


@dataclass
class EvalReport:
    method: str
    squared_errors: np.ndarray
    fold_times: np.ndarray
    cpu_time_seconds: float
    mode: str
    notes: list = field(default_factory=list)

    @property
    def mse_mean(self) -> float:
        return float(np.mean(self.squared_errors))

    @property
    def mse_sd(self) -> float:
        return float(np.std(self.squared_errors, ddof=1)) if self.squared_errors.size > 1 else 0.0

    @property
    def time_sd(self) -> float:
        return float(np.std(self.fold_times, ddof=1)) if self.fold_times.size > 1 else 0.0


def ratio_r(phi_msb: float, phi_other: float) -> float:
    """``phi_msb / phi_other``; below 1 favors the model for errors and times."""
    if phi_other == 0:
        raise ZeroDivisionError("competitor metric is zero")
    return phi_msb / phi_other


# ---------------------------------------------------------------- baselines


class PCRidge:
    """Ridge regression on the top ``m`` principal-component scores.

    Principal axes come from block power iteration on the whitened,
    centered training features.
    """

    def __init__(self, m: int = 10, lam: float = 1.0, iters: int = 200, tol: float = 1e-10,
                 seed: int = 0):
        self.m, self.lam, self.iters, self.tol, self.seed = m, lam, iters, tol, seed

    def fit_axes(self, x):
        x = np.asarray(x, dtype=np.float64)
        n, p = x.shape
        if not 1 <= self.m <= min(n, p):
            raise EvalError(f"m={self.m} must lie in [1, min(n, p)={min(n, p)}]")
        self.stats_ = fit_whitening(x)
        xc = self.stats_.apply(x)
        self.center_ = xc.mean(axis=0)
        xc = xc - self.center_
        rng = np.random.default_rng(self.seed)
        q, _ = np.linalg.qr(rng.standard_normal((p, self.m)))
        for _ in range(self.iters):
            z, _ = np.linalg.qr(xc.T @ (xc @ q))
            # sign-align columns before measuring the change
            z *= np.sign(np.sum(z * q, axis=0) + 1e-300)
            done = np.max(np.abs(z - q)) < self.tol
            q = z
            if done:
                break
        self.axes_ = q
        self.train_scores_ = xc @ q
        return self

    def scores(self, x):
        return (self.stats_.apply(np.asarray(x, dtype=np.float64)) - self.center_) @ self.axes_

    def fit_response(self, y, rows=None):
        s = self.train_scores_ if rows is None else self.train_scores_[rows]
        y = np.asarray(y, dtype=np.float64)
        sm = s.mean(axis=0)
        self.y_mean_ = y.mean()
        sc = s - sm
        a = sc.T @ sc + self.lam * np.eye(self.m)
        self.coef_ = np.linalg.solve(a, sc.T @ (y - self.y_mean_))
        self.score_mean_ = sm
        return self

    def predict_scores(self, s):
        return self.y_mean_ + (np.asarray(s) - self.score_mean_) @ self.coef_

    def fit(self, x, y):
        return self.fit_axes(x).fit_response(y)

    def predict(self, x):
        return self.predict_scores(self.scores(np.atleast_2d(x)))


def _knn_mean(xw_train, y_train, xw_query, k):
    d = np.sum((xw_train - xw_query) ** 2, axis=1)
    idx = np.lexsort((np.arange(d.size), d))[:k]
    return float(np.mean(y_train[idx]))


def baseline_predict(method: str, train: Dataset, x, k: int = 10, m: int = 10,
                     lam: float = 1.0) -> float:
    """Point prediction at ``x`` from one of the in-repo baselines."""
    x = np.asarray(x, dtype=np.float64)
    if method == "global_mean":
        return float(np.mean(train.responses))
    if method == "knn":
        if not 1 <= k <= train.n:
            raise EvalError(f"k={k} must lie in [1, n={train.n}]")
        st = fit_whitening(train.features)
        return _knn_mean(st.apply(train.features), train.responses, st.apply(x), k)
    if method == "pc_ridge":
        model = PCRidge(m, lam).fit(train.features, train.responses)
        return float(model.predict(x)[0])
    raise EvalError(f"unknown baseline {method!r}; choose from {', '.join(BASELINES)}")


# ---------------------------------------------------------------------- LOO


def _resolve_mode(mode, n):
    if mode == "auto":
        return "exact" if n <= EXACT_MODE_MAX_N else "fast"
    if mode not in ("exact", "fast"):
        raise EvalError(f"unknown LOO mode {mode!r}")
    return mode


def _fold_cfg(cfg: PipelineConfig, i: int) -> PipelineConfig:
    seed = int(np.random.SeedSequence([cfg.seed, i]).generate_state(1)[0])
    return PipelineConfig(**{**cfg.to_dict(), "seed": seed})


def loo_evaluate(data: Dataset, cfg: PipelineConfig = PipelineConfig(), mode: str = "auto",
                 folds=None) -> EvalReport:
    """Leave-one-out squared errors of the posterior-mean prediction.

    ``folds`` restricts the held-out rows (default: every row).  Fold ``i``
    runs with a seed derived from ``(cfg.seed, i)``.
    """
    n = data.n
    if n < 3:
        raise EvalError("leave-one-out needs at least 3 rows")
    mode = _resolve_mode(mode, n)
    folds = range(n) if folds is None else folds
    errs, times = [], []
    cpu0 = time.process_time()
    notes = [f"loo mode: {mode}"]
    if mode == "fast":
        notes.append("fast mode: graph and tree built once on all rows; sampler refit per fold")
        t0 = time.perf_counter()
        _, _, tree, _ = build_structure(data.features, cfg)
        paths, lengths = tree.training_paths()
        shared = time.perf_counter() - t0
        notes.append(f"shared structure time: {shared:.6f}")
    for i in folds:
        t0 = time.perf_counter()
        rows = np.delete(np.arange(n), i)
        fcfg = _fold_cfg(cfg, i)
        y_stats = fit_whitening(data.responses[rows])
        if mode == "exact":
            train = data.subset(rows)
            _, _, ftree, _ = build_structure(train.features, fcfg)
            samples = fit_samples(ftree, y_stats.apply(train.responses[:, None])[:, 0], fcfg, y_stats)
            pred = point_predict(ftree, samples, data.features[i])
        else:
            yw = y_stats.apply(data.responses[:, None])[:, 0]
            samples = fit_samples(tree, yw, fcfg, y_stats, rows=rows)
            pred = point_predict_path(samples, paths[i, :lengths[i]])
        errs.append((pred - data.responses[i]) ** 2)
        times.append(time.perf_counter() - t0)
    return EvalReport("msb", np.array(errs), np.array(times), time.process_time() - cpu0, mode, notes)


def loo_baseline(data: Dataset, method: str, mode: str = "auto", folds=None, k: int = 10,
                 m: int = 10, lam: float = 1.0) -> EvalReport:
    n = data.n
    if n < 3:
        raise EvalError("leave-one-out needs at least 3 rows")
    if method not in BASELINES:
        raise EvalError(f"unknown baseline {method!r}; choose from {', '.join(BASELINES)}")
    mode = _resolve_mode(mode, n)
    folds = range(n) if folds is None else folds
    errs, times = [], []
    notes = [f"loo mode: {mode}", f"baseline: {method}"]
    cpu0 = time.process_time()
    y = data.responses
    if mode == "fast" and method != "global_mean":
        notes.append("fast mode: x whitening and x-only structure shared across folds")
        if method == "knn":
            xw = fit_whitening(data.features).apply(data.features)
        else:
            pcr = PCRidge(m, lam).fit_axes(data.features)
    for i in folds:
        t0 = time.perf_counter()
        rows = np.delete(np.arange(n), i)
        if mode == "exact" or method == "global_mean":
            pred = baseline_predict(method, data.subset(rows), data.features[i], k, m, lam)
        elif method == "knn":
            if not 1 <= k <= n - 1:
                raise EvalError(f"k={k} must lie in [1, n-1={n - 1}]")
            pred = _knn_mean(xw[rows], y[rows], xw[i], k)
        else:
            pcr.fit_response(y[rows], rows)
            pred = float(pcr.predict_scores(pcr.train_scores_[i]))
        errs.append((pred - y[i]) ** 2)
        times.append(time.perf_counter() - t0)
    return EvalReport(method, np.array(errs), np.array(times), time.process_time() - cpu0, mode, notes)


# --------------------------------------------------------------- replicates


@dataclass
class ReplicateResult:
    seed: int
    msb: EvalReport
    baselines: dict
    mse_ratio: dict
    time_ratio: dict


def compare_replicates(model: str, n: int, p: int, replicates: int = 20, seed: int = 0,
                       baselines=("global_mean",), cfg: PipelineConfig = PipelineConfig(),
                       mode: str = "auto", sim_kwargs=None, baseline_kwargs=None,
                       progress=None) -> list[ReplicateResult]:
    """Matched comparison: replicate ``r`` scores every method on dataset ``r``.

    Dataset ``r`` is generated with seed ``seed + r``, the model runs with the
    same seed, and ratios are formed within the replicate.
    """
    out = []
    for r in range(replicates):
        s = seed + r
        data = generate(model, n, p, seed=s, **(sim_kwargs or {})).data
        rep_cfg = PipelineConfig(**{**cfg.to_dict(), "seed": s})
        msb = loo_evaluate(data, rep_cfg, mode)
        base = {b: loo_baseline(data, b, mode, **(baseline_kwargs or {})) for b in baselines}
        res = ReplicateResult(
            s, msb, base,
            {b: ratio_r(msb.mse_mean, rep.mse_mean) for b, rep in base.items()},
            {b: ratio_r(msb.cpu_time_seconds, max(rep.cpu_time_seconds, 1e-9)) for b, rep in base.items()},
        )
        out.append(res)
        if progress is not None:
            progress(res)
    return out


def write_report_csv(results: list[ReplicateResult], path):
    names = sorted(results[0].baselines) if results else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replicate_seed", "msb_mse", "msb_time"]
                   + [f"{b}_{c}" for b in names for c in ("mse", "time", "r_mse", "r_time")])
        for res in results:
            row = [res.seed, repr(res.msb.mse_mean), repr(res.msb.cpu_time_seconds)]
            for b in names:
                rep = res.baselines[b]
                row += [repr(rep.mse_mean), repr(rep.cpu_time_seconds),
                        repr(res.mse_ratio[b]), repr(res.time_ratio[b])]
            w.writerow(row)


def format_summary(results: list[ReplicateResult], header: str = "") -> str:
    """Plain-text table of MSE (s.d.) and time (s.d.) per method across replicates."""
    buf = io.StringIO()
    if header:
        buf.write(header.rstrip() + "\n")
    names = sorted(results[0].baselines) if results else []
    buf.write(f"baselines: {', '.join(names)} (in-repo stand-ins for external competitors)\n")
    if results:
        buf.write(f"{results[0].msb.notes[0]}\n")
    buf.write(f"{'MODEL':<14}{'MSE (S.D.)':<24}{'TIME (S.D.)':<24}\n")

    def row(label, mses, tms):
        buf.write(f"{label:<14}{f'{np.mean(mses):.4f} ({np.std(mses):.4f})':<24}"
                  f"{f'{np.mean(tms):.3f} ({np.std(tms):.3f})':<24}\n")

    row("MSB", [r.msb.mse_mean for r in results], [r.msb.cpu_time_seconds for r in results])
    for b in names:
        row(b.upper(), [r.baselines[b].mse_mean for r in results],
            [r.baselines[b].cpu_time_seconds for r in results])
    for b in names:
        rs = np.array([r.mse_ratio[b] for r in results])
        buf.write(f"r_mse vs {b}: {int(np.sum(rs < 1))}/{rs.size} replicates below 1; "
                  f"median {np.median(rs):.4f}\n")
    return buf.getvalue()
