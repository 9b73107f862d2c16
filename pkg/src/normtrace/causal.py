"""Online Granger-style causal edge detection.

For an ordered agent pair the target signal is regressed on its own lags
(restricted model) and on its own plus the source's lags (unrestricted
model), both ridge-regularized, over a sliding window of regression rows.
The F-statistic

    F = ((RSS_r - RSS_u) / m) / (RSS_u / (n - 2m - 1))

is maintained incrementally in amortized O(m^2) per sample by rank-one
updates and downdates of the inverse Gram matrices; a drifting threshold
h_t = h0 + sqrt(2 ln t) admits an edge only when the evidence clears a
budget that tightens over time.  ``granger_f_batch`` is the direct
least-squares computation of the same statistic and serves as the
independent reference for the incremental path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .ledger import CausalEdge, Event, LedgerDag

F_SENTINEL = 1e12
_RSS_FLOOR = 1e-12

STATUS_WARMUP = 0
STATUS_ACTIVE = 1
STATUS_RESET = 2


def h0_for_alpha(alpha: float) -> float:
    """Base threshold delivering an any-time false-edge budget of alpha."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie strictly between 0 and 1")
    return math.sqrt(2.0 * math.log(1.0 / alpha))


@dataclass(frozen=True)
class ThresholdSchedule:
    """Nondecreasing edge-admission threshold h_t = h0 + sqrt(2 ln t)."""

    h0: float

    def at(self, t: int) -> float:
        if t < 1:
            raise ValueError("schedule is defined for t >= 1")
        return self.h0 + math.sqrt(2.0 * math.log(t))


def threshold_at(schedule: ThresholdSchedule, t: int) -> float:
    return schedule.at(t)


@numba.njit(cache=True)
def _sm_add(P, x):
    # P <- inverse after A + x x^T, via one rank-one correction.
    p = x.shape[0]
    v = np.empty(p)
    c = 0.0
    for a in range(p):
        s = 0.0
        for q in range(p):
            s += P[a, q] * x[q]
        v[a] = s
        c += s * x[a]
    denom = 1.0 + c
    inv = 1.0 / denom
    for a in range(p):
        va = v[a] * inv
        for q in range(p):
            P[a, q] -= va * v[q]
    return denom


@numba.njit(cache=True)
def _sm_remove(P, x):
    # P <- inverse after A - x x^T; fails (negative return) when the
    # downdate would destroy positive definiteness.
    p = x.shape[0]
    v = np.empty(p)
    c = 0.0
    for a in range(p):
        s = 0.0
        for q in range(p):
            s += P[a, q] * x[q]
        v[a] = s
        c += s * x[a]
    denom = 1.0 - c
    if denom <= 1e-10:
        return -1.0
    inv = 1.0 / denom
    for a in range(p):
        va = v[a] * inv
        for q in range(p):
            P[a, q] += va * v[q]
    return denom


@numba.njit(cache=True)
def _accumulate_row(G, b, x, y, sign):
    p = x.shape[0]
    for a in range(p):
        xa = x[a]
        b[a] += sign * xa * y
        for q in range(p):
            G[a, q] += sign * xa * x[q]


@numba.njit(cache=True)
def _model_rss(P, G, b, syy):
    # beta = P b; rss = syy - 2 beta.b + beta.G.beta, fused.
    p = b.shape[0]
    beta = np.empty(p)
    dot_bb = 0.0
    for a in range(p):
        s = 0.0
        for q in range(p):
            s += P[a, q] * b[q]
        beta[a] = s
        dot_bb += s * b[a]
    quad = 0.0
    for a in range(p):
        s = 0.0
        for q in range(p):
            s += G[a, q] * beta[q]
        quad += beta[a] * s
    return syy - 2.0 * dot_bb + quad


@numba.njit(cache=True)
def _reset_state(hist_src, hist_tgt, rows, ys, G_u, b_u, P_u, G_r, b_r, P_r, fstate, meta, m, ridge):
    hist_src[:] = 0.0
    hist_tgt[:] = 0.0
    rows[:, :] = 0.0
    ys[:] = 0.0
    G_u[:, :] = 0.0
    b_u[:] = 0.0
    G_r[:, :] = 0.0
    b_r[:] = 0.0
    P_u[:, :] = np.eye(2 * m) / ridge
    P_r[:, :] = np.eye(m) / ridge
    fstate[0] = 0.0
    meta[0] = 0
    meta[1] = 0
    meta[2] = 0
    meta[3] = 0
    meta[4] = STATUS_RESET


@numba.njit(cache=True)
def _granger_core(
    s,
    g,
    hist_src,
    hist_tgt,
    rows,
    ys,
    G_u,
    b_u,
    P_u,
    G_r,
    b_r,
    P_r,
    fstate,
    meta,
    m,
    n,
    ridge,
    refresh_every,
):
    """Advance one sample pair; returns F (0.0 until the row window fills).

    meta: [samples_seen, row_count, write_slot, rows_since_refresh, status]
    fstate: [sum of squared responses over the window]
    """
    seen = meta[0]
    p = 2 * m
    ok = np.isfinite(s) and np.isfinite(g)
    if ok and seen >= m:
        x = np.empty(p)
        for j in range(m):
            x[j] = hist_tgt[(seen - 1 - j) % m]
            x[m + j] = hist_src[(seen - 1 - j) % m]
        y = g
        slot = meta[2]
        if meta[1] == n:
            x_old = rows[slot].copy()
            y_old = ys[slot]
            d1 = _sm_remove(P_u, x_old)
            d2 = _sm_remove(P_r, x_old[:m])
            if d1 < 0.0 or d2 < 0.0:
                ok = False
            else:
                _accumulate_row(G_u, b_u, x_old, y_old, -1.0)
                _accumulate_row(G_r, b_r, x_old[:m], y_old, -1.0)
                fstate[0] -= y_old * y_old
        if ok:
            rows[slot, :] = x
            ys[slot] = y
            meta[2] = (slot + 1) % n
            if meta[1] < n:
                meta[1] += 1
            _sm_add(P_u, x)
            xr = x[:m]
            _sm_add(P_r, xr)
            _accumulate_row(G_u, b_u, x, y, 1.0)
            _accumulate_row(G_r, b_r, xr, y, 1.0)
            fstate[0] += y * y
            meta[3] += 1
            if meta[3] >= refresh_every:
                # Exact re-inversion bounds rank-one drift; amortized cost
                # stays O(m^2) per sample.
                P_u[:, :] = np.linalg.inv(G_u + ridge * np.eye(p))
                P_r[:, :] = np.linalg.inv(G_r + ridge * np.eye(m))
                meta[3] = 0
    if not ok:
        _reset_state(hist_src, hist_tgt, rows, ys, G_u, b_u, P_u, G_r, b_r, P_r, fstate, meta, m, ridge)
        return 0.0
    hist_src[seen % m] = s
    hist_tgt[seen % m] = g
    meta[0] = seen + 1
    if meta[1] < n:
        meta[4] = STATUS_WARMUP
        return 0.0
    rss_u = _model_rss(P_u, G_u, b_u, fstate[0])
    rss_r = _model_rss(P_r, G_r, b_r, fstate[0])
    if not (np.isfinite(rss_u) and np.isfinite(rss_r)):
        _reset_state(hist_src, hist_tgt, rows, ys, G_u, b_u, P_u, G_r, b_r, P_r, fstate, meta, m, ridge)
        return 0.0
    if rss_u < 0.0:
        rss_u = 0.0
    if rss_r < 0.0:
        rss_r = 0.0
    if rss_u < _RSS_FLOOR:
        f = F_SENTINEL
    else:
        f = ((rss_r - rss_u) / m) / (rss_u / (n - 2 * m - 1))
    if not np.isfinite(f):
        _reset_state(hist_src, hist_tgt, rows, ys, G_u, b_u, P_u, G_r, b_r, P_r, fstate, meta, m, ridge)
        return 0.0
    meta[4] = STATUS_ACTIVE
    return f


class GrangerState:
    """Incremental per-pair F-statistic over a sliding row window.

    Non-finite inputs or a failed downdate reset the state to a fresh
    window (counted in ``resets``); the statistic then rebuilds from the
    incoming stream alone.
    """

    def __init__(
        self,
        lags: int = 8,
        window: int = 64,
        ridge: float = 1e-6,
        refresh_every: int = 256,
    ) -> None:
        if lags < 1:
            raise ValueError("lags must be positive")
        if window < 2 * lags + 2:
            raise ValueError("window must exceed 2*lags + 1 rows")
        if ridge <= 0:
            raise ValueError("ridge must be positive")
        self.lags = lags
        self.window = window
        self.ridge = float(ridge)
        self.refresh_every = refresh_every
        p = 2 * lags
        self._hist_src = np.zeros(lags)
        self._hist_tgt = np.zeros(lags)
        self._rows = np.zeros((window, p))
        self._ys = np.zeros(window)
        self._G_u = np.zeros((p, p))
        self._b_u = np.zeros(p)
        self._P_u = np.eye(p) / self.ridge
        self._G_r = np.zeros((lags, lags))
        self._b_r = np.zeros(lags)
        self._P_r = np.eye(lags) / self.ridge
        self._fstate = np.zeros(1)
        self._meta = np.zeros(5, dtype=np.int64)
        self.resets = 0
        self.f_stat = 0.0

    @property
    def window_full(self) -> bool:
        return int(self._meta[1]) >= self.window

    @property
    def samples_seen(self) -> int:
        return int(self._meta[0])

    def reset(self) -> None:
        _reset_state(
            self._hist_src, self._hist_tgt, self._rows, self._ys,
            self._G_u, self._b_u, self._P_u, self._G_r, self._b_r, self._P_r,
            self._fstate, self._meta, self.lags, self.ridge,
        )
        self._meta[4] = STATUS_WARMUP
        self.f_stat = 0.0

    def update(self, source_sample: float, target_sample: float) -> float:
        f = _granger_core(
            float(source_sample), float(target_sample),
            self._hist_src, self._hist_tgt, self._rows, self._ys,
            self._G_u, self._b_u, self._P_u, self._G_r, self._b_r, self._P_r,
            self._fstate, self._meta, self.lags, self.window, self.ridge,
            self.refresh_every,
        )
        if self._meta[4] == STATUS_RESET:
            self.resets += 1
        self.f_stat = float(f)
        return self.f_stat

    @property
    def inverse_gram_unrestricted(self) -> np.ndarray:
        return self._P_u

    @property
    def inverse_gram_restricted(self) -> np.ndarray:
        return self._P_r


@numba.njit(cache=True)
def _bank_update(
    pair_idx,
    src_samples,
    tgt_samples,
    HS,
    HT,
    ROWS,
    YS,
    GU,
    BU,
    PU,
    GR,
    BR,
    PR,
    FST,
    META,
    RESETS,
    FVALS,
    m,
    n,
    ridge,
    refresh_every,
):
    for k in range(pair_idx.shape[0]):
        i = pair_idx[k]
        f = _granger_core(
            src_samples[k], tgt_samples[k],
            HS[i], HT[i], ROWS[i], YS[i],
            GU[i], BU[i], PU[i], GR[i], BR[i], PR[i],
            FST[i], META[i], m, n, ridge, refresh_every,
        )
        if META[i, 4] == STATUS_RESET:
            RESETS[i] += 1
        FVALS[i] = f


class GrangerBank:
    """Stacked incremental states for many ordered agent pairs.

    Same recursion as ``GrangerState`` (one shared kernel), but a whole
    event's in-neighbor pairs advance in a single jitted call, which keeps
    the audit pipeline's per-step cost flat at scale.
    """

    def __init__(
        self,
        num_pairs: int,
        lags: int = 8,
        window: int = 64,
        ridge: float = 1e-6,
        refresh_every: int = 256,
    ) -> None:
        self.num_pairs = num_pairs
        self.lags = lags
        self.window = window
        self.ridge = float(ridge)
        self.refresh_every = refresh_every
        p = 2 * lags
        size = max(num_pairs, 1)
        self._HS = np.zeros((size, lags))
        self._HT = np.zeros((size, lags))
        self._ROWS = np.zeros((size, window, p))
        self._YS = np.zeros((size, window))
        self._GU = np.zeros((size, p, p))
        self._BU = np.zeros((size, p))
        self._PU = np.broadcast_to(np.eye(p) / ridge, (size, p, p)).copy()
        self._GR = np.zeros((size, lags, lags))
        self._BR = np.zeros((size, lags))
        self._PR = np.broadcast_to(np.eye(lags) / ridge, (size, lags, lags)).copy()
        self._FST = np.zeros((size, 1))
        self._META = np.zeros((size, 5), dtype=np.int64)
        self._RESETS = np.zeros(size, dtype=np.int64)
        self.f_stats = np.zeros(size)

    def update_pairs(
        self, pair_idx: np.ndarray, src_samples: np.ndarray, tgt_samples
    ) -> None:
        """Apply ordered sample updates; entry k advances pair pair_idx[k].

        One pair may appear several times; updates apply sequentially, so a
        whole step's deliveries can be batched into a single call.
        """
        if pair_idx.size == 0:
            return
        tgt = np.asarray(tgt_samples, dtype=float)
        if tgt.ndim == 0:
            tgt = np.full(pair_idx.shape[0], float(tgt))
        _bank_update(
            pair_idx, np.asarray(src_samples, dtype=float), tgt,
            self._HS, self._HT, self._ROWS, self._YS,
            self._GU, self._BU, self._PU, self._GR, self._BR, self._PR,
            self._FST, self._META, self._RESETS, self.f_stats,
            self.lags, self.window, self.ridge, self.refresh_every,
        )

    @property
    def total_resets(self) -> int:
        return int(self._RESETS.sum())


def granger_f_batch(
    source,
    target,
    lags: int = 8,
    ridge: float = 1e-6,
    window: int | None = None,
) -> float:
    """Direct least-squares F of target on own lags vs own + source lags.

    ``window`` restricts the regression to the trailing ``window`` rows,
    matching an incremental state fed the same stream.
    """
    s = np.asarray(source, dtype=float)
    t = np.asarray(target, dtype=float)
    if s.ndim != 1 or s.shape != t.shape:
        raise ValueError("source and target must be 1-d series of equal length")
    length = s.shape[0]
    if length < 2 * lags + 2:
        raise ValueError("series too short for the requested lag order")
    total_rows = length - lags
    n_rows = total_rows if window is None else int(window)
    if n_rows > total_rows:
        raise ValueError("window exceeds the available regression rows")
    df = n_rows - 2 * lags - 1
    if df < 1:
        raise ValueError("series too short: nonpositive degrees of freedom")
    idx = np.arange(length - n_rows, length)
    offs = np.arange(1, lags + 1)
    lag_idx = idx[:, None] - offs[None, :]
    x_full = np.concatenate([t[lag_idx], s[lag_idx]], axis=1)
    y = t[idx]
    syy = float(y @ y)

    def _rss(x_mat: np.ndarray) -> float:
        gram = x_mat.T @ x_mat
        b = x_mat.T @ y
        beta = np.linalg.solve(gram + ridge * np.eye(x_mat.shape[1]), b)
        rss = syy - 2.0 * float(beta @ b) + float(beta @ (gram @ beta))
        return max(rss, 0.0)

    rss_u = _rss(x_full)
    rss_r = _rss(x_full[:, :lags])
    if rss_u < _RSS_FLOOR:
        return F_SENTINEL
    return ((rss_r - rss_u) / lags) / (rss_u / df)


@numba.njit(cache=True)
def first_exceedance_step(src, tgt, m, n, ridge, h0):
    """First 1-based index t where the incremental F clears h0 + sqrt(2 ln t),
    or 0 when the stream never produces an admissible edge."""
    p = 2 * m
    hist_src = np.zeros(m)
    hist_tgt = np.zeros(m)
    rows = np.zeros((n, p))
    ys = np.zeros(n)
    G_u = np.zeros((p, p))
    b_u = np.zeros(p)
    P_u = np.eye(p) / ridge
    G_r = np.zeros((m, m))
    b_r = np.zeros(m)
    P_r = np.eye(m) / ridge
    fstate = np.zeros(1)
    meta = np.zeros(5, dtype=np.int64)
    for i in range(src.shape[0]):
        f = _granger_core(
            src[i], tgt[i], hist_src, hist_tgt, rows, ys,
            G_u, b_u, P_u, G_r, b_r, P_r, fstate, meta,
            m, n, ridge, 256,
        )
        if meta[4] == STATUS_ACTIVE:
            t = i + 1
            if f > h0 + np.sqrt(2.0 * np.log(t)):
                return t
    return 0


def insert_causal_edges(
    ledger: LedgerDag,
    event_id: int,
    event: Event,
    in_neighbors,
    f_lookup,
    schedule: ThresholdSchedule,
    max_candidates: int = 8,
    horizon: int | None = None,
    max_edges: int | None = None,
) -> list[CausalEdge]:
    """Link a newly committed record to recent upstream influences.

    Candidates are the most recent committed records of the emitter's
    in-neighbors; an edge is inserted when the pair statistic from
    ``f_lookup(source_agent, target_agent)`` clears the schedule at the
    event's step.  ``max_edges`` caps insertions (per-step byte budget).
    """
    candidates = ledger.recent_upstream(
        in_neighbors, before_step=event.step, limit=max_candidates, horizon=horizon
    )
    if not candidates:
        return []
    h_t = schedule.at(max(1, event.step))
    inserted: list[CausalEdge] = []
    for uid, uev in candidates:
        if max_edges is not None and len(inserted) >= max_edges:
            break
        f = f_lookup(uev.agent, event.agent)
        if f > h_t:
            edge = ledger.add_edge(uid, event_id, f, event.step)
            if edge is not None:
                inserted.append(edge)
    return inserted
