"""Chunked enumeration kernels behind the exact and transformed engines.

Two sums over exponentially many binary assignments:

* subset_scan: inclusion-exclusion over subsets of exactly-treated positive
  findings.  Terms are signed and cancellation is intrinsic to the
  expansion, so the whole term pipeline (factor logs, shifts, products,
  sums) runs in extended precision (long double, 64-bit mantissa on x86),
  and the result carries a cancellation diagnostic for the cases that
  exhaust even that headroom.
* config_scan: direct sum over disease configurations (the brute-force
  oracle).  Terms are nonnegative, so double precision log-sum-exp
  accumulation is enough.

Both kernels optionally accumulate per-disease joint terms (the assignment
sum restricted to one disease being on/off), which is what posterior
marginals and moments are made of.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["SubsetScanResult", "subset_scan", "ConfigScanResult", "config_scan"]

_NEG_INF = float("-inf")


def _chunks(n: int, size: int):
    for start in range(0, n, size):
        yield start, min(start + size, n)


def _bits(start: int, stop: int, k: int) -> np.ndarray:
    idx = np.arange(start, stop, dtype=np.int64)
    return ((idx[:, None] >> np.arange(k, dtype=np.int64)[None, :]) & 1).astype(np.float64)


@dataclass
class SubsetScanResult:
    log_total: float
    degenerate: bool            # signed total came out <= 0
    cancellation: bool          # |total| < cancel_ratio * max |running partial sum|
    shift: float                # the max-term shift M
    raw_total: float            # sum_S sign * exp(L(S) - M)
    joint_on_raw: np.ndarray | None = None   # per scan disease, same scaling as raw_total
    joint_off_raw: np.ndarray | None = None
    pair_on_raw: np.ndarray | None = None    # sum_S sign * exp(L-M) * g_on g_on^T

    def marginals(self) -> np.ndarray:
        """Per scan-disease P(on), clipped to [0, 1] against rounding residue."""
        denom = self.joint_on_raw + self.joint_off_raw
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(denom > 0.0, self.joint_on_raw / denom, 0.0)
        return np.clip(out, 0.0, 1.0).astype(float)

    def log_joint(self, on: bool) -> np.ndarray:
        raw = self.joint_on_raw if on else self.joint_off_raw
        out = np.full(raw.shape, _NEG_INF)
        pos = raw > 0.0
        out[pos] = self.shift + np.log(raw[pos].astype(float))
        return out


def subset_scan(
    leak: np.ndarray,
    theta: np.ndarray,
    log_w0: np.ndarray,
    log_w1: np.ndarray,
    clamp_on: np.ndarray | None = None,
    *,
    want_joints: bool = False,
    want_pairs: bool = False,
    chunk: int = 4096,
    cancel_ratio: float = 1e-3,
) -> SubsetScanResult:
    """Signed subset sum for k exactly-treated findings over nd scan diseases.

    Computes sum over S of (-1)^|S| exp(-sum_{i in S} leak_i) * prod_j fac_j(S)
    with fac_j(S) = exp(log_w0_j) + exp(log_w1_j - t_j(S)) for free diseases
    and exp(log_w1_j - t_j(S)) for diseases clamped on, where
    t_j(S) = sum_{i in S} theta_ij.  Diseases clamped off and diseases
    untouched by all k findings must be folded into a constant by the caller.
    """
    k = int(leak.size)
    nd = int(log_w0.size)
    if clamp_on is None:
        clamp_on = np.zeros(nd, dtype=bool)
    free = ~clamp_on
    n_subsets = 1 << k
    ext = np.longdouble
    leak = leak.astype(ext)
    theta = theta.astype(ext)
    log_w0 = log_w0.astype(ext)
    log_w1 = log_w1.astype(ext)

    def chunk_logfac(bits: np.ndarray) -> np.ndarray:
        t = bits @ theta
        lf = np.empty_like(t)
        lf[:, free] = np.logaddexp(log_w0[free][None, :], log_w1[free][None, :] - t[:, free])
        lf[:, clamp_on] = log_w1[clamp_on][None, :] - t[:, clamp_on]
        return lf

    L = np.empty(n_subsets, dtype=ext)
    parity = np.empty(n_subsets, dtype=np.int8)
    for a, b in _chunks(n_subsets, chunk):
        bits = _bits(a, b, k).astype(ext)
        L[a:b] = chunk_logfac(bits).sum(axis=1) - bits @ leak
        parity[a:b] = (_bits(a, b, k).sum(axis=1).astype(np.int64) & 1).astype(np.int8)

    shift = L.max()
    terms = np.exp(L - shift)
    terms[parity == 1] *= -1.0
    total = terms.sum()
    running = np.cumsum(terms)
    max_partial = float(np.max(np.abs(running))) if running.size else 0.0
    degenerate = not total > 0.0
    cancellation = bool(abs(float(total)) < cancel_ratio * max_partial)
    log_total = float(shift + np.log(total)) if not degenerate else _NEG_INF

    result = SubsetScanResult(log_total, degenerate, cancellation, float(shift), float(total))
    if not (want_joints or want_pairs):
        return result

    joint_on = np.zeros(nd, dtype=ext)
    joint_off = np.zeros(nd, dtype=ext)
    pair = np.zeros((nd, nd), dtype=ext) if want_pairs else None
    for a, b in _chunks(n_subsets, chunk):
        bits = _bits(a, b, k).astype(ext)
        t = bits @ theta
        lf = chunk_logfac(bits)
        w = terms[a:b]
        g_on = np.exp(log_w1[None, :] - t - lf)
        g_off = np.exp(log_w0[None, :] - lf)
        g_off[:, clamp_on] = 0.0
        joint_on += w @ g_on
        joint_off += w @ g_off
        if want_pairs:
            pair += (g_on * w[:, None]).T @ g_on
    result.joint_on_raw = joint_on
    result.joint_off_raw = joint_off
    result.pair_on_raw = None if pair is None else pair.astype(float)
    return result


@dataclass
class ConfigScanResult:
    log_total: float
    joint_on_log: np.ndarray | None = None
    joint_off_log: np.ndarray | None = None


def config_scan(
    log_p1: np.ndarray,
    log_p0: np.ndarray,
    offsets: np.ndarray,
    theta: np.ndarray,
    *,
    want_joints: bool = False,
    chunk: int = 1 << 14,
) -> ConfigScanResult:
    """Brute-force sum of prod_i P(f_i fires | d) * P(d) over free disease configs.

    theta is (m, nfree); offsets are each finding's activation with all free
    diseases off (leak plus clamped-on contributions).  A zero activation
    makes the finding impossible and the term drops out.
    """
    nfree = int(log_p1.size)
    n_cfg = 1 << nfree
    terms = np.empty(n_cfg)
    for a, b in _chunks(n_cfg, chunk):
        bits = _bits(a, b, nfree)
        x = bits @ theta.T + offsets[None, :]
        loglik = np.full(x.shape, _NEG_INF)
        alive = x > 0.0
        xa = x[alive]
        small = xa < math.log(2.0)
        lv = np.empty_like(xa)
        lv[small] = np.log(-np.expm1(-xa[small]))
        lv[~small] = np.log1p(-np.exp(-xa[~small]))
        loglik[alive] = lv
        terms[a:b] = loglik.sum(axis=1) + bits @ log_p1 + (1.0 - bits) @ log_p0

    shift = float(terms.max()) if n_cfg else _NEG_INF
    if shift == _NEG_INF:
        return ConfigScanResult(_NEG_INF,
                                np.full(nfree, _NEG_INF) if want_joints else None,
                                np.full(nfree, _NEG_INF) if want_joints else None)
    weights = np.exp(terms - shift)
    log_total = shift + math.log(weights.sum())

    if not want_joints:
        return ConfigScanResult(log_total)
    acc_on = np.zeros(nfree)
    acc_off = np.zeros(nfree)
    for a, b in _chunks(n_cfg, chunk):
        bits = _bits(a, b, nfree)
        w = weights[a:b]
        acc_on += w @ bits
        acc_off += w @ (1.0 - bits)
    with np.errstate(divide="ignore"):
        joint_on = np.where(acc_on > 0.0, shift + np.log(acc_on, where=acc_on > 0.0, out=np.zeros(nfree)), _NEG_INF)
        joint_off = np.where(acc_off > 0.0, shift + np.log(acc_off, where=acc_off > 0.0, out=np.zeros(nfree)), _NEG_INF)
    return ConfigScanResult(log_total, joint_on, joint_off)
