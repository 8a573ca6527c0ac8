"""One-dimensional variational Bayesian Gaussian mixture.

Mean-field VB-EM with a Dirichlet prior on the weights and a Normal-Gamma
prior on each component's (mean, precision). The number of components is
chosen by the evidence lower bound, corrected by ln K! for label symmetry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln, logsumexp

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class MixtureFit:
    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    elbo: float
    n_iter: int


@dataclass
class _Prior:
    alpha0: float = 1e-3
    beta0: float = 1e-3
    m0: float = 0.0
    nu0: float = 1.0
    w0: float = 1.0  # Gamma scale on the precision; data are standardized first


class _VBState:
    def __init__(self, x: np.ndarray, resp: np.ndarray, prior: _Prior):
        self.x = x
        self.prior = prior
        self.resp = resp
        self.m_step()

    def m_step(self):
        p, x, r = self.prior, self.x, self.resp
        nk = r.sum(axis=0) + 1e-12
        xbar = (r * x[:, None]).sum(axis=0) / nk
        sk = (r * (x[:, None] - xbar) ** 2).sum(axis=0) / nk
        self.nk, self.xbar, self.sk = nk, xbar, sk
        self.alpha = p.alpha0 + nk
        self.beta = p.beta0 + nk
        self.m = (p.beta0 * p.m0 + nk * xbar) / self.beta
        w_inv = 1.0 / p.w0 + nk * sk + p.beta0 * nk / (p.beta0 + nk) * (xbar - p.m0) ** 2
        self.w = 1.0 / w_inv
        self.nu = p.nu0 + nk

    def expectations(self):
        e_ln_pi = digamma(self.alpha) - digamma(self.alpha.sum())
        e_ln_lam = digamma(self.nu / 2.0) + math.log(2.0) + np.log(self.w)
        return e_ln_pi, e_ln_lam

    def e_step(self):
        e_ln_pi, e_ln_lam = self.expectations()
        quad = 1.0 / self.beta + self.nu * self.w * (self.x[:, None] - self.m) ** 2
        log_rho = e_ln_pi + 0.5 * e_ln_lam - 0.5 * LOG_2PI - 0.5 * quad
        self.resp = np.exp(log_rho - logsumexp(log_rho, axis=1, keepdims=True))

    def elbo(self) -> float:
        p = self.prior
        K = len(self.alpha)
        e_ln_pi, e_ln_lam = self.expectations()
        nk, xbar, sk = self.nk, self.xbar, self.sk

        ln_px = 0.5 * np.sum(
            nk * (e_ln_lam - 1.0 / self.beta - self.nu * sk * self.w
                  - self.nu * self.w * (xbar - self.m) ** 2 - LOG_2PI)
        )
        ln_pz = np.sum(self.resp * e_ln_pi)
        ln_ppi = gammaln(K * p.alpha0) - K * gammaln(p.alpha0) + (p.alpha0 - 1.0) * e_ln_pi.sum()

        def ln_b(w, nu):
            return -(nu / 2.0) * np.log(w) - (nu / 2.0) * math.log(2.0) - gammaln(nu / 2.0)

        ln_pmu = 0.5 * np.sum(
            math.log(p.beta0 / (2.0 * math.pi)) + e_ln_lam - p.beta0 / self.beta
            - p.beta0 * self.nu * (self.m - p.m0) ** 2 * self.w
        )
        ln_pmu += K * ln_b(p.w0, p.nu0) + (p.nu0 - 2.0) / 2.0 * e_ln_lam.sum()
        ln_pmu -= 0.5 * np.sum(self.nu * self.w / p.w0)

        r = self.resp
        ln_qz = np.sum(r[r > 0] * np.log(r[r > 0]))
        ln_qpi = np.sum((self.alpha - 1.0) * e_ln_pi) + gammaln(self.alpha.sum()) - gammaln(self.alpha).sum()
        entropy_lam = -ln_b(self.w, self.nu) - (self.nu - 2.0) / 2.0 * e_ln_lam + self.nu / 2.0
        ln_qmu = np.sum(0.5 * e_ln_lam + 0.5 * np.log(self.beta / (2.0 * math.pi)) - 0.5 - entropy_lam)
        return float(ln_px + ln_pz + ln_ppi + ln_pmu - ln_qz - ln_qpi - ln_qmu)


def _run(state: _VBState, max_iter: int, tol: float) -> tuple[float, int]:
    prev = -np.inf
    for it in range(1, max_iter + 1):
        state.e_step()
        state.m_step()
        cur = state.elbo()
        if abs(cur - prev) < tol * max(1.0, abs(cur)):
            return cur, it
        prev = cur
    return prev, max_iter


def _init_resp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    # k-means++ seeding followed by a few Lloyd iterations
    centers = [x[rng.integers(len(x))]]
    for _ in range(1, k):
        d2 = np.min((x[:, None] - np.array(centers)) ** 2, axis=1)
        total = d2.sum()
        centers.append(x[rng.choice(len(x), p=d2 / total)] if total > 0 else x[rng.integers(len(x))])
    c = np.array(centers)
    for _ in range(10):
        lab = np.argmin((x[:, None] - c) ** 2, axis=1)
        for j in range(k):
            if np.any(lab == j):
                c[j] = x[lab == j].mean()
    lab = np.argmin((x[:, None] - c) ** 2, axis=1)
    resp = np.full((len(x), k), 1e-6)
    resp[np.arange(len(x)), lab] = 1.0
    return resp / resp.sum(axis=1, keepdims=True)


def fit_vgm(
    values: np.ndarray,
    max_modes: int = 10,
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-7,
    max_points: int = 20000,
    patience: int = 2,
) -> MixtureFit:
    """Fit K = 1, 2, ... components and keep the K with the best corrected ELBO.

    The search stops after ``patience`` consecutive K fail to improve on the best
    score so far.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    rng = np.random.default_rng(seed)
    if len(x) > max_points:
        x = rng.choice(x, size=max_points, replace=False)
    loc, scale = x.mean(), x.std()
    z = (x - loc) / scale
    prior = _Prior()

    best = None
    misses = 0
    for k in range(1, min(max_modes, len(np.unique(z))) + 1):
        state = _VBState(z, _init_resp(z, k, rng), prior)
        elbo, n_iter = _run(state, max_iter, tol)
        # ln K! accounts for the K! equivalent labelings of the posterior; empty
        # components add no distinct labelings, so only occupied ones count
        occupied = int(np.sum(state.nk >= 1.0))
        score = elbo + gammaln(occupied + 1)
        if best is None or score > best[0]:
            best = (score, state, elbo, n_iter)
            misses = 0
        else:
            misses += 1
            if misses >= patience:
                break

    _, state, elbo, n_iter = best
    weights = state.alpha / state.alpha.sum()
    # posterior-mean precision is nu * w
    stds = 1.0 / np.sqrt(state.nu * state.w)
    order = np.argsort(state.m)
    return MixtureFit(
        weights=weights[order],
        means=state.m[order] * scale + loc,
        stds=stds[order] * scale,
        elbo=elbo,
        n_iter=n_iter,
    )
