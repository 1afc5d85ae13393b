"""Hybrid plume + random-feature estimator and its alternating least-squares fit.

The hidden layer is drawn once from a seeded generator and then frozen; only
the output weights ``beta`` and the plume source height ``H`` are estimated.
For fixed ``H`` the output weights are an ordinary least-squares solution,
and for fixed ``beta`` the height is the root of dS/dH, found by Newton's
method with a golden-section fallback on [0, H0].
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from aqimap.grid import SampleSet
from aqimap.plume import SQRT_2PI, PlumeParams, revised_gpm, revised_gpm_dH, revised_gpm_grad

log = logging.getLogger(__name__)

MODEL_FORMAT = "aqimap.gpmnn"
MODEL_VERSION = 1
N_INPUTS = 4  # x, y, z, u
INIT_RANGE = 1.0
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class RankDeficientWarning(RuntimeWarning):
    """Design matrix is rank deficient; the minimum-norm solution was returned."""


def _sigmoid(a):
    # split on sign so exp never overflows
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _sigmoid_prime(a):
    s = _sigmoid(a)
    return s * (1.0 - s)


ACTIVATIONS = {
    "sigmoid": (_sigmoid, _sigmoid_prime),
    "tanh": (np.tanh, lambda a: 1.0 - np.tanh(a) ** 2),
    "sin": (np.sin, np.cos),
}


@dataclass
class HiddenLayer:
    """Frozen random feature layer g(W x' + b) on normalised inputs x' = (x - offset) / scale."""

    W: np.ndarray
    b: np.ndarray
    activation: str = "sigmoid"
    seed: int | None = None
    input_offset: np.ndarray = field(default_factory=lambda: np.zeros(N_INPUTS))
    input_scale: np.ndarray = field(default_factory=lambda: np.ones(N_INPUTS))
    input_varied: np.ndarray | None = None

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float).reshape(-1, len(self.input_offset))
        self.b = np.asarray(self.b, dtype=float).reshape(len(self.W))
        self.input_offset = np.asarray(self.input_offset, dtype=float)
        self.input_scale = np.asarray(self.input_scale, dtype=float)
        if self.input_varied is None:
            self.input_varied = np.ones(len(self.input_offset), dtype=bool)
        self.input_varied = np.asarray(self.input_varied, dtype=bool)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; choose from {sorted(ACTIVATIONS)}")
        if not (np.isfinite(self.W).all() and np.isfinite(self.b).all()):
            raise ValueError("hidden layer weights must be finite")
        if np.any(self.input_scale <= 0):
            raise ValueError("input scales must be positive")

    @property
    def K(self) -> int:
        return len(self.b)

    def preactivation(self, X: np.ndarray) -> np.ndarray:
        return ((X - self.input_offset) / self.input_scale) @ self.W.T + self.b

    def outputs(self, X: np.ndarray) -> np.ndarray:
        return ACTIVATIONS[self.activation][0](self.preactivation(X))

    def jacobian_weights(self, X: np.ndarray) -> np.ndarray:
        """d g_j / d X_k for every row: shape (N, K, m).

        Inputs that were constant in training get zero sensitivity, since the
        data says nothing about the field along them.
        """
        gp = ACTIVATIONS[self.activation][1](self.preactivation(X))
        return gp[:, :, None] * (self.W * self.input_varied / self.input_scale)[None, :, :]

    def with_normalisation(self, X: np.ndarray, gain: float = 1.0) -> "HiddenLayer":
        """Copy whose input normalisation maps the bounding box of ``X`` onto [-gain, gain]."""
        lo, hi = X.min(axis=0), X.max(axis=0)
        half = (hi - lo) / 2.0
        varied = half > 0
        half[~varied] = 1.0
        return replace(self, input_offset=(lo + hi) / 2.0, input_scale=half / gain, input_varied=varied)


def init_hidden(K: int, m: int = N_INPUTS, seed: int = 0, activation: str = "sigmoid") -> HiddenLayer:
    """Seeded random hidden layer: uniform weights with unit-norm rows, uniform biases."""
    if K < 0 or m < 1:
        raise ValueError(f"need K >= 0 and m >= 1, got K={K}, m={m}")
    rng = np.random.default_rng(seed)
    W = rng.uniform(-INIT_RANGE, INIT_RANGE, size=(K, m))
    norms = np.linalg.norm(W, axis=1)
    while np.any(norms == 0):  # measure-zero, but keep the unit-norm contract
        bad = norms == 0
        W[bad] = rng.uniform(-INIT_RANGE, INIT_RANGE, size=(int(bad.sum()), m))
        norms = np.linalg.norm(W, axis=1)
    W /= norms[:, None]
    b = rng.uniform(-INIT_RANGE, INIT_RANGE, size=K)
    return HiddenLayer(W, b, activation, seed, np.zeros(m), np.ones(m), np.ones(m, dtype=bool))


@dataclass
class GpmNnModel:
    hidden: HiddenLayer
    beta: np.ndarray
    plume: PlumeParams
    c_static: float = 0.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        if self.beta.shape != (self.hidden.K + 2,):
            raise ValueError(f"beta must have length K+2={self.hidden.K + 2}, got {self.beta.shape}")
        if self.c_static < 0:
            raise ValueError("c_static must be non-negative")

    @property
    def K(self) -> int:
        return self.hidden.K

    def with_beta(self, beta) -> "GpmNnModel":
        return replace(self, beta=np.asarray(beta, dtype=float))

    def with_height(self, H: float) -> "GpmNnModel":
        return replace(self, plume=self.plume.with_height(H))

    def features(self, positions, wind) -> np.ndarray:
        """Model output matrix rows [g_1 .. g_K, C(x, u), 1] for each position."""
        positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        wind = np.broadcast_to(np.asarray(wind, dtype=float), (len(positions),))
        X = np.column_stack([positions, wind])
        plume_col = revised_gpm(positions, wind, self.plume)
        return np.column_stack([self.hidden.outputs(X), plume_col, np.ones(len(positions))])

    def predict(self, positions, wind) -> np.ndarray:
        return self.c_static + self.features(positions, wind) @ self.beta

    def gradient(self, positions, wind) -> np.ndarray:
        """Partials of the prediction w.r.t. (x, y, z, u), shape (N, 4)."""
        positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        wind = np.broadcast_to(np.asarray(wind, dtype=float), (len(positions),))
        X = np.column_stack([positions, wind])
        K = self.K
        grad = self.beta[K] * revised_gpm_grad(positions, wind, self.plume)
        if K:
            grad = grad + np.einsum("j,njk->nk", self.beta[:K], self.hidden.jacobian_weights(X))
        return grad

    def to_dict(self) -> dict:
        h = self.hidden
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "hidden": {
                "activation": h.activation,
                "seed": h.seed,
                "W": h.W.tolist(),
                "b": h.b.tolist(),
                "input_offset": h.input_offset.tolist(),
                "input_scale": h.input_scale.tolist(),
                "input_varied": h.input_varied.tolist(),
            },
            "beta": self.beta.tolist(),
            "plume": asdict(self.plume),
            "c_static": float(self.c_static),
            "noise_sigma": float(self.noise_sigma),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GpmNnModel":
        if doc.get("format") != MODEL_FORMAT:
            raise ValueError(f"not a GPM-NN model document (format={doc.get('format')!r})")
        if doc.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {doc.get('version')!r}")
        h = doc["hidden"]
        m = len(h["input_offset"])
        hidden = HiddenLayer(
            np.array(h["W"], dtype=float).reshape(-1, m),
            np.array(h["b"], dtype=float),
            h["activation"],
            h["seed"],
            np.array(h["input_offset"], dtype=float),
            np.array(h["input_scale"], dtype=float),
            np.array(h["input_varied"], dtype=bool),
        )
        return cls(hidden, np.array(doc["beta"], dtype=float), PlumeParams(**doc["plume"]),
                   doc["c_static"], doc["noise_sigma"])


def null_model(plume: PlumeParams, c_static: float, K: int = 0, seed: int = 0) -> GpmNnModel:
    """Model that predicts ``c_static`` everywhere."""
    return GpmNnModel(init_hidden(K, seed=seed), np.zeros(K + 2), plume, c_static)


def design_matrix(model: GpmNnModel, samples: SampleSet) -> np.ndarray:
    """N x (K+2) output matrix of ``model`` evaluated on ``samples``."""
    if not samples.is_finite():
        raise ValueError("samples contain non-finite values")
    if len(samples) < model.K + 2:
        log.info("underdetermined system: %d samples for %d output weights", len(samples), model.K + 2)
    return model.features(samples.positions, samples.wind)


def solve_beta(J, targets, prior=None, rcond=None) -> np.ndarray:
    """Least-squares output weights via an SVD-based pseudoinverse.

    Without ``prior`` this is the minimum-norm minimiser of ||J beta - targets||.
    With ``prior`` it is the minimiser closest to ``prior``; the two coincide
    whenever J has full column rank.
    """
    J = np.asarray(J, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if not (np.isfinite(J).all() and np.isfinite(targets).all()):
        raise ValueError("non-finite values in least-squares system")
    base = np.zeros(J.shape[1]) if prior is None else np.asarray(prior, dtype=float)
    delta, _, rank, sv = np.linalg.lstsq(J, targets - J @ base, rcond=rcond)
    if rank < J.shape[1]:
        cond = sv[0] / sv[-1] if len(sv) and sv[-1] > 0 else math.inf
        warnings.warn(
            f"design matrix rank {rank} < {J.shape[1]} columns (condition {cond:.3g}); "
            "using minimum-norm solution",
            RankDeficientWarning,
            stacklevel=2,
        )
    return base + delta


def _targets(model: GpmNnModel, samples: SampleSet) -> np.ndarray:
    return samples.aqi - model.c_static


class _Problem:
    """Fixed-hidden-layer least-squares problem; hidden outputs are computed once."""

    def __init__(self, model: GpmNnModel, samples: SampleSet):
        if not samples.is_finite():
            raise ValueError("samples contain non-finite values")
        self.samples = samples
        self.K = model.K
        X = np.column_stack([samples.positions, samples.wind])
        self.G = model.hidden.outputs(X)
        self.targets = _targets(model, samples)

    def rest(self, beta) -> np.ndarray:
        """Targets minus the hidden-layer and constant contributions."""
        return self.targets - self.G @ beta[: self.K] - beta[self.K + 1]

    def plume_col(self, plume: PlumeParams) -> np.ndarray:
        return revised_gpm(self.samples.positions, self.samples.wind, plume)

    def design(self, plume: PlumeParams) -> np.ndarray:
        return np.column_stack([self.G, self.plume_col(plume), np.ones(len(self.targets))])

    def s(self, beta, plume: PlumeParams) -> float:
        r = self.rest(beta) - beta[self.K] * self.plume_col(plume)
        return float(r @ r)

    def ds_dh(self, beta, plume: PlumeParams) -> float:
        bp = beta[self.K]
        r = self.rest(beta) - bp * self.plume_col(plume)
        dcol = revised_gpm_dH(self.samples.positions, self.samples.wind, plume)
        return float(-2.0 * np.sum(r * bp * dcol))

    def d2s_dh2(self, beta, plume: PlumeParams) -> float:
        # per sample a quadratic a t^2 + b t in t = exp(-(z - H)^2 / (2 sigma_z^2))
        sz = plume.sigma_z
        u = np.maximum(self.samples.wind, plume.wind_floor)
        d2 = (self.samples.positions[:, 2] - plume.H) ** 2
        bprime = plume.lam / SQRT_2PI * beta[self.K] * plume.line_factor
        t = np.exp(-d2 / (2.0 * sz**2))
        a = 2.0 * bprime**2 * d2 / (sz**6 * u**2) - bprime**2 / (sz**4 * u**2)
        b = self.rest(beta) * (bprime / (sz**3 * u) - bprime * d2 / (u * sz**5))
        return float(2.0 * np.sum(a * t**2 + b * t))


def residual_s(model: GpmNnModel, samples: SampleSet) -> float:
    """Sum of squared residuals of the model against the measured AQI."""
    return _Problem(model, samples).s(model.beta, model.plume)


def residual_dH(model: GpmNnModel, samples: SampleSet) -> float:
    """dS/dH with the output weights held fixed."""
    return _Problem(model, samples).ds_dh(model.beta, model.plume)


def residual_d2H(model: GpmNnModel, samples: SampleSet) -> float:
    """d2S/dH2 with the output weights held fixed."""
    return _Problem(model, samples).d2s_dh2(model.beta, model.plume)


@dataclass
class FitReport:
    residual_s: float
    iterations: int
    h_estimate: float
    converged: bool
    convexity_check: float
    s_history: list[float] = field(default_factory=list)
    golden_fallbacks: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def golden_section(f, lo: float, hi: float, tol: float = 1e-10, max_iter: int = 200) -> float:
    """Minimiser of a unimodal ``f`` on [lo, hi]."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    best = min((f(lo), lo), (f(hi), hi), (f((a + b) / 2.0), (a + b) / 2.0))
    return best[1]


def _height_step(prob: _Problem, beta, plume: PlumeParams, max_newton: int = 50, xtol: float = 1e-12):
    """Minimise S over H in [0, H0] at fixed beta. Returns (H, used_fallback)."""
    H0 = plume.H0
    H = plume.H
    for _ in range(max_newton):
        p = plume.with_height(H)
        g = prob.ds_dh(beta, p)
        if g == 0.0:
            return H, False
        h = prob.d2s_dh2(beta, p)
        if not h > 0:
            break
        step = g / h
        H_next = H - step
        if not 0.0 <= H_next <= H0:
            break
        H = H_next
        if abs(step) <= xtol * max(1.0, H0):
            return H, False
    else:
        return H, False
    return golden_section(lambda h: prob.s(beta, plume.with_height(h)), 0.0, H0), True


def fit(
    samples: SampleSet,
    K: int,
    plume_init: PlumeParams,
    seed: int = 0,
    tol: float = 1e-8,
    max_iter: int = 100,
    activation: str = "sigmoid",
    input_gain: float = 1.0,
    rcond: float | None = None,
    h_tol: float = 1e-9,
) -> tuple[GpmNnModel, FitReport]:
    """Alternate output-weight solves and height updates until S settles.

    Converged means |dS| < tol and the height moved by less than h_tol * H0
    in the last alternation.
    """
    if len(samples) < 2:
        raise ValueError("need at least 2 samples to fit")
    if not samples.is_finite():
        raise ValueError("samples contain non-finite values")
    z_max = float(np.max(np.abs(samples.positions[:, 2])))
    plume_init.check_guard(z_max)

    X = np.column_stack([samples.positions, samples.wind])
    hidden = init_hidden(K, N_INPUTS, seed, activation).with_normalisation(X, input_gain)
    c_static = float(np.mean(samples.aqi))
    plume = plume_init.with_height(plume_init.H0 / 2.0)
    model = GpmNnModel(hidden, np.zeros(K + 2), plume, c_static)
    prob = _Problem(model, samples)
    beta = model.beta

    history = [prob.s(beta, plume)]
    converged = False
    fallbacks = 0
    it = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficientWarning)
        for it in range(1, max_iter + 1):
            beta = solve_beta(prob.design(plume), prob.targets, rcond=rcond)
            s_beta = prob.s(beta, plume)
            H_new, fell_back = _height_step(prob, beta, plume)
            fallbacks += fell_back
            candidate = plume.with_height(H_new)
            s_new = prob.s(beta, candidate)
            H_old = plume.H
            if s_new <= s_beta:
                plume = candidate
            else:
                s_new = s_beta
            history.append(s_new)
            if abs(history[-2] - s_new) < tol and abs(plume.H - H_old) < h_tol * plume.H0:
                converged = True
                break

    resid = prob.targets - prob.design(plume) @ beta
    model = replace(model, beta=beta, plume=plume, noise_sigma=float(np.std(resid)))
    report = FitReport(
        residual_s=history[-1],
        iterations=it,
        h_estimate=plume.H,
        converged=converged,
        convexity_check=convexity_scan(model, samples),
        s_history=history,
        golden_fallbacks=fallbacks,
    )
    log.info("fit K=%d: S=%.6g H=%.6g iterations=%d converged=%s", K, report.residual_s,
             report.h_estimate, it, converged)
    return model, report


def refit_beta(model: GpmNnModel, samples: SampleSet, rcond: float | None = None,
               ridge: float = 0.0, ridge_linear: float = 0.0) -> GpmNnModel:
    """Update output weights only, keeping H, the hidden layer and c_static.

    The update starts from the current weights. With both penalties 0 it is
    the smallest change that fits the new samples (pseudoinverse). Otherwise
    it minimises ||J beta - y||^2 + ridge * ||change in hidden weights||^2
    + ridge_linear * ||change in plume and constant weights||^2, the MAP
    update under a Gaussian prior centred on the current weights (each
    penalty is noise variance over prior variance, in AQI units). A sparse
    selective pass then stays close to the previous map while a dense one
    can still correct the small-scale structure.
    """
    if len(samples) == 0:
        return model
    if ridge < 0 or ridge_linear < 0:
        raise ValueError("ridge penalties must be >= 0")
    J = design_matrix(model, samples)
    targets = _targets(model, samples)
    if ridge == 0.0 and ridge_linear == 0.0:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RankDeficientWarning)
            beta = solve_beta(J, targets, prior=model.beta, rcond=rcond)
        return model.with_beta(beta)
    K = model.K
    pen = np.concatenate([np.full(K, float(ridge)), np.full(J.shape[1] - K, float(ridge_linear))])
    delta = _penalised_update(J, targets - J @ model.beta, pen, rcond)
    return model.with_beta(model.beta + delta)


def _penalised_update(J, r, pen, rcond=None) -> np.ndarray:
    """argmin ||J d - r||^2 + sum(pen * d^2); columns with pen = 0 are unpenalised.

    Penalties below 1e-12 of the largest squared column norm are treated as 0,
    since rescaling by 1 / sqrt(pen) would overflow and they cannot change the fit.
    """
    col2 = np.sum(J * J, axis=0)
    free = pen <= 1e-12 * max(float(col2.max(initial=0.0)), 1.0)
    held = ~free
    d = np.zeros(J.shape[1])
    Jf, Jp = J[:, free], J[:, held]
    if free.any():
        # profile the free columns out
        q, _ = np.linalg.qr(Jf)
        A = Jp - q @ (q.T @ Jp)
        rr = r - q @ (q.T @ r)
    else:
        A, rr = Jp, r
    scale = 1.0 / np.sqrt(pen[held])
    A = A * scale
    n, p = A.shape
    if n >= p:
        dp = np.linalg.solve(A.T @ A + np.eye(p), A.T @ rr)
    else:
        dp = A.T @ np.linalg.solve(A @ A.T + np.eye(n), rr)
    d[held] = scale * dp
    if free.any():
        d[free], *_ = np.linalg.lstsq(Jf, r - Jp @ d[held], rcond=rcond)
    return d


def predict(model: GpmNnModel, pos, u):
    """Estimated AQI at ``pos`` with wind ``u``; scalar in, scalar out."""
    pos = np.asarray(pos, dtype=float)
    out = model.predict(pos.reshape(-1, 3), np.ravel(u))
    return float(out[0]) if pos.ndim == 1 else out


def convexity_scan(model: GpmNnModel, samples: SampleSet, grid_points: int = 101) -> float:
    """Smallest numerical d2S/dH2 over a uniform H grid on [0, H0], beta held fixed."""
    if grid_points < 3:
        raise ValueError("need at least 3 grid points")
    prob = _Problem(model, samples)
    Hs = np.linspace(0.0, model.plume.H0, grid_points)
    step = Hs[1] - Hs[0]
    S = np.array([prob.s(model.beta, model.plume.with_height(h)) for h in Hs])
    return float(np.min((S[2:] - 2.0 * S[1:-1] + S[:-2]) / step**2))
