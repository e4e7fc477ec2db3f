"""Wide two-layer networks under gradient flow and their Taylorized variants.

The model is ``f_W(x) = m^{-1/2} sum_r a_r sigma(w_r . x)`` with fixed signs
``a`` and trainable ``W`` (``d x m``), fed unit-norm inputs.  Its order-``k``
expansion around ``W0`` replaces ``sigma`` per neuron and data point by the
degree-``k`` Taylor polynomial at ``w_{r,0} . x``.  Everything here is
analytic (no jets), which makes the module an independent cross-check of the
generic jet engine.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .activations import Activation, get_activation
from .data import sample_sphere
from .tensor import RngStream

log = logging.getLogger(__name__)

UNIT_TOL = 1e-10


@dataclass
class TwoLayerNet:
    W0: np.ndarray            # (d, m)
    a: np.ndarray             # (m,) entries +-1, frozen
    activation: Activation

    @property
    def d(self) -> int:
        return self.W0.shape[0]

    @property
    def m(self) -> int:
        return self.W0.shape[1]


@dataclass
class TaylorizedTwoLayer:
    net: TwoLayerNet
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("Taylor order must be >= 1")


def init_two_layer(d: int, m: int, activation="tanh", seed: int = 0) -> TwoLayerNet:
    """``a_r ~ Unif{+-1}``, ``w_{r,0} ~ N(0, I_d)``."""
    act = get_activation(activation)
    W0 = RngStream(seed, 301).generator().standard_normal((d, m))
    a = RngStream(seed, 302).generator().choice([-1.0, 1.0], size=m)
    return TwoLayerNet(W0, a, act)


def _check_unit(X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    norms = np.linalg.norm(X, axis=1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise ValueError("inputs must have unit Euclidean norm")
    return X


def _model_parts(model, W, X):
    """Per (example, neuron) activation value and derivative of ``model`` at ``W``."""
    net = model.net if isinstance(model, TaylorizedTwoLayer) else model
    if isinstance(model, TaylorizedTwoLayer):
        k = model.k
        S = net.activation.series(X @ net.W0, k)          # (k+1, n, m)
        D = X @ (W - net.W0)
        val = S[k].copy()
        der = k * S[k]
        for j in range(k - 1, -1, -1):                    # Horner in the displacement
            val = val * D + S[j]
            if j >= 1:
                der = der * D + j * S[j]
        return net, val, der
    Z = X @ W
    S = net.activation.series(Z, 1)
    return net, S[0], S[1]


def model_outputs(model, W, X) -> np.ndarray:
    net, val, _ = _model_parts(model, W, X)
    return val @ net.a / np.sqrt(net.m)


def two_layer_forward(net: TwoLayerNet, x, W=None):
    """Network output on a unit vector (scalar) or a batch of rows."""
    X = _check_unit(x)
    out = model_outputs(net, net.W0 if W is None else W, X)
    return float(out[0]) if np.ndim(x) == 1 else out


def taylorized_two_layer_forward(tnet: TaylorizedTwoLayer, W, x):
    X = _check_unit(x)
    out = model_outputs(tnet, W, X)
    return float(out[0]) if np.ndim(x) == 1 else out


def jacobian(model, W, X) -> np.ndarray:
    """Rows are ``grad_W f(x_i)`` flattened in ``W``'s row-major ``(d, m)`` order."""
    net, _, der = _model_parts(model, W, X)
    coef = der * net.a / np.sqrt(net.m)                   # (n, m)
    return (X[:, :, None] * coef[:, None, :]).reshape(X.shape[0], -1)


def loss_gradient(model, W, X, y) -> tuple:
    """``(L, grad L)`` for ``L = 1/2 mean_i (f(x_i) - y_i)^2``."""
    net, val, der = _model_parts(model, W, X)
    f = val @ net.a / np.sqrt(net.m)
    g = f - y
    n = X.shape[0]
    G = X.T @ (g[:, None] * der * net.a) / (n * np.sqrt(net.m))
    return 0.5 * float(g @ g) / n, G


@dataclass
class NTKMatrix:
    theta: np.ndarray
    lambda_min: float
    m: int


def empirical_ntk(model, W, X, max_n: int = 2048) -> NTKMatrix:
    """``J J^T`` at ``W``, using ``(J J^T)_ij = (x_i . x_j) m^{-1} sum_r s'_ri s'_rj``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] > max_n:
        raise ValueError(f"n={X.shape[0]} exceeds the dense NTK cap {max_n}")
    net, _, der = _model_parts(model, W, X)
    theta = (X @ X.T) * (der @ der.T) / net.m
    theta = 0.5 * (theta + theta.T)
    try:
        lam = float(np.linalg.eigvalsh(theta)[0])
    except np.linalg.LinAlgError as err:
        raise RuntimeError("eigensolve failed") from err
    return NTKMatrix(theta, lam, net.m)


# ----------------------------------------------------------- gradient flow

@dataclass(frozen=True)
class GradientFlowConfig:
    eta0: float = 1.0
    t0: float = 10.0
    h: float = 0.05
    record_every: int = 10

    def __post_init__(self):
        if not self.h > 0 or not self.t0 > 0 or self.eta0 < 0:
            raise ValueError("need h > 0, t0 > 0 and eta0 >= 0")

    @property
    def n_steps(self) -> int:
        return int(round(self.t0 / self.h))


@dataclass
class FlowTrajectory:
    times: np.ndarray
    W: list
    residuals: list           # g_t = f(W_t) - y on the training set
    lambda_min0: float
    flagged: bool = False     # lambda_min(Theta_0) <= 0
    aborted_at: float | None = None


def gradient_flow_integrate(model, X, y, cfg: GradientFlowConfig, W_init=None) -> FlowTrajectory:
    """Classical RK4 on ``dW/dt = -eta0 grad L(W)``, recorded every
    ``cfg.record_every`` steps (and at ``t = 0``)."""
    X = _check_unit(X)
    y = np.asarray(y, dtype=float)
    net = model.net if isinstance(model, TaylorizedTwoLayer) else model
    W = (net.W0 if W_init is None else W_init).copy()
    lam0 = empirical_ntk(model, W, X).lambda_min
    traj = FlowTrajectory(np.array([0.0]), [W.copy()], [model_outputs(model, W, X) - y],
                          lam0, flagged=lam0 <= 0)
    if traj.flagged:
        log.warning("lambda_min(Theta_0) = %.3g <= 0", lam0)

    def rhs(W):
        return -cfg.eta0 * loss_gradient(model, W, X, y)[1]

    h = cfg.h
    times = [0.0]
    for step in range(1, cfg.n_steps + 1):
        k1 = rhs(W)
        k2 = rhs(W + 0.5 * h * k1)
        k3 = rhs(W + 0.5 * h * k2)
        k4 = rhs(W + h * k3)
        W = W + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(W)):
            traj.aborted_at = times[-1]
            log.warning("gradient flow became non-finite after t=%g", times[-1])
            break
        if step % cfg.record_every == 0 or step == cfg.n_steps:
            times.append(step * h)
            traj.W.append(W.copy())
            traj.residuals.append(model_outputs(model, W, X) - y)
    traj.times = np.array(times)
    return traj


@dataclass
class DeviationReport:
    times: np.ndarray
    param_dev: np.ndarray
    func_dev: np.ndarray
    residual_full: list
    residual_taylor: list

    @property
    def sup_param(self) -> float:
        return float(np.max(self.param_dev))

    @property
    def sup_func(self) -> float:
        return float(np.max(self.func_dev))


def coupling_deviation(model_full, full: FlowTrajectory, model_taylor, taylor: FlowTrajectory,
                       X_test) -> DeviationReport:
    """Grid-wise ``||W_t - W^(k)_t||_F`` and ``max_x |f_{W_t}(x) - f^(k)_{W^(k)_t}(x)|``."""
    if full.times.shape != taylor.times.shape or not np.array_equal(full.times, taylor.times):
        raise ValueError("trajectories live on different time grids")
    if not np.array_equal(full.W[0], taylor.W[0]):
        raise ValueError("trajectories do not share their initialization")
    X_test = _check_unit(X_test)
    pdev = np.array([np.linalg.norm(a - b) for a, b in zip(full.W, taylor.W)])
    fdev = np.array([np.max(np.abs(model_outputs(model_full, a, X_test) - model_outputs(model_taylor, b, X_test)))
                     for a, b in zip(full.W, taylor.W)])
    return DeviationReport(full.times, pdev, fdev, full.residuals, taylor.residuals)


def halving_horizon(model, X, y, cfg: GradientFlowConfig, fraction: float = 0.5,
                    t_max: float = 1e4) -> float:
    """Smallest grid time at which ``||g_t|| <= fraction * ||g_0||`` under the flow."""
    t0 = cfg.t0
    while t0 <= t_max:
        traj = gradient_flow_integrate(model, X, y, GradientFlowConfig(cfg.eta0, t0, cfg.h, cfg.record_every))
        norms = [np.linalg.norm(g) for g in traj.residuals]
        hit = [t for t, r in zip(traj.times, norms) if r <= fraction * norms[0]]
        if hit:
            return float(hit[0])
        t0 *= 2
    raise RuntimeError(f"residual did not drop to {fraction} of its initial norm by t={t_max}")


def sample_theory_dataset(n: int, d: int, net: TwoLayerNet, seed: int = 0, min_eig: float = 1e-3,
                          max_tries: int = 100) -> tuple:
    """Unit-sphere inputs with random +-1 labels, redrawn until
    ``lambda_min(Theta_0) >= min_eig`` for ``net``."""
    for attempt in range(max_tries):
        X = sample_sphere(n, d, RngStream(seed, 400 + 2 * attempt))
        if empirical_ntk(net, net.W0, X).lambda_min >= min_eig:
            y = RngStream(seed, 401 + 2 * attempt).generator().choice([-1.0, 1.0], size=n)
            return X, y
    raise RuntimeError(f"no dataset with lambda_min >= {min_eig} in {max_tries} draws")


# ------------------------------------------------------------ experiments

@dataclass
class ScalingFit:
    widths: list
    orders: list
    seeds: list
    cells: list = field(default_factory=list)        # dicts: width, k, seed, sup_param_dev, sup_func_dev
    median_param: dict = field(default_factory=dict)  # k -> [per width]
    median_func: dict = field(default_factory=dict)
    slope: dict = field(default_factory=dict)         # k -> fitted log-log slope (param deviation)
    residual: dict = field(default_factory=dict)
    func_slope: dict = field(default_factory=dict)
    excluded: list = field(default_factory=list)
    t0: float = 0.0


def loglog_slope(x, y) -> tuple:
    """Least-squares slope of ``log y`` against ``log x`` and its residual sum of squares."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    return float(coef[0]), float(res[0]) if len(res) else 0.0


def width_scaling_experiment(widths, orders, seeds, cfg: GradientFlowConfig | None = None, *,
                             n: int = 16, d: int = 16, activation="tanh", data_seed: int = 0,
                             n_test: int = 16, t0: float | None = None) -> ScalingFit:
    """Sup-over-time full/Taylorized deviations across widths, slope per order.

    The dataset is fixed (drawn once, gated on ``lambda_min`` for the widest
    seed-0 network).  The horizon ``t0`` defaults to the time at which that
    network's residual halves.
    """
    widths = sorted(widths)
    if len(widths) < 4 or widths[-1] < 16 * widths[0]:
        raise ValueError("need >= 4 widths spanning >= 16x")
    cfg = cfg or GradientFlowConfig()
    ref = init_two_layer(d, widths[-1], activation, seed=seeds[0])
    X, y = sample_theory_dataset(n, d, ref, data_seed)
    X_test = sample_sphere(n_test, d, RngStream(data_seed, 499))
    if t0 is None:
        t0 = halving_horizon(ref, X, y, cfg)
    run_cfg = GradientFlowConfig(cfg.eta0, t0, cfg.h, cfg.record_every)
    fit = ScalingFit(list(widths), list(orders), list(seeds), t0=t0)
    for m in widths:
        for seed in seeds:
            net = init_two_layer(d, m, activation, seed)
            full = gradient_flow_integrate(net, X, y, run_cfg)
            if full.flagged or full.aborted_at is not None:
                fit.excluded.append({"width": m, "seed": seed, "k": 0})
                continue
            for k in orders:
                tnet = TaylorizedTwoLayer(net, k)
                tay = gradient_flow_integrate(tnet, X, y, run_cfg)
                if tay.flagged or tay.aborted_at is not None:
                    fit.excluded.append({"width": m, "seed": seed, "k": k})
                    continue
                rep = coupling_deviation(net, full, tnet, tay, X_test)
                fit.cells.append({"width": m, "k": k, "seed": seed,
                                  "sup_param_dev": rep.sup_param, "sup_func_dev": rep.sup_func})
    for k in orders:
        mp, mf = [], []
        for m in widths:
            cell = [c for c in fit.cells if c["k"] == k and c["width"] == m]
            mp.append(float(np.median([c["sup_param_dev"] for c in cell])) if cell else float("nan"))
            mf.append(float(np.median([c["sup_func_dev"] for c in cell])) if cell else float("nan"))
        fit.median_param[k] = mp
        fit.median_func[k] = mf
        fit.slope[k], fit.residual[k] = loglog_slope(widths, mp)
        fit.func_slope[k], _ = loglog_slope(widths, mf)
    return fit


def scaling_passes(fit: ScalingFit, band: float = 0.25) -> dict:
    """Exponent checks: ``slope(1) <= -0.5 + band``, each higher order at least
    ``band`` steeper than the previous, deviations strictly decreasing in width."""
    out = {}
    prev = None
    for k in sorted(fit.slope):
        dec = all(b < a for a, b in zip(fit.median_param[k], fit.median_param[k][1:]))
        ok = fit.slope[k] <= -0.5 * k + band if prev is None else fit.slope[k] <= fit.slope[prev] - band
        out[k] = bool(ok and dec)
        prev = k
    return out


def write_scaling_report(fit: ScalingFit, csv_path, json_path, band: float = 0.25) -> None:
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["width", "k", "seed", "sup_param_dev", "sup_func_dev"])
        for c in fit.cells:
            w.writerow([c["width"], c["k"], c["seed"], repr(c["sup_param_dev"]), repr(c["sup_func_dev"])])
    passes = scaling_passes(fit, band)
    summary = {
        "widths": fit.widths, "seeds": fit.seeds, "t0": fit.t0, "band": band,
        "orders": {str(k): {"slope": fit.slope[k], "residual": fit.residual[k],
                            "func_slope": fit.func_slope[k],
                            "median_sup_param_dev": fit.median_param[k],
                            "median_sup_func_dev": fit.median_func[k],
                            "pass": passes[k]} for k in fit.orders},
        "excluded": fit.excluded,
    }
    with open(json_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class RegularityProbe:
    m: int
    max_jacobian_norm: float
    max_lipschitz_ratio: float
    envelope: float


def jacobian_regularity_probe(model, X, radius: float, samples: int = 200, seed: int = 0) -> RegularityProbe:
    """Largest ``||J(W)||_F`` and ``||J(W) - J(W')||_F / ||W - W'||_F`` over
    random pairs in the Frobenius ball of ``radius`` around ``W0``."""
    X = _check_unit(X)
    net = model.net if isinstance(model, TaylorizedTwoLayer) else model
    gen = RngStream(seed, 501).generator()

    def draw():
        U = gen.standard_normal(net.W0.shape)
        return net.W0 + radius * gen.uniform() ** (1.0 / U.size) * U / np.linalg.norm(U)

    max_j, max_ratio = 0.0, 0.0
    for _ in range(samples):
        A, B = draw(), draw()
        JA, JB = jacobian(model, A, X), jacobian(model, B, X)
        max_j = max(max_j, np.linalg.norm(JA), np.linalg.norm(JB))
        max_ratio = max(max_ratio, np.linalg.norm(JA - JB) / np.linalg.norm(A - B))
    envelope = net.activation.max_abs_derivative() * float(np.max(np.linalg.norm(X, axis=1))) * np.sqrt(X.shape[0])
    return RegularityProbe(net.m, float(max_j), float(max_ratio), envelope)


def taylor_series_value(activation, t0, t, k: int):
    """Degree-``k`` Taylor polynomial of ``activation`` at ``t0`` evaluated at ``t``."""
    S = get_activation(activation).series(np.asarray(t0, float), k)
    dt = np.asarray(t, float) - t0
    return sum(S[j] * dt ** j for j in range(k + 1))


