"""Numerical verification harnesses.

Two independent cross-checks of the displaced-unit layer, both runnable
from the CLI and reused by the test suite:

  * gradient suites: every backward path against central finite
    differences of the scalar loss 0.5*||y||^2, in float64;
  * oracle sweep: the fast path (blur + offset sampling) against the
    explicit dense-filter oracle on randomized layer instances, compared
    on the interior pixels where both read identical data.

Finite differences use a 1e-3 step; displacement draws keep fractional
parts away from 0/1 so the bilinear interpolation is differentiable at
the evaluation point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers
from .dau import DauLayerParams, dau_backward, dau_forward, dau_forward_oracle, init_params
from .gaussian import build_bank

FD_STEP = 1e-3
INTERP_TOL = 1e-3
ANALYTIC_TOL = 5e-2
ADJOINT_TOL = 1e-4
ORACLE_TOL = 1e-5
ORACLE_TOL_INTEGER = 1e-6


@dataclass
class ClassReport:
    """Worst relative error for one parameter class across all instances."""

    name: str
    worst: float
    tol: float
    instances: int

    @property
    def ok(self) -> bool:
        return self.worst <= self.tol

    def line(self) -> str:
        status = "ok" if self.ok else "FAIL"
        return f"{self.name:<18} worst rel err {self.worst:.3e}  (tol {self.tol:.1e}, {self.instances} instances)  {status}"


@dataclass
class OracleCase:
    dims: tuple
    features: int
    units: int
    sigma: float
    integer_mu: bool
    max_diff: float


@dataclass
class OracleReport:
    cases: list = field(default_factory=list)

    @property
    def max_subpixel(self) -> float:
        diffs = [c.max_diff for c in self.cases if not c.integer_mu]
        return max(diffs, default=0.0)

    @property
    def max_integer(self) -> float:
        diffs = [c.max_diff for c in self.cases if c.integer_mu]
        return max(diffs, default=0.0)

    @property
    def ok(self) -> bool:
        return self.max_subpixel <= ORACLE_TOL and self.max_integer <= ORACLE_TOL_INTEGER


def max_rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return float(np.abs(np.asarray(a) - np.asarray(b)).max(initial=0.0) / denom)


def fd_gradient(loss, arr: np.ndarray, eps: float = FD_STEP) -> np.ndarray:
    """Central finite differences of loss() w.r.t. every element of arr,
    perturbing arr in place."""
    g = np.zeros(arr.shape, dtype=np.float64)
    flat, gf = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        lp = loss()
        flat[i] = orig - eps
        lm = loss()
        flat[i] = orig
        gf[i] = (lp - lm) / (2 * eps)
    return g


def _random_dau_instance(rng: np.random.Generator):
    f, s, k = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 5))
    h, w = int(rng.integers(6, 10)), int(rng.integers(6, 10))
    sigma = float(rng.choice([0.4, 0.5, 0.7]))
    p = init_params(f, s, k, sigma, 4.0, rng, dtype=np.float64)
    p.w = rng.normal(size=(f, s, k))
    base = rng.integers(-3, 3, size=(f, s, k, 2)).astype(np.float64)
    frac = rng.uniform(0.2, 0.8, size=(f, s, k, 2))
    p.mu = np.clip(base + frac, -3.8, 3.8)
    p.bias = rng.normal(size=f)
    x = rng.normal(size=(int(rng.integers(1, 3)), s, h, w))
    return p, x, build_bank(sigma)


def _smooth_dau_instance(rng: np.random.Generator, hw: int = 24, fmax: float = 0.02):
    """Band-limited instance for the analytic-mode check.

    The analytic displacement gradient differentiates the continuous
    Gaussian model; the forward's true derivative is the bilinear cell
    slope. They agree to O(curvature), so this check is meaningful only
    on smooth inputs: low-frequency sinusoid mixtures, mid-cell
    displacement fractions, and an upstream gradient supported away from
    the zero-padding crease at the borders.
    """
    f, s, k = int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(1, 5))
    p = init_params(f, s, k, 1.0, 4.0, rng, dtype=np.float64)
    p.w = rng.normal(size=(f, s, k))
    base = rng.integers(-2, 2, size=(f, s, k, 2)).astype(np.float64)
    frac = rng.uniform(0.3, 0.7, size=(f, s, k, 2))
    p.mu = base + frac
    p.bias = rng.normal(size=f)
    yy, xx = np.meshgrid(np.arange(hw), np.arange(hw), indexing="ij")
    x = np.zeros((1, s, hw, hw))
    for c in range(s):
        for _ in range(3):
            fy, fx = rng.uniform(-fmax, fmax, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            x[0, c] += rng.normal() * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
    return p, x, build_bank(1.0)


def dau_gradient_suite(seed: int = 0, instances: int = 20, mode: str = "interp",
                       corrupt: bool = False) -> list[ClassReport]:
    """FD check of dw/dmu/dbias/dinput for the displaced-unit layer.

    In 'analytic' mode only dmu is reported (at its looser tolerance) and
    instances are smoothed; the other classes are mode-independent. The
    corrupt flag deliberately biases dw to prove the harness can fail.
    """
    rng = np.random.default_rng(seed)
    if mode == "analytic":
        worst_mu = 0.0
        for _ in range(instances):
            p, x, bank = _smooth_dau_instance(rng)
            y0, _ = dau_forward(x, p, bank)
            # 0.5*||y||^2 makes the displacement gradient telescope to a
            # near-zero boundary term; a fixed random linear functional,
            # supported away from the borders, keeps the comparison
            # conditioned on the model difference alone.
            r = np.zeros_like(y0)
            m = 8
            r[:, :, m:-m, m:-m] = rng.normal(size=(y0.shape[0], y0.shape[1],
                                                   y0.shape[2] - 2 * m, y0.shape[3] - 2 * m))

            def loss() -> float:
                y, _ = dau_forward(x, p, bank)
                return float((r * y).sum())

            y, cache = dau_forward(x, p, bank)
            grads = dau_backward(r, cache, p, bank, dmu_mode="analytic")
            fd = fd_gradient(loss, p.mu)
            # vector-relative error: pointwise ratios blow up wherever the
            # sampled derivative crosses zero, which says nothing about fit
            num = float(np.linalg.norm(grads.dmu - fd))
            den = max(float(np.linalg.norm(fd)), 1e-12)
            worst_mu = max(worst_mu, num / den)
        return [ClassReport("dmu (analytic)", worst_mu, ANALYTIC_TOL, instances)]

    worst = {"dw": 0.0, "dmu": 0.0, "dbias": 0.0, "dinput": 0.0}
    for _ in range(instances):
        p, x, bank = _random_dau_instance(rng)

        def loss() -> float:
            y, _ = dau_forward(x, p, bank)
            return 0.5 * float((y**2).sum())

        y, cache = dau_forward(x, p, bank)
        grads = dau_backward(y.copy(), cache, p, bank, dmu_mode=mode)
        if corrupt:
            grads.dw = grads.dw + 1e-2
        worst["dw"] = max(worst["dw"], max_rel_error(grads.dw, fd_gradient(loss, p.w)))
        worst["dmu"] = max(worst["dmu"], max_rel_error(grads.dmu, fd_gradient(loss, p.mu)))
        worst["dbias"] = max(worst["dbias"], max_rel_error(grads.dbias, fd_gradient(loss, p.bias)))
        worst["dinput"] = max(worst["dinput"], max_rel_error(grads.dinput, fd_gradient(loss, x)))
    return [
        ClassReport("dw", worst["dw"], INTERP_TOL, instances),
        ClassReport("dmu (interp)", worst["dmu"], INTERP_TOL, instances),
        ClassReport("dbias", worst["dbias"], INTERP_TOL, instances),
        ClassReport("dinput", worst["dinput"], INTERP_TOL, instances),
    ]


def dau_adjoint_suite(seed: int = 0, instances: int = 20) -> ClassReport:
    """<forward(x), dldy> == <x, dinput(dldy)> for the bias-free layer."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        p, x, bank = _random_dau_instance(rng)
        p.bias[:] = 0.0
        y, cache = dau_forward(x, p, bank)
        dldy = rng.normal(size=y.shape)
        grads = dau_backward(dldy, cache, p, bank)
        lhs = float((y * dldy).sum())
        rhs = float((x * grads.dinput).sum())
        denom = max(abs(lhs), abs(rhs), 1e-12)
        worst = max(worst, abs(lhs - rhs) / denom)
    return ClassReport("adjoint <y,g>=<x,dx>", worst, ADJOINT_TOL, instances)


def classic_gradient_suite(seed: int = 0, instances: int = 10) -> list[ClassReport]:
    """FD checks for the baseline layers."""
    rng = np.random.default_rng(seed)
    worst = {"conv dw": 0.0, "conv dbias": 0.0, "conv dinput": 0.0,
             "maxpool dinput": 0.0, "bn dscale": 0.0, "bn dshift": 0.0, "bn dinput": 0.0,
             "fc dw": 0.0, "fc dbias": 0.0, "fc dinput": 0.0, "xent dlogits": 0.0}
    for _ in range(instances):
        # dense conv
        s, f = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        x = rng.normal(size=(2, s, 6, 6))
        cp = layers.ConvParams(rng.normal(size=(f, s, 3, 3)) * 0.5, rng.normal(size=f), padding=1)

        def conv_loss() -> float:
            y, _ = layers.conv_forward(x, cp)
            return 0.5 * float((y**2).sum())

        y, xc = layers.conv_forward(x, cp)
        dw, dbias, dx = layers.conv_backward(y.copy(), xc, cp)
        worst["conv dw"] = max(worst["conv dw"], max_rel_error(dw, fd_gradient(conv_loss, cp.weights)))
        worst["conv dbias"] = max(worst["conv dbias"], max_rel_error(dbias, fd_gradient(conv_loss, cp.bias)))
        worst["conv dinput"] = max(worst["conv dinput"], max_rel_error(dx, fd_gradient(conv_loss, x)))

        # max pooling: spread values so FD never straddles a tie
        xpool = rng.permutation(np.arange(2 * 2 * 6 * 6, dtype=np.float64)).reshape(2, 2, 6, 6) * 0.1

        def pool_loss() -> float:
            y, _ = layers.maxpool2_forward(xpool)
            return 0.5 * float((y**2).sum())

        y, cache = layers.maxpool2_forward(xpool)
        dx = layers.maxpool2_backward(y.copy(), cache)
        worst["maxpool dinput"] = max(worst["maxpool dinput"], max_rel_error(dx, fd_gradient(pool_loss, xpool)))

        # batch norm (training mode)
        c = int(rng.integers(1, 4))
        xbn = rng.normal(size=(3, c, 4, 4)) * 2.0 + rng.normal(size=(1, c, 1, 1))
        st = layers.BatchNormState.create(c, dtype=np.float64)
        st.scale = rng.normal(size=c) + 1.5
        st.shift = rng.normal(size=c)

        def bn_loss() -> float:
            y, _ = layers.batchnorm_forward(xbn, st, training=True)
            return 0.5 * float((y**2).sum())

        y, cache = layers.batchnorm_forward(xbn, st, training=True)
        dscale, dshift, dx = layers.batchnorm_backward(y.copy(), cache, st)
        worst["bn dscale"] = max(worst["bn dscale"], max_rel_error(dscale, fd_gradient(bn_loss, st.scale)))
        worst["bn dshift"] = max(worst["bn dshift"], max_rel_error(dshift, fd_gradient(bn_loss, st.shift)))
        worst["bn dinput"] = max(worst["bn dinput"], max_rel_error(dx, fd_gradient(bn_loss, xbn)))

        # fully connected
        xfc = rng.normal(size=(3, 5))
        wfc = rng.normal(size=(4, 5))
        bfc = rng.normal(size=4)

        def fc_loss() -> float:
            return 0.5 * float((layers.fc_forward(xfc, wfc, bfc) ** 2).sum())

        y = layers.fc_forward(xfc, wfc, bfc)
        dw, dbias, dx = layers.fc_backward(y.copy(), xfc, wfc)
        worst["fc dw"] = max(worst["fc dw"], max_rel_error(dw, fd_gradient(fc_loss, wfc)))
        worst["fc dbias"] = max(worst["fc dbias"], max_rel_error(dbias, fd_gradient(fc_loss, bfc)))
        worst["fc dinput"] = max(worst["fc dinput"], max_rel_error(dx, fd_gradient(fc_loss, xfc)))

        # softmax cross-entropy
        logits = rng.normal(size=(4, 6))
        labels = rng.integers(0, 6, size=4)

        def xent_loss() -> float:
            return layers.softmax_xent(logits, labels)[0]

        _, dlogits = layers.softmax_xent(logits, labels)
        worst["xent dlogits"] = max(
            worst["xent dlogits"], max_rel_error(dlogits, fd_gradient(xent_loss, logits, eps=1e-5))
        )
    tols = {"xent dlogits": 1e-5}
    return [ClassReport(k, v, tols.get(k, INTERP_TOL), instances) for k, v in worst.items()]


def _oracle_interior(p: DauLayerParams):
    act = p.active
    bx = np.floor(p.mu[..., 0][act])
    by = np.floor(p.mu[..., 1][act])
    top = int(max(0.0, -by.min())) + 1
    bottom = int(max(0.0, by.max() + 1)) + 1
    left = int(max(0.0, -bx.min())) + 1
    right = int(max(0.0, bx.max() + 1)) + 1
    return slice(top, -bottom), slice(left, -right)


def oracle_suite(seed: int = 0, cases: int = 200, integer_fraction: float = 0.2,
                 rd: float = 4.0) -> OracleReport:
    """Randomized fast-vs-oracle equivalence sweep.

    Case matrix per the verification contract: H, W <= 12; S, F <= 4;
    K <= 6; sigma in {0.4, 0.5, 0.7}; |mu| <= 4 limited per case so the
    strict-equality interior is non-empty. Runs in float64.
    """
    rng = np.random.default_rng(seed)
    report = OracleReport()
    banks = {s: build_bank(s) for s in (0.4, 0.5, 0.7)}
    for i in range(cases):
        h, w = int(rng.integers(8, 13)), int(rng.integers(8, 13))
        f, s = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        k = int(rng.integers(1, 7))
        sigma = float(rng.choice([0.4, 0.5, 0.7]))
        integer_mu = i < int(cases * integer_fraction)
        mu_max = min(rd, (min(h, w) - 4) / 2.0)
        p = init_params(f, s, k, sigma, rd, rng, dtype=np.float64)
        p.w = rng.normal(size=(f, s, k))
        mu = rng.uniform(-mu_max, mu_max, size=(f, s, k, 2))
        p.mu = np.round(mu) if integer_mu else mu
        p.bias = rng.normal(size=f)
        x = rng.normal(size=(1, s, h, w))
        y_fast, _ = dau_forward(x, p, bank := banks[sigma])
        y_oracle = dau_forward_oracle(x, p, bank)
        ys, xs = _oracle_interior(p)
        diff = float(np.abs((y_fast - y_oracle)[:, :, ys, xs]).max(initial=0.0))
        report.cases.append(OracleCase((1, s, h, w), f, k, sigma, integer_mu, diff))
    return report
