"""Built-in experiment configurations and their closed-form data.

The manufactured solution prescribes displacement and pressure; every other
exact field and every load is derived symbolically once at import time and
compiled per parameter set. The filtration velocity is closed with
w = -K grad p, so the Darcy load h carries only the inertial terms. The
stress equation is satisfied exactly, hence eta = 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import sympy

from .errors import UnknownScenario
from .model import BoundaryData, InitialState, LoadFunctions, ModelParams

_X, _Y, _T = sympy.symbols("x y t", real=True)
_P = dict(
    mu=sympy.Symbol("mu", positive=True),
    lam=sympy.Symbol("lam", nonnegative=True),
    alpha=sympy.Symbol("alpha", nonnegative=True),
    s0=sympy.Symbol("s0", nonnegative=True),
    rho_u=sympy.Symbol("rho_u", nonnegative=True),
    rho_f=sympy.Symbol("rho_f", real=True),
    rho_w=sympy.Symbol("rho_w", nonnegative=True),
    k00=sympy.Symbol("k00", real=True),
    k01=sympy.Symbol("k01", real=True),
    k11=sympy.Symbol("k11", real=True),
)


def _derive_symbolic():
    pi = sympy.pi
    x, y, t = _X, _Y, _T
    mu, lam, alpha, s0 = _P["mu"], _P["lam"], _P["alpha"], _P["s0"]
    s = sympy.sin(pi * x) * sympy.sin(pi * y)
    c = 1 / (mu + lam)
    D = sympy.Matrix(
        [
            sympy.sin(2 * pi * y) * (sympy.cos(2 * pi * x) - 1) + c * s,
            sympy.sin(2 * pi * x) * (1 - sympy.cos(2 * pi * y)) + c * s,
        ]
    )
    d = t**2 * D
    u = d.diff(t)
    p = t**2 * s

    grad_d = sympy.Matrix([[d[0].diff(x), d[0].diff(y)], [d[1].diff(x), d[1].diff(y)]])
    eps = (grad_d + grad_d.T) / 2
    I2 = sympy.eye(2)
    sigma = 2 * mu * eps + lam * eps.trace() * I2 - alpha * p * I2

    K = sympy.Matrix([[_P["k00"], _P["k01"]], [_P["k01"], _P["k11"]]])
    grad_p = sympy.Matrix([p.diff(x), p.diff(y)])
    w = -K * grad_p

    def div_tensor(M):
        return sympy.Matrix(
            [M[0, 0].diff(x) + M[0, 1].diff(y), M[1, 0].diff(x) + M[1, 1].diff(y)]
        )

    kappa = mu + lam
    f = _P["rho_u"] * u.diff(t) + _P["rho_f"] * w.diff(t) - div_tensor(sigma)
    h = _P["rho_f"] * u.diff(t) + _P["rho_w"] * w.diff(t)
    g = (
        (s0 + alpha**2 / kappa) * p.diff(t)
        + alpha / (2 * kappa) * sigma.trace().diff(t)
        + w[0].diff(x)
        + w[1].diff(y)
    )
    # expand so that exactly cancelling terms (the divergence-free main part
    # of the displacement hit by lam) drop out symbolically; without this,
    # sigma and f lose ~6 digits to cancellation at lam ~ 1e6
    out = {
        "d": d, "u": u, "p": p, "sigma": sigma, "w": w, "f": f, "h": h, "g": g,
        "div_sigma": div_tensor(sigma), "div_w": w[0].diff(x) + w[1].diff(y),
    }
    return {
        k: v.applyfunc(sympy.expand) if hasattr(v, "applyfunc") else sympy.expand(v)
        for k, v in out.items()
    }


_SYMBOLIC = None


def _symbolic():
    global _SYMBOLIC
    if _SYMBOLIC is None:
        _SYMBOLIC = _derive_symbolic()
    return _SYMBOLIC


def _subs_for(params: ModelParams) -> dict:
    return {
        _P["mu"]: params.mu, _P["lam"]: params.lam, _P["alpha"]: params.alpha,
        _P["s0"]: params.s0, _P["rho_u"]: params.rho_u,
        _P["rho_f"]: params.rho_f, _P["rho_w"]: params.rho_w,
        _P["k00"]: params.K[0, 0], _P["k01"]: params.K[0, 1],
        _P["k11"]: params.K[1, 1],
    }


def _compile(expr, subs):
    fn = sympy.lambdify((_X, _Y, _T), expr.subs(subs), modules="numpy")

    def call(xa, ya, t):
        out = np.asarray(fn(xa, ya, t), dtype=float)
        return np.broadcast_to(out, xa.shape).copy() if out.shape != xa.shape else out

    return call


class ManufacturedCase:
    """Exact fields and loads for one parameter set, compiled from sympy."""

    def __init__(self, params: ModelParams):
        self.params = params
        sym = _symbolic()
        subs = _subs_for(params)
        self._c: Dict[str, Callable] = {}
        for name in ("d", "u", "w", "f", "h", "div_sigma"):
            m = sym[name]
            self._c[name + "0"] = _compile(m[0], subs)
            self._c[name + "1"] = _compile(m[1], subs)
        for name in ("p", "g", "div_w"):
            self._c[name] = _compile(sym[name], subs)
        for (i, j) in ((0, 0), (0, 1), (1, 0), (1, 1)):
            self._c[f"sigma{i}{j}"] = _compile(sym["sigma"][i, j], subs)

    def _vec(self, name, pts, t):
        x, y = pts[:, 0], pts[:, 1]
        return np.stack([self._c[name + "0"](x, y, t), self._c[name + "1"](x, y, t)], axis=1)

    def d(self, pts, t):
        return self._vec("d", pts, t)

    def u(self, pts, t):
        return self._vec("u", pts, t)

    def w(self, pts, t):
        return self._vec("w", pts, t)

    def p(self, pts, t):
        return self._c["p"](pts[:, 0], pts[:, 1], t)

    def sigma(self, pts, t):
        x, y = pts[:, 0], pts[:, 1]
        out = np.empty((pts.shape[0], 2, 2))
        for (i, j) in ((0, 0), (0, 1), (1, 0), (1, 1)):
            out[:, i, j] = self._c[f"sigma{i}{j}"](x, y, t)
        return out

    def div_sigma(self, pts, t):
        return self._vec("div_sigma", pts, t)

    def div_w(self, pts, t):
        return self._c["div_w"](pts[:, 0], pts[:, 1], t)

    def exact(self, fld: str) -> Callable:
        return {"u": self.u, "w": self.w, "p": self.p, "sigma": self.sigma, "d": self.d}[fld]

    def loads(self) -> LoadFunctions:
        return LoadFunctions(
            f=lambda pts, t: self._vec("f", pts, t),
            h=lambda pts, t: self._vec("h", pts, t),
            g=lambda pts, t: self._c["g"](pts[:, 0], pts[:, 1], t),
            eta=None,
        )

    def bdata(self) -> BoundaryData:
        return BoundaryData(u_d=self.u, p_d=self.p)

    def initial(self) -> InitialState:
        # every exact field carries a factor of t or t^2
        return InitialState()


_CASE_CACHE: Dict[bytes, ManufacturedCase] = {}


def manufactured_case(params: ModelParams) -> ManufacturedCase:
    key = np.array(
        [params.mu, params.lam, params.alpha, params.s0,
         params.rho_u, params.rho_f, params.rho_w], dtype=float
    ).tobytes() + params.K.tobytes()
    if key not in _CASE_CACHE:
        _CASE_CACHE[key] = ManufacturedCase(params)
    return _CASE_CACHE[key]


def manufactured_exact(t: float, x: np.ndarray, params: Optional[ModelParams] = None):
    """Closed-form (d, u, p) of the smooth reference solution."""
    case = manufactured_case(params if params is not None else table1_params())
    x = np.atleast_2d(x)
    return case.d(x, t), case.u(x, t), case.p(x, t)


def manufactured_loads(t: float, x: np.ndarray, params: Optional[ModelParams] = None):
    """Closed-form (f, h, g, eta) consistent with the first-order system."""
    case = manufactured_case(params if params is not None else table1_params())
    x = np.atleast_2d(x)
    lf = case.loads()
    return lf.f(x, t), lf.h(x, t), lf.g(x, t), np.zeros((x.shape[0], 2, 2))


@dataclass(frozen=True)
class RickerSource:
    """Radial explosive source with a Ricker wavelet time signature."""

    f0: float = 5.0  # peak frequency (Hz)
    t0: float = 0.55  # time shift (s); see notes on wavefront containment
    center: Tuple[float, float] = (2400.0, 2400.0)

    def wavelet(self, t: float) -> float:
        a = (math.pi * self.f0 * (t - self.t0)) ** 2
        return (1.0 - 2.0 * a) * math.exp(-a)


def ricker_force(t: float, x: np.ndarray, mesh_h: float, source: Optional[RickerSource] = None):
    """Space-time force: S(t) (1 - |r|^2/4h^2) r/|r| inside radius 2h, else 0.

    The radial direction is undefined at the center; the force is zero there.
    """
    if source is None:
        source = RickerSource()
    x = np.atleast_2d(np.asarray(x, dtype=float))
    r = x - np.asarray(source.center)
    dist = np.linalg.norm(r, axis=1)
    out = np.zeros_like(r)
    inside = (dist < 2.0 * mesh_h) & (dist > 0.0)
    profile = 1.0 - dist[inside] ** 2 / (4.0 * mesh_h**2)
    out[inside] = (profile / dist[inside])[:, None] * r[inside]
    return source.wavelet(t) * out


def table1_params(**overrides) -> ModelParams:
    base = dict(mu=1.0, lam=10.0, alpha=1.0, s0=0.002, K=1.0,
                rho_u=1.0, rho_f=0.25, rho_w=1.0)
    base.update(overrides)
    return ModelParams(**base)


def table2_params() -> ModelParams:
    return ModelParams(
        mu=7.2073e9, lam=4.3738e9, alpha=0.029, s0=1.462e-10,
        K=6.6667e-10, rho_u=1700.0, rho_f=950.0, rho_w=4750.0,
    )


@dataclass(frozen=True)
class Scenario:
    name: str
    params: ModelParams
    kind: str  # "manufactured" | "wave"
    w_family: str
    rect: Tuple[float, float, float, float]
    diagonal: str
    base_n: int
    refinements: int  # extra uniform refinements; a study runs refinements + 1 levels
    t_final: float
    dt: Optional[float]  # None requests automatic step selection
    snapshot_times: Tuple[float, ...] = ()
    source: Optional[RickerSource] = None


def scenario_catalog() -> Dict[str, Scenario]:
    # alternating diagonals everywhere: a one-direction split biases every
    # cell the same way and the stress trace picks up an O(h) error from it
    unit = (0.0, 0.0, 1.0, 1.0)
    return {
        "convergence": Scenario(
            "convergence", table1_params(), "manufactured", "RT0",
            unit, "alternate", 8, 3, 0.5, None,
        ),
        "robust_incompressible": Scenario(
            "robust_incompressible", table1_params(s0=0.0, lam=1.0e6),
            "manufactured", "RT0", unit, "alternate", 8, 3, 0.5, None,
        ),
        "robust_nodensity": Scenario(
            "robust_nodensity", table1_params(rho_f=0.0, rho_w=0.0),
            "manufactured", "BDM1", unit, "alternate", 8, 3, 0.5, None,
        ),
        "wave": Scenario(
            "wave", table2_params(), "wave", "BDM1",
            (0.0, 0.0, 4800.0, 4800.0), "alternate", 96, 0, 1.0, 0.005,
            snapshot_times=(0.8, 0.9, 1.0), source=RickerSource(),
        ),
    }


def get_scenario(name: str) -> Scenario:
    cat = scenario_catalog()
    if name not in cat:
        raise UnknownScenario(
            f"unknown scenario {name!r}; available: {', '.join(sorted(cat))}"
        )
    return cat[name]
