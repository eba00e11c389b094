"""Channel models for vehicle-reflection NLoS VLC links.

Three stateless models live here:

* an empirical distance-based path-loss law with surface-dependent
  coefficients (``path_loss_db``),
* a weighted double gamma function describing the decaying tail of a
  channel impulse response (``wdgf_eval`` / ``wdgf_fwhm``),
* a Lambertian single-order reflection benchmark (``lambertian_gain``).

Path loss is electrical dB (a ratio of electrical powers), so the linear
amplitude gain of the channel uses the /20 rule: ``10**(-pl_db / 20)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ._halfmax import half_max_width

_LN10 = math.log(10.0)


@dataclass(frozen=True)
class SurfaceParams:
    """Per-surface path-loss coefficients and reflection coefficient.

    ``rho`` is the NLoS-to-LoS channel-gain ratio at the reference distance;
    it is None for fitted parameter sets where only (alpha, beta, n) were
    estimated.
    """

    label: str
    alpha: float
    beta: float
    n: float
    rho: float | None = None

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0 and self.n > 0):
            raise ValueError("alpha, beta and n must all be positive")
        if self.rho is not None and not (0.0 < self.rho < 1.0):
            raise ValueError("rho must lie in (0, 1)")


WHITE_CAR = SurfaceParams("white", 0.9185, 4.703, 0.7189, 0.0774)
ORANGE_CAR = SurfaceParams("orange", 0.7871, 5.477, 0.9998, 0.0243)
BLACK_CAR = SurfaceParams("black", 0.7516, 5.384, 0.9238, 0.0156)

SURFACE_PRESETS = {s.label: s for s in (WHITE_CAR, ORANGE_CAR, BLACK_CAR)}


@dataclass(frozen=True)
class PathLossModel:
    """Path-loss law anchored at a reference distance.

    ``pl_ref`` is the path loss at ``d0`` in dB.  It is not part of the
    surface coefficients and must be supplied by the caller (measured, or
    derived from a reflection coefficient and an LoS reference gain).
    """

    surface: SurfaceParams
    d0: float
    pl_ref: float

    def __post_init__(self):
        if not self.d0 > 0:
            raise ValueError("reference distance d0 must be positive")
        if not math.isfinite(self.pl_ref):
            raise ValueError("pl_ref must be finite")


def _path_loss_formula(d, d0, alpha, beta, n):
    """Relative path loss in dB (zero at d == d0), evaluated in log domain."""
    d = np.asarray(d, dtype=float)
    ln_base = math.log(alpha) - n * d0 / d
    return (10.0 / _LN10) * ((d - d0) * ln_base + beta * np.log(d / d0))


def path_loss_db(model: PathLossModel, d):
    """Path loss in dB at reflector-receiver distance ``d`` (scalar or array).

    Defined for d >= d0.  Returns exactly ``pl_ref`` at d == d0.
    """
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr < model.d0):
        raise ValueError(f"distance must be >= reference distance {model.d0} m")
    s = model.surface
    base = s.alpha * np.exp(-s.n * model.d0 / d_arr)
    if np.any(base > 1.0):
        warnings.warn(
            f"decay base alpha*exp(-n*d0/d) exceeds 1 for surface "
            f"{s.label!r}; path loss may decrease with distance",
            stacklevel=2,
        )
    pl = _path_loss_formula(d_arr, model.d0, s.alpha, s.beta, s.n) + model.pl_ref
    return pl if pl.ndim else float(pl)


def db_to_amplitude(pl_db):
    """Linear amplitude gain for an electrical path loss in dB."""
    out = 10.0 ** (-np.asarray(pl_db, dtype=float) / 20.0)
    return out if out.ndim else float(out)


def channel_gain_amplitude(model: PathLossModel, d):
    """Linear amplitude channel gain at distance ``d``: 10**(-PL/20)."""
    return db_to_amplitude(path_loss_db(model, d))


@dataclass(frozen=True)
class WdgfParams:
    """Coefficients of the weighted double gamma CIR-tail model.

    h(dt) = c1 * dt**alpha_w * exp(-c2*dt) + c3 * dt**beta_w * exp(-c4*dt)

    ``dt`` is the time elapsed since the CIR peak.  The shape exponents here
    are unrelated to the path-loss coefficients of the same name.
    """

    c1: float
    c2: float
    c3: float
    c4: float
    alpha_w: float
    beta_w: float

    def __post_init__(self):
        if not (self.c2 > 0 and self.c4 > 0):
            raise ValueError("decay rates c2 and c4 must be positive")
        if self.alpha_w < 0 or self.beta_w < 0:
            raise ValueError("shape exponents must be non-negative")


def wdgf_eval(params: WdgfParams, dt):
    """Evaluate the double-gamma tail model at ``dt`` seconds past the peak."""
    t = np.asarray(dt, dtype=float)
    if np.any(t < 0):
        raise ValueError("dt must be non-negative (time since the CIR peak)")
    out = params.c1 * np.power(t, params.alpha_w) * np.exp(-params.c2 * t)
    out = out + params.c3 * np.power(t, params.beta_w) * np.exp(-params.c4 * t)
    return out if out.ndim else float(out)


def wdgf_fwhm(params: WdgfParams, t_res: float = 1e-9, t_max: float = 10e-6):
    """Full width at half maximum of the modeled tail, in seconds.

    The model is sampled on [0, t_max] at ``t_res`` and the half-maximum
    crossings are located by linear interpolation.  ``t_max`` must be large
    enough for the curve to fall below half of its peak.
    """
    if not t_res > 0:
        raise ValueError("t_res must be positive")
    grid = np.arange(0.0, t_max + 0.5 * t_res, t_res)
    return half_max_width(wdgf_eval(params, grid), t_res)


@dataclass(frozen=True)
class LambertianScene:
    """Geometry and optics of one differential reflecting patch.

    Angles are radians.  ``phi`` is the irradiance angle at the transmitter
    (inside the cos**m radiation pattern) and ``alpha_ang`` the irradiance
    angle onto the reflector; callers modeling a single irradiance angle set
    them equal.  ``t_s`` is a constant optical filter gain.
    """

    m: float
    a_r: float
    da_r: float
    rho: float
    phi: float
    alpha_ang: float
    beta_ang: float
    psi: float
    psi_c: float
    t_s: float = 1.0
    n_refr: float = 1.0

    def __post_init__(self):
        if self.m < 0:
            raise ValueError("Lambertian order m must be non-negative")
        if not (self.a_r > 0 and self.da_r > 0):
            raise ValueError("receiver and patch areas must be positive")
        if not (0.0 < self.rho <= 1.0):
            raise ValueError("rho must lie in (0, 1]")
        if not (0.0 < self.psi_c <= math.pi / 2):
            raise ValueError("field-of-view half angle must lie in (0, pi/2]")
        for name in ("phi", "alpha_ang", "beta_ang", "psi"):
            a = getattr(self, name)
            if not (0.0 <= a <= math.pi / 2):
                raise ValueError(f"{name} must lie in [0, pi/2]")


def concentrator_gain(n_refr: float, psi_c: float, psi: float) -> float:
    """Gain of a non-imaging concentrator: n**2/sin(psi_c)**2 inside the FoV."""
    if not (0.0 < psi_c <= math.pi / 2):
        raise ValueError("field-of-view half angle must lie in (0, pi/2]")
    if 0.0 <= psi <= psi_c:
        return n_refr**2 / math.sin(psi_c) ** 2
    return 0.0


def lambertian_gain(scene: LambertianScene, d1: float, d2: float) -> float:
    """Single-order reflection channel gain for one differential patch.

    ``d1`` is transmitter-to-reflector distance, ``d2`` reflector-to-receiver.
    Returns 0 when the incidence angle at the receiver exceeds the field of
    view.
    """
    if not (d1 > 0 and d2 > 0):
        raise ValueError("distances d1 and d2 must be positive")
    if scene.psi > scene.psi_c:
        return 0.0
    g = concentrator_gain(scene.n_refr, scene.psi_c, scene.psi)
    geometry = (scene.m + 1) * scene.a_r / (2.0 * math.pi**2 * d1**2 * d2**2)
    angular = (
        math.cos(scene.phi) ** scene.m
        * math.cos(scene.alpha_ang)
        * math.cos(scene.beta_ang)
        * scene.t_s
        * g
        * math.cos(scene.psi)
    )
    return geometry * scene.rho * scene.da_r * angular


def lambertian_gain_total(patches) -> float:
    """Total gain over (scene, d1, d2) patches: sum of single reflections."""
    return sum(lambertian_gain(scene, d1, d2) for scene, d1, d2 in patches)
