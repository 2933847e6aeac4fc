"""Three-concentric-sphere forward model and measurement synthesis.

The head is modeled as three nested homogeneous conducting spheres
(brain, skull, scalp) with air outside. A current dipole inside the brain
sphere produces a scalp-surface potential expressed as a Legendre series;
the per-degree transfer coefficients are obtained by propagating the two
radial basis solutions through both conductivity interfaces and imposing
the no-outflow condition at the scalp surface.

Potentials are evaluated at scalp electrodes and assembled column by
column into the lead field. Lead-field columns and synthesized
measurements are average-referenced.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DomainError, GeometryError, NumericalError
from .geometry import SPHERE_TOL_MM, _freeze

MAX_TERMS = 200
REL_TERM_TOL = 1e-8


@dataclass(frozen=True)
class HeadModel:
    """Radii (mm, strictly increasing) and conductivities (S/m) of the shells."""

    radii: tuple = (80.0, 85.0, 92.0)
    conductivities: tuple = (0.33, 0.0042, 0.33)

    def __post_init__(self):
        r = tuple(float(v) for v in self.radii)
        s = tuple(float(v) for v in self.conductivities)
        if len(r) != 3 or len(s) != 3:
            raise ContractError("head model needs 3 radii and 3 conductivities")
        if not (0 < r[0] < r[1] < r[2]):
            raise ContractError("radii must be strictly increasing and positive")
        if any(v <= 0 for v in s):
            raise ContractError("conductivities must be positive")
        object.__setattr__(self, "radii", r)
        object.__setattr__(self, "conductivities", s)

    @property
    def r_brain(self):
        return self.radii[0]

    @property
    def r_scalp(self):
        return self.radii[2]


def _transfer_gains(head, n_max=MAX_TERMS):
    """Per-degree scalp-surface gain for a unit interior source coefficient.

    For degree n the brain-region potential is split as
    ``rho**-(n+1) + a * rho**n`` (rho = r / R_scalp); the returned gain G_n
    is the surface value of the scalp-region solution. Equal conductivities
    reduce to the homogeneous-sphere value (2n+1)/n.
    """
    r1, r2, _ = (v / head.radii[2] for v in head.radii)
    s1, s2, s3 = head.conductivities
    gains = np.zeros(n_max + 1)
    for n in range(1, n_max + 1):
        def cross(x, y, sa, sb):
            # continuity of potential and of radial current density
            pot = x + y
            flux = (sa / sb) * (n * x - (n + 1) * y)
            return (((n + 1) * pot + flux) / (2 * n + 1),
                    (n * pot - flux) / (2 * n + 1))

        def prop(x, y, rho_a, rho_b):
            return x * (rho_b / rho_a) ** n, y * (rho_a / rho_b) ** (n + 1)

        def through(alpha1, beta1):
            x, y = alpha1 * r1**n, beta1 * r1 ** -(n + 1)
            x, y = cross(x, y, s1, s2)
            x, y = prop(x, y, r1, r2)
            x, y = cross(x, y, s2, s3)
            x, y = prop(x, y, r2, 1.0)
            return x, y

        xh, yh = through(1.0, 0.0)
        xp, yp = through(0.0, 1.0)
        denom = n * xh - (n + 1) * yh
        a = ((n + 1) * yp - n * xp) / denom
        gains[n] = (xh + yh) * a + (xp + yp)
    return gains


_GAIN_CACHE: dict = {}


def _gains_for(head):
    key = (head.radii, head.conductivities)
    g = _GAIN_CACHE.get(key)
    if g is None:
        g = _transfer_gains(head)
        _GAIN_CACHE[key] = g
    return g


def _gain_vectors(head, r_dip_mm, r_el_mm):
    """Gain row(s) g so that V = g . moment for each electrode.

    Vectorized over electrodes; the Legendre recurrences run until the last
    term's relative contribution drops below REL_TERM_TOL or MAX_TERMS is hit.
    """
    radii = head.radii
    b = float(np.linalg.norm(r_dip_mm))
    if b >= radii[0]:
        raise DomainError("dipole at %.2f mm is not inside the brain sphere (%.1f mm)"
                          % (b, radii[0]))
    r_el = np.atleast_2d(np.asarray(r_el_mm, dtype=float))
    norms = np.linalg.norm(r_el, axis=1)
    if np.any(np.abs(norms - radii[2]) > SPHERE_TOL_MM):
        raise GeometryError("electrode not on the scalp sphere")
    rhat = r_el / norms[:, None]

    R = radii[2] / 1000.0
    tau = b / radii[2]
    zhat = (np.asarray(r_dip_mm, dtype=float) / b) if b > 0 else np.array([0.0, 0.0, 1.0])
    u = rhat @ zhat

    gains = _gains_for(head)
    A = np.zeros(len(u))
    B = np.zeros(len(u))
    p_prev = np.ones_like(u)      # P_0
    p_cur = u.copy()              # P_1
    dp_prev = np.zeros_like(u)    # P_0'
    dp_cur = np.ones_like(u)      # P_1'
    tau_pow = 1.0                 # tau**(n-1)
    converged = False
    for n in range(1, MAX_TERMS + 1):
        w = gains[n] * tau_pow
        dA = w * n * p_cur
        dB = w * dp_cur
        A += dA
        B += dB
        term = np.max(np.abs(dA) + 2.0 * np.abs(dB))
        ref = np.max(np.abs(A) + 2.0 * np.abs(B))
        if term <= REL_TERM_TOL * ref:
            converged = True
            break
        p_next = ((2 * n + 1) * u * p_cur - n * p_prev) / (n + 1)
        dp_next = dp_prev + (2 * n + 1) * p_cur
        p_prev, p_cur = p_cur, p_next
        dp_prev, dp_cur = dp_cur, dp_next
        tau_pow *= tau
    if not converged:
        raise NumericalError("potential series did not converge within %d terms "
                             "(dipole at %.1f mm)" % (MAX_TERMS, b))
    scale = 1.0 / (4.0 * np.pi * head.conductivities[0] * R * R)
    return scale * ((A - B * u)[:, None] * zhat[None, :] + B[:, None] * rhat)


def dipole_potential(head, r_dip, moment, r_el):
    """Scalp potential of a current dipole in the three-sphere head model.

    Parameters
    ----------
    head : HeadModel
    r_dip : (3,) array
        Dipole location in mm, strictly inside the brain sphere.
    moment : (3,) array
        Dipole moment in A*m.
    r_el : (3,) or (n, 3) array
        Electrode position(s) on the scalp sphere, mm.

    Returns
    -------
    float or ndarray
        Potential in volts; a scalar for a single electrode, else one value
        per electrode. Linear in ``moment`` by construction.
    """
    g = _gain_vectors(head, r_dip, r_el)
    v = g @ np.asarray(moment, dtype=float)
    if np.ndim(r_el) == 1:
        return float(v[0])
    return v


@dataclass(frozen=True)
class LeadField:
    """Average-referenced gain matrix, electrodes x (3 * grid points)."""

    matrix: np.ndarray
    head: HeadModel
    n_electrodes: int = field(init=False)
    n_points: int = field(init=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[1] % 3:
            raise ContractError("lead field must be (N, 3M)")
        if not np.all(np.isfinite(m)):
            raise ContractError("lead field contains non-finite entries")
        if np.any(np.linalg.norm(m, axis=0) == 0):
            raise ContractError("lead field has a zero column")
        object.__setattr__(self, "matrix", _freeze(m))
        object.__setattr__(self, "n_electrodes", m.shape[0])
        object.__setattr__(self, "n_points", m.shape[1] // 3)

    @property
    def shape(self):
        return self.matrix.shape


def lead_field(head, electrodes, grid):
    """Assemble the average-referenced lead field for a grid of sources.

    Column ``3*m + c`` holds the potentials of a unit dipole at grid point
    ``m`` along axis ``c`` (x, y, z), with the channel mean subtracted.
    """
    if np.any(np.linalg.norm(grid.points, axis=1) >= head.r_brain):
        raise DomainError("grid extends outside the brain sphere")
    n = len(electrodes)
    out = np.empty((n, 3 * len(grid)))
    for m, p in enumerate(grid.points):
        try:
            out[:, 3 * m:3 * m + 3] = _gain_vectors(head, p, electrodes.positions)
        except (DomainError, NumericalError) as exc:
            raise type(exc)("source %d: %s" % (m, exc)) from exc
    out -= out.mean(axis=0, keepdims=True)
    return LeadField(matrix=out, head=head)


@dataclass(frozen=True)
class Measurement:
    """Scalp potential vector (volts), one value per electrode."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1:
            raise ContractError("measurement must be a vector")
        object.__setattr__(self, "values", _freeze(v))

    def __len__(self):
        return len(self.values)


def synthesize(K, J, snr_db=None, seed=None):
    """Forward-project a current density vector, optionally adding noise.

    Noise is white Gaussian with per-channel power
    ``||K J||^2 / (N * 10**(snr_db / 10))``, generated from ``seed``.
    """
    mat = K.matrix if isinstance(K, LeadField) else np.asarray(K, dtype=float)
    J = np.asarray(J, dtype=float)
    if J.shape != (mat.shape[1],):
        raise ContractError("current density length %d does not match lead field %d"
                            % (J.size, mat.shape[1]))
    phi = mat @ J
    if snr_db is not None:
        power = float(phi @ phi) / (len(phi) * 10.0 ** (snr_db / 10.0))
        rng = np.random.default_rng(seed)
        phi = phi + rng.normal(0.0, np.sqrt(power), len(phi))
    return Measurement(values=phi)


def homogeneous_sphere_potential(radius_mm, sigma, r_dip, moment, r_el):
    """Closed-form surface potential of a dipole in one homogeneous sphere.

    Independent of the series path: derived by summing the Legendre
    expansion analytically. Used as the oracle for the equal-conductivity
    limit of the three-sphere model.
    """
    R = radius_mm / 1000.0
    rd = np.asarray(r_dip, dtype=float) / 1000.0
    re = np.asarray(r_el, dtype=float) / 1000.0
    m = np.asarray(moment, dtype=float)
    b = np.linalg.norm(rd)
    zhat = rd / b if b > 0 else np.array([0.0, 0.0, 1.0])
    rhat = re / np.linalg.norm(re)
    t = b / R
    u = float(rhat @ zhat)
    d = np.sqrt(1.0 - 2.0 * t * u + t * t)
    p_r = float(m @ zhat)
    m_re = float(m @ rhat)
    rad = 2.0 * (u - t) / d**3 + (2.0 * u - t) / (d * (1.0 + d))
    tan = 2.0 / d**3 + (1.0 + d) / (d * (1.0 - t * u + d))
    return (p_r * rad + (m_re - p_r * u) * tan) / (4.0 * np.pi * sigma * R * R)
