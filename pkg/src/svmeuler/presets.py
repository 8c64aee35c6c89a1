"""Named initial velocity fields."""

from __future__ import annotations

import numpy as np

from . import lattice as lt
from .errors import ConfigError, DataError
from .lattice import DIVERGENCE_FREE, FourierLattice, SpectralField

PRESETS = ("taylor_green", "shear", "random_divfree", "file")


def taylor_green(dim: int = 2, amplitude: float = 1.0, n: int = 1) -> SpectralField:
    """Taylor-Green vortex, built mode by mode.

    2-D: u = (-cos x sin y, sin x cos y), a steady Euler flow.
    3-D: u = (sin x cos y cos z, -cos x sin y cos z, 0).
    """
    lat = FourierLattice(dim, max(n, 1))
    modes = {}
    for signs in np.ndindex(*(2,) * dim):
        k = tuple(2 * s - 1 for s in signs)
        if dim == 2:
            a, b = k
            modes[k] = amplitude * np.array([1j * b / 4, -1j * a / 4])
        else:
            a, b, _ = k
            modes[k] = amplitude * np.array([-1j * a / 8, 1j * b / 8, 0.0])
    return SpectralField.from_modes(lat, modes, DIVERGENCE_FREE)


def _perturbation(x: np.ndarray) -> np.ndarray:
    """Velocity of the stream function cos(x+y) + 0.5 sin(2x-y) (planar)."""
    X, Y = x[0], x[1]
    dpsi_dx = -np.sin(X + Y) + np.cos(2 * X - Y)
    dpsi_dy = -np.sin(X + Y) - 0.5 * np.cos(2 * X - Y)
    out = np.zeros_like(x)
    out[0] = dpsi_dy
    out[1] = -dpsi_dx
    if x.shape[0] == 3:
        out[:2] *= np.cos(x[2])
    return out


def shear(dim: int = 2, amplitude: float = 1.0, perturbation: float = 0.0, n: int = 2) -> SpectralField:
    """Shear layer (sin y, 0[, 0]) plus an optional smooth perturbation.

    The unperturbed shear is an exact steady state; ``perturbation > 0``
    adds modes at |k|_inf = 1, 2 so the dynamics cascade.
    """
    lat = FourierLattice(dim, max(n, 3))
    base = np.zeros(dim, dtype=complex)
    k_pos = (0, 1) + (0,) * (dim - 2)
    k_neg = (0, -1) + (0,) * (dim - 2)
    modes = {k_pos: base.copy(), k_neg: base.copy()}
    modes[k_pos][0] = -0.5j * amplitude
    modes[k_neg][0] = 0.5j * amplitude
    u = SpectralField.from_modes(lat, modes, DIVERGENCE_FREE)
    if perturbation:
        x = lat.coordinates()
        p = lt.forward_transform(lt.PhysicalField(lat, _perturbation(x)))
        p = lt.leray_project(p)
        coeffs = p.coeffs.copy()
        coeffs[(Ellipsis,) + (lat.n,) * dim] = 0
        u = SpectralField(lat, u.coeffs + perturbation * coeffs, DIVERGENCE_FREE)
    return u


def random_divfree(dim: int = 2, seed: int = 0, kmax: int = 8, slope: float = 2.0,
                   amplitude: float = 1.0) -> SpectralField:
    """Random solenoidal field on ``|k|_inf <= kmax`` with spectral decay.

    Coefficients are complex normals weighted by (1+|k|^2)^(-slope/2), made
    Hermitian, projected, and scaled to RMS velocity ``amplitude``.
    """
    lat = FourierLattice(dim, kmax)
    rng = np.random.default_rng(seed)
    c = rng.normal(size=(dim,) + lat.shape) + 1j * rng.normal(size=(dim,) + lat.shape)
    c = 0.5 * (c + np.conj(lt._flip(c, dim)))
    c *= (1.0 + lat.k2) ** (-slope / 2)
    c = lt._leray(c, lat)
    c[(Ellipsis,) + (kmax,) * dim] = 0
    rms = np.sqrt(np.sum(np.abs(c) ** 2))
    if rms > 0:
        c *= amplitude / rms
    return SpectralField(lat, c, DIVERGENCE_FREE)


def build(spec, dim: int) -> SpectralField:
    """Field described by a preset spec.

    ``spec`` is a SpectralField, or a mapping with key ``preset`` naming one
    of :data:`PRESETS` plus its parameters (``path`` for ``file``).
    """
    if isinstance(spec, SpectralField):
        return spec
    if isinstance(spec, str):
        spec = {"preset": spec}
    params = dict(spec)
    name = params.pop("preset", None)
    if name == "taylor_green":
        return taylor_green(dim, **params)
    if name == "shear":
        return shear(dim, **params)
    if name == "random_divfree":
        return random_divfree(dim, **params)
    if name == "file":
        from .io import read_snapshot

        u, _ = read_snapshot(params["path"])
        return u
    raise ConfigError(f"unknown initial preset {name!r}; choose from {PRESETS}")


def discretize(u0: SpectralField, lat: FourierLattice) -> SpectralField:
    """``P_n T_n u0`` on the given lattice; rejects fields with a mean."""
    if u0.dim != lat.dim or u0.ncomp != lat.dim:
        raise ConfigError(f"initial field has dim {u0.dim}, run uses dim {lat.dim}")
    mean = u0.coeffs[(Ellipsis,) + (u0.n,) * u0.dim]
    if np.max(np.abs(mean)) > lt.REALITY_TOL * max(1.0, lt._scale(u0.coeffs)):
        raise DataError(f"initial field has nonzero mean {mean.real}")
    if u0.max_reality_defect() > lt.REALITY_TOL * max(1.0, lt._scale(u0.coeffs)):
        raise DataError("initial field is not real-valued")
    c = lt.to_cutoff(u0, lat.n).coeffs.copy()
    c = lt._leray(c, lat)
    c[(Ellipsis,) + (lat.n,) * lat.dim] = 0
    return SpectralField(lat, c, DIVERGENCE_FREE)
