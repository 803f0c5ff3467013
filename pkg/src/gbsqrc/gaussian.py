"""Multimode Gaussian states of light and their exact photon-number statistics.

Conventions used throughout the package:

* Second moments are stored relative to the displacement: with
  ``da_i = a_i - <a_i>``, the fluctuation matrices are
  ``n_mat[i, j] = <da_i^dag da_j>`` (Hermitian) and
  ``m_mat[i, j] = <da_i da_j>`` (symmetric), both in photon units.
* A passive mode transformation with matrix ``U`` acts as ``a -> U a``, so
  ``alpha -> U alpha``, ``n_mat -> conj(U) n_mat U^T`` and
  ``m_mat -> U m_mat U^T``.
* Quadratures are ``x = (a + a^dag)/sqrt(2)``, ``p = -i(a - a^dag)/sqrt(2)``;
  the vacuum variance is 1/2 and symplectic eigenvalues satisfy ``nu >= 1/2``.
* Squeezing with ``r > 0`` reduces ``Var(x)`` to ``exp(-2r)/2``, which puts a
  negative real number on the diagonal of ``m_mat``.  Flipping the sign of
  ``m_mat`` (squeezing p instead of x) changes no photon-number statistics;
  the test suite checks this explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HERMITIAN_TOL = 1e-10
UNITARITY_TOL = 1e-10
PHYSICALITY_TOL = 1e-9
DIAG_TOL = 1e-12
VACUUM_NU = 0.5


class UnphysicalStateError(ValueError):
    """The second moments do not describe a valid bosonic state."""


def _lock(a):
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class GaussianState:
    """Displacement plus fluctuation second moments of ``M`` bosonic modes."""

    alpha: np.ndarray
    n_mat: np.ndarray
    m_mat: np.ndarray

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=complex))
        n_mat = np.asarray(self.n_mat, dtype=complex)
        m_mat = np.asarray(self.m_mat, dtype=complex)
        m = alpha.shape[0]
        if n_mat.shape != (m, m) or m_mat.shape != (m, m):
            raise ValueError(
                f"inconsistent shapes: alpha {alpha.shape}, n_mat {n_mat.shape}, "
                f"m_mat {m_mat.shape}"
            )
        for name, arr in (("alpha", alpha), ("n_mat", n_mat), ("m_mat", m_mat)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
        if np.max(np.abs(n_mat - n_mat.conj().T), initial=0.0) > HERMITIAN_TOL:
            raise UnphysicalStateError("n_mat is not Hermitian within tolerance")
        if np.max(np.abs(m_mat - m_mat.T), initial=0.0) > HERMITIAN_TOL:
            raise UnphysicalStateError("m_mat is not symmetric within tolerance")
        diag = np.diag(n_mat)
        if np.min(diag.real, initial=0.0) < -DIAG_TOL:
            raise UnphysicalStateError("diag(n_mat) has a negative occupation")
        object.__setattr__(self, "alpha", _lock(alpha))
        object.__setattr__(self, "n_mat", _lock(n_mat))
        object.__setattr__(self, "m_mat", _lock(m_mat))

    @property
    def modes(self) -> int:
        return self.alpha.shape[0]

    @property
    def mean_photons(self) -> np.ndarray:
        """Per-mode mean photon number ``<n_i>``."""
        return np.real(np.diag(self.n_mat)) + np.abs(self.alpha) ** 2

    @property
    def total_mean_photons(self) -> float:
        return float(np.sum(self.mean_photons))


@dataclass(frozen=True)
class SupercontinuumSource:
    """Classical mixture of coherent states with a common intensity fluctuation.

    Per shot the amplitude is ``sqrt(s) * alpha`` with ``s`` Gamma-distributed
    (mean 1, variance ``g``), which produces positively correlated counts
    across all modes.  ``g = 0`` degenerates to a plain coherent state.
    """

    alpha: np.ndarray
    g: float

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=complex))
        if self.g < 0:
            raise ValueError("fluctuation strength g must be >= 0")
        object.__setattr__(self, "alpha", _lock(alpha))

    @property
    def modes(self) -> int:
        return self.alpha.shape[0]


def make_squeezed_vacuum(r) -> GaussianState:
    """Product of single-mode squeezed vacua with squeezing parameters ``r``."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if np.any(r < 0):
        raise ValueError("squeezing parameters must be >= 0")
    s, c = np.sinh(r), np.cosh(r)
    return GaussianState(
        alpha=np.zeros(r.shape[0], dtype=complex),
        n_mat=np.diag(s**2).astype(complex),
        m_mat=np.diag(-s * c).astype(complex),
    )


def make_coherent(alpha) -> GaussianState:
    """Coherent state with displacement ``alpha``; counts are Poissonian."""
    alpha = np.atleast_1d(np.asarray(alpha, dtype=complex))
    m = alpha.shape[0]
    zeros = np.zeros((m, m), dtype=complex)
    return GaussianState(alpha=alpha, n_mat=zeros, m_mat=zeros.copy())


def make_thermal(nbar) -> GaussianState:
    """Product of thermal modes with mean occupations ``nbar``."""
    nbar = np.atleast_1d(np.asarray(nbar, dtype=float))
    if np.any(nbar < 0):
        raise ValueError("thermal occupations must be >= 0")
    m = nbar.shape[0]
    return GaussianState(
        alpha=np.zeros(m, dtype=complex),
        n_mat=np.diag(nbar).astype(complex),
        m_mat=np.zeros((m, m), dtype=complex),
    )


def make_supercontinuum(alpha, g: float) -> SupercontinuumSource:
    return SupercontinuumSource(alpha=np.asarray(alpha, dtype=complex), g=float(g))


def check_unitary(u: np.ndarray, tol: float = UNITARITY_TOL) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise ValueError(f"unitary must be square, got shape {u.shape}")
    defect = np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0])))
    if defect > tol:
        raise ValueError(f"matrix is not unitary: max |U^dag U - I| = {defect:.3e}")
    return u


def apply_unitary(state: GaussianState, u: np.ndarray) -> GaussianState:
    """Transform the state under a passive (beamsplitter) unitary ``a -> U a``."""
    u = check_unitary(u)
    if u.shape[0] != state.modes:
        raise ValueError(f"unitary is {u.shape[0]}-mode but state has {state.modes}")
    alpha = u @ state.alpha
    n_mat = u.conj() @ state.n_mat @ u.T
    m_mat = u @ state.m_mat @ u.T
    return GaussianState(
        alpha=alpha,
        n_mat=(n_mat + n_mat.conj().T) / 2,
        m_mat=(m_mat + m_mat.T) / 2,
    )


def apply_loss(state: GaussianState, eta) -> GaussianState:
    """Pure loss with per-mode transmissivities ``eta`` (beamsplitter to vacuum)."""
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (state.modes,))
    if np.any(eta < 0) or np.any(eta > 1):
        raise ValueError("transmissivities must lie in [0, 1]")
    root = np.sqrt(eta)
    scale = np.outer(root, root)
    return GaussianState(
        alpha=root * state.alpha,
        n_mat=scale * state.n_mat,
        m_mat=scale * state.m_mat,
    )


def symplectic_form(modes: int) -> np.ndarray:
    eye = np.eye(modes)
    zero = np.zeros((modes, modes))
    return np.block([[zero, eye], [-eye, zero]])


def quadrature_covariance(state: GaussianState) -> np.ndarray:
    """Symmetrized ``(x, p)``-ordered covariance matrix (vacuum variance 1/2)."""
    n_mat, m_mat = state.n_mat, state.m_mat
    half = 0.5 * np.eye(state.modes)
    xx = np.real(n_mat) + np.real(m_mat) + half
    pp = np.real(n_mat) - np.real(m_mat) + half
    xp = np.imag(m_mat) + np.imag(n_mat)
    return np.block([[xx, xp], [xp.T, pp]])


def assert_physical(state: GaussianState, tol: float = PHYSICALITY_TOL) -> None:
    """Check the bosonic uncertainty relation ``sigma + i Omega/2 >= 0``."""
    sigma = quadrature_covariance(state)
    omega = symplectic_form(state.modes)
    lam = np.linalg.eigvalsh(sigma + 0.5j * omega)
    if lam.min() < -tol:
        raise UnphysicalStateError(
            f"state violates the uncertainty relation: min eig = {lam.min():.3e}"
        )


def photon_moments(state: GaussianState) -> tuple[np.ndarray, np.ndarray]:
    """Exact mean vector and covariance matrix of the photon-number operators.

    Derived by Wick expansion of ``<n_i n_j>`` for a displaced Gaussian state:

        Sigma_ij = |n_mat_ij|^2 + |m_mat_ij|^2 + delta_ij mu_i
                   + 2 Re[alpha_i conj(alpha_j) n_mat_ij]
                   + 2 Re[conj(alpha_i) conj(alpha_j) m_mat_ij]

    and validated against the truncated-Fock oracle (see ``gbsqrc.fock``).
    """
    assert_physical(state)
    alpha = state.alpha
    mu = state.mean_photons
    sigma = (
        np.abs(state.n_mat) ** 2
        + np.abs(state.m_mat) ** 2
        + 2.0 * np.real(np.outer(alpha, alpha.conj()) * state.n_mat)
        + 2.0 * np.real(np.outer(alpha.conj(), alpha.conj()) * state.m_mat)
    )
    sigma = sigma + np.diag(mu)
    return mu, (sigma + sigma.T) / 2


def propagated_moments(source, u: np.ndarray | None = None, eta=None):
    """Photon moments of a source propagated through a unitary and loss.

    Accepts a :class:`GaussianState` or a :class:`SupercontinuumSource`; the
    latter is a non-Gaussian classical mixture whose moments follow from the
    law of total covariance.
    """
    if isinstance(source, GaussianState):
        state = source
        if u is not None:
            state = apply_unitary(state, u)
        if eta is not None:
            state = apply_loss(state, eta)
        return photon_moments(state)
    if isinstance(source, SupercontinuumSource):
        beta = source.alpha
        if u is not None:
            beta = check_unitary(u) @ beta
        if eta is not None:
            eta = np.broadcast_to(np.asarray(eta, dtype=float), beta.shape)
            if np.any(eta < 0) or np.any(eta > 1):
                raise ValueError("transmissivities must lie in [0, 1]")
            beta = np.sqrt(eta) * beta
        mu = np.abs(beta) ** 2
        sigma = np.diag(mu) + source.g * np.outer(mu, mu)
        return mu, sigma
    raise TypeError(f"unsupported source type {type(source).__name__}")


def williamson_bloch_messiah(state: GaussianState, pure_tol: float = 1e-7):
    """Symplectic eigenvalues and, for pure states, supermode squeezing.

    Returns ``(nu, r)`` with ``nu`` the symplectic eigenvalues sorted in
    descending order (vacuum gives 1/2) and ``r`` the per-supermode squeezing
    parameters for pure states (``None`` when the state is mixed).
    """
    assert_physical(state)
    sigma = quadrature_covariance(state)
    omega = symplectic_form(state.modes)
    ev = np.abs(np.linalg.eigvals(1j * omega @ sigma))
    nu = np.sort(ev)[::2][::-1]
    if np.max(np.abs(nu - VACUUM_NU)) <= pure_tol:
        lam = np.sort(np.linalg.eigvalsh(sigma))[::-1][: state.modes]
        r = np.maximum(0.5 * np.log(2.0 * lam), 0.0)
        return nu, r
    return nu, None


def gaussian_purity(state: GaussianState) -> float:
    """Purity ``tr(rho^2) = prod_k 1/(2 nu_k)`` from the symplectic spectrum."""
    nu, _ = williamson_bloch_messiah(state)
    return float(np.prod(1.0 / (2.0 * nu)))


def effective_supermode_count(r: np.ndarray, threshold: float) -> int:
    """Number of supermodes squeezed above ``threshold``."""
    return int(np.sum(np.asarray(r) > threshold))


def haar_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random ``n x n`` unitary via QR of a Ginibre matrix."""
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))
