"""Brute-force photon statistics in a truncated Fock basis.

This is the independent cross-check for the Gaussian-state formulas in
``gbsqrc.gaussian``: states are prepared by exponentiating the squeezing,
displacement and passive-mixing generators on an explicit number-state grid,
and moments are obtained by direct summation over the joint photon-number
distribution.  Loss is a pure-loss channel; it can be realized either by an
explicit vacuum-ancilla beamsplitter followed by a partial trace, or by the
equivalent exact binomial thinning of the joint distribution (the default,
which is far cheaper; the two are compared in the test suite).

Truncation control: the per-mode cutoff is chosen from the exact distribution
of the *total* photon number of the prepared product state.  Passive mixing
conserves total photon number, so shells with ``n_total < cutoff`` evolve
exactly and the neglected weight is bounded by the monitored norm deficit.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm, logm
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import expm_multiply

MAX_ORACLE_MODES = 4
_PROBE_CUTOFF = 200


class CutoffTooSmallError(RuntimeError):
    """The truncated basis retains too little of the state's norm."""


def _destroy(cutoff: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, cutoff, dtype=float)), k=1)


def _squeeze_matrix(cutoff: int, r: float) -> np.ndarray:
    a = _destroy(cutoff)
    return expm(0.5 * r * (a @ a - a.T @ a.T))


def _displace_matrix(cutoff: int, alpha: complex) -> np.ndarray:
    a = _destroy(cutoff)
    return expm(alpha * a.T - np.conj(alpha) * a)


def _beamsplitter_matrix(cutoff: int, theta: float) -> np.ndarray:
    """Two-mode beamsplitter ``exp[theta (a^dag b - a b^dag)]`` on a c^2 grid."""
    a = _destroy(cutoff)
    eye = np.eye(cutoff)
    a1 = np.kron(a, eye)
    a2 = np.kron(eye, a)
    gen = theta * (a1.T @ a2 - a1 @ a2.T)
    return expm(gen)


def _apply_single_mode(psi: np.ndarray, op: np.ndarray, axis: int) -> np.ndarray:
    psi = np.moveaxis(psi, axis, 0)
    shape = psi.shape
    psi = op @ psi.reshape(shape[0], -1)
    return np.moveaxis(psi.reshape(shape), 0, axis)


def _apply_two_mode(psi, op, axis_a, axis_b):
    psi = np.moveaxis(psi, (axis_a, axis_b), (0, 1))
    shape = psi.shape
    psi = op @ psi.reshape(shape[0] * shape[1], -1)
    return np.moveaxis(psi.reshape(shape), (0, 1), (axis_a, axis_b))


def _apply_mode_phase(psi: np.ndarray, axis: int, phase: float) -> np.ndarray:
    """Multiply by ``exp(i phase n)`` along one mode axis (mode matrix e^{i phase})."""
    shape = [1] * psi.ndim
    shape[axis] = psi.shape[axis]
    factor = np.exp(1j * phase * np.arange(psi.shape[axis])).reshape(shape)
    return psi * factor


def _bs_shell_blocks(theta: float, max_total: int) -> list[np.ndarray]:
    """Blocks of ``exp[theta (a^dag b - a b^dag)]`` per pair photon total.

    Within total ``T`` the basis is ``|k, T-k>``; the generator is the real
    antisymmetric tridiagonal with super-diagonal ``sqrt((k+1)(T-k))``.
    """
    blocks = [np.ones((1, 1))]
    for total in range(1, max_total + 1):
        k = np.arange(total)
        gen = np.zeros((total + 1, total + 1))
        coup = np.sqrt((k + 1.0) * (total - k))
        gen[k + 1, k] = theta * coup
        gen[k, k + 1] = -theta * coup
        blocks.append(expm(gen))
    return blocks


def _apply_real_beamsplitter(psi, theta, axis_a, axis_b):
    """Apply the gate with mode matrix [[cos, sin], [-sin, cos]] to two axes.

    Photon number is conserved within the pair, so the gate acts shell-wise on
    the anti-diagonals ``n_a + n_b = T``; shells cut by the truncation lose
    norm, which the caller's norm monitoring picks up.
    """
    psi = np.moveaxis(psi, (axis_a, axis_b), (0, 1))
    c = psi.shape[0]
    rest = psi.shape[2:]
    work = psi.reshape(c, c, -1)
    out = np.zeros_like(work)
    blocks = _bs_shell_blocks(theta, 2 * c - 2)
    for total in range(2 * c - 1):
        lo = max(0, total - c + 1)
        hi = min(total, c - 1)
        ks = np.arange(lo, hi + 1)
        sub = blocks[total][np.ix_(ks, ks)]
        out[ks, total - ks] = np.einsum("kl,l...->k...", sub, work[ks, total - ks])
    return np.moveaxis(out.reshape((c, c) + rest), (0, 1), (axis_a, axis_b))


def _givens_factors(u: np.ndarray):
    """Factor ``u`` into 2-mode Givens gates: ``u = G_1^dag ... G_K^dag D``.

    Returns ``(gates, phases)`` where each gate is ``(i, j, block)`` with the
    2x2 unitary block acting on modes ``(i, j)`` of ``G_k`` (the nulling
    rotation), in the order they were applied, and ``phases`` are the
    arguments of the residual diagonal ``D``.
    """
    w = np.array(u, dtype=complex)
    m = w.shape[0]
    gates = []
    for col in range(m - 1):
        for row in range(m - 1, col, -1):
            y = w[row, col]
            if abs(y) < 1e-14:
                continue
            x = w[row - 1, col]
            r = np.hypot(abs(x), abs(y))
            block = np.array([[np.conj(x), np.conj(y)], [-y, x]]) / r
            w[[row - 1, row], :] = block @ w[[row - 1, row], :]
            gates.append((row - 1, row, block))
    return gates, np.angle(np.diag(w))


def _apply_two_mode_unitary(psi, block, axis_a, axis_b):
    """Apply a 2-mode gate with an arbitrary 2x2 mode matrix ``block``."""
    # block = diag(e^{ia}, e^{ib}) R(theta) diag(1, e^{ig}) with R real.
    ct, st = abs(block[0, 0]), abs(block[1, 0])
    theta = np.arctan2(st, ct)
    pa = np.angle(block[0, 0]) if ct > 1e-14 else 0.0
    pb = np.angle(block[1, 0]) if st > 1e-14 else 0.0
    if ct >= st:
        pg = np.angle(block[1, 1] * np.exp(-1j * pb))
    else:
        pg = np.angle(-block[0, 1] * np.exp(-1j * pa))
    # R(theta) = [[cos, -sin], [sin, cos]] is exp[-theta (a^dag b - a b^dag)].
    psi = _apply_mode_phase(psi, axis_b, pg)
    psi = _apply_real_beamsplitter(psi, -theta, axis_a, axis_b)
    psi = _apply_mode_phase(psi, axis_a, pa)
    psi = _apply_mode_phase(psi, axis_b, pb)
    return psi


def _apply_passive(psi: np.ndarray, u: np.ndarray, axes) -> np.ndarray:
    """Evolve the state through the passive unitary ``u`` acting on ``axes``."""
    gates, phases = _givens_factors(u)
    for k, phase in enumerate(phases):
        psi = _apply_mode_phase(psi, axes[k], phase)
    for i, j, block in reversed(gates):
        psi = _apply_two_mode_unitary(psi, block.conj().T, axes[i], axes[j])
    return psi


def _passive_generator(u: np.ndarray, cutoff: int, axes, shape) -> coo_matrix:
    """Sparse ``H = sum h_kl a_k^dag a_l`` with ``h = i log U`` on the grid axes.

    Slower alternative evolution route (via ``expm_multiply``); kept as an
    independent cross-check of the Givens factorization.
    """
    h = 1j * logm(np.asarray(u, dtype=complex))
    h = (h + h.conj().T) / 2
    dim = int(np.prod(shape))
    strides = np.cumprod((1,) + tuple(shape[::-1][:-1]))[::-1]
    idx = np.arange(dim)
    occ = [(idx // strides[ax]) % shape[ax] for ax in range(len(shape))]
    rows, cols, data = [], [], []
    m = len(axes)
    for k in range(m):
        ak = axes[k]
        rows.append(idx)
        cols.append(idx)
        data.append(h[k, k].real * occ[ak])
        for l in range(m):
            if l == k:
                continue
            al = axes[l]
            mask = (occ[al] >= 1) & (occ[ak] <= cutoff - 2)
            src = idx[mask]
            rows.append(src + strides[ak] - strides[al])
            cols.append(src)
            data.append(h[k, l] * np.sqrt(occ[al][mask] * (occ[ak][mask] + 1.0)))
    return coo_matrix(
        (np.concatenate(data).astype(complex), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dim, dim),
    ).tocsr()


def _single_mode_weights(cutoff, r=0.0, alpha=0.0, nbar=0.0):
    """Photon-number distribution of one prepared mode (probe resolution)."""
    if nbar > 0:
        n = np.arange(cutoff)
        p = (nbar / (1.0 + nbar)) ** n / (1.0 + nbar)
        return p
    psi = np.zeros(cutoff, dtype=complex)
    psi[0] = 1.0
    if r != 0.0:
        psi = _squeeze_matrix(cutoff, r) @ psi
    if alpha != 0.0:
        psi = _displace_matrix(cutoff, alpha) @ psi
    return np.abs(psi) ** 2


def _auto_cutoff(squeeze_r, alpha, nbar, norm_tol, max_dim, grid_modes):
    total = np.array([1.0])
    for r, a, nb in zip(squeeze_r, alpha, nbar):
        total = np.convolve(total, _single_mode_weights(_PROBE_CUTOFF, r, a, nb))
    tail = 1.0 - np.cumsum(total)
    below = np.nonzero(tail <= norm_tol / 10.0)[0]
    if below.size == 0:
        raise CutoffTooSmallError("state support exceeds the probe cutoff")
    cutoff = max(int(below[0]) + 2, 3)
    if cutoff**grid_modes > max_dim:
        raise CutoffTooSmallError(
            f"required cutoff {cutoff} on {grid_modes} grid modes exceeds the "
            f"size limit ({max_dim} amplitudes)"
        )
    return cutoff


def _thinning_matrix(cutoff: int, eta: float) -> np.ndarray:
    """Exact diagonal action of the pure-loss channel: binomial thinning."""
    n = np.arange(cutoff)
    t = np.zeros((cutoff, cutoff))
    from scipy.special import comb

    for m in range(cutoff):
        t[m, m:] = comb(n[m:], m) * eta**m * (1.0 - eta) ** (n[m:] - m)
    return t


def fock_joint_distribution(
    squeeze_r=None,
    alpha=None,
    nbar=None,
    unitary=None,
    loss=None,
    cutoff: int | None = None,
    norm_tol: float = 1e-10,
    loss_method: str = "thinning",
    max_dim: int = 8_000_000,
):
    """Joint photon-number distribution of a prepared, mixed and attenuated state.

    The state is built as per-mode squeezers (or thermal occupations, realized
    through two-mode-squeezed purification ancillas) followed by per-mode
    displacements, an ``M``-mode passive unitary and per-mode loss.

    Args:
        squeeze_r: per-mode squeezing parameters (length ``M``) or ``None``.
        alpha: per-mode complex displacements or ``None``.
        nbar: per-mode thermal occupations or ``None``; modes may be squeezed
            or thermal, not both.
        unitary: ``M x M`` passive unitary or ``None``.
        loss: per-mode transmissivities in ``[0, 1]`` or ``None``.
        cutoff: per-mode Fock levels; chosen automatically when ``None``.
        norm_tol: maximum tolerated norm deficit of the truncated state.
        loss_method: ``"thinning"`` (exact, cheap) or ``"ancilla"`` (explicit
            vacuum-ancilla beamsplitters and partial trace).

    Returns:
        ``(p, cutoff)`` where ``p`` has shape ``(cutoff,) * M`` and sums to the
        retained norm.
    """
    sizes = [np.size(x) for x in (squeeze_r, alpha, nbar, loss) if x is not None]
    if unitary is not None:
        sizes.append(np.shape(unitary)[0])
    if not sizes:
        raise ValueError("empty state description")
    modes = max(sizes)
    if modes > MAX_ORACLE_MODES:
        raise ValueError(f"oracle supports at most {MAX_ORACLE_MODES} modes, got {modes}")

    def vec(x, dtype=float):
        if x is None:
            return np.zeros(modes, dtype=dtype)
        return np.broadcast_to(np.asarray(x, dtype=dtype), (modes,)).copy()

    squeeze_r = vec(squeeze_r)
    alpha = vec(alpha, complex)
    nbar = vec(nbar)
    eta = np.ones(modes) if loss is None else vec(loss)
    if np.any(squeeze_r < 0) or np.any(nbar < 0):
        raise ValueError("squeezing and thermal occupations must be >= 0")
    if np.any((squeeze_r > 0) & (nbar > 0)):
        raise ValueError("a mode cannot be both squeezed and thermal")
    if np.any(eta < 0) or np.any(eta > 1):
        raise ValueError("transmissivities must lie in [0, 1]")

    thermal = np.nonzero(nbar > 0)[0]
    lossy = np.nonzero(eta < 1)[0] if loss_method == "ancilla" else np.array([], int)
    grid_modes = modes + thermal.size + lossy.size
    if cutoff is None:
        cutoff = _auto_cutoff(squeeze_r, alpha, nbar, norm_tol, max_dim, grid_modes)
    if cutoff**grid_modes > max_dim:
        raise CutoffTooSmallError(
            f"cutoff {cutoff} on {grid_modes} grid modes exceeds the size limit"
        )

    shape = (cutoff,) * (modes + thermal.size)
    psi = np.zeros(shape, dtype=complex)
    psi[(0,) * len(shape)] = 1.0

    for i in range(modes):
        if squeeze_r[i] != 0.0:
            psi = _apply_single_mode(psi, _squeeze_matrix(cutoff, squeeze_r[i]), i)
    # Thermal modes: two-mode-squeezed purification with an inert ancilla.
    for pos, i in enumerate(thermal):
        r_t = np.arcsinh(np.sqrt(nbar[i]))
        pair = np.zeros((cutoff, cutoff), dtype=complex)
        n = np.arange(cutoff)
        pair[n, n] = np.tanh(r_t) ** n / np.cosh(r_t)
        psi = _apply_two_mode(psi, pair.reshape(cutoff**2, 1), i, modes + pos)
    for i in range(modes):
        if alpha[i] != 0.0:
            psi = _apply_single_mode(psi, _displace_matrix(cutoff, alpha[i]), i)

    if unitary is not None:
        u = np.asarray(unitary, dtype=complex)
        if u.shape != (modes, modes):
            raise ValueError(f"unitary shape {u.shape} does not match {modes} modes")
        psi = _apply_passive(psi, u, list(range(modes)))

    norm = float(np.sum(np.abs(psi) ** 2))
    if abs(1.0 - norm) > norm_tol:
        raise CutoffTooSmallError(
            f"truncated norm {norm:.12f} misses 1 by more than {norm_tol:g}; "
            "increase the cutoff"
        )

    if loss_method == "ancilla" and lossy.size:
        for i in lossy:
            psi = psi[..., None] * np.array([1.0] + [0.0] * (cutoff - 1))
            bs = _beamsplitter_matrix(cutoff, np.arccos(np.sqrt(eta[i])))
            psi = _apply_two_mode(psi, bs, i, psi.ndim - 1)
        p = np.abs(psi) ** 2
        p = p.sum(axis=tuple(range(modes, p.ndim)))
    elif loss_method == "thinning":
        p = np.abs(psi) ** 2
        if thermal.size:
            p = p.sum(axis=tuple(range(modes, p.ndim)))
        for i in range(modes):
            if eta[i] < 1.0:
                p = _apply_single_mode(p, _thinning_matrix(cutoff, eta[i]), i)
    else:
        raise ValueError(f"unknown loss_method {loss_method!r}")
    if thermal.size and loss_method == "ancilla":
        pass  # thermal ancillas were already traced out above
    return p, cutoff


def moments_from_distribution(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First and second photon-number moments of a joint distribution."""
    modes = p.ndim
    cutoff = p.shape[0]
    n = np.arange(cutoff, dtype=float)
    mu = np.empty(modes)
    second = np.empty((modes, modes))
    for i in range(modes):
        axes = tuple(ax for ax in range(modes) if ax != i)
        marg = p.sum(axis=axes)
        mu[i] = np.dot(marg, n)
        second[i, i] = np.dot(marg, n**2)
    for i in range(modes):
        for j in range(i + 1, modes):
            axes = tuple(ax for ax in range(modes) if ax not in (i, j))
            marg = p.sum(axis=axes) if axes else p
            if i > j:
                marg = marg.T
            second[i, j] = second[j, i] = n @ marg @ n
    sigma = second - np.outer(mu, mu)
    return mu, (sigma + sigma.T) / 2


def fock_oracle_moments(
    squeeze_r=None,
    alpha=None,
    nbar=None,
    unitary=None,
    loss=None,
    cutoff: int | None = None,
    norm_tol: float = 1e-10,
    loss_method: str = "thinning",
):
    """Photon mean vector and covariance matrix by truncated-Fock brute force."""
    p, _ = fock_joint_distribution(
        squeeze_r=squeeze_r,
        alpha=alpha,
        nbar=nbar,
        unitary=unitary,
        loss=loss,
        cutoff=cutoff,
        norm_tol=norm_tol,
        loss_method=loss_method,
    )
    return moments_from_distribution(p)


def fock_oracle_purity(
    squeeze_r=None,
    alpha=None,
    unitary=None,
    loss=None,
    cutoff: int | None = None,
    norm_tol: float = 1e-10,
    max_dim: int = 8_000_000,
) -> float:
    """Purity ``tr(rho^2)`` after loss, via vacuum-ancilla purification.

    The lossy state is ``tr_anc |psi><psi|`` for a pure system+ancilla state,
    so the purity is the fourth power norm of its Schmidt spectrum.
    """
    sizes = [np.size(x) for x in (squeeze_r, alpha, loss) if x is not None]
    if unitary is not None:
        sizes.append(np.shape(unitary)[0])
    modes = max(sizes)

    def vec(x, dtype=float):
        if x is None:
            return np.zeros(modes, dtype=dtype)
        return np.broadcast_to(np.asarray(x, dtype=dtype), (modes,)).copy()

    r, alpha, eta = vec(squeeze_r), vec(alpha, complex), np.ones(modes) if loss is None else vec(loss)
    lossy = np.nonzero(eta < 1)[0]
    if cutoff is None:
        cutoff = _auto_cutoff(r, alpha, np.zeros(modes), norm_tol, max_dim, modes + lossy.size)
    shape = (cutoff,) * modes
    psi = np.zeros(shape, dtype=complex)
    psi[(0,) * modes] = 1.0
    for i in range(modes):
        if r[i] != 0.0:
            psi = _apply_single_mode(psi, _squeeze_matrix(cutoff, r[i]), i)
        if alpha[i] != 0.0:
            psi = _apply_single_mode(psi, _displace_matrix(cutoff, alpha[i]), i)
    if unitary is not None:
        psi = _apply_passive(psi, np.asarray(unitary, complex), list(range(modes)))
    norm = float(np.sum(np.abs(psi) ** 2))
    if abs(1.0 - norm) > norm_tol:
        raise CutoffTooSmallError(f"truncated norm {norm:.12f}; increase the cutoff")
    vac = np.zeros(cutoff)
    vac[0] = 1.0
    for i in lossy:
        psi = psi[..., None] * vac
        bs = _beamsplitter_matrix(cutoff, np.arccos(np.sqrt(eta[i])))
        psi = _apply_two_mode(psi, bs, i, psi.ndim - 1)
    mat = psi.reshape(cutoff**modes, -1)
    s = np.linalg.svd(mat, compute_uv=False)
    return float(np.sum(s**4))


def sample_joint_counts(p: np.ndarray, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``(n_samples, M)`` joint photon counts from a joint distribution."""
    flat = p.reshape(-1)
    flat = np.maximum(flat, 0.0)
    flat = flat / flat.sum()
    idx = rng.choice(flat.size, size=n_samples, p=flat)
    return np.stack(np.unravel_index(idx, p.shape), axis=1).astype(float)
