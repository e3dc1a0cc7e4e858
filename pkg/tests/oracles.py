"""Independent reference implementations used to check the library.

None of these share code with the package: each one takes the slow,
obviously-correct route (loops, brute-force linear systems, naive DFTs).
"""

from __future__ import annotations

import numpy as np


def random_psd(rng, D: int, rank: int | None = None, floor: float = 1e-3) -> np.ndarray:
    """Random Hermitian PSD matrix with a small ridge."""
    k = rank or D
    A = rng.standard_normal((D, k)) + 1j * rng.standard_normal((D, k))
    return A @ A.conj().T + floor * np.eye(D)


def random_hermitian(rng, D: int) -> np.ndarray:
    A = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D))
    return 0.5 * (A + A.conj().T)


def jacobi_eigenvalues(H: np.ndarray, sweeps: int = 100, tol: float = 1e-15) -> np.ndarray:
    """Eigenvalues of a complex Hermitian matrix via the real-symmetric embedding.

    ``[[A, -B], [B, A]]`` has each eigenvalue of ``A + jB`` twice; classical
    cyclic Jacobi rotations diagonalize it.
    """
    A, B = H.real, H.imag
    S = np.block([[A, -B], [B, A]]).astype(np.float64)
    n = S.shape[0]
    for _ in range(sweeps):
        off = np.sqrt(np.sum((S - np.diag(np.diag(S))) ** 2))
        if off < tol * max(1.0, np.abs(S).max()):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(S[p, q]) < 1e-300:
                    continue
                theta = (S[q, q] - S[p, p]) / (2.0 * S[p, q])
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta ** 2 + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t ** 2 + 1.0)
                s = t * c
                J = np.eye(n)
                J[p, p] = J[q, q] = c
                J[p, q], J[q, p] = s, -s
                S = J.T @ S @ J
    ev = np.sort(np.diag(S))
    return ev[::2]


def cofactor_inverse(A: np.ndarray) -> np.ndarray:
    """Matrix inverse through the adjugate (small D only)."""
    D = A.shape[0]
    C = np.empty_like(A)
    for i in range(D):
        for j in range(D):
            minor = np.delete(np.delete(A, i, axis=0), j, axis=1)
            C[i, j] = (-1) ** (i + j) * (np.linalg.det(minor) if D > 1 else 1.0)
    return C.T / np.linalg.det(A)


def lagrangian_mvdr(Phi: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Minimize ``h^H Phi h`` s.t. ``v^H h = 1`` by solving the real KKT system.

    Unknowns are ``Re h, Im h`` and the complex multiplier split into two
    real multipliers; the stationarity and constraint rows are assembled
    directly from the real-valued expansion of the objective.
    """
    D = len(v)
    P = np.block([[Phi.real, -Phi.imag], [Phi.imag, Phi.real]])
    # v^H h = (vr - j vi)^T (hr + j hi) -> real part and imaginary part constraints
    c_re = np.concatenate([v.real, v.imag])
    c_im = np.concatenate([-v.imag, v.real])
    C = np.stack([c_re, c_im])
    K = np.zeros((2 * D + 2, 2 * D + 2))
    K[:2 * D, :2 * D] = 2.0 * P
    K[:2 * D, 2 * D:] = -C.T
    K[2 * D:, :2 * D] = C
    rhs = np.zeros(2 * D + 2)
    rhs[2 * D] = 1.0
    sol = np.linalg.solve(K, rhs)
    return sol[:D] + 1j * sol[D:2 * D]


def naive_dft_frame(x: np.ndarray, n_fft: int) -> np.ndarray:
    """One-sided DFT by explicit summation."""
    n = np.arange(len(x))
    k = np.arange(n_fft // 2 + 1)[:, None]
    return np.sum(x[None, :] * np.exp(-2j * np.pi * k * n[None, :] / n_fft), axis=1)


def loop_covariance(Y: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """``sum_t |m|^2 y y^H / sum_t |m|^2`` per frequency with explicit loops."""
    M, T, F = Y.shape
    out = np.zeros((F, M, M), dtype=np.complex128)
    for f in range(F):
        num = np.zeros((M, M), dtype=np.complex128)
        den = 0.0
        for t in range(T):
            w = 1.0 if mask is None else abs(mask[t, f]) ** 2
            y = Y[:, t, f]
            num += w * np.outer(y, y.conj())
            den += w
        out[f] = num / den
    return out


def loop_crf(Y: np.ndarray, taps: np.ndarray, J1: int, K1: int) -> np.ndarray:
    """Double loop over (j, k) with explicit bounds checks; zero outside the grid."""
    M, T, F = Y.shape
    nj, nk = taps.shape[2:]
    out = np.zeros_like(Y)
    for m in range(M):
        for t in range(T):
            for f in range(F):
                acc = 0j
                for j in range(nj):
                    for k in range(nk):
                        tt, ff = t + j - J1, f + k - K1
                        if 0 <= tt < T and 0 <= ff < F:
                            acc += taps[t, f, j, k] * Y[m, tt, ff]
                out[m, t, f] = acc
    return out


def loop_stack(Y: np.ndarray, L1: int, L2: int) -> np.ndarray:
    """Stacked frames ``t-L1+1 .. t+L2`` at index ``l * M + m``; zero padded."""
    M, T, F = Y.shape
    L = L1 + L2
    out = np.zeros((L * M, T, F), dtype=np.complex128)
    for t in range(T):
        for l in range(L):
            src = t - L1 + 1 + l
            if 0 <= src < T:
                for m in range(M):
                    out[l * M + m, t] = Y[m, src]
    return out


def si_snr_reference(est, ref) -> float:
    """Si-SNR by the projection formula with Python floats (no guards, no mean removal)."""
    est, ref = [float(v) for v in est], [float(v) for v in ref]
    alpha = sum(a * b for a, b in zip(est, ref)) / sum(b * b for b in ref)
    s = [alpha * b for b in ref]
    e = [a - b for a, b in zip(est, s)]
    return 10.0 * np.log10(sum(v * v for v in s) / sum(v * v for v in e))


def central_difference(fn, theta: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(theta)
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += eps
        tm[i] -= eps
        g[i] = (fn(tp) - fn(tm)) / (2.0 * eps)
    return g


def five_point_difference(fn, theta: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Fourth-order central difference ``(-f(+2h) + 8f(+h) - 8f(-h) + f(-2h)) / 12h``."""
    g = np.zeros_like(theta)
    for i in range(theta.size):
        vals = []
        for step in (2, 1, -1, -2):
            t = theta.copy()
            t[i] += step * h
            vals.append(fn(t))
        g[i] = (-vals[0] + 8.0 * vals[1] - 8.0 * vals[2] + vals[3]) / (12.0 * h)
    return g
