"""Real spherical-harmonics color evaluation, degrees 0 to 3.

Color convention: c = max(0, SH(dir) + 0.5). The DC band alone gives a
view-independent color, which is the default storage mode.
"""

from __future__ import annotations

import numpy as np

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)


def sh_basis(d_color: int, dirs: np.ndarray) -> np.ndarray:
    """Basis values for each direction, shape (n, d_color)."""
    n = dirs.shape[0]
    basis = np.empty((n, d_color), dtype=np.float64)
    basis[:, 0] = SH_C0
    if d_color == 1:
        return basis
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    basis[:, 1] = -SH_C1 * y
    basis[:, 2] = SH_C1 * z
    basis[:, 3] = -SH_C1 * x
    if d_color == 4:
        return basis
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    basis[:, 4] = SH_C2[0] * xy
    basis[:, 5] = SH_C2[1] * yz
    basis[:, 6] = SH_C2[2] * (2.0 * zz - xx - yy)
    basis[:, 7] = SH_C2[3] * xz
    basis[:, 8] = SH_C2[4] * (xx - yy)
    if d_color == 9:
        return basis
    basis[:, 9] = SH_C3[0] * y * (3.0 * xx - yy)
    basis[:, 10] = SH_C3[1] * xy * z
    basis[:, 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
    basis[:, 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
    basis[:, 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
    basis[:, 14] = SH_C3[5] * z * (xx - yy)
    basis[:, 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    return basis


def sh_basis_grad(d_color: int, dirs: np.ndarray) -> np.ndarray:
    """d(basis)/d(dir), shape (n, d_color, 3). Zero for the DC band."""
    n = dirs.shape[0]
    grad = np.zeros((n, d_color, 3), dtype=np.float64)
    if d_color == 1:
        return grad
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    grad[:, 1, 1] = -SH_C1
    grad[:, 2, 2] = SH_C1
    grad[:, 3, 0] = -SH_C1
    if d_color == 4:
        return grad
    xx, yy, zz = x * x, y * y, z * z
    grad[:, 4, 0] = SH_C2[0] * y
    grad[:, 4, 1] = SH_C2[0] * x
    grad[:, 5, 1] = SH_C2[1] * z
    grad[:, 5, 2] = SH_C2[1] * y
    grad[:, 6, 0] = SH_C2[2] * (-2.0 * x)
    grad[:, 6, 1] = SH_C2[2] * (-2.0 * y)
    grad[:, 6, 2] = SH_C2[2] * (4.0 * z)
    grad[:, 7, 0] = SH_C2[3] * z
    grad[:, 7, 2] = SH_C2[3] * x
    grad[:, 8, 0] = SH_C2[4] * (2.0 * x)
    grad[:, 8, 1] = SH_C2[4] * (-2.0 * y)
    if d_color == 9:
        return grad
    grad[:, 9, 0] = SH_C3[0] * 6.0 * x * y
    grad[:, 9, 1] = SH_C3[0] * (3.0 * xx - 3.0 * yy)
    grad[:, 10, 0] = SH_C3[1] * y * z
    grad[:, 10, 1] = SH_C3[1] * x * z
    grad[:, 10, 2] = SH_C3[1] * x * y
    grad[:, 11, 0] = SH_C3[2] * (-2.0 * x * y)
    grad[:, 11, 1] = SH_C3[2] * (4.0 * zz - xx - 3.0 * yy)
    grad[:, 11, 2] = SH_C3[2] * (8.0 * y * z)
    grad[:, 12, 0] = SH_C3[3] * (-6.0 * x * z)
    grad[:, 12, 1] = SH_C3[3] * (-6.0 * y * z)
    grad[:, 12, 2] = SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)
    grad[:, 13, 0] = SH_C3[4] * (4.0 * zz - 3.0 * xx - yy)
    grad[:, 13, 1] = SH_C3[4] * (-2.0 * x * y)
    grad[:, 13, 2] = SH_C3[4] * (8.0 * x * z)
    grad[:, 14, 0] = SH_C3[5] * (2.0 * x * z)
    grad[:, 14, 1] = SH_C3[5] * (-2.0 * y * z)
    grad[:, 14, 2] = SH_C3[5] * (xx - yy)
    grad[:, 15, 0] = SH_C3[6] * (3.0 * xx - 3.0 * yy)
    grad[:, 15, 1] = SH_C3[6] * (-6.0 * x * y)
    return grad


def sh_to_color(sh: np.ndarray, dirs: np.ndarray):
    """Evaluate colors for (n, 3, d) coefficients along (n, 3) unit directions.

    Returns (colors, raw) where colors = max(0, raw) and raw = SH + 0.5;
    raw is kept so the backward pass can gate the clamp.
    """
    basis = sh_basis(sh.shape[2], dirs)
    raw = np.einsum("ncd,nd->nc", sh, basis) + 0.5
    return np.maximum(raw, 0.0), raw


def sh_color_backward(sh: np.ndarray, dirs: np.ndarray, raw: np.ndarray,
                      dL_dcolor: np.ndarray):
    """Gradients of the clamped color w.r.t. coefficients and direction.

    Returns (dL_dsh (n,3,d), dL_ddirs (n,3)); the direction gradient is zero
    for DC-only coefficients.
    """
    d_color = sh.shape[2]
    g = np.where(raw < 0.0, 0.0, dL_dcolor)
    basis = sh_basis(d_color, dirs)
    dL_dsh = np.einsum("nc,nd->ncd", g, basis)
    if d_color == 1:
        return dL_dsh, np.zeros_like(dirs)
    dbasis = sh_basis_grad(d_color, dirs)
    dL_ddirs = np.einsum("nc,ncd,ndk->nk", g, sh, dbasis)
    return dL_dsh, dL_ddirs
