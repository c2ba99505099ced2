"""Broken polynomial spaces on triangles, quadrature, L2 projection and DG norms.

Field values are sampled at a shared set of volume and face quadrature
points; every form and norm in the package is a contraction of those samples.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import mpmath
import numpy as np

from .mesh import Mesh

AnalyticFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

_BARY_TOL = 1e-12


# --------------------------------------------------------------------------
# quadrature

@dataclass(frozen=True)
class QuadratureRule:
    """Collapsed Gauss rule on the reference triangle plus Gauss-Legendre on [0, 1].

    The reference triangle is {(xi, eta): xi, eta >= 0, xi + eta <= 1}.
    """

    vol_points: np.ndarray
    vol_weights: np.ndarray
    face_points: np.ndarray
    face_weights: np.ndarray
    degree: int

    @staticmethod
    @lru_cache(maxsize=None)
    def for_degree(degree: int) -> "QuadratureRule":
        if degree < 0:
            raise ValueError("quadrature degree must be non-negative")
        # Duffy map adds one to the polynomial degree in the collapsed direction
        m = (degree + 3) // 2
        s, ws = _gauss_01(m)
        t, wt = _gauss_01(m)
        S, T = np.meshgrid(s, t, indexing="ij")
        W = np.outer(ws, wt) * (1.0 - S)
        pts = np.column_stack([S.ravel(), ((1.0 - S) * T).ravel()])
        fp, fw = _gauss_01((degree + 2) // 2)
        for a in (pts, W, fp, fw):
            a.setflags(write=False)
        return QuadratureRule(pts, W.ravel(), fp, fw, degree)


def _gauss_01(m: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(m)
    return 0.5 * (x + 1.0), 0.5 * w


# --------------------------------------------------------------------------
# reference basis

def _exponents(degree: int) -> list[tuple[int, int]]:
    return [(d - b, b) for d in range(degree + 1) for b in range(d + 1)]


@lru_cache(maxsize=None)
def _orthonormal_coefficients(degree: int) -> np.ndarray:
    """Rows give the orthonormal basis in terms of graded monomials.

    Cholesky of the exact monomial Gram matrix, done in extended precision,
    so the basis is hierarchical (lower triangular in the monomials).
    """
    exps = _exponents(degree)
    with mpmath.workdps(50):
        n = len(exps)
        G = mpmath.matrix(n, n)
        for i, (a1, b1) in enumerate(exps):
            for j, (a2, b2) in enumerate(exps):
                a, b = a1 + a2, b1 + b2
                G[i, j] = mpmath.factorial(a) * mpmath.factorial(b) / mpmath.factorial(a + b + 2)
        L = mpmath.cholesky(G)
        Linv = L ** -1
        C = np.array([[float(Linv[i, j]) for j in range(n)] for i in range(n)])
    C.setflags(write=False)
    return C


def reference_basis(degree: int, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal basis on the reference triangle.

    Returns values ``(npts, nb)`` and gradients ``(npts, nb, 2)`` with
    respect to the reference coordinates.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    xi, eta = points[:, 0], points[:, 1]
    exps = _exponents(degree)
    mono = np.empty((len(points), len(exps)))
    dmono = np.zeros((len(points), len(exps), 2))
    for j, (a, b) in enumerate(exps):
        mono[:, j] = xi ** a * eta ** b
        if a:
            dmono[:, j, 0] = a * xi ** (a - 1) * eta ** b
        if b:
            dmono[:, j, 1] = b * xi ** a * eta ** (b - 1)
    C = _orthonormal_coefficients(degree)
    return mono @ C.T, np.einsum("pjd,ij->pid", dmono, C)


def n_basis(degree: int) -> int:
    return (degree + 1) * (degree + 2) // 2


# --------------------------------------------------------------------------
# spaces

class FunctionSpace:
    """Broken P_degree space with ``components`` copies on every element.

    Global DoF index of (component c, element e, local function i) is
    ``c * n_elements * nb + e * nb + i``, so vector operators that act
    identically on each component are block diagonal.
    """

    def __init__(self, mesh: Mesh, degree: int, components: int = 1,
                 quadrature: QuadratureRule | None = None):
        if degree < 0:
            raise ValueError("degree must be >= 0")
        if components not in (1, 2):
            raise ValueError("components must be 1 or 2")
        self.mesh = mesh
        self.degree = degree
        self.components = components
        self.quad = quadrature or QuadratureRule.for_degree(3 * max(degree, 1) + 2)
        self.nb = n_basis(degree)
        self.dofs_per_element = components * self.nb
        self.block_size = mesh.n_elements * self.nb
        self.n_dofs = components * self.block_size
        self.offsets = np.arange(mesh.n_elements) * self.nb
        self._tabulate()

    def __repr__(self) -> str:
        return (f"FunctionSpace(degree={self.degree}, components={self.components}, "
                f"n_elements={self.mesh.n_elements})")

    def element_dofs(self, element: int) -> np.ndarray:
        local = element * self.nb + np.arange(self.nb)
        return np.concatenate([c * self.block_size + local for c in range(self.components)])

    def compatible(self, other: "FunctionSpace") -> bool:
        return self.mesh is other.mesh and self.quad.degree == other.quad.degree

    def _tabulate(self) -> None:
        mesh = self.mesh
        v = mesh.vertices[mesh.elements]
        self.origin = v[:, 0]
        self.jac = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)  # columns
        self.det = np.linalg.det(self.jac)
        self.jac_inv = np.linalg.inv(self.jac)
        scale = 1.0 / np.sqrt(self.det)

        q = self.quad
        phi, dphi = reference_basis(self.degree, q.vol_points)
        self.vol_x = self.origin[:, None, :] + np.einsum("eab,qb->eqa", self.jac, q.vol_points)
        self.vol_w = q.vol_weights[None, :] * self.det[:, None]
        self.vol_phi = phi[None, :, :] * scale[:, None, None]
        self.vol_dphi = np.einsum("qia,ead->eqid", dphi, self.jac_inv) * scale[:, None, None, None]

        fv = mesh.vertices[mesh.face_vertices]
        s = q.face_points
        self.face_x = fv[:, None, 0, :] + s[None, :, None] * (fv[:, 1] - fv[:, 0])[:, None, :]
        self.face_w = q.face_weights[None, :] * mesh.h_e[:, None]
        nf, nqf = self.face_x.shape[:2]
        self.face_phi = np.zeros((2, nf, nqf, self.nb))
        self.face_dphi = np.zeros((2, nf, nqf, self.nb, 2))
        for side in (0, 1):
            faces = np.flatnonzero(mesh.face_elements[:, side] >= 0)
            els = mesh.face_elements[faces, side]
            ref = self.to_reference(els[:, None], self.face_x[faces])
            val, grad = reference_basis(self.degree, ref.reshape(-1, 2))
            sc = scale[els][:, None, None]
            self.face_phi[side, faces] = val.reshape(len(faces), nqf, self.nb) * sc
            g = grad.reshape(len(faces), nqf, self.nb, 2)
            self.face_dphi[side, faces] = np.einsum("fqia,fad->fqid", g, self.jac_inv[els]) * sc[..., None]
        for a in (self.vol_x, self.vol_w, self.vol_phi, self.vol_dphi,
                  self.face_x, self.face_w, self.face_phi, self.face_dphi):
            a.setflags(write=False)

    def to_reference(self, elements, x: np.ndarray) -> np.ndarray:
        """Map physical points to reference coordinates of ``elements``
        (broadcast against the leading axes of ``x``)."""
        d = x - self.origin[elements]
        return np.einsum("...ab,...b->...a", self.jac_inv[elements], d)


def make_spaces(mesh: Mesh, k: int) -> tuple[FunctionSpace, FunctionSpace]:
    """Velocity space (vector P_k) and pressure space (P_{k-1}) on a common
    quadrature of exactness ``3k + 2``."""
    if k < 1:
        raise ValueError("velocity degree k must be >= 1")
    quad = QuadratureRule.for_degree(3 * k + 2)
    return (FunctionSpace(mesh, k, 2, quad), FunctionSpace(mesh, k - 1, 1, quad))


def eval_basis(space: FunctionSpace, element: int, point: Sequence[float]):
    """Physical basis values and gradients at one point of ``element``.

    Scalar spaces return ``(nb,)`` and ``(nb, 2)``; vector spaces return
    ``(dofs_per_element, 2)`` and ``(dofs_per_element, 2, 2)`` where the
    last-but-one gradient axis is the component.
    """
    x = np.asarray(point, dtype=float)
    lam = space.mesh.barycentric(element, x)
    if np.any(lam < -_BARY_TOL):
        raise ValueError(f"point {tuple(x)} lies outside element {element}")
    ref = space.to_reference(element, x)
    val, grad = reference_basis(space.degree, ref[None, :])
    sc = 1.0 / np.sqrt(space.det[element])
    val = val[0] * sc
    grad = grad[0] @ space.jac_inv[element] * sc
    if space.components == 1:
        return val, grad
    nb = space.nb
    vals = np.zeros((2 * nb, 2))
    grads = np.zeros((2 * nb, 2, 2))
    for c in range(2):
        vals[c * nb:(c + 1) * nb, c] = val
        grads[c * nb:(c + 1) * nb, c, :] = grad
    return vals, grads


# --------------------------------------------------------------------------
# fields and samples

@dataclass
class Samples:
    """Values and gradients at the space's quadrature points.

    ``vol``: (nc, ne, nq); ``grad``: (nc, ne, nq, 2); ``face``: (2, nc, nf, nqf)
    as traces from E1 (side 0) and E2 (side 1); ``face_grad``: (2, nc, nf, nqf, 2).
    Side-1 entries on boundary faces are unused.
    """

    space: FunctionSpace
    vol: np.ndarray
    grad: np.ndarray
    face: np.ndarray
    face_grad: np.ndarray

    def _combine(self, other: "Samples", op) -> "Samples":
        return Samples(self.space, op(self.vol, other.vol), op(self.grad, other.grad),
                       op(self.face, other.face), op(self.face_grad, other.face_grad))

    def __sub__(self, other: "Samples") -> "Samples":
        return self._combine(other, np.subtract)

    def __add__(self, other: "Samples") -> "Samples":
        return self._combine(other, np.add)

    def jump(self) -> np.ndarray:
        """[.] on every face; the one-sided trace on boundary faces."""
        j = self.face[0] - self.face[1]
        b = self.space.mesh.boundary_faces
        j[:, b] = self.face[0][:, b]
        return j

    def average(self) -> np.ndarray:
        a = 0.5 * (self.face[0] + self.face[1])
        b = self.space.mesh.boundary_faces
        a[:, b] = self.face[0][:, b]
        return a

    def average_grad(self) -> np.ndarray:
        a = 0.5 * (self.face_grad[0] + self.face_grad[1])
        b = self.space.mesh.boundary_faces
        a[:, b] = self.face_grad[0][:, b]
        return a


class DiscreteField:
    """Coefficient vector over a :class:`FunctionSpace`."""

    def __init__(self, space: FunctionSpace, coefficients=None):
        self.space = space
        if coefficients is None:
            coefficients = np.zeros(space.n_dofs)
        coefficients = np.asarray(coefficients, dtype=float)
        if coefficients.shape != (space.n_dofs,):
            raise ValueError(f"expected {space.n_dofs} coefficients, got {coefficients.shape}")
        self.coefficients = coefficients

    @classmethod
    def random(cls, space: FunctionSpace, rng: np.random.Generator) -> "DiscreteField":
        return cls(space, rng.standard_normal(space.n_dofs))

    @property
    def blocks(self) -> np.ndarray:
        s = self.space
        return self.coefficients.reshape(s.components, s.mesh.n_elements, s.nb)

    def copy(self) -> "DiscreteField":
        return DiscreteField(self.space, self.coefficients.copy())

    def _check(self, other: "DiscreteField") -> None:
        if other.space is not self.space:
            raise ValueError("fields live on different spaces")

    def __add__(self, other: "DiscreteField") -> "DiscreteField":
        self._check(other)
        return DiscreteField(self.space, self.coefficients + other.coefficients)

    def __sub__(self, other: "DiscreteField") -> "DiscreteField":
        self._check(other)
        return DiscreteField(self.space, self.coefficients - other.coefficients)

    def __mul__(self, alpha: float) -> "DiscreteField":
        return DiscreteField(self.space, alpha * self.coefficients)

    __rmul__ = __mul__

    def __neg__(self) -> "DiscreteField":
        return DiscreteField(self.space, -self.coefficients)

    def samples(self) -> Samples:
        s = self.space
        c = self.blocks
        return Samples(
            s,
            np.einsum("eqi,cei->ceq", s.vol_phi, c),
            np.einsum("eqid,cei->ceqd", s.vol_dphi, c),
            np.stack([_face_contract(s.face_phi[side], c, s.mesh.face_elements[:, side])
                      for side in (0, 1)]),
            np.stack([_face_contract(s.face_dphi[side], c, s.mesh.face_elements[:, side])
                      for side in (0, 1)]),
        )

    def evaluate(self, element: int, points) -> np.ndarray:
        """Values on ``element`` at physical ``points`` (npts, 2): shape
        ``(npts,)`` for scalar fields and ``(npts, 2)`` for vector fields."""
        s = self.space
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        ref = s.to_reference(element, pts)
        val, _ = reference_basis(s.degree, ref)
        val = val / np.sqrt(s.det[element])
        out = val @ self.blocks[:, element, :].T  # (npts, nc)
        return out[:, 0] if s.components == 1 else out

    def integral(self) -> np.ndarray:
        """Integral over the domain of each component."""
        smp = self.samples()
        return np.einsum("ceq,eq->c", smp.vol, self.space.vol_w)


def _face_contract(tab: np.ndarray, c: np.ndarray, els: np.ndarray) -> np.ndarray:
    """Contract face basis tables with element coefficients; zero where
    ``els`` is -1."""
    safe = np.where(els >= 0, els, 0)
    cf = c[:, safe, :]  # (nc, nf, nb)
    if tab.ndim == 3:
        out = np.einsum("fqi,cfi->cfq", tab, cf)
    else:
        out = np.einsum("fqid,cfi->cfqd", tab, cf)
    out[:, els < 0] = 0.0
    return out


def _as_components(values, nc: int, shape) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if nc == 1 and arr.shape == tuple(shape):
        arr = arr[None]
    return np.broadcast_to(arr, (nc,) + tuple(shape))


def analytic_samples(space: FunctionSpace, fn: AnalyticFn,
                     grad: Callable | None = None) -> Samples:
    """Samples of a continuous function; traces coincide on both sides.

    ``fn(x, y)`` returns an array of shape ``x.shape`` (scalar) or
    ``(2,) + x.shape`` (vector); ``grad(x, y)`` returns ``(nc, 2) + x.shape``.
    """
    nc = space.components
    vx, vy = space.vol_x[..., 0], space.vol_x[..., 1]
    fx, fy = space.face_x[..., 0], space.face_x[..., 1]
    vol = _as_components(fn(vx, vy), nc, vx.shape)
    face = _as_components(fn(fx, fy), nc, fx.shape)
    if grad is None:
        g = np.zeros((nc,) + vx.shape + (2,))
        fg = np.zeros((nc,) + fx.shape + (2,))
    else:
        g = np.moveaxis(np.asarray(grad(vx, vy), dtype=float).reshape((nc, 2) + vx.shape), 1, -1)
        fg = np.moveaxis(np.asarray(grad(fx, fy), dtype=float).reshape((nc, 2) + fx.shape), 1, -1)
    return Samples(space, np.array(vol), g, np.stack([face, face]), np.stack([fg, fg]))


# --------------------------------------------------------------------------
# projection, norms, errors

def l2_project(space: FunctionSpace, fn: AnalyticFn) -> DiscreteField:
    """Elementwise L2 projection; the basis is orthonormal so the mass
    system is the identity."""
    vx, vy = space.vol_x[..., 0], space.vol_x[..., 1]
    vals = _as_components(fn(vx, vy), space.components, vx.shape)
    coeffs = np.einsum("ceq,eq,eqi->cei", vals, space.vol_w, space.vol_phi)
    return DiscreteField(space, coeffs.reshape(-1))


def _as_samples(obj) -> Samples:
    return obj if isinstance(obj, Samples) else obj.samples()


def dg_norm_parts(field, sigma: float) -> tuple[float, float]:
    """Squared gradient and penalty-jump parts of the vector energy norm."""
    smp = _as_samples(field)
    space = smp.space
    if space.components != 2:
        raise ValueError("dg_norm_vector expects a vector field")
    grad2 = float(np.einsum("ceqd,ceqd,eq->", smp.grad, smp.grad, space.vol_w))
    jump = smp.jump()
    weight = space.face_w * (sigma / space.mesh.h_e)[:, None]
    jump2 = float(np.einsum("cfq,cfq,fq->", jump, jump, weight))
    return grad2, jump2


def dg_norm_vector(field, sigma: float) -> float:
    g, j = dg_norm_parts(field, sigma)
    return float(np.sqrt(g + j))


def dg_seminorm_scalar(field, sigma_tilde: float) -> float:
    """Broken H1 seminorm plus interior-face penalty on jumps."""
    smp = _as_samples(field)
    space = smp.space
    if space.components != 1:
        raise ValueError("dg_seminorm_scalar expects a scalar field")
    grad2 = np.einsum("ceqd,ceqd,eq->", smp.grad, smp.grad, space.vol_w)
    fi = space.mesh.interior_faces
    jump = smp.jump()[:, fi]
    weight = space.face_w[fi] * (sigma_tilde / space.mesh.h_e[fi])[:, None]
    jump2 = np.einsum("cfq,cfq,fq->", jump, jump, weight)
    return float(np.sqrt(grad2 + jump2))


def l2_norm(field) -> float:
    smp = _as_samples(field)
    return float(np.sqrt(np.einsum("ceq,ceq,eq->", smp.vol, smp.vol, smp.space.vol_w)))


def l2_error(field, exact_fn: AnalyticFn) -> float:
    smp = _as_samples(field)
    space = smp.space
    vx, vy = space.vol_x[..., 0], space.vol_x[..., 1]
    diff = smp.vol - _as_components(exact_fn(vx, vy), space.components, vx.shape)
    return float(np.sqrt(np.einsum("ceq,ceq,eq->", diff, diff, space.vol_w)))


def space_time_l2(errors: Sequence[float], tau: float, mu: float = 1.0) -> float:
    """sqrt(mu * tau * sum_n e_n^2)."""
    e = np.asarray(errors, dtype=float)
    return float(np.sqrt(mu * tau * np.sum(e * e)))
