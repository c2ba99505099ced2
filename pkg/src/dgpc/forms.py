"""Bilinear and trilinear DG forms, their sparse matrices, and lift operators.

Matrix convention: ``A[test, trial]``, so ``theta @ A @ v`` evaluates the form
with trial argument ``v`` and test argument ``theta``. Velocity operators that
act the same way on each component are assembled as block diagonals of a
scalar matrix (see the DoF layout in :class:`dgpc.dgcore.FunctionSpace`).

Every form also has a matrix-free evaluator working on quadrature samples of
fields; these are independent of the assembly path and are what the identity
checks compare against.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .dgcore import DiscreteField, FunctionSpace, Samples
from .io import atomic_write_text

DIM = 2


@dataclass
class PenaltyConfig:
    sigma: float
    sigma_tilde: float
    delta: float = 1.0 / (8 * DIM)
    delta_warning: bool = field(init=False, default=False)

    def __post_init__(self):
        for name in ("sigma", "sigma_tilde", "delta"):
            val = getattr(self, name)
            if not np.isfinite(val) or val <= 0:
                raise ValueError(f"{name} must be positive, got {val!r}")
        if self.delta > 1.0 / (4 * DIM):
            self.delta_warning = True
            warnings.warn(f"delta={self.delta} exceeds 1/(4d)={1 / (4 * DIM)}; "
                          "the stability hypothesis delta <= 1/(4d) is violated",
                          stacklevel=2)

    @classmethod
    def default(cls, k: int, **overrides) -> "PenaltyConfig":
        s = 10.0 * (k + 1) ** 2
        kw = dict(sigma=s, sigma_tilde=s, delta=1.0 / (8 * DIM))
        kw.update({key: val for key, val in overrides.items() if val is not None})
        return cls(**kw)


@dataclass
class SparseOperator:
    matrix: sp.csr_matrix
    row_space: FunctionSpace
    col_space: FunctionSpace
    symmetric: bool = False

    def __matmul__(self, other):
        if isinstance(other, DiscreteField):
            if other.space is not self.col_space:
                raise ValueError("field does not live on the operator's column space")
            return DiscreteField(self.row_space, self.matrix @ other.coefficients)
        return self.matrix @ other

    def form(self, test: DiscreteField, trial: DiscreteField) -> float:
        return float(test.coefficients @ (self.matrix @ trial.coefficients))

    def dump_coo(self, path: str | Path) -> None:
        """Write ``row col value`` lines, one per stored entry."""
        coo = self.matrix.tocoo()
        lines = [f"{i} {j} {float(v)!r}" for i, j, v in zip(coo.row, coo.col, coo.data)]
        atomic_write_text(path, "\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# assembly helpers

def _coo(nrow_b: int, ncol_b: int, row_els, col_els, blocks):
    r = row_els[:, None, None] * nrow_b + np.arange(nrow_b)[None, :, None]
    c = col_els[:, None, None] * ncol_b + np.arange(ncol_b)[None, None, :]
    r, c = np.broadcast_arrays(r, c)
    return r.ravel(), c.ravel(), np.asarray(blocks).ravel()


class _Builder:
    def __init__(self, nrows: int, ncols: int):
        self.shape = (nrows, ncols)
        self.rows, self.cols, self.vals = [], [], []

    def add(self, nrow_b, ncol_b, row_els, col_els, blocks):
        r, c, v = _coo(nrow_b, ncol_b, row_els, col_els, blocks)
        self.rows.append(r)
        self.cols.append(c)
        self.vals.append(v)

    def tocsr(self) -> sp.csr_matrix:
        if not self.rows:
            return sp.csr_matrix(self.shape)
        return sp.csr_matrix((np.concatenate(self.vals),
                              (np.concatenate(self.rows), np.concatenate(self.cols))),
                             shape=self.shape)


def _face_sides(mesh, interior_only: bool = False):
    """Yield (faces, row_side, col_side, sign_row, sign_col, avg) tuples
    covering every (test side, trial side) pairing."""
    fi = mesh.interior_faces
    for rs in (0, 1):
        for cs in (0, 1):
            yield fi, rs, cs, (1.0 if rs == 0 else -1.0), (1.0 if cs == 0 else -1.0), 0.5
    if not interior_only:
        yield mesh.boundary_faces, 0, 0, 1.0, 1.0, 1.0


def _sipg_scalar(space: FunctionSpace, penalty: float, boundary: bool,
                 consistency: bool = True) -> sp.csr_matrix:
    """Scalar SIPG matrix; with ``consistency=False`` only the gradient and
    penalty parts remain (the squared energy norm)."""
    mesh = space.mesh
    nb = space.nb
    b = _Builder(space.block_size, space.block_size)
    els = np.arange(mesh.n_elements)
    K = np.einsum("eqid,eqjd,eq->eji", space.vol_dphi, space.vol_dphi, space.vol_w)
    b.add(nb, nb, els, els, K)
    for faces, rs, cs, sr, sc, avg in _face_sides(mesh, interior_only=not boundary):
        if len(faces) == 0:
            continue
        n = mesh.normals[faces]
        w = space.face_w[faces]
        pen = (penalty / mesh.h_e[faces])[:, None] * w
        phr = space.face_phi[rs, faces]
        phc = space.face_phi[cs, faces]
        blk = sr * sc * np.einsum("fq,fqj,fqi->fji", pen, phr, phc)
        if consistency:
            dnr = np.einsum("fqid,fd->fqi", space.face_dphi[rs, faces], n)
            dnc = np.einsum("fqid,fd->fqi", space.face_dphi[cs, faces], n)
            blk -= avg * sr * np.einsum("fq,fqi,fqj->fji", w, dnc, phr)
            blk -= avg * sc * np.einsum("fq,fqj,fqi->fji", w, dnr, phc)
        b.add(nb, nb, mesh.face_elements[faces, rs], mesh.face_elements[faces, cs], blk)
    return b.tocsr()


def _vector(scalar: sp.spmatrix, components: int) -> sp.csr_matrix:
    return sp.block_diag([scalar] * components, format="csr")


def _check_pair(space_X: FunctionSpace, space_M: FunctionSpace) -> None:
    if not space_X.compatible(space_M):
        raise ValueError("velocity and pressure spaces must share mesh and quadrature")
    if space_X.components != 2 or space_M.components != 1:
        raise ValueError("expected a vector velocity space and a scalar pressure space")


# --------------------------------------------------------------------------
# assembled operators

def assemble_mass(space: FunctionSpace) -> SparseOperator:
    els = np.arange(space.mesh.n_elements)
    b = _Builder(space.block_size, space.block_size)
    b.add(space.nb, space.nb, els, els,
          np.einsum("eqj,eqi,eq->eji", space.vol_phi, space.vol_phi, space.vol_w))
    return SparseOperator(_vector(b.tocsr(), space.components), space, space, True)


def assemble_aD(space_X: FunctionSpace, sigma: float) -> SparseOperator:
    if space_X.components != 2:
        raise ValueError("a_D acts on the vector velocity space")
    return SparseOperator(_vector(_sipg_scalar(space_X, sigma, boundary=True), 2),
                          space_X, space_X, True)


def assemble_aellip(space_M: FunctionSpace, sigma_tilde: float) -> SparseOperator:
    if space_M.components != 1:
        raise ValueError("a_ellip acts on the scalar pressure space")
    return SparseOperator(_sipg_scalar(space_M, sigma_tilde, boundary=False),
                          space_M, space_M, True)


def assemble_energy_vector(space_X: FunctionSpace, sigma: float) -> SparseOperator:
    """Gram matrix of the vector DG energy norm."""
    A = _sipg_scalar(space_X, sigma, boundary=True, consistency=False)
    return SparseOperator(_vector(A, 2), space_X, space_X, True)


def assemble_energy_scalar(space_M: FunctionSpace, sigma_tilde: float) -> SparseOperator:
    """Gram matrix of the scalar DG seminorm (interior faces only)."""
    A = _sipg_scalar(space_M, sigma_tilde, boundary=False, consistency=False)
    return SparseOperator(A, space_M, space_M, True)


def _divergence_parts(space_X: FunctionSpace, space_M: FunctionSpace):
    """Volume divergence matrix D and lift matrix R, both (nM, nX)."""
    _check_pair(space_X, space_M)
    mesh = space_X.mesh
    nbx, nbm = space_X.nb, space_M.nb
    els = np.arange(mesh.n_elements)
    D_blocks, R_blocks = [], []
    for c in range(2):
        bd = _Builder(space_M.block_size, space_X.block_size)
        bd.add(nbm, nbx, els, els,
               np.einsum("eqi,eqj,eq->eji", space_X.vol_dphi[..., c], space_M.vol_phi, space_X.vol_w))
        br = _Builder(space_M.block_size, space_X.block_size)
        for faces, rs, cs, sr, sc, avg in _face_sides(mesh):
            if len(faces) == 0:
                continue
            wn = space_X.face_w[faces] * mesh.normals[faces, c][:, None]
            blk = avg * sc * np.einsum("fq,fqj,fqi->fji", wn, space_M.face_phi[rs, faces],
                                       space_X.face_phi[cs, faces])
            br.add(nbm, nbx, mesh.face_elements[faces, rs], mesh.face_elements[faces, cs], blk)
        D_blocks.append(bd.tocsr())
        R_blocks.append(br.tocsr())
    return sp.hstack(D_blocks, format="csr"), sp.hstack(R_blocks, format="csr")


def assemble_b(space_X: FunctionSpace, space_M: FunctionSpace) -> SparseOperator:
    """``q @ B @ theta = b(theta, q)``."""
    D, R = _divergence_parts(space_X, space_M)
    return SparseOperator((D - R).tocsr(), space_M, space_X, False)


def assemble_lift_R(space_X: FunctionSpace, space_M: FunctionSpace) -> SparseOperator:
    return SparseOperator(_divergence_parts(space_X, space_M)[1], space_M, space_X, False)


def assemble_lift_G(space_X: FunctionSpace, space_M: FunctionSpace) -> SparseOperator:
    """``G[i, j] = sum over interior faces of {theta_i} . n [q_j]``."""
    _check_pair(space_X, space_M)
    mesh = space_X.mesh
    blocks = []
    for c in range(2):
        b = _Builder(space_X.block_size, space_M.block_size)
        for faces, rs, cs, sr, sc, avg in _face_sides(mesh, interior_only=True):
            wn = space_X.face_w[faces] * mesh.normals[faces, c][:, None]
            blk = avg * sc * np.einsum("fq,fqj,fqi->fji", wn, space_X.face_phi[rs, faces],
                                       space_M.face_phi[cs, faces])
            b.add(space_X.nb, space_M.nb, mesh.face_elements[faces, rs],
                  mesh.face_elements[faces, cs], blk)
        blocks.append(b.tocsr())
    return SparseOperator(sp.vstack(blocks, format="csr"), space_X, space_M, False)


def convection_scalar(w: DiscreteField) -> sp.csr_matrix:
    """Scalar matrix of v -> a_C(w; w, v, .), applied per velocity component."""
    space = w.space
    mesh = space.mesh
    nb = space.nb
    s = w.samples()
    els = np.arange(mesh.n_elements)
    bld = _Builder(space.block_size, space.block_size)

    wv = s.vol  # (2, ne, nq)
    div = s.grad[0, ..., 0] + s.grad[1, ..., 1]
    adv = np.einsum("ceq,eqic->eqi", wv, space.vol_dphi)
    vol = np.einsum("eq,eqi,eqj->eji", space.vol_w, adv, space.vol_phi)
    vol += 0.5 * np.einsum("eq,eqi,eqj->eji", space.vol_w * div, space.vol_phi, space.vol_phi)
    bld.add(nb, nb, els, els, vol)

    n = mesh.normals
    jn = np.einsum("cfq,fc->fq", s.jump(), n)
    beta = np.einsum("cfq,fc->fq", s.average(), n)
    inflow1 = np.maximum(-beta, 0.0)  # |beta| where E1 sees inflow
    inflow2 = np.maximum(beta, 0.0)

    fi = mesh.interior_faces
    weights = {
        (0, 0): -0.25 * jn[fi] + inflow1[fi],
        (1, 1): -0.25 * jn[fi] + inflow2[fi],
        (0, 1): -inflow1[fi],
        (1, 0): -inflow2[fi],
    }
    for (rs, cs), wt in weights.items():
        blk = np.einsum("fq,fqj,fqi->fji", wt * space.face_w[fi],
                        space.face_phi[rs, fi], space.face_phi[cs, fi])
        bld.add(nb, nb, mesh.face_elements[fi, rs], mesh.face_elements[fi, cs], blk)
    fb = mesh.boundary_faces
    wt = -0.5 * jn[fb] + inflow1[fb]
    blk = np.einsum("fq,fqj,fqi->fji", wt * space.face_w[fb],
                    space.face_phi[0, fb], space.face_phi[0, fb])
    bld.add(nb, nb, mesh.face_elements[fb, 0], mesh.face_elements[fb, 0], blk)
    return bld.tocsr()


def assemble_convection(w: DiscreteField) -> SparseOperator:
    if w.space.components != 2:
        raise ValueError("the advecting field must be a velocity field")
    return SparseOperator(_vector(convection_scalar(w), 2), w.space, w.space, False)


class DGOperators:
    """Lazily assembled, immutable operators for a velocity/pressure pair."""

    def __init__(self, space_X: FunctionSpace, space_M: FunctionSpace,
                 penalties: PenaltyConfig):
        _check_pair(space_X, space_M)
        self.X = space_X
        self.M = space_M
        self.penalties = penalties

    @cached_property
    def aD_scalar(self) -> sp.csr_matrix:
        return _sipg_scalar(self.X, self.penalties.sigma, boundary=True)

    @cached_property
    def aD(self) -> SparseOperator:
        return SparseOperator(_vector(self.aD_scalar, 2), self.X, self.X, True)

    @cached_property
    def aellip(self) -> SparseOperator:
        return assemble_aellip(self.M, self.penalties.sigma_tilde)

    @cached_property
    def _div_parts(self):
        return _divergence_parts(self.X, self.M)

    @cached_property
    def b(self) -> SparseOperator:
        D, R = self._div_parts
        return SparseOperator((D - R).tocsr(), self.M, self.X, False)

    @cached_property
    def lift_R(self) -> SparseOperator:
        return SparseOperator(self._div_parts[1], self.M, self.X, False)

    @cached_property
    def div_volume(self) -> SparseOperator:
        return SparseOperator(self._div_parts[0], self.M, self.X, False)

    @cached_property
    def lift_G(self) -> SparseOperator:
        return assemble_lift_G(self.X, self.M)

    @cached_property
    def energy_X(self) -> SparseOperator:
        return assemble_energy_vector(self.X, self.penalties.sigma)

    @cached_property
    def energy_M(self) -> SparseOperator:
        return assemble_energy_scalar(self.M, self.penalties.sigma_tilde)

    @cached_property
    def mean_functional(self) -> np.ndarray:
        """Coefficients m with m @ q = integral of q."""
        s = self.M
        m = np.einsum("eqi,eq->ei", s.vol_phi, s.vol_w)
        return m.reshape(-1)

    def lift_Rh(self, theta: DiscreteField) -> DiscreteField:
        return self.lift_R @ theta

    def lift_Gh(self, q: DiscreteField) -> DiscreteField:
        return self.lift_G @ q

    def divergence_functional(self, v: DiscreteField) -> DiscreteField:
        """M_h field whose L2 product with any q equals b(v, q)."""
        return self.b @ v


def lift_Rh(theta: DiscreteField, space_M: FunctionSpace) -> DiscreteField:
    return assemble_lift_R(theta.space, space_M) @ theta


def lift_Gh(q: DiscreteField, space_X: FunctionSpace) -> DiscreteField:
    return assemble_lift_G(space_X, q.space) @ q


def divergence_functional(v: DiscreteField, space_M: FunctionSpace) -> DiscreteField:
    return assemble_b(v.space, space_M) @ v


# --------------------------------------------------------------------------
# matrix-free form evaluators

def _samples(*fields) -> list[Samples]:
    spaces = {id(f.space.mesh) for f in fields}
    if len(spaces) != 1:
        raise ValueError("fields live on different meshes")
    ref = fields[0].space
    for f in fields[1:]:
        if f.space.quad.degree != ref.quad.degree:
            raise ValueError("fields use different quadrature rules")
    return [f if isinstance(f, Samples) else f.samples() for f in fields]


def _dot_sides(a: Samples, b: Samples) -> np.ndarray:
    """Per-side pointwise dot products on faces, (2, nf, nq)."""
    return np.einsum("scfq,scfq->sfq", a.face, b.face)


def _avg_sides(x: np.ndarray, mesh) -> np.ndarray:
    out = 0.5 * (x[0] + x[1])
    out[mesh.boundary_faces] = x[0][mesh.boundary_faces]
    return out


def _normal(arr: np.ndarray, mesh) -> np.ndarray:
    return np.einsum("cfq,fc->fq", arr, mesh.normals)


def _C_volume(W: Samples, V: Samples, T: Samples) -> float:
    wgt = W.space.vol_w
    adv = np.einsum("deq,ceqd,ceq,eq->", W.vol, V.grad, T.vol, wgt)
    div = W.grad[0, ..., 0] + W.grad[1, ..., 1]
    return float(adv + 0.5 * np.einsum("eq,ceq,ceq,eq->", div, V.vol, T.vol, wgt))


def _C_face(W: Samples, V: Samples, T: Samples) -> float:
    mesh = W.space.mesh
    jn = _normal(W.jump(), mesh)
    vt = _avg_sides(_dot_sides(V, T), mesh)
    return float(-0.5 * np.sum(W.space.face_w * jn * vt))


def eval_C(w, v, theta) -> float:
    W, V, T = _samples(w, v, theta)
    return _C_volume(W, V, T) + _C_face(W, V, T)


def _upwind(Z: Samples, W: Samples, V: Samples, T: Samples, signed: bool) -> float:
    """Sum over elements of the inflow-boundary integral of
    weight * (v_int - v_ext) . theta_int, where weight is |{w}.n_E| or {w}.n_E."""
    mesh = Z.space.mesh
    bz = _normal(Z.average(), mesh)
    bw = _normal(W.average(), mesh)
    fw = Z.space.face_w
    fi, fb = mesh.interior_faces, mesh.boundary_faces
    dv = V.face[0] - V.face[1]  # v1 - v2 across interior faces
    # E1: n_E = n_e inflow where bz < 0; E2: n_E = -n_e inflow where bz > 0
    g1 = np.where(bz < 0, bw if signed else np.abs(bw), 0.0)
    g2 = np.where(bz > 0, -bw if signed else np.abs(bw), 0.0)
    s1 = np.einsum("fq,cfq,cfq->", g1[fi] * fw[fi], dv[:, fi], T.face[0][:, fi])
    s2 = np.einsum("fq,cfq,cfq->", g2[fi] * fw[fi], -dv[:, fi], T.face[1][:, fi])
    # boundary: exterior trace is zero
    gb = np.where(bz[fb] < 0, bw[fb] if signed else np.abs(bw[fb]), 0.0)
    s3 = np.einsum("fq,cfq,cfq->", gb * fw[fb], V.face[0][:, fb], T.face[0][:, fb])
    return float(s1 + s2 + s3)


def eval_U(z, w, v, theta) -> float:
    Z, W, V, T = _samples(z, w, v, theta)
    return _upwind(Z, W, V, T, signed=True)


def eval_aC(z, w, v, theta) -> float:
    Z, W, V, T = _samples(z, w, v, theta)
    return _C_volume(W, V, T) + _C_face(W, V, T) + _upwind(Z, W, V, T, signed=False)


def eval_abarC(z, w, theta, v) -> float:
    """The integration-by-parts companion of a_C, argument order (z; w, theta, v)."""
    Z, W, T, V = _samples(z, w, theta, v)
    mesh = Z.space.mesh
    fw = Z.space.face_w
    fi, fb = mesh.interior_faces, mesh.boundary_faces
    total = _C_volume(W, T, V) + _C_face(W, T, V)
    bz = _normal(Z.average(), mesh)
    aw = np.abs(_normal(W.average(), mesh))
    dt = T.face[0] - T.face[1]
    g1 = np.where(bz < 0, aw, 0.0)[fi] * fw[fi]
    g2 = np.where(bz > 0, aw, 0.0)[fi] * fw[fi]
    total += np.einsum("fq,cfq,cfq->", g1, dt[:, fi], V.face[1][:, fi])
    total += np.einsum("fq,cfq,cfq->", g2, -dt[:, fi], V.face[0][:, fi])
    wn = _normal(W.face[0], mesh)[fb]
    tv = np.einsum("cfq,cfq->fq", T.face[0][:, fb], V.face[0][:, fb])
    total -= 0.5 * np.sum((np.abs(wn) - wn) * tv * fw[fb])
    return float(total)


def eval_aD(v, theta, sigma: float) -> float:
    V, T = _samples(v, theta)
    space = V.space
    mesh = space.mesh
    fw = space.face_w
    total = np.einsum("ceqd,ceqd,eq->", V.grad, T.grad, space.vol_w)
    jv, jt = V.jump(), T.jump()
    gv = np.einsum("cfqd,fd->cfq", V.average_grad(), mesh.normals)
    gt = np.einsum("cfqd,fd->cfq", T.average_grad(), mesh.normals)
    total -= np.einsum("cfq,cfq,fq->", gv, jt, fw)
    total -= np.einsum("cfq,cfq,fq->", gt, jv, fw)
    total += np.einsum("cfq,cfq,fq->", jv, jt, fw * (sigma / mesh.h_e)[:, None])
    return float(total)


def eval_aellip(phi, q, sigma_tilde: float) -> float:
    P, Q = _samples(phi, q)
    space = P.space
    mesh = space.mesh
    fi = mesh.interior_faces
    fw = space.face_w[fi]
    total = np.einsum("ceqd,ceqd,eq->", P.grad, Q.grad, space.vol_w)
    jp, jq = P.jump()[:, fi], Q.jump()[:, fi]
    gp = np.einsum("cfqd,fd->cfq", P.average_grad()[:, fi], mesh.normals[fi])
    gq = np.einsum("cfqd,fd->cfq", Q.average_grad()[:, fi], mesh.normals[fi])
    total -= np.einsum("cfq,cfq,fq->", gp, jq, fw)
    total -= np.einsum("cfq,cfq,fq->", gq, jp, fw)
    total += np.einsum("cfq,cfq,fq->", jp, jq, fw * (sigma_tilde / mesh.h_e[fi])[:, None])
    return float(total)


def eval_b_primal(theta, q) -> float:
    """sum_E (div theta, q)_E - sum over all faces of {q} [theta] . n_e."""
    T, Q = _samples(theta, q)
    mesh = T.space.mesh
    div = T.grad[0, ..., 0] + T.grad[1, ..., 1]
    vol = np.einsum("eq,eq,eq->", div, Q.vol[0], T.space.vol_w)
    face = np.sum(Q.average()[0] * _normal(T.jump(), mesh) * T.space.face_w)
    return float(vol - face)


def eval_b_alt(theta, q) -> float:
    """-sum_E (theta, grad q)_E + sum over interior faces of {theta} . n_e [q]."""
    T, Q = _samples(theta, q)
    mesh = T.space.mesh
    fi = mesh.interior_faces
    vol = np.einsum("ceq,eqc,eq->", T.vol, Q.grad[0], T.space.vol_w)
    face = np.sum((_normal(T.average(), mesh) * Q.jump()[0] * T.space.face_w)[fi])
    return float(-vol + face)


def eval_lift_R_rhs(theta, q) -> float:
    """sum over all faces of {q} [theta] . n_e."""
    T, Q = _samples(theta, q)
    return float(np.sum(Q.average()[0] * _normal(T.jump(), T.space.mesh) * T.space.face_w))


def eval_lift_G_rhs(q, theta) -> float:
    """sum over interior faces of {theta} . n_e [q]."""
    Q, T = _samples(q, theta)
    mesh = T.space.mesh
    fi = mesh.interior_faces
    return float(np.sum((_normal(T.average(), mesh) * Q.jump()[0] * T.space.face_w)[fi]))


def l2_inner(a, b) -> float:
    A, B = _samples(a, b)
    return float(np.einsum("ceq,ceq,eq->", A.vol, B.vol, A.space.vol_w))


def eval_div_inner(theta, q) -> float:
    """(grad_h . theta, q)."""
    T, Q = _samples(theta, q)
    div = T.grad[0, ..., 0] + T.grad[1, ..., 1]
    return float(np.einsum("eq,eq,eq->", div, Q.vol[0], T.space.vol_w))
