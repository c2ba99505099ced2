"""Independent dense-quadrature oracle for the DG operators.

Nothing here reuses the package's tabulation or assembly: the basis is
rebuilt by Cholesky-orthonormalizing the graded monomials with a
Gauss-Jacobi rule, faces are found from the raw element connectivity, and
every entry is a Python loop over elements, faces and quadrature points.

Only the vertex/element arrays, the DoF layout convention
(component, element, local) and the number of face nodes are taken from the
package. The last one matters because the upwind weight |{w}.n| is
evaluated pointwise at face nodes and is not a polynomial.
"""

from __future__ import annotations

import itertools

import numpy as np
import scipy.linalg as sl
from scipy.special import roots_jacobi, roots_legendre


def triangle_rule(m: int):
    """Collapsed Gauss-Jacobi rule on {xi, eta >= 0, xi + eta <= 1}."""
    xj, wj = roots_jacobi(m, 1.0, 0.0)  # weight (1 - x) on [-1, 1]
    xl, wl = roots_legendre(m)
    pts, wts = [], []
    for a, wa in zip(xj, wj):
        s = 0.5 * (1.0 + a)
        for b, wb in zip(xl, wl):
            t = 0.5 * (1.0 + b)
            pts.append((s, (1.0 - s) * t))
            wts.append(0.25 * wa * 0.5 * wb)
    return np.array(pts), np.array(wts)


def exponents(degree: int):
    return [(d - b, b) for d in range(degree + 1) for b in range(d + 1)]


class ReferenceBasis:
    def __init__(self, degree: int):
        self.exps = exponents(degree)
        pts, wts = triangle_rule(degree + 4)
        V = np.array([[x ** a * y ** b for a, b in self.exps] for x, y in pts])
        gram = V.T @ (wts[:, None] * V)
        self.C = np.linalg.inv(np.linalg.cholesky(gram))
        self.nb = len(self.exps)

    def __call__(self, xi: float, eta: float):
        mono = np.array([xi ** a * eta ** b for a, b in self.exps])
        dmono = np.array([[a * xi ** (a - 1) * eta ** b if a else 0.0,
                           b * xi ** a * eta ** (b - 1) if b else 0.0] for a, b in self.exps])
        return self.C @ mono, self.C @ dmono


class DenseOracle:
    def __init__(self, vertices, elements, k: int, sigma: float, sigma_tilde: float,
                 face_nodes: int, volume_nodes: int = 7):
        self.P = np.asarray(vertices, dtype=float)
        self.T = np.asarray(elements)
        self.k = k
        self.sigma, self.sigma_tilde = sigma, sigma_tilde
        self.ne = len(self.T)
        self.basis_u = ReferenceBasis(k)
        self.basis_p = ReferenceBasis(k - 1)
        self.nbu, self.nbp = self.basis_u.nb, self.basis_p.nb
        self.nX = 2 * self.ne * self.nbu
        self.nM = self.ne * self.nbp
        self.vol_pts, self.vol_wts = triangle_rule(volume_nodes)
        g, w = roots_legendre(face_nodes)
        self.face_s, self.face_w = 0.5 * (g + 1.0), 0.5 * w
        self._faces()

    # geometry -------------------------------------------------------------

    def _faces(self):
        edges = {}
        for e, tri in enumerate(self.T):
            for a, b in itertools.combinations(tri, 2):
                edges.setdefault(frozenset((int(a), int(b))), []).append(e)
        self.faces = []
        for key, els in edges.items():
            a, b = sorted(key)
            self.faces.append((a, b, tuple(els)))

    def jac(self, e):
        v = self.P[self.T[e]]
        J = np.column_stack([v[1] - v[0], v[2] - v[0]])
        return v[0], J, abs(np.linalg.det(J))

    def outward(self, e, a, b):
        pa, pb = self.P[a], self.P[b]
        t = pb - pa
        n = np.array([t[1], -t[0]]) / np.hypot(*t)
        centroid = self.P[self.T[e]].mean(axis=0)
        return n if n @ (pa - centroid) > 0 else -n

    # basis on physical elements --------------------------------------------

    def scalar_basis(self, e, x, pressure=False):
        x0, J, det = self.jac(e)
        ref = np.linalg.solve(J, np.asarray(x) - x0)
        basis = self.basis_p if pressure else self.basis_u
        val, grad = basis(*ref)
        Jinv = np.linalg.inv(J)
        return val / np.sqrt(det), (grad @ Jinv) / np.sqrt(det)

    def velocity_basis(self, e, x):
        """Global indices, values (n, 2) and gradients (n, 2, 2) of the
        vector basis functions living on element e."""
        val, grad = self.scalar_basis(e, x)
        idx, vals, grads = [], [], []
        for c in range(2):
            for i in range(self.nbu):
                idx.append(c * self.ne * self.nbu + e * self.nbu + i)
                v = np.zeros(2)
                v[c] = val[i]
                g = np.zeros((2, 2))
                g[c] = grad[i]
                vals.append(v)
                grads.append(g)
        return idx, np.array(vals), np.array(grads)

    def pressure_basis(self, e, x):
        val, grad = self.scalar_basis(e, x, pressure=True)
        idx = [e * self.nbp + i for i in range(self.nbp)]
        return idx, val, grad

    def eval_velocity(self, coeffs, e, x):
        idx, vals, grads = self.velocity_basis(e, x)
        c = coeffs[idx]
        return c @ vals, np.einsum("i,icd->cd", c, grads)

    # quadrature -----------------------------------------------------------

    def volume_points(self, e):
        x0, J, det = self.jac(e)
        for (xi, eta), w in zip(self.vol_pts, self.vol_wts):
            yield x0 + J @ np.array([xi, eta]), w * det

    def face_points(self, a, b):
        pa, pb = self.P[a], self.P[b]
        h = np.hypot(*(pb - pa))
        for s, w in zip(self.face_s, self.face_w):
            yield pa + s * (pb - pa), w * h

    def face_sides(self, face):
        """(element, outward normal) pairs; the normal of the first side is n_e."""
        a, b, els = face
        return [(e, self.outward(e, a, b)) for e in els]

    # operators ------------------------------------------------------------

    def mass(self):
        A = np.zeros((self.nX, self.nX))
        for e in range(self.ne):
            for x, w in self.volume_points(e):
                idx, V, _ = self.velocity_basis(e, x)
                A[np.ix_(idx, idx)] += w * V @ V.T
        return A

    def mass_pressure(self):
        A = np.zeros((self.nM, self.nM))
        for e in range(self.ne):
            for x, w in self.volume_points(e):
                idx, V, _ = self.pressure_basis(e, x)
                A[np.ix_(idx, idx)] += w * np.outer(V, V)
        return A

    def _face_traces(self, face, x, kind):
        """Per side: (indices, values, normal-derivatives-of-n_e, sign)."""
        sides = self.face_sides(face)
        n_e = sides[0][1]
        out = []
        for s, (e, _) in enumerate(sides):
            sign = 1.0 if s == 0 else -1.0
            if kind == "u":
                idx, V, G = self.velocity_basis(e, x)
                dn = np.einsum("icd,d->ic", G, n_e)
            else:
                idx, V, G = self.pressure_basis(e, x)
                dn = G @ n_e
            out.append((idx, V, dn, sign))
        return out, n_e

    def _sipg(self, kind, penalty, include_boundary):
        n = self.nX if kind == "u" else self.nM
        A = np.zeros((n, n))
        for e in range(self.ne):
            for x, w in self.volume_points(e):
                if kind == "u":
                    idx, _, G = self.velocity_basis(e, x)
                    A[np.ix_(idx, idx)] += w * np.einsum("icd,jcd->ij", G, G)
                else:
                    idx, _, G = self.pressure_basis(e, x)
                    A[np.ix_(idx, idx)] += w * G @ G.T
        for face in self.faces:
            a, b, els = face
            if len(els) == 1 and not include_boundary:
                continue
            h = np.hypot(*(self.P[b] - self.P[a]))
            avg = 1.0 if len(els) == 1 else 0.5
            for x, w in self.face_points(a, b):
                traces, _ = self._face_traces(face, x, kind)
                for (ii, Vi, dni, si), (jj, Vj, dnj, sj) in itertools.product(traces, traces):
                    # test i, trial j; jumps carry the side sign
                    if kind == "u":
                        jump_i, jump_j = si * Vi, sj * Vj
                        term = -avg * np.einsum("jc,ic->ij", dnj, jump_i)
                        term -= avg * np.einsum("ic,jc->ij", dni, jump_j)
                        term += penalty / h * jump_i @ jump_j.T
                    else:
                        jump_i, jump_j = si * Vi, sj * Vj
                        term = -avg * np.outer(jump_i, dnj)
                        term -= avg * np.outer(dni, jump_j)
                        term += penalty / h * np.outer(jump_i, jump_j)
                    A[np.ix_(ii, jj)] += w * term
        return A

    def aD(self):
        return self._sipg("u", self.sigma, True)

    def aellip(self):
        return self._sipg("p", self.sigma_tilde, False)

    def b(self):
        """B[q, theta] = sum_E (div theta, q) - sum_all faces ({q}, [theta].n_e)."""
        B = np.zeros((self.nM, self.nX))
        for e in range(self.ne):
            for x, w in self.volume_points(e):
                iu, _, G = self.velocity_basis(e, x)
                ip, Q, _ = self.pressure_basis(e, x)
                div = G[:, 0, 0] + G[:, 1, 1]
                B[np.ix_(ip, iu)] += w * np.outer(Q, div)
        for face in self.faces:
            a, b, els = face
            avg = 1.0 if len(els) == 1 else 0.5
            sides = self.face_sides(face)
            n_e = sides[0][1]
            for x, w in self.face_points(a, b):
                for s_q, (eq, _) in enumerate(sides):
                    ip, Q, _ = self.pressure_basis(eq, x)
                    for s_t, (et, _) in enumerate(sides):
                        iu, V, _ = self.velocity_basis(et, x)
                        sign = 1.0 if s_t == 0 else -1.0
                        B[np.ix_(ip, iu)] -= w * avg * np.outer(Q, sign * V @ n_e)
        return B

    def convection(self, w_coeffs):
        """C[theta, v] = a_C(w; w, v, theta)."""
        C = np.zeros((self.nX, self.nX))
        for e in range(self.ne):
            for x, wt in self.volume_points(e):
                idx, V, G = self.velocity_basis(e, x)
                wv, wg = self.eval_velocity(w_coeffs, e, x)
                div = wg[0, 0] + wg[1, 1]
                adv = np.einsum("jcd,d->jc", G, wv)  # (w . grad) v_j
                C[np.ix_(idx, idx)] += wt * (V @ adv.T + 0.5 * div * V @ V.T)
        for face in self.faces:
            a, b, els = face
            sides = self.face_sides(face)
            n_e = sides[0][1]
            for x, wt in self.face_points(a, b):
                wtr = [self.eval_velocity(w_coeffs, e, x)[0] for e, _ in sides]
                jump_w = wtr[0] - (wtr[1] if len(wtr) == 2 else 0.0)
                avg_w = 0.5 * (wtr[0] + wtr[1]) if len(wtr) == 2 else wtr[0]
                fac = 1.0 if len(sides) == 1 else 0.5
                for e, _ in sides:
                    idx, V, _ = self.velocity_basis(e, x)
                    C[np.ix_(idx, idx)] += wt * (-0.5 * (jump_w @ n_e) * fac) * V @ V.T
                # upwind: element E sees inflow where {w}.n_E < 0
                for s, (e, n_E) in enumerate(sides):
                    beta = avg_w @ n_E
                    if not beta < 0:
                        continue
                    idx, V, _ = self.velocity_basis(e, x)
                    C[np.ix_(idx, idx)] += wt * abs(beta) * V @ V.T
                    if len(sides) == 2:
                        other = sides[1 - s][0]
                        jdx, W, _ = self.velocity_basis(other, x)
                        C[np.ix_(idx, jdx)] -= wt * abs(beta) * V @ W.T
        return C

    def load(self, f):
        F = np.zeros(self.nX)
        for e in range(self.ne):
            for x, w in self.volume_points(e):
                idx, V, _ = self.velocity_basis(e, x)
                F[idx] += w * V @ np.asarray(f(*x), dtype=float)
        return F

    def mean(self):
        m = np.zeros(self.nM)
        for e in range(self.ne):
            for x, w in self.volume_points(e):
                idx, Q, _ = self.pressure_basis(e, x)
                m[idx] += w * Q
        return m

    # one scheme step -------------------------------------------------------

    def step(self, u0, p0, f, tau, mu, delta):
        """Dense one-step solve; the zero-mean Poisson problem is solved on an
        explicit basis of the complement of the constants."""
        Mu, Mp = self.mass(), self.mass_pressure()
        A, B, Ae = self.aD(), self.b(), self.aellip()
        K = Mu + tau * self.convection(u0) + tau * mu * A
        rhs = Mu @ u0 + tau * B.T @ p0 + tau * self.load(f)
        v = sl.solve(K, rhs)
        Q = sl.null_space(self.mean()[None, :])
        g = -(B @ v) / tau
        phi = Q @ sl.solve(Q.T @ Ae @ Q, Q.T @ g)
        p = sl.solve(Mp, Mp @ p0 + Mp @ phi - delta * mu * (B @ v))
        u = sl.solve(Mu, Mu @ v + tau * B.T @ phi)
        return v, phi, p, u
