"""Tangent cocycle of the Poincare map in energy coordinates (h, v).

``h_i = m_i (v_i^2/2 + q_i)`` is constant during flight and ``v`` drifts
by ``-t``, so the flight derivative is the identity and only the
return-time correction and the collision itself act on tangent vectors.
The symplectic form is ``sum dh_i ^ dv_i`` and the cone form is
``Q = sum dh_i dv_i``.

Vectors are 6-arrays ``(dh1, dh2, dh3, dv1, dv2, dv3)``.  The energy-reduced
quotient (``sum dh = 0``, ``dv`` modulo the flow direction ``(1, 1, 1)``)
is handled through :data:`BASIS`, an orthonormal basis of ``(1,1,1)^perp``;
in reduced coordinates ``(a, b)`` the form ``Q`` is just ``<a, b>``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from wedgefall.dynamics import (
    Branch,
    EventKind,
    MassModel,
    PhaseState,
    SingularEventError,
    _fly,
    _snap,
    apply_collision,
    next_event,
    poincare_map,
    step,
)

BASIS = np.array([[1.0, -1.0, 0.0], [1.0, 1.0, -2.0]]).T / np.array([math.sqrt(2.0), math.sqrt(6.0)])
_LIFT = np.zeros((6, 4))
_LIFT[:3, :2] = BASIS
_LIFT[3:, 2:] = BASIS
_DROP = _LIFT.T

RENORM_EVERY = 16
RENORM_LIMIT = 1e100


@dataclass(frozen=True)
class TangentVector:
    dh: np.ndarray
    dv: np.ndarray

    @classmethod
    def from_array(cls, x) -> "TangentVector":
        x = np.asarray(x, float)
        return cls(x[:3].copy(), x[3:].copy())

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.dh, self.dv])

    @property
    def q(self) -> float:
        return q_form(self)

    @property
    def energy_defect(self) -> float:
        return float(np.sum(self.dh))


def q_form(v) -> float:
    """Q = sum dh_i dv_i (accepts a TangentVector or a 6-array)."""
    x = v.as_array() if isinstance(v, TangentVector) else np.asarray(v, float)
    return float(x[:3] @ x[3:])


def q_bilinear(a, b) -> float:
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    return 0.5 * float(a[:3] @ b[3:] + b[:3] @ a[3:])


def omega(a, b) -> float:
    """Symplectic pairing sum (a_h b_v - b_h a_v)."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    return float(a[:3] @ b[3:] - b[:3] @ a[3:])


def q_form_qp(state: PhaseState, dq, dp) -> float:
    """The same form written in (q, p): sum dq dp + p dp^2 / m^2."""
    m = state.masses.m
    dq = np.asarray(dq, float)
    dp = np.asarray(dp, float)
    p = m * np.asarray(state.v)
    return float(dq @ dp + np.sum(p * dp**2 / m**2))


def tangent_qp_to_hv(state: PhaseState, dq, dp) -> TangentVector:
    m = state.masses.m
    v = np.asarray(state.v)
    dq = np.asarray(dq, float)
    dp = np.asarray(dp, float)
    return TangentVector(v * dp + m * dq, dp / m)


def tangent_hv_to_qp(state: PhaseState, t: TangentVector) -> tuple[np.ndarray, np.ndarray]:
    m = state.masses.m
    dp = m * t.dv
    return (t.dh - np.asarray(state.v) * dp) / m, dp


def reduce_vector(x) -> np.ndarray:
    """6-vector -> reduced 4-vector (drops the energy and flow components)."""
    return _DROP @ np.asarray(x, float)


def lift_vector(r) -> np.ndarray:
    return _LIFT @ np.asarray(r, float)


def reduce_matrix(a: np.ndarray) -> np.ndarray:
    return _DROP @ a @ _LIFT


def _hv_jacobian(state: PhaseState) -> np.ndarray:
    """d(h, v) / d(q, v) at a state."""
    m = state.masses.m
    j = np.eye(6)
    j[:3, :3] = np.diag(m)
    j[:3, 3:] = np.diag(m * np.asarray(state.v))
    return j


def _hv_jacobian_inv(state: PhaseState) -> np.ndarray:
    m = state.masses.m
    j = np.eye(6)
    j[:3, :3] = np.diag(1.0 / m)
    j[:3, 3:] = -np.diag(np.asarray(state.v))
    return j


def _collision_matrix(masses: MassModel, kind: EventKind) -> np.ndarray:
    c = np.eye(3)
    if kind is EventKind.FLOOR:
        c[0, 0] = -1.0
    elif kind is EventKind.PAIR12:
        g = masses.gamma1
        c[:2, :2] = [[g, 1 - g], [1 + g, -g]]
    elif kind is EventKind.PAIR23:
        g = masses.gamma2
        c[1:, 1:] = [[g, 1 - g], [1 + g, -g]]
    return c


def _constraint_normal(kind: EventKind) -> np.ndarray:
    return {
        EventKind.FLOOR: np.array([1.0, 0.0, 0.0]),
        EventKind.PAIR12: np.array([1.0, -1.0, 0.0]),
        EventKind.PAIR23: np.array([0.0, 1.0, -1.0]),
    }[kind]


def beta(masses: MassModel, v1_pre: float) -> float:
    return -2.0 / (masses.m1 * v1_pre)


def alpha(masses: MassModel, i: int, v_pre) -> float:
    """Collision coefficient of the (i, i+1) collision, i in {1, 2}."""
    m = masses.as_tuple()
    a, b = m[i - 1], m[i]
    return 2.0 * a * b * (a - b) * (v_pre[i - 1] - v_pre[i]) / (a + b) ** 2


@dataclass(frozen=True)
class Monodromy:
    matrix: np.ndarray
    source: PhaseState
    target: PhaseState
    kind: EventKind | None
    coeff: float | None = None
    tau: float = 0.0

    @property
    def reduced(self) -> np.ndarray:
        return reduce_matrix(self.matrix)

    def __call__(self, x) -> np.ndarray:
        return self.matrix @ np.asarray(x, float)

    def gain_functional(self) -> np.ndarray:
        """f with Q(Mv) - Q(v) = coeff * (f . v)^2 for v tangent to the energy surface.

        Floor: beta * dh1^2.  Pair (i, i+1): alpha_i * (dv_i - dv_{i+1})^2.
        """
        f = np.zeros(6)
        if self.kind is EventKind.FLOOR:
            f[0] = 1.0
        elif self.kind is EventKind.PAIR12:
            f[3], f[4] = 1.0, -1.0
        elif self.kind is EventKind.PAIR23:
            f[4], f[5] = 1.0, -1.0
        else:
            raise ValueError("no single gain term for a composite step")
        return f


def collision_jacobian(pre: PhaseState, kind: EventKind, tau: float = 0.0) -> np.ndarray:
    """Tangent map, in (q, v), of: fly ``tau``, hit the ``kind`` section, collide."""
    masses = pre.masses
    v_pre = np.asarray(pre.v)
    fl = np.eye(6)
    fl[:3, 3:] = tau * np.eye(3)
    n = _constraint_normal(kind)
    # return-time correction: dtau = -<n, dq> / <n, v->
    corr = np.eye(6)
    grad = np.concatenate([n, np.zeros(3)]) / -(n @ v_pre)
    flow = np.concatenate([v_pre, -np.ones(3)])
    corr += np.outer(flow, grad)
    col = np.eye(6)
    col[3:, 3:] = _collision_matrix(masses, kind)
    return col @ corr @ fl


def monodromy_step(x: PhaseState) -> Monodromy:
    ev = next_event(x)
    if ev.kind.singular:
        raise SingularEventError(f"{ev.kind.value} ahead; follow the branches instead")
    pre = _snap(_fly(x, ev.tau), ev.kind)
    post = apply_collision(pre, ev.kind)
    jq = collision_jacobian(pre, ev.kind, ev.tau)
    # pre-flight conversion happens at x, post-collision conversion at the target
    mat = _hv_jacobian(post) @ jq @ _hv_jacobian_inv(x)
    if ev.kind is EventKind.FLOOR:
        coeff = beta(x.masses, pre.v[0])
    else:
        coeff = alpha(x.masses, 1 if ev.kind is EventKind.PAIR12 else 2, pre.v)
    return Monodromy(mat, x, post, ev.kind, coeff, ev.tau)


def branch_monodromies(x: PhaseState) -> list[Monodromy]:
    """Tangent maps for each continuation of a singular event.

    Each branch is the composition of the one-sided limits, i.e. the
    elementary collisions applied in that branch's order at one instant.
    """
    ev = next_event(x)
    if not ev.kind.singular:
        return [monodromy_step(x)]
    out = []
    pre = _snap(_fly(x, ev.tau), ev.kind)
    br = poincare_map(x)
    assert isinstance(br, Branch)
    for target, seq in ((br.first, br.first_sequence), (br.second, br.second_sequence)):
        s = pre
        jq = np.eye(6)
        tau = ev.tau
        for k in seq:
            jq = collision_jacobian(s, k, tau) @ jq
            s = PhaseState(s.masses, s.q, _apply_v(s, k), "interior")
            tau = 0.0
        out.append(Monodromy(_hv_jacobian(target) @ jq @ _hv_jacobian_inv(x), x, target, ev.kind))
    return out


def _apply_v(s: PhaseState, k: EventKind):
    from wedgefall.dynamics import collide_velocities

    return collide_velocities(s.masses, s.v, k)


def orbit_steps(x: PhaseState, n: int, policy: str = "abort") -> list[Monodromy]:
    """The n successive monodromy steps along the orbit of x."""
    out = []
    for _ in range(n):
        ev = next_event(x)
        if ev.kind.singular:
            if policy == "abort":
                raise SingularEventError(f"{ev.kind.value} on the orbit")
            mds = branch_monodromies(x)
            md = mds[0] if policy in ("pick-first", "first") else mds[1]
        else:
            md = monodromy_step(x)
        out.append(md)
        x = md.target
    return out


def monodromy_product(x: PhaseState, n: int, renorm: bool = True, policy: str = "abort"):
    """Ordered product of n steps; returns (Monodromy, log_scale).

    With renormalization the stored matrix is ``exp(-log_scale)`` times the
    true product.  Q-ratios are unaffected.
    """
    prod = np.eye(6)
    log_scale = 0.0
    target = x
    kind = None
    for k, md in enumerate(orbit_steps(x, n, policy), start=1):
        prod = md.matrix @ prod
        target = md.target
        kind = md.kind
        if renorm and (k % RENORM_EVERY == 0 or np.abs(prod).max() > RENORM_LIMIT):
            s = np.abs(prod).max()
            prod = prod / s
            log_scale += math.log(s)
    return Monodromy(prod, x, target, kind if n == 1 else None), log_scale


def finite_difference_step(x: PhaseState, rel_step: float = 1e-6) -> np.ndarray:
    """Central differences of the map (h, v) -> next post-collision (h, v)."""
    masses = x.masses
    m = masses.m
    kind = next_event(x).kind
    base = np.concatenate([x.h, x.v])

    def image(hv):
        v = hv[3:]
        q = hv[:3] / m - 0.5 * v**2
        s = PhaseState(masses, q, v, "interior")
        ev = next_event(s)
        if ev.kind is not kind:
            raise SingularEventError("perturbation changed the event type")
        out = apply_collision(_snap(_fly(s, ev.tau), ev.kind), ev.kind)
        return np.concatenate([out.h, out.v])

    jac = np.empty((6, 6))
    for j in range(6):
        d = rel_step * (1.0 + abs(base[j]))
        e = np.zeros(6)
        e[j] = d
        jac[:, j] = (image(base + e) - image(base - e)) / (2 * d)
    return jac


def cw_norm(dxi, masses: MassModel, closed: bool = False) -> float:
    """sqrt(sum_{i<=2} (dxi_{i+1} - dxi_i)^2 / m_i).

    Only the (1,2) reflection M1 preserves this on {dxi_1 = 0}.  ``closed``
    adds the i = 3 term with dxi_4 = 0, i.e. the kinetic metric sum dh_i^2/m_i
    on that plane, which both reflections preserve.
    """
    d = np.asarray(dxi, float)
    s = (d[1] - d[0]) ** 2 / masses.m1 + (d[2] - d[1]) ** 2 / masses.m2
    if closed:
        s += d[2] ** 2 / masses.m3
    return math.sqrt(s)


def cw_equivalence_constants(masses: MassModel, samples: int = 20001) -> tuple[float, float]:
    """Extremal ratios ||x||_CW / ||x||_max on {x_1 = 0}.

    The unit max-sphere of that plane is the boundary of a square, so the
    ratio is scanned along its four edges.
    """
    t = np.linspace(-1.0, 1.0, samples)
    one = np.ones_like(t)
    edges = [(one, t), (-one, t), (t, one), (t, -one)]
    vals = []
    for a, b in edges:
        vals.append(np.sqrt(a**2 / masses.m1 + (b - a) ** 2 / masses.m2))
    vals = np.concatenate(vals)
    return float(vals.min()), float(vals.max())


def alpha_bound(masses: MassModel, c: float) -> float:
    return 4.0 * math.sqrt(2.0 * c) * masses.m1**3 / (masses.m3**2 * math.sqrt(masses.m3))


def alpha_bound_check(log, c: float) -> dict:
    """Largest |alpha| seen along an orbit relative to the energy bound."""
    bound = alpha_bound(log.start.masses, c)
    worst = 0.0
    count = 0
    prev = log.start
    for kind, post in zip(log.kinds, log.states):
        if kind in (EventKind.PAIR12, EventKind.PAIR23):
            i = 1 if kind is EventKind.PAIR12 else 2
            ev = next_event(prev)
            pre_v = tuple(x - ev.tau for x in prev.v)
            worst = max(worst, abs(alpha(prev.masses, i, pre_v)) / bound)
            count += 1
        prev = post
    return {"bound": bound, "max_ratio": worst, "pair_collisions": count, "ok": worst <= 1.0}


# ---- the (xi, eta) description ------------------------------------------


def xieta_basis(masses: MassModel) -> np.ndarray:
    """Columns a_1, a_2, a_3 with h = A xi and eta = A^T v.

    a_1 spans the common fixed line of both pair reflections (h_i / m_i
    equal), a_2 and a_3 are their (-1)-eigenvectors.  Column sums
    (1, 0, 0) make xi_1 the total energy and eta_1 the flow coordinate.
    """
    m = masses.m
    return np.column_stack([m / m.sum(), [1.0, -1.0, 0.0], [0.0, 1.0, -1.0]])


def hv_to_xieta(masses: MassModel, x) -> np.ndarray:
    a = xieta_basis(masses)
    x = np.asarray(x, float)
    return np.concatenate([np.linalg.solve(a, x[:3]), a.T @ x[3:]])


def xieta_to_hv(masses: MassModel, y) -> np.ndarray:
    a = xieta_basis(masses)
    y = np.asarray(y, float)
    return np.concatenate([a @ y[:3], np.linalg.solve(a.T, y[3:])])


@dataclass(frozen=True)
class XiEtaBlocks:
    B: np.ndarray
    U1: np.ndarray
    U2: np.ndarray
    M1: np.ndarray
    M2: np.ndarray
    dphi01: np.ndarray
    dphi12: np.ndarray
    dphi23: np.ndarray
    sign_calibration: tuple[float, float, float]

    def for_kind(self, kind: EventKind) -> np.ndarray:
        return {EventKind.FLOOR: self.dphi01, EventKind.PAIR12: self.dphi12, EventKind.PAIR23: self.dphi23}[
            EventKind(kind)
        ]


# Signs applied to (beta, alpha1, alpha2) so that the printed blocks are
# Q-monotone; fixed by calibrate_signs() and asserted in the tests.
DEFAULT_SIGNS = (1.0, -1.0, -1.0)


def dphi_xieta(kind, masses: MassModel, v_pre, signs=DEFAULT_SIGNS) -> XiEtaBlocks:
    kind = EventKind(kind)
    v_pre = tuple(float(x) for x in v_pre)
    if kind is EventKind.FLOOR and not v_pre[0] < 0:
        raise ValueError("floor collision needs v1 < 0")
    if kind is EventKind.PAIR12 and v_pre[0] < v_pre[1]:
        raise ValueError("(1,2) collision needs v1 >= v2")
    if kind is EventKind.PAIR23 and v_pre[1] < v_pre[2]:
        raise ValueError("(2,3) collision needs v2 >= v3")
    g1, g2 = masses.gamma1, masses.gamma2
    b = beta(masses, v_pre[0]) if v_pre[0] < 0 else 0.0
    a1 = alpha(masses, 1, v_pre)
    a2 = alpha(masses, 2, v_pre)
    B = np.diag([1.0, signs[0] * b, 0.0])
    U1 = np.zeros((3, 3))
    U1[1, 1] = signs[1] * a1
    U2 = np.zeros((3, 3))
    U2[2, 2] = signs[2] * a2
    M1 = np.array([[1.0, 0, 0], [0, -1.0, 1 + g1], [0, 0, 1.0]])
    M2 = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 1 - g2, -1.0]])
    eye = np.eye(3)
    z = np.zeros((3, 3))
    d01 = np.block([[eye, z], [B, eye]])
    d12 = np.block([[M1, U1], [z, M1.T]])
    d23 = np.block([[M2, U2], [z, M2.T]])
    return XiEtaBlocks(B, U1, U2, M1, M2, d01, d12, d23, tuple(signs))


def calibrate_signs(masses: MassModel) -> tuple[float, float, float]:
    """Choose the sign of each coefficient so its block never decreases Q.

    Probes the single direction each coefficient acts on: beta on
    (xi_2, 0), alpha_i on (0, eta_{i+1}).
    """
    v = (-1.0, -1.5, -2.0)
    signs = []
    probes = [
        (EventKind.FLOOR, 0, np.array([0, 1.0, 0, 0, 0, 0])),
        (EventKind.PAIR12, 1, np.array([0, 0, 0, 0, 1.0, 0])),
        (EventKind.PAIR23, 2, np.array([0, 0, 0, 0, 0, 1.0])),
    ]
    for kind, idx, probe in probes:
        trial = [1.0, 1.0, 1.0]
        blk = dphi_xieta(kind, masses, v, trial).for_kind(kind)
        gain = q_form(blk @ probe) - q_form(probe)
        signs.append(1.0 if gain >= 0 else -1.0)
    return tuple(signs)


def xieta_trace(x: PhaseState, v0, n: int, signs=None) -> np.ndarray:
    """Q-values of v0 pushed along n steps with the printed (xi, eta) blocks."""
    signs = calibrate_signs(x.masses) if signs is None else signs
    y = hv_to_xieta(x.masses, v0)
    out = [q_form(y)]
    for _ in range(n):
        ev, nxt = step(x)
        pre_v = tuple(c - ev.tau for c in x.v)
        y = dphi_xieta(ev.kind, x.masses, pre_v, signs).for_kind(ev.kind) @ y
        out.append(q_form(y))
        x = nxt
    return np.array(out)
