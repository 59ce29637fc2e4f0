"""Posterior over the attacker's internal configuration given only the public
per-height state sequence.

The stealth strategies fix each height's label the moment the previous height
is determined.  Between two determinations the attacker's internal state moves
through a small family of configurations:

* ``Z``   -- no hidden blocks, unique public tip;
* ``T``   -- no hidden blocks, live tie at the frontier (a simultaneous fork);
* ``(i,S)`` -- i hidden pair-labeled blocks, topmost hidden block labeled
  Single;
* ``(i,P)`` -- i hidden pair-labeled blocks including the top one, whose run
  is so far unextended;
* ``(i,U)`` -- i hidden pair-labeled blocks plus an undecided block on top;
* ``(i,S*)`` -- a Single was just determined while the attacker already holds
  a safe block at the next height whose coin is still pending.

One filter step consumes one determined label.  Every transition probability
is affine in the label coin bias phi, so the update is two matrix products
with precomputed matrices: ``post = bel @ (A_label + phi * B_label)``.

Configurations with more than ``lead_cap`` hidden pair blocks are folded into
the top bucket; the folded mass is tracked and reported as the truncation
error.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError, PrecisionError


class ConfigSpace:
    """Index bookkeeping for the configuration family above."""

    def __init__(self, lead_cap: int):
        if lead_cap < 4:
            raise ParameterError("lead cap too small to be meaningful")
        self.L = lead_cap
        self.Z = 0
        self.T = 1
        self.n = 4 * lead_cap + 3

    def S(self, i: int) -> int:
        if i == 0:
            return self.Z
        return 2 + min(i, self.L) - 1

    def P(self, i: int) -> int:
        return 2 + self.L + min(i, self.L) - 1

    def U(self, i: int) -> int:
        return 2 + 2 * self.L + min(i, self.L) - 1

    def Sstar(self, i: int) -> int:
        return 2 + 3 * self.L + min(i, self.L)

    def describe(self, idx: int) -> str:
        L = self.L
        if idx == 0:
            return "Z"
        if idx == 1:
            return "T"
        if idx < 2 + L:
            return f"S{idx - 1}"
        if idx < 2 + 2 * L:
            return f"P{idx - 1 - L}"
        if idx < 2 + 3 * L:
            return f"U{idx - 1 - 2 * L}"
        return f"S*{idx - 2 - 3 * L}"


def build_kernels(alpha_prime: float, beta_prime: float, lead_cap: int):
    """Transition kernels split by determined label and coin dependence.

    Returns (space, A_single, B_single, A_pair, B_pair, P1, Q1) where the
    probability of reaching config c' while the new height gets label sigma is
    ``A_sigma[c, c'] + phi * B_sigma[c, c']``.  ``P1[c]`` is the probability
    that the attacker alone creates the next height's first block and it is
    safe; ``Q1[c]`` the probability of a simultaneous fork there.
    """
    a = float(alpha_prime)
    b = float(beta_prime)
    r = 1.0 - a - b
    if a <= 0 or b < 0 or r < 0:
        raise ParameterError("invalid round distribution")
    sp = ConfigSpace(lead_cap)
    n = sp.n
    A_s = np.zeros((n, n))
    B_s = np.zeros((n, n))
    A_p = np.zeros((n, n))
    B_p = np.zeros((n, n))
    P1 = np.zeros(n)
    Q1 = np.zeros(n)

    def flushed_exits(row: int, mass: float) -> None:
        # no hidden blocks left, unique tip: one more round decides the label
        A_s[row, sp.Z] += mass * r
        B_p[row, sp.P(1)] += mass * a
        A_s[row, sp.Z] += mass * a
        B_s[row, sp.Z] -= mass * a
        A_p[row, sp.T] += mass * b

    # Z: no hidden blocks, unique tip
    flushed_exits(sp.Z, 1.0)
    P1[sp.Z] = a
    Q1[sp.Z] = b

    # T: live tie, no hidden blocks; any attacker block is pivotal, any lone
    # honest block ends the race, a simultaneous round deepens the tie
    A_s[sp.T, sp.Z] += r + a
    A_p[sp.T, sp.T] += b
    P1[sp.T] = 0.0
    Q1[sp.T] = b

    L = sp.L
    for i in range(1, L + 1):
        # (i,S): honest burns pair blocks at rate r; an attacker block over the
        # Single top is safe immediately and coins on the spot
        row = sp.S(i)
        for k in range(i, 0, -1):
            w = r ** (i - k)
            B_p[row, sp.P(k + 1)] += w * a
            A_s[row, sp.S(k)] += w * a
            B_s[row, sp.S(k)] -= w * a
            B_p[row, sp.P(k)] += w * b
            A_s[row, sp.S(k - 1)] += w * b
            B_s[row, sp.S(k - 1)] -= w * b
        flushed_exits(row, r ** i)
        P1[row] = 1.0 - (r ** i) * (1.0 - a)
        Q1[row] = (r ** i) * b

        # (i,U): the undecided top resolves safe when the attacker mines above
        # it, or pivotal when the honest side contests its parent
        row = sp.U(i)
        for k in range(i, 0, -1):
            w = r ** (i - k)
            B_p[row, sp.U(k + 1)] += w * a
            A_s[row, sp.Sstar(k)] += w * a
            B_s[row, sp.Sstar(k)] -= w * a
            B_p[row, sp.U(k)] += w * b
            A_s[row, sp.Sstar(k - 1)] += w * b
            B_s[row, sp.Sstar(k - 1)] -= w * b
        A_s[row, sp.Z] += r ** i
        P1[row] = 1.0 - r ** i
        Q1[row] = 0.0

        # (i,P): the top pair block is a fresh run starter; an attacker block
        # above it stays undecided until a second attacker block or the
        # honest climb resolves it
        row = sp.P(i)
        occ1 = 0.0
        for m in range(i, 0, -1):
            occ = a * (i - m + 1) * r ** (i - m)
            if i - m >= 1:
                occ += b * (i - m) * r ** (i - m - 1)
            if m == 1:
                occ1 = occ
            B_p[row, sp.U(m + 1)] += occ * a
            A_s[row, sp.Sstar(m)] += occ * a
            B_s[row, sp.Sstar(m)] -= occ * a
            B_p[row, sp.U(m)] += occ * b
            A_s[row, sp.Sstar(m - 1)] += occ * b
            B_s[row, sp.Sstar(m - 1)] -= occ * b
        A_s[row, sp.Z] += occ1 * r                      # undecided goes pivotal
        # a simultaneous round that contests the top pair makes the fresh
        # block above it pivotal at creation: forced Single, conflict won
        w = (r ** (i - 1)) * b
        A_s[row, sp.Z] += w
        A_s[row, sp.Z] += (r ** i) * (r + a)            # race at the frontier
        A_p[row, sp.T] += (r ** i) * b
        P1[row] = 1.0 - occ1 * r - w - r ** i
        Q1[row] = (r ** i) * b

    for i in range(0, L + 1):
        # (i,S*): zero rounds pass; the pending safe block coins immediately
        row = sp.Sstar(i)
        B_p[row, sp.P(i + 1)] += 1.0
        A_s[row, sp.S(i)] += 1.0
        B_s[row, sp.S(i)] -= 1.0
        P1[row] = 1.0
        Q1[row] = 0.0

    return sp, A_s, B_s, A_p, B_p, P1, Q1


class BeliefState:
    """Forward filter over configurations, conditioned on the label sequence.

    ``bias()`` returns the pair-coin bias (beta - Q)/P the labeling rule needs
    for the next height; validity of the target rate keeps it inside [0,1].
    """

    def __init__(self, alpha_prime: float, beta_prime: float, beta: float,
                 lead_cap: int = 64, mass_tol: float = 1e-6):
        (self.space, self.A_s, self.B_s, self.A_p, self.B_p,
         self.P1, self.Q1) = build_kernels(alpha_prime, beta_prime, lead_cap)
        self.beta = float(beta)
        self.mass_tol = mass_tol
        self.bel = np.zeros(self.space.n)
        self.bel[self.space.Z] = 1.0
        self.truncation_eps = 0.0
        self._cap_rows = [self.space.S(self.space.L), self.space.P(self.space.L),
                          self.space.U(self.space.L), self.space.Sstar(self.space.L)]
        # fused kernels: one product yields both the phi-free and phi parts
        self._C_s = np.hstack([self.A_s, self.B_s])
        self._C_p = np.hstack([self.A_p, self.B_p])
        self._PQ = np.column_stack([self.P1, self.Q1])
        self._cap_idx = np.asarray(self._cap_rows)
        self._pq_cache = None

    def pq(self) -> tuple[float, float]:
        if self._pq_cache is None:
            p, q = self.bel @ self._PQ
            self._pq_cache = (float(p), float(q))
        return self._pq_cache

    def bias(self) -> float:
        p, q = self.pq()
        return (self.beta - q) / p

    def update(self, label: int, phi: float) -> None:
        """Condition on the next determined label (0 Single / 1 Pair), given
        the coin bias the labeling rule used for that height."""
        n = self.space.n
        out = self.bel @ (self._C_p if label else self._C_s)
        post = out[:n]
        post += phi * out[n:]
        mass = float(post.sum())
        expect = self.beta if label else 1.0 - self.beta
        if abs(mass - expect) > self.mass_tol:
            raise PrecisionError(
                f"filter mass {mass:.12f} deviates from {expect:.12f}")
        post /= mass
        self.bel = post
        self._pq_cache = None
        cap = float(post[self._cap_idx].sum())
        if cap > self.truncation_eps:
            self.truncation_eps = cap


def belief_update(belief: BeliefState, determined_state: int) -> BeliefState:
    """Advance the filter by one determined height using the labeling rule's
    own coin bias for that height; returns the same (mutated) filter."""
    belief.update(int(determined_state), belief.bias())
    return belief
