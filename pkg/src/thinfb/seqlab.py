"""PDE-free laboratory for the two-sequence dichotomy dynamics.

simulate() produces (w_n, e_n) trajectories under a branch policy: branch 1
trades an energy drop (w_{n+1} <= w_n - a e_n^2) for growth e_{n+1} = A e_n;
branch 2 halves e_n; every step obeys the cap w_{n+1} <= A e_n^{1+gamma}.
verify_bounds() certifies the alpha-recurrence (alpha_n = w_n + mu e_n^2) for
the largest workable dyadic mu and checks the tail-sum envelopes: geometric
for gamma = 1, N^{-gamma/(1-gamma)} otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np


@dataclass(frozen=True)
class SeqParams:
    A: float = 2.0  # cap constant: w_{n+1} <= A * e_n^{1+gamma}
    a: float = 0.1  # branch-1 drop: w_{n+1} <= w_n - a * e_n^2
    gamma: float = 1.0
    e0: float = 0.05
    w0: float = 0.0
    n_steps: int = 200
    A_grow: float | None = None  # branch-1 growth factor; None means A

    def __post_init__(self):
        if not self.A >= 1.0:
            raise ValueError(f"A={self.A} must be >= 1")
        if not 0.0 < self.a < 1.0:
            raise ValueError(f"a={self.a} must lie in (0,1)")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma={self.gamma} must lie in (0,1]")
        if not 0.0 < self.e0 <= 1.0:
            raise ValueError(f"e0={self.e0} must lie in (0,1]")
        if self.w0 < 0.0:
            raise ValueError(f"w0={self.w0} must be nonnegative")
        if self.w0 > self.A * self.e0 ** (1.0 + self.gamma):
            raise ValueError(
                f"w0={self.w0} exceeds the cap A*e0^(1+gamma)="
                f"{self.A * self.e0 ** (1.0 + self.gamma)}"
            )
        if self.n_steps < 1:
            raise ValueError(f"n_steps={self.n_steps} must be positive")

    @property
    def grow(self) -> float:
        return self.A if self.A_grow is None else self.A_grow


@dataclass
class SeqRun:
    params: SeqParams
    branches: list  # one int (1 or 2) per step
    w: np.ndarray  # length n_steps + 1
    e: np.ndarray  # length n_steps + 1

    def check(self):
        """Assert every step satisfies its branch's update and the cap (exact
        arithmetic, no tolerance)."""
        p = self.params
        if self.w[0] != p.w0 or self.e[0] != p.e0:
            raise AssertionError("run does not start from (w0, e0)")
        for n, b in enumerate(self.branches):
            if self.w[n + 1] < 0.0:
                raise AssertionError(f"w[{n + 1}] negative")
            if self.w[n + 1] > p.A * self.e[n] ** (1.0 + p.gamma):
                raise AssertionError(f"cap violated at step {n}")
            if b == 1:
                if self.w[n + 1] > self.w[n] - p.a * self.e[n] ** 2:
                    raise AssertionError(f"branch-1 drop violated at step {n}")
                if self.e[n + 1] != p.grow * self.e[n]:
                    raise AssertionError(f"branch-1 growth violated at step {n}")
            elif b == 2:
                if self.w[n + 1] > self.w[n]:
                    raise AssertionError(f"branch-2 monotonicity violated at step {n}")
                if self.e[n + 1] != 0.5 * self.e[n]:
                    raise AssertionError(f"branch-2 halving violated at step {n}")
            else:
                raise AssertionError(f"branch {b} at step {n} is neither 1 nor 2")

    def alpha(self, mu: float) -> np.ndarray:
        return self.w + mu * self.e**2

    def tail_sums(self) -> np.ndarray:
        """T_N = sum_{n >= N} e_n for N = 0..n_steps."""
        return np.cumsum(self.e[::-1])[::-1]


def _branch1_feasible(p: SeqParams, w_n: float, e_n: float) -> bool:
    # branch 1 needs some w_{n+1} in [0, w_n - a e_n^2]
    return w_n - p.a * e_n**2 >= 0.0


def simulate(params: SeqParams, policy: str = "adversarial") -> SeqRun:
    """Generate a run under a branch policy.

    Policies: "branch2" (always halve), "random:<seed>" (fair coin where
    branch 1 is feasible, w_{n+1} uniform below its cap), "adversarial"
    (greedy sup of the e-sum: branch 1 whenever feasible, w_{n+1} saturated).
    """
    p = params
    w = np.empty(p.n_steps + 1)
    e = np.empty(p.n_steps + 1)
    w[0], e[0] = p.w0, p.e0
    branches = []
    rng = None
    if policy.startswith("random:"):
        rng = np.random.default_rng(int(policy.split(":", 1)[1]))
    elif policy not in ("branch2", "adversarial", "deterministic"):
        raise ValueError(f"unknown policy {policy!r}")

    for n in range(p.n_steps):
        cap = p.A * e[n] ** (1.0 + p.gamma)
        feasible1 = _branch1_feasible(p, w[n], e[n])
        if policy in ("branch2", "deterministic"):
            b = 2
        elif policy == "adversarial":
            b = 1 if feasible1 else 2
        else:
            b = 1 if (feasible1 and rng.random() < 0.5) else 2
        if b == 1:
            hi = min(w[n] - p.a * e[n] ** 2, cap)
            w[n + 1] = hi if rng is None else rng.uniform(0.0, hi)
            e[n + 1] = p.grow * e[n]
        else:
            # branch 2 keeps w nonincreasing (no refill) under the cap
            hi = min(w[n], cap)
            w[n + 1] = hi if rng is None else rng.uniform(0.0, hi)
            e[n + 1] = 0.5 * e[n]
        branches.append(b)
    run = SeqRun(params=p, branches=branches, w=w, e=e)
    run.check()
    return run


@dataclass
class SeqReport:
    mu: float | None  # largest certified dyadic mu (None if none works)
    c: float  # recurrence constant for that mu
    C_env: float  # envelope amplitude derived from (mu, c)
    rate: float  # geometric envelope rate sqrt(1-c) (gamma = 1; else 0)
    tail_exponent: float  # gamma/(1-gamma) power-law exponent (gamma < 1)
    C_fit: float  # data-fitted tail amplitude (reporting only)
    c_fit: float  # data-fitted geometric tail rate (reporting only)
    envelope_violations: list = dc_field(default_factory=list)
    drop_C: float | None = None  # gamma<1: e_n^2 <= C (alpha_n - alpha_{n+1})

    @property
    def ok(self) -> bool:
        return self.mu is not None and not self.envelope_violations


def _recurrence_constant(run: SeqRun, mu: float) -> float | None:
    """Largest c with alpha_{n+1} <= alpha_n - c alpha_n^{2/(1+gamma)} at
    every step, or None if the recurrence fails for this mu."""
    gamma = run.params.gamma
    al = run.alpha(mu)
    expo = 2.0 / (1.0 + gamma)
    c_best = np.inf
    for n in range(len(al) - 1):
        drop = al[n] - al[n + 1]
        if al[n] <= 0.0:
            if al[n + 1] > al[n]:
                return None
            continue
        c_best = min(c_best, drop / al[n] ** expo)
    if not np.isfinite(c_best) or c_best <= 0.0:
        return None
    return float(c_best)


def verify_bounds(run: SeqRun, j_max: int = 40) -> SeqReport:
    """Certify the alpha-recurrence and the parity-appropriate tail envelope.

    mu is searched over dyadics 2^-j, largest first.  Envelope constants are
    derived from the certified (mu, c) — gamma = 1: e_n <= (alpha_0/mu)^{1/2}
    rho^n with rho = (1-c)^{1/2}, so T_N <= C rho^N; gamma < 1: the recurrence
    gives alpha_n^{1-q} >= alpha_0^{1-q} + n(q-1)c (q = 2/(1+gamma)), and
    dyadic-chunk Cauchy-Schwarz turns that into T_N <= C N^{-gamma/(1-gamma)}.
    Each inequality is then checked at every index; the data-fitted (C_fit,
    c_fit) are recorded for reporting only.
    """
    run.check()
    p = run.params
    mu = c = None
    for j in range(j_max + 1):
        cand = _recurrence_constant(run, 2.0**-j)
        if cand is not None:
            mu, c = 2.0**-j, cand
            break

    tails = run.tail_sums()
    N = np.arange(len(tails))
    pos = tails > 0.0
    violations = []
    if mu is None:
        violations.append({"detail": "no dyadic mu certifies the alpha-recurrence"})
        return SeqReport(
            mu=None, c=0.0, C_env=np.inf, rate=0.0, tail_exponent=0.0,
            C_fit=0.0, c_fit=0.0, envelope_violations=violations,
        )
    al = run.alpha(mu)
    drops = al[:-1] - al[1:]

    # data fit, reporting only
    c_fit = C_fit = 0.0
    if pos.sum() >= 3:
        slope = np.polyfit(N[pos], np.log(tails[pos]), 1)[0]
        c_fit = float(1.0 - np.exp(slope))
        C_fit = float(np.max(tails[pos] / np.exp(slope * N[pos])))

    drop_C = None
    if p.gamma == 1.0:
        rho = np.sqrt(1.0 - c)
        C_env = np.sqrt(al[0] / mu) / (1.0 - rho)
        env = C_env * rho**N
        expo = 0.0
        # per-index decay certificate: alpha_n <= (1-c)^n alpha_0
        bad_al = np.nonzero(al > (1.0 - c) ** np.arange(len(al)) * al[0] * (1 + 1e-12))[0]
        for k in bad_al:
            violations.append({"n": int(k), "detail": "alpha decay certificate failed"})
    else:
        q = 2.0 / (1.0 + p.gamma)
        expo = p.gamma / (1.0 - p.gamma)
        # alpha envelope: alpha_n^{1-q} >= alpha_0^{1-q} + n (q-1) c
        lower = al[0] ** (1.0 - q) + np.arange(len(al)) * (q - 1.0) * c
        bad_al = np.nonzero((al > 0) & (al ** (1.0 - q) < lower * (1 - 1e-12)))[0]
        for k in bad_al:
            violations.append({"n": int(k), "detail": "alpha decay certificate failed"})
        # e_n^2 <= drop_C (alpha_n - alpha_{n+1}) per step
        e2 = run.e[:-1] ** 2
        mask = e2 > 0.0
        if np.any(mask) and np.any(drops[mask] <= 0.0):
            violations.append({"detail": "alpha drop vanished while e_n > 0"})
            drop_C = np.inf
        elif np.any(mask):
            drop_C = float(np.max(e2[mask] / drops[mask]))
        else:
            drop_C = 0.0
        C_env = (
            np.sqrt(drop_C)
            * ((q - 1.0) * c) ** (-(1.0 + p.gamma) / (2.0 * (1.0 - p.gamma)))
            / (1.0 - 2.0**-expo)
        )
        env = np.concatenate(([np.inf], C_env * N[1:].astype(float) ** (-expo)))
    bad = np.nonzero(tails > env * (1.0 + 1e-12))[0]
    for k in bad:
        violations.append({"N": int(k), "tail": float(tails[k]), "envelope": float(env[k])})

    return SeqReport(
        mu=mu, c=c, C_env=float(C_env), rate=float(np.sqrt(1.0 - c)) if p.gamma == 1.0 else 0.0,
        tail_exponent=float(expo), C_fit=C_fit, c_fit=c_fit,
        envelope_violations=violations, drop_C=drop_C,
    )


def sigma_ladder(
    params: SeqParams, policy: str = "adversarial", js=range(3, 11)
) -> list:
    """e-sums of runs along the e0 ladder {2^-j}: sigma(e0) -> 0 as e0 -> 0.

    Each rung starts from the saturated w0 = A e0^{1+gamma} (the worst
    admissible start).  Returns [(e0, sum e_n)] in decreasing e0 order.
    """
    out = []
    for j in js:
        e0 = 2.0**-j
        p = SeqParams(
            A=params.A, a=params.a, gamma=params.gamma, e0=e0,
            w0=params.A * e0 ** (1.0 + params.gamma),
            n_steps=params.n_steps, A_grow=params.A_grow,
        )
        run = simulate(p, policy)
        out.append((e0, float(run.e.sum())))
    return out
