"""Exact entropy and mutual information over small finite joint distributions.

Everything is computed by dense enumeration in float64 nats; the module exists
to ground the information-theoretic claims at toy scale, not for estimation.
The headline operation verifies the representation-preservation lemma: if a
noisy observation keeps all label information and its representation (z, z_n)
(i) reconstructs the observation, (ii) carries no label information in z_n,
and (iii) has independent channels, then z alone retains the full label
information.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["DiscreteJoint", "entropy", "mutual_information",
           "verify_lemma1", "Lemma1Report", "load_lemma1_fixture"]

MAX_STATES = 2 ** 20


@dataclass
class DiscreteJoint:
    """Dense probability table over a product of finite variables.

    `arities` lists the state counts; `table` has exactly that shape, entries
    nonnegative, total mass 1 within 1e-12.
    """

    arities: list[int]
    table: np.ndarray

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.float64)
        if tuple(self.arities) != self.table.shape:
            raise ValueError("table shape must match arities")
        if int(np.prod(self.arities)) > MAX_STATES:
            raise ValueError(f"product space exceeds {MAX_STATES} states")
        if np.any(self.table < 0):
            raise ValueError("probabilities must be nonnegative")
        if abs(self.table.sum() - 1.0) > 1e-12:
            raise ValueError(f"total mass {self.table.sum()} != 1 within 1e-12")

    @property
    def n_vars(self) -> int:
        return len(self.arities)

    def marginal(self, subset) -> np.ndarray:
        subset = tuple(subset)
        drop = tuple(i for i in range(self.n_vars) if i not in subset)
        marg = self.table.sum(axis=drop) if drop else self.table
        # after reduction the kept axes sit in ascending original order
        kept_sorted = tuple(sorted(subset))
        if kept_sorted != subset:
            marg = marg.transpose([kept_sorted.index(v) for v in subset])
        return marg


def _plogp(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def entropy(joint: DiscreteJoint, subset) -> float:
    """Exact Shannon entropy (nats) of the marginal over `subset`, 0 log 0 = 0."""
    subset = tuple(subset)
    if not subset:
        return 0.0
    if any(v < 0 or v >= joint.n_vars for v in subset):
        raise ValueError("variable index out of range")
    return _plogp(joint.marginal(subset))


def mutual_information(joint: DiscreteJoint, subset_a, subset_b) -> float:
    """I(A; B) = H(A) + H(B) - H(A u B) over disjoint variable subsets; >= 0."""
    a, b = tuple(subset_a), tuple(subset_b)
    if set(a) & set(b):
        raise ValueError("subsets must be disjoint")
    return entropy(joint, a) + entropy(joint, b) - entropy(joint, a + b)


def conditional_entropy(joint: DiscreteJoint, subset_a, given) -> float:
    """H(A | B) = H(A u B) - H(B)."""
    a, b = tuple(subset_a), tuple(given)
    return entropy(joint, a + b) - entropy(joint, b)


@dataclass
class Lemma1Report:
    premise_channel_preserves: bool
    cond_a_reconstruction: bool      # H(xhat | z, z_n) = 0
    cond_b_nuisance: bool            # I(z_n; y) = 0
    cond_c_independence: bool        # I(z; z_n) = 0
    i_x_y: float
    i_xhat_y: float
    i_z_y: float
    i_zn_y: float
    i_z_zn: float
    h_xhat_given_repr: float
    equality_holds: bool | None      # only asserted when all hypotheses hold

    @property
    def all_conditions_hold(self) -> bool:
        return (self.premise_channel_preserves and self.cond_a_reconstruction
                and self.cond_b_nuisance and self.cond_c_independence)

    def violated(self) -> list[str]:
        out = []
        if not self.premise_channel_preserves:
            out.append("premise")
        if not self.cond_a_reconstruction:
            out.append("a")
        if not self.cond_b_nuisance:
            out.append("b")
        if not self.cond_c_independence:
            out.append("c")
        return out


def verify_lemma1(joint_xy: DiscreteJoint, channel: np.ndarray,
                  fmap: np.ndarray, tol: float = 1e-10) -> Lemma1Report:
    """Check the lemma's hypotheses and conclusion by exact enumeration.

    `joint_xy` is p(x, y); `channel[x, xhat]` is the noisy-observation kernel
    p(xhat | x); `fmap[xhat] = (zhat, zhat_n)` is the deterministic encoder.
    Builds the full joint over (x, y, xhat, z, z_n), checks the channel premise
    I(x; y) = I(xhat; y) and the three conditions, and — when every hypothesis
    holds — asserts I(z; y) = I(x; y) within `tol`. A violated hypothesis is
    reported, not raised.
    """
    channel = np.asarray(channel, dtype=np.float64)
    fmap = np.asarray(fmap, dtype=np.int64)
    nx, ny = joint_xy.arities
    nxh = channel.shape[1]
    if channel.shape[0] != nx:
        raise ValueError("channel rows must match the arity of x")
    if np.any(channel < 0) or np.any(np.abs(channel.sum(axis=1) - 1.0) > 1e-12):
        raise ValueError("channel rows must be distributions")
    if fmap.shape != (nxh, 2):
        raise ValueError("fmap must give (zhat, zhat_n) per xhat state")
    nz = int(fmap[:, 0].max()) + 1
    nzn = int(fmap[:, 1].max()) + 1

    full = np.zeros((nx, ny, nxh, nz, nzn), dtype=np.float64)
    for xh in range(nxh):
        z, zn = fmap[xh]
        full[:, :, xh, z, zn] = joint_xy.table * channel[:, xh][:, None]
    joint = DiscreteJoint([nx, ny, nxh, nz, nzn], full)

    X, Y, XH, Z, ZN = range(5)
    i_x_y = mutual_information(joint, (X,), (Y,))
    i_xhat_y = mutual_information(joint, (XH,), (Y,))
    i_z_y = mutual_information(joint, (Z,), (Y,))
    i_zn_y = mutual_information(joint, (ZN,), (Y,))
    i_z_zn = mutual_information(joint, (Z,), (ZN,))
    h_xhat = conditional_entropy(joint, (XH,), (Z, ZN))

    report = Lemma1Report(
        premise_channel_preserves=abs(i_x_y - i_xhat_y) <= tol,
        cond_a_reconstruction=abs(h_xhat) <= tol,
        cond_b_nuisance=abs(i_zn_y) <= tol,
        cond_c_independence=abs(i_z_zn) <= tol,
        i_x_y=i_x_y, i_xhat_y=i_xhat_y, i_z_y=i_z_y,
        i_zn_y=i_zn_y, i_z_zn=i_z_zn, h_xhat_given_repr=h_xhat,
        equality_holds=None,
    )
    if report.all_conditions_hold:
        report.equality_holds = abs(i_z_y - i_x_y) <= tol
    return report


def load_lemma1_fixture(path) -> tuple[DiscreteJoint, np.ndarray, np.ndarray, str]:
    """Parse a fixture file: variable arities plus probability rows.

    Format (whitespace-separated, '#' comments):
        vars x=2 y=2 xhat=4
        joint_xy
        <x> <y> <prob>     (one row per nonzero entry)
        channel
        <x> <xhat> <prob>
        fmap
        <xhat> <zhat> <zhat_n>
        expect satisfied | violated <condition letters>
    """
    arities: dict[str, int] = {}
    joint_rows, channel_rows, fmap_rows = [], [], []
    expect = ""
    section = None
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            head = line.split()[0]
            if head == "vars":
                for tok in line.split()[1:]:
                    name, val = tok.split("=")
                    arities[name] = int(val)
            elif head in ("joint_xy", "channel", "fmap"):
                section = head
            elif head == "expect":
                expect = line.split(None, 1)[1]
            else:
                vals = line.split()
                if section == "joint_xy":
                    joint_rows.append((int(vals[0]), int(vals[1]), float(vals[2])))
                elif section == "channel":
                    channel_rows.append((int(vals[0]), int(vals[1]), float(vals[2])))
                elif section == "fmap":
                    fmap_rows.append((int(vals[0]), int(vals[1]), int(vals[2])))
                else:
                    raise ValueError(f"row outside any section: {line!r}")
    nx, ny, nxh = arities["x"], arities["y"], arities["xhat"]
    table = np.zeros((nx, ny))
    for x, y, p in joint_rows:
        table[x, y] = p
    channel = np.zeros((nx, nxh))
    for x, xh, p in channel_rows:
        channel[x, xh] = p
    fmap = np.zeros((nxh, 2), dtype=np.int64)
    for xh, z, zn in fmap_rows:
        fmap[xh] = (z, zn)
    return DiscreteJoint([nx, ny], table), channel, fmap, expect
