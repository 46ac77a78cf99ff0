"""Finite control grids, relaxed schedules and per-particle control fields.

A relaxed schedule is a piecewise-constant-in-time probability vector over
the atoms of a grid.  A control field attaches to every particle a finite
distribution over schedules; a particle carrying several components is
integrated as several sub-particles (particle splitting).  Joint fields
attach distributions over (first-player, second-player) schedule pairs.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import (
    IncompleteResponse,
    InvalidKernel,
    SearchSpaceTooLarge,
    UnknownAtom,
)

MIXTURE_TOL = 1e-12
CONSISTENCY_TOL = 1e-10
ENUMERATION_CAP = 10**6

FIRST = "first"
SECOND = "second"


def other_player(player: str) -> str:
    if player == FIRST:
        return SECOND
    if player == SECOND:
        return FIRST
    raise ValueError(f"player must be 'first' or 'second', got {player!r}")


class ControlGrid:
    """Finite list of distinct control vectors."""

    def __init__(self, atoms, label: str = "U"):
        arr = np.asarray(atoms, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise ValueError("control grid needs at least one atom")
        if np.unique(arr, axis=0).shape[0] != arr.shape[0]:
            raise ValueError("control grid atoms must be distinct")
        arr.setflags(write=False)
        self.atoms = arr
        self.label = label

    def __len__(self):
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def atom(self, i: int) -> np.ndarray:
        return self.atoms[i]

    def index_of(self, atom) -> int:
        a = np.atleast_1d(np.asarray(atom, dtype=float))
        if a.shape != (self.dim,):
            raise UnknownAtom(f"{atom!r} is not an atom of grid {self.label}")
        hit = np.nonzero(np.all(np.abs(self.atoms - a) <= 1e-12, axis=1))[0]
        if hit.size == 0:
            raise UnknownAtom(f"{atom!r} is not an atom of grid {self.label}")
        return int(hit[0])

    def __repr__(self):
        vals = ", ".join(str(tuple(float(c) for c in a)) for a in self.atoms)
        return f"ControlGrid({self.label}: {vals})"


@dataclass(frozen=True)
class RelaxedSchedule:
    """Piecewise-constant mixture over grid atoms.

    ``breaks`` are the interior switching times; cell ``c`` spans
    ``[breaks[c-1], breaks[c])`` and carries ``mixtures[c]``.  A schedule with
    no breaks is constant in time.
    """

    breaks: tuple
    mixtures: tuple

    def __post_init__(self):
        if len(self.mixtures) != len(self.breaks) + 1:
            raise ValueError("need exactly one mixture per time cell")
        if any(b2 <= b1 for b1, b2 in zip(self.breaks, self.breaks[1:])):
            raise ValueError("schedule breaks must increase")
        n = len(self.mixtures[0])
        for mix in self.mixtures:
            if len(mix) != n:
                raise ValueError("all mixtures must share the atom count")
            if min(mix) < -MIXTURE_TOL or abs(sum(mix) - 1.0) > MIXTURE_TOL:
                raise InvalidKernel(f"mixture {mix!r} is not a probability vector")

    @classmethod
    def pure(cls, index: int, n_atoms: int) -> "RelaxedSchedule":
        mix = [0.0] * n_atoms
        mix[index] = 1.0
        return cls((), (tuple(mix),))

    @classmethod
    def constant(cls, mixture) -> "RelaxedSchedule":
        return cls((), (tuple(float(p) for p in mixture),))

    @classmethod
    def piecewise(cls, breaks, mixtures) -> "RelaxedSchedule":
        return cls(
            tuple(float(b) for b in breaks),
            tuple(tuple(float(p) for p in mix) for mix in mixtures),
        )

    @classmethod
    def pure_piecewise(cls, breaks, indices, n_atoms: int) -> "RelaxedSchedule":
        mixes = []
        for i in indices:
            mix = [0.0] * n_atoms
            mix[int(i)] = 1.0
            mixes.append(mix)
        return cls.piecewise(breaks, mixes)

    @property
    def n_atoms(self) -> int:
        return len(self.mixtures[0])

    def cell_of(self, t: float) -> int:
        return int(np.searchsorted(self.breaks, t, side="right"))

    def mixture_at(self, t: float) -> np.ndarray:
        return np.asarray(self.mixtures[self.cell_of(t)])

    def is_constant(self) -> bool:
        return len(self.breaks) == 0

    def is_pure(self) -> bool:
        return all(max(mix) == 1.0 for mix in self.mixtures)

    def pure_index_at(self, t: float) -> Optional[int]:
        mix = self.mixtures[self.cell_of(t)]
        return mix.index(1.0) if max(mix) == 1.0 else None

    def key(self) -> tuple:
        return (
            self.breaks,
            tuple(tuple(round(p, 12) for p in mix) for mix in self.mixtures),
        )


Component = tuple  # (weight, RelaxedSchedule)


def _normalize_components(entry) -> list:
    if isinstance(entry, RelaxedSchedule):
        return [(1.0, entry)]
    comps = [(float(w), s) for w, s in entry if w > 0]
    if not comps or abs(sum(w for w, _ in comps) - 1.0) > MIXTURE_TOL:
        raise InvalidKernel("component weights must be positive and sum to 1")
    return comps


@dataclass
class ControlField:
    """Per-particle distribution over schedules of one player.

    ``entries[i]`` is a list of ``(weight, RelaxedSchedule)`` components.
    """

    player: str
    grid: ControlGrid
    entries: list

    def __post_init__(self):
        other_player(self.player)
        self.entries = [_normalize_components(e) for e in self.entries]
        for comps in self.entries:
            for _, sched in comps:
                if sched.n_atoms != len(self.grid):
                    raise UnknownAtom("schedule length does not match the grid")

    @property
    def n_particles(self) -> int:
        return len(self.entries)

    @property
    def constant_flag(self) -> bool:
        return all(s.is_constant() and s.is_pure() for comps in self.entries for _, s in comps)

    def is_pure(self) -> bool:
        return all(len(comps) == 1 and comps[0][1].is_pure() for comps in self.entries)

    def atom_mixture(self, i: int, t: float = 0.0) -> np.ndarray:
        """Distribution over grid atoms that particle ``i`` uses at time ``t``."""
        out = np.zeros(len(self.grid))
        for w, s in self.entries[i]:
            out += w * s.mixture_at(t)
        return out

    def pure_indices(self, t: float = 0.0) -> np.ndarray:
        if not self.is_pure():
            raise ValueError("field is not pure")
        return np.array([comps[0][1].pure_index_at(t) for comps in self.entries])

    @classmethod
    def from_indices(cls, player, grid, indices) -> "ControlField":
        return cls(player, grid, [RelaxedSchedule.pure(int(i), len(grid)) for i in indices])

    @classmethod
    def from_mixtures(cls, player, grid, mixtures) -> "ControlField":
        """Constant field: particle ``i`` picks atom ``a`` with prob ``mixtures[i][a]``."""
        entries = []
        for mix in np.asarray(mixtures, dtype=float):
            entries.append(
                [(float(p), RelaxedSchedule.pure(a, len(grid))) for a, p in enumerate(mix) if p > 0]
            )
        return cls(player, grid, entries)


def make_constant_field(measure, assignment, player: str, grid: ControlGrid) -> ControlField:
    """Constant pure field from a particle -> atom assignment.

    ``assignment`` is a sequence of atoms (one per particle) or a callable
    mapping a particle's coordinates to an atom.
    """
    n = measure.n
    if callable(assignment):
        atoms = [assignment(measure.points[i]) for i in range(n)]
    else:
        atoms = list(assignment)
    if len(atoms) != n:
        raise IncompleteResponse(f"assignment covers {len(atoms)} of {n} particles")
    return ControlField.from_indices(player, grid, [grid.index_of(a) for a in atoms])


@dataclass
class JointControlField:
    """Per-particle distribution over (first-player, second-player) schedule pairs."""

    entries: list  # per particle: list of (weight, u_schedule, v_schedule)
    declared_marginal: Optional[tuple] = None  # (player, ControlField)

    def __post_init__(self):
        for comps in self.entries:
            if abs(sum(c[0] for c in comps) - 1.0) > MIXTURE_TOL or any(c[0] <= 0 for c in comps):
                raise InvalidKernel("joint mixture weights must be positive and sum to 1")

    @property
    def n_particles(self) -> int:
        return len(self.entries)

    def marginal_components(self, player: str, i: int) -> dict:
        pos = 1 if player == FIRST else 2
        out: dict = {}
        for comp in self.entries[i]:
            key = comp[pos].key()
            out[key] = out.get(key, 0.0) + comp[0]
        return out

    def is_pure_response(self) -> bool:
        """True when the non-declared player's schedules are all point masses."""
        if self.declared_marginal is None:
            return False
        own = 1 if self.declared_marginal[0] == FIRST else 2
        pos = 3 - own
        for comps in self.entries:
            # each committed schedule must meet exactly one point-mass answer
            keys = [comp[own].key() for comp in comps]
            if len(set(keys)) != len(keys) or not all(comp[pos].is_pure() for comp in comps):
                return False
        return True

    @classmethod
    def from_pure(cls, u_indices, v_indices, n_u: int, n_v: int, breaks=()) -> "JointControlField":
        """Pure pair per particle; indices may be ``(cells, N)`` with ``breaks``."""
        u = np.asarray(u_indices).reshape(len(breaks) + 1, -1)
        v = np.asarray(v_indices).reshape(len(breaks) + 1, -1)
        entries = []
        for i in range(u.shape[1]):
            entries.append([(
                1.0,
                RelaxedSchedule.pure_piecewise(breaks, u[:, i], n_u),
                RelaxedSchedule.pure_piecewise(breaks, v[:, i], n_v),
            )])
        return cls(entries)


def _is_mixture(answer) -> bool:
    """A list of ``(weight, schedule)`` pairs, as opposed to a list of answers."""
    return len(answer) > 0 and all(
        isinstance(c, tuple) and len(c) == 2 and isinstance(c[1], RelaxedSchedule) for c in answer
    )


def join_with_response(base: ControlField, response) -> JointControlField:
    """Joint field whose ``base.player`` marginal is ``base`` by construction.

    ``response[i][c]`` answers component ``c`` of particle ``i`` with either a
    schedule or a list of ``(weight, schedule)`` for the other player.  A bare
    schedule in place of ``response[i]`` answers all components of particle ``i``.
    """
    if len(response) != base.n_particles:
        raise IncompleteResponse(
            f"response covers {len(response)} of {base.n_particles} particles"
        )
    entries = []
    for i, comps in enumerate(base.entries):
        resp_i = response[i]
        if isinstance(resp_i, RelaxedSchedule):
            # one schedule answers every component alike
            resp_i = [resp_i] * len(comps)
        elif len(comps) == 1 and (not isinstance(resp_i, (list, tuple)) or _is_mixture(resp_i)):
            resp_i = [resp_i]
        if len(resp_i) != len(comps):
            raise IncompleteResponse(f"particle {i}: {len(resp_i)} answers for {len(comps)} components")
        joint = []
        for (w, sched), answer in zip(comps, resp_i):
            if answer is None:
                raise IncompleteResponse(f"particle {i} has an unanswered component")
            for w2, other in _normalize_components(answer):
                pair = (sched, other) if base.player == FIRST else (other, sched)
                joint.append((w * w2, pair[0], pair[1]))
        entries.append(joint)
    return JointControlField(entries, (base.player, base))


def validate_consistency(k: JointControlField, tol: float = CONSISTENCY_TOL) -> bool:
    """Does the joint field's declared-player marginal equal the declared field?"""
    if k.declared_marginal is None:
        raise ValueError("joint field has no declared marginal")
    player, base = k.declared_marginal
    if base.n_particles != k.n_particles:
        return False
    for i in range(k.n_particles):
        got = k.marginal_components(player, i)
        want: dict = {}
        for w, s in base.entries[i]:
            want[s.key()] = want.get(s.key(), 0.0) + w
        for key in set(got) | set(want):
            if abs(got.get(key, 0.0) - want.get(key, 0.0)) > tol:
                return False
    return True


def product_field(alpha: ControlField, beta: ControlField) -> JointControlField:
    """Independent coupling of a first-player and a second-player field."""
    if alpha.player != FIRST or beta.player != SECOND:
        raise ValueError("product_field expects (first, second) fields")
    entries = []
    for ca, cb in zip(alpha.entries, beta.entries):
        entries.append([(wa * wb, sa, sb) for wa, sa in ca for wb, sb in cb])
    return JointControlField(entries, (FIRST, alpha))


def count_pure_fields(n_atoms: int, n_particles: int, time_cells: int) -> int:
    return n_atoms ** (n_particles * time_cells)


def enumerate_pure_fields(
    grid, n_particles: int, time_cells: int = 1, cap: int = ENUMERATION_CAP
) -> Iterator[np.ndarray]:
    """All pure piecewise-constant assignments, lexicographic.

    Items are ``(time_cells, n_particles)`` arrays of atom indices; the last
    particle of the last cell varies fastest.
    """
    n_atoms = grid if isinstance(grid, int) else len(grid)
    total = count_pure_fields(n_atoms, n_particles, time_cells)
    if total > cap:
        raise SearchSpaceTooLarge(f"{total} assignments exceed the cap {cap}")
    for combo in itertools.product(range(n_atoms), repeat=n_particles * time_cells):
        yield np.asarray(combo, dtype=int).reshape(time_cells, n_particles)


def all_pure_assignments(n_atoms: int, n_particles: int) -> np.ndarray:
    """``(n_atoms**n_particles, n_particles)`` table, same order as the enumerator."""
    if n_particles == 0:
        return np.zeros((1, 0), dtype=int)
    grids = np.meshgrid(*[np.arange(n_atoms)] * n_particles, indexing="ij")
    return np.stack([g.reshape(-1) for g in grids], axis=1)
