"""Hydrothermal system model and single-stage subproblem construction.

A stage subproblem minimizes thermal plus deficit cost subject to bus
energy balance, reservoir mass balance, the autoregressive inflow
equation, and physical bounds. Incoming state (storages and inflow
lags) enters through dedicated copy variables pinned by equality rows;
the duals of those rows are exactly the state sensitivities used to
build cuts. For non-terminal stages the future is represented by one
epigraph variable per opening bounded below by its cut pool, aggregated
through the CVaR linear form.

Feasibility is guaranteed by a deficit slack per bus and free spill as
long as inflows remain nonnegative, which is the physical regime all
case generators and fixtures stick to.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .lp import EQUAL, GREATER, OPTIMAL, LPBuilder, solve
from .risk import RiskMeasure
from .scenario import ARProcess, NoiseRealization


class DimensionMismatch(ValueError):
    """State or noise data does not line up with the system case."""


class StageInfeasible(RuntimeError):
    """A stage subproblem failed to solve; internal error by design."""


@dataclass(frozen=True)
class Bus:
    name: str
    demand: tuple  # per-stage base demand


@dataclass(frozen=True)
class Line:
    from_bus: str
    to_bus: str
    capacity: float


@dataclass(frozen=True)
class Thermal:
    name: str
    bus: str
    cost: float
    cap: float


@dataclass(frozen=True)
class Hydro:
    name: str
    bus: str
    max_storage: float
    max_turbine: float
    production: float            # power per unit of turbined volume
    upstream: tuple = ()         # names of hydros spilling/releasing into this one
    ar_coeffs: tuple = ()        # lag coefficients, newest lag first
    initial_storage: float = 0.0
    initial_lags: tuple = ()     # newest first, length == len(ar_coeffs)


@dataclass(frozen=True)
class Renewable:
    name: str
    bus: str


@dataclass(frozen=True)
class SystemCase:
    buses: tuple
    lines: tuple = ()
    thermals: tuple = ()
    hydros: tuple = ()
    renewables: tuple = ()
    deficit_cost: float = 0.0
    future_lower_bound: float = 0.0  # floor for the epigraph variables

    def __post_init__(self):
        bus_names = {b.name for b in self.buses}
        if len(bus_names) != len(self.buses):
            raise ValueError("duplicate bus names")
        for coll, kind in ((self.thermals, "thermal"), (self.hydros, "hydro"),
                           (self.renewables, "renewable")):
            for item in coll:
                if item.bus not in bus_names:
                    raise ValueError(
                        f"{kind} {item.name!r} references unknown bus {item.bus!r}")
        for line in self.lines:
            if line.from_bus not in bus_names or line.to_bus not in bus_names:
                raise ValueError("line references unknown bus")
            if line.capacity < 0:
                raise ValueError("line capacity must be nonnegative")
        names = [h.name for h in self.hydros]
        if len(set(names)) != len(names):
            raise ValueError("duplicate hydro names")
        for h in self.hydros:
            if min(h.max_storage, h.max_turbine, h.production) < 0:
                raise ValueError(f"hydro {h.name!r} has a negative capacity")
            if not 0.0 <= h.initial_storage <= h.max_storage:
                raise ValueError(f"hydro {h.name!r} initial storage out of bounds")
            if len(h.initial_lags) != len(h.ar_coeffs):
                raise ValueError(
                    f"hydro {h.name!r} needs {len(h.ar_coeffs)} initial lags")
            for up in h.upstream:
                if up not in names:
                    raise ValueError(
                        f"hydro {h.name!r} lists unknown upstream {up!r}")
        _check_acyclic(self.hydros)
        for th in self.thermals:
            if th.cost < 0 or th.cap < 0:
                raise ValueError(f"thermal {th.name!r} has negative data")
            if self.deficit_cost <= th.cost:
                raise ValueError(
                    "deficit cost must exceed every thermal cost")

    @property
    def num_stages(self) -> int:
        return len(self.buses[0].demand) if self.buses else 0

    def ar_process(self) -> ARProcess:
        return ARProcess({h.name: tuple(h.ar_coeffs) for h in self.hydros})

    def state_dimension(self) -> int:
        return len(self.hydros) + sum(len(h.ar_coeffs) for h in self.hydros)

    def state_labels(self) -> list:
        labels = [("storage", h.name) for h in self.hydros]
        for h in self.hydros:
            labels.extend(("lag", h.name, k + 1) for k in range(len(h.ar_coeffs)))
        return labels


def _check_acyclic(hydros) -> None:
    children = {h.name: tuple(h.upstream) for h in hydros}
    seen, active = set(), set()

    def visit(name):
        if name in active:
            raise ValueError(f"hydro cascade contains a cycle through {name!r}")
        if name in seen:
            return
        active.add(name)
        for up in children[name]:
            visit(up)
        active.discard(name)
        seen.add(name)

    for h in hydros:
        visit(h.name)


class StateVector:
    """Reservoir storages plus per-hydro inflow lags (newest first)."""

    __slots__ = ("storages", "lags")

    def __init__(self, storages, lags):
        self.storages = np.ascontiguousarray(storages, dtype=float)
        self.lags = tuple(np.ascontiguousarray(l, dtype=float) for l in lags)

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.storages, *self.lags]) if self.lags \
            else self.storages.copy()

    def __eq__(self, other):
        return (isinstance(other, StateVector)
                and np.array_equal(self.storages, other.storages)
                and len(self.lags) == len(other.lags)
                and all(np.array_equal(a, b)
                        for a, b in zip(self.lags, other.lags)))

    def __repr__(self):
        return f"StateVector({self.storages.tolist()}, {[l.tolist() for l in self.lags]})"


def initial_state(case: SystemCase) -> StateVector:
    return StateVector([h.initial_storage for h in case.hydros],
                       [np.asarray(h.initial_lags, dtype=float)
                        for h in case.hydros])


def check_state(case: SystemCase, state: StateVector) -> None:
    if state.storages.shape != (len(case.hydros),):
        raise DimensionMismatch("storage vector does not match hydro count")
    if len(state.lags) != len(case.hydros):
        raise DimensionMismatch("lag list does not match hydro count")
    for h, lag in zip(case.hydros, state.lags):
        if lag.shape != (len(h.ar_coeffs),):
            raise DimensionMismatch(
                f"hydro {h.name!r} expects {len(h.ar_coeffs)} lags, "
                f"got {lag.shape[0]}")


@dataclass
class StageSolution:
    objective: float
    immediate_cost: float
    state_out: StateVector
    state_dual: np.ndarray
    betas: Optional[np.ndarray]   # None at the terminal stage
    primal: dict = field(default_factory=dict, repr=False)


def build_stage_lp(case: SystemCase, t: int, state_in: StateVector,
                   noise: NoiseRealization, cuts, measure: RiskMeasure,
                   num_stages: int, num_openings: int):
    """Stage-t subproblem as a LinearProgram.

    ``cuts`` holds one cut list per opening of stage t+1 (ignored at the
    terminal stage). Row tags: ("copy_stor", h) / ("copy_lag", h, k) pin
    the incoming state, everything else is physics or CVaR structure.
    """
    if not 1 <= t <= num_stages:
        raise DimensionMismatch(f"stage {t} outside 1..{num_stages}")
    check_state(case, state_in)
    bld = LPBuilder()
    terminal = t == num_stages

    g = {th.name: bld.add_var(("g", th.name), 0.0, th.cap, th.cost)
         for th in case.thermals}
    r = {}
    for re in case.renewables:
        try:
            cap = noise.renewable_cap[re.name]
        except KeyError:
            raise DimensionMismatch(
                f"noise lacks a cap for renewable {re.name!r}") from None
        r[re.name] = bld.add_var(("r", re.name), 0.0, cap)
    flow = {}
    for i, line in enumerate(case.lines):
        flow[(i, line.from_bus, line.to_bus)] = bld.add_var(
            ("f", i, line.from_bus), 0.0, line.capacity)
        flow[(i, line.to_bus, line.from_bus)] = bld.add_var(
            ("f", i, line.to_bus), 0.0, line.capacity)
    deficit = {b.name: bld.add_var(("deficit", b.name), 0.0, np.inf,
                                   case.deficit_cost)
               for b in case.buses}

    u = {h.name: bld.add_var(("u", h.name), 0.0, h.max_turbine)
         for h in case.hydros}
    spill = {h.name: bld.add_var(("spill", h.name), 0.0, np.inf)
             for h in case.hydros}
    vout = {h.name: bld.add_var(("vout", h.name), 0.0, h.max_storage)
            for h in case.hydros}
    inflow = {h.name: bld.add_var(("a", h.name), -np.inf, np.inf)
              for h in case.hydros}

    # Copy variables pinned to the incoming state; their rows carry the
    # state duals.
    vin, lagvar = {}, {}
    for j, h in enumerate(case.hydros):
        vin[h.name] = bld.add_var(("vin", h.name), -np.inf, np.inf)
        bld.add_row([(vin[h.name], 1.0)], EQUAL, float(state_in.storages[j]),
                    label=("copy_stor", h.name))
    for j, h in enumerate(case.hydros):
        for k in range(len(h.ar_coeffs)):
            lagvar[(h.name, k + 1)] = bld.add_var(("lag", h.name, k + 1),
                                                  -np.inf, np.inf)
            bld.add_row([(lagvar[(h.name, k + 1)], 1.0)], EQUAL,
                        float(state_in.lags[j][k]),
                        label=("copy_lag", h.name, k + 1))

    # Bus energy balance: generation + net imports + deficit = demand.
    for b in case.buses:
        demand = noise.demand.get(b.name, b.demand[t - 1])
        terms = [(deficit[b.name], 1.0)]
        terms += [(g[th.name], 1.0) for th in case.thermals if th.bus == b.name]
        terms += [(u[h.name], h.production) for h in case.hydros
                  if h.bus == b.name]
        terms += [(r[re.name], 1.0) for re in case.renewables
                  if re.bus == b.name]
        for i, line in enumerate(case.lines):
            if line.to_bus == b.name:
                terms.append((flow[(i, line.from_bus, line.to_bus)], 1.0))
                terms.append((flow[(i, line.to_bus, line.from_bus)], -1.0))
            elif line.from_bus == b.name:
                terms.append((flow[(i, line.to_bus, line.from_bus)], 1.0))
                terms.append((flow[(i, line.from_bus, line.to_bus)], -1.0))
        bld.add_row(terms, EQUAL, float(demand), label=("balance", b.name))

    # Reservoir mass balance and the AR inflow equation.
    for h in case.hydros:
        terms = [(vout[h.name], 1.0), (u[h.name], 1.0), (spill[h.name], 1.0),
                 (inflow[h.name], -1.0), (vin[h.name], -1.0)]
        terms += [(u[up], -1.0) for up in h.upstream]
        terms += [(spill[up], -1.0) for up in h.upstream]
        bld.add_row(terms, EQUAL, 0.0, label=("mass", h.name))

        try:
            eps = noise.inflow_noise[h.name]
        except KeyError:
            raise DimensionMismatch(
                f"noise lacks inflow for hydro {h.name!r}") from None
        ar_terms = [(inflow[h.name], 1.0)]
        ar_terms += [(lagvar[(h.name, k + 1)], -coef)
                     for k, coef in enumerate(h.ar_coeffs)]
        bld.add_row(ar_terms, EQUAL, float(eps), label=("ar", h.name))

    if not terminal:
        # Column index of every outgoing-state coordinate, in the same
        # flattened order cuts use: storages first, then lags per hydro
        # (newest outgoing lag is this stage's inflow variable).
        state_cols = [vout[h.name] for h in case.hydros]
        for h in case.hydros:
            p = len(h.ar_coeffs)
            if p:
                state_cols.append(inflow[h.name])
                state_cols.extend(lagvar[(h.name, k)] for k in range(1, p))

        lam, alpha = measure.lam, measure.alpha
        L = num_openings
        beta = [bld.add_var(("beta", l), case.future_lower_bound, np.inf,
                            (1.0 - lam) / L) for l in range(L)]
        z = bld.add_var("cvar_z", -np.inf, np.inf, lam)
        delta = [bld.add_var(("delta", l), 0.0, np.inf,
                             lam / ((1.0 - alpha) * L)) for l in range(L)]
        for l in range(L):
            bld.add_row([(delta[l], 1.0), (beta[l], -1.0), (z, 1.0)],
                        GREATER, 0.0, label=("cvar", l))
            for i, cut in enumerate(cuts[l] if cuts is not None else ()):
                grad = np.asarray(cut.gradient, dtype=float)
                if grad.shape != (len(state_cols),):
                    raise DimensionMismatch(
                        f"cut gradient dimension {grad.shape} != state "
                        f"dimension {len(state_cols)}")
                terms = [(beta[l], 1.0)]
                terms += [(col, -grad[c]) for c, col in enumerate(state_cols)
                          if grad[c] != 0.0]
                rhs = float(cut.intercept - grad @ cut.anchor)
                bld.add_row(terms, GREATER, rhs, label=("cut", l, i))

    return bld.build()


def solve_stage(case: SystemCase, t: int, state_in: StateVector,
                noise: NoiseRealization, cuts, measure: RiskMeasure,
                num_stages: int, num_openings: int) -> StageSolution:
    """Solve the stage subproblem and unpack state, duals, and betas."""
    lp = build_stage_lp(case, t, state_in, noise, cuts, measure,
                        num_stages, num_openings)
    sol = solve(lp)
    if sol.status != OPTIMAL:
        raise StageInfeasible(
            f"stage {t} subproblem ended {sol.status}; deficit slack and "
            f"free spill should keep every stage feasible")

    immediate = 0.0
    for th in case.thermals:
        immediate += th.cost * sol.value_of(("g", th.name))
    for b in case.buses:
        immediate += case.deficit_cost * sol.value_of(("deficit", b.name))

    storages = np.empty(len(case.hydros))
    lags = []
    for j, h in enumerate(case.hydros):
        storages[j] = sol.value_of(("vout", h.name))
        p = len(h.ar_coeffs)
        if p:
            lags.append(np.concatenate(
                [[sol.value_of(("a", h.name))], state_in.lags[j][:p - 1]]))
        else:
            lags.append(np.zeros(0))
    state_out = StateVector(storages, lags)

    dual = np.empty(case.state_dimension())
    pos = 0
    for h in case.hydros:
        dual[pos] = sol.dual_of(("copy_stor", h.name))
        pos += 1
    for h in case.hydros:
        for k in range(len(h.ar_coeffs)):
            dual[pos] = sol.dual_of(("copy_lag", h.name, k + 1))
            pos += 1

    betas = None
    if t < num_stages:
        betas = np.array([sol.value_of(("beta", l))
                          for l in range(num_openings)])
    return StageSolution(sol.objective, immediate, state_out, dual, betas,
                         primal={"lp": sol})
