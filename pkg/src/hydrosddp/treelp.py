"""Exact oracle: one monolithic LP over the expanded scenario tree.

Every node carries its own dispatch block (physics rows identical to the
single-stage subproblem, linked to the parent through storage variables
and ancestor inflows); every internal node carries a risk block with an
anchor z, per-child excesses delta, and per-child value variables theta
tied by equality to the child's immediate cost plus the child's own risk
term. The root objective is its immediate cost plus its risk term, which
makes the LP optimum the exact nested risk-adjusted cost.

This is the reference the SDDP engine is validated against: cut
validity, converged lower bounds, and exact policy values all compare
to numbers produced here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .hydro import StateVector, SystemCase, check_state, initial_state
from .lp import EQUAL, GREATER, OPTIMAL, LPBuilder, solve
from .risk import RiskMeasure
from .scenario import Lattice, TreeTooLarge

NODE_CAP = 10_000


@dataclass
class TreeNode:
    stage: int
    opening: Optional[int]          # 0-based; None at a deterministic root
    parent: Optional[int]           # index into the node list
    children: list = field(default_factory=list)


def expand_tree(lattice: Lattice, root_stage: int, cap: int = NODE_CAP):
    """Breadth-first node list of the subtree rooted at `root_stage`."""
    depth = lattice.num_stages - root_stage
    L = lattice.num_openings
    count = sum(L ** d for d in range(depth + 1))
    if count > cap:
        raise TreeTooLarge(f"{count} tree nodes exceed the cap of {cap}")
    nodes = [TreeNode(root_stage, None, None)]
    frontier = [0]
    for stage in range(root_stage + 1, lattice.num_stages + 1):
        next_frontier = []
        for parent in frontier:
            for l in range(L):
                nodes.append(TreeNode(stage, l, parent))
                nodes[parent].children.append(len(nodes) - 1)
                next_frontier.append(len(nodes) - 1)
        frontier = next_frontier
    return nodes


def build_subtree_lp(case: SystemCase, lattice: Lattice, measure: RiskMeasure,
                     root_stage: int, root_state: StateVector,
                     root_opening: Optional[int] = None,
                     cap: int = NODE_CAP):
    """LP whose optimum is the exact cost-to-go from (root_stage, opening)
    with the incoming state fixed to `root_state`."""
    check_state(case, root_state)
    nodes = expand_tree(lattice, root_stage, cap)
    L = lattice.num_openings
    lam, alpha = measure.lam, measure.alpha
    bld = LPBuilder()

    g, r, deficit, flow = {}, {}, {}, {}
    u, spill, vout, inflow = {}, {}, {}, {}
    theta, delta, zvar = {}, {}, {}

    for n, node in enumerate(nodes):
        for th in case.thermals:
            g[(n, th.name)] = bld.add_var((n, "g", th.name), 0.0, th.cap)
        noise = (lattice.stage_noise(node.stage, root_opening) if n == 0
                 else lattice.noise(node.stage, node.opening))
        for re in case.renewables:
            r[(n, re.name)] = bld.add_var((n, "r", re.name), 0.0,
                                          noise.renewable_cap[re.name])
        for i, line in enumerate(case.lines):
            flow[(n, i, line.from_bus)] = bld.add_var(
                (n, "f", i, line.from_bus), 0.0, line.capacity)
            flow[(n, i, line.to_bus)] = bld.add_var(
                (n, "f", i, line.to_bus), 0.0, line.capacity)
        for b in case.buses:
            deficit[(n, b.name)] = bld.add_var((n, "deficit", b.name),
                                               0.0, np.inf)
        for h in case.hydros:
            u[(n, h.name)] = bld.add_var((n, "u", h.name), 0.0, h.max_turbine)
            spill[(n, h.name)] = bld.add_var((n, "spill", h.name), 0.0, np.inf)
            vout[(n, h.name)] = bld.add_var((n, "vout", h.name), 0.0,
                                            h.max_storage)
            inflow[(n, h.name)] = bld.add_var((n, "a", h.name),
                                              -np.inf, np.inf)
        if node.children:
            for l in range(L):
                theta[(n, l)] = bld.add_var((n, "theta", l), -np.inf, np.inf)
                delta[(n, l)] = bld.add_var((n, "delta", l), 0.0, np.inf)
            zvar[n] = bld.add_var((n, "z"), -np.inf, np.inf)

        for b in case.buses:
            demand = noise.demand.get(b.name, b.demand[node.stage - 1])
            terms = [(deficit[(n, b.name)], 1.0)]
            terms += [(g[(n, th.name)], 1.0) for th in case.thermals
                      if th.bus == b.name]
            terms += [(u[(n, h.name)], h.production) for h in case.hydros
                      if h.bus == b.name]
            terms += [(r[(n, re.name)], 1.0) for re in case.renewables
                      if re.bus == b.name]
            for i, line in enumerate(case.lines):
                if line.to_bus == b.name:
                    terms.append((flow[(n, i, line.from_bus)], 1.0))
                    terms.append((flow[(n, i, line.to_bus)], -1.0))
                elif line.from_bus == b.name:
                    terms.append((flow[(n, i, line.to_bus)], 1.0))
                    terms.append((flow[(n, i, line.from_bus)], -1.0))
            bld.add_row(terms, EQUAL, float(demand), label=(n, "balance", b.name))

        for j, h in enumerate(case.hydros):
            terms = [(vout[(n, h.name)], 1.0), (u[(n, h.name)], 1.0),
                     (spill[(n, h.name)], 1.0), (inflow[(n, h.name)], -1.0)]
            terms += [(u[(n, up)], -1.0) for up in h.upstream]
            terms += [(spill[(n, up)], -1.0) for up in h.upstream]
            rhs = 0.0
            if node.parent is None:
                rhs = float(root_state.storages[j])
            else:
                terms.append((vout[(node.parent, h.name)], -1.0))
            bld.add_row(terms, EQUAL, rhs, label=(n, "mass", h.name))

            # AR row; lag k of stage tau is the inflow of stage tau-k,
            # an ancestor variable inside the subtree or a fixed lag of
            # the root state outside it.
            ar_terms = [(inflow[(n, h.name)], 1.0)]
            try:
                rhs = float(noise.inflow_noise[h.name])
            except KeyError:
                raise KeyError(
                    f"noise lacks inflow for hydro {h.name!r}") from None
            for k, coef in enumerate(h.ar_coeffs, start=1):
                ref_stage = node.stage - k
                if ref_stage >= root_stage:
                    anc = n
                    for _ in range(k):
                        anc = nodes[anc].parent
                    ar_terms.append((inflow[(anc, h.name)], -coef))
                else:
                    rhs += coef * float(root_state.lags[j][root_stage - 1 - ref_stage])
            bld.add_row(ar_terms, EQUAL, rhs, label=(n, "ar", h.name))

    def cost_terms(n):
        terms = [(g[(n, th.name)], th.cost) for th in case.thermals]
        terms += [(deficit[(n, b.name)], case.deficit_cost)
                  for b in case.buses]
        return terms

    def risk_terms(n):
        if not nodes[n].children:
            return []
        terms = [(theta[(n, l)], (1.0 - lam) / L) for l in range(L)]
        terms.append((zvar[n], lam))
        terms += [(delta[(n, l)], lam / ((1.0 - alpha) * L)) for l in range(L)]
        return terms

    for n, node in enumerate(nodes):
        if not node.children:
            continue
        for l, child in enumerate(node.children):
            # theta_{n,l} = immediate cost of child + child risk term
            terms = [(theta[(n, l)], 1.0)]
            terms += [(col, -coef) for col, coef in cost_terms(child)]
            terms += [(col, -coef) for col, coef in risk_terms(child)]
            bld.add_row(terms, EQUAL, 0.0, label=(n, "value", l))
            bld.add_row([(delta[(n, l)], 1.0), (theta[(n, l)], -1.0),
                         (zvar[n], 1.0)], GREATER, 0.0, label=(n, "excess", l))

    for col, coef in cost_terms(0) + risk_terms(0):
        bld.set_cost(col, coef)
    return bld.build()


def build_tree_lp(case: SystemCase, lattice: Lattice, measure: RiskMeasure,
                  cap: int = NODE_CAP):
    """Deterministic-equivalent LP of the whole problem."""
    return build_subtree_lp(case, lattice, measure, 1, initial_state(case),
                            None, cap)


def tree_objective(case: SystemCase, lattice: Lattice, measure: RiskMeasure,
                   cap: int = NODE_CAP) -> float:
    """Exact optimal nested risk-adjusted cost."""
    sol = solve(build_tree_lp(case, lattice, measure, cap))
    if sol.status != OPTIMAL:
        raise RuntimeError(f"tree LP ended {sol.status}")
    return sol.objective


def exact_cost_to_go(case: SystemCase, lattice: Lattice, measure: RiskMeasure,
                     t: int, state: StateVector, opening: Optional[int] = None,
                     cap: int = NODE_CAP) -> float:
    """Exact Q_t(state, opening): optimum of the subtree LP rooted there."""
    sol = solve(build_subtree_lp(case, lattice, measure, t, state,
                                 opening, cap))
    if sol.status != OPTIMAL:
        raise RuntimeError(f"subtree LP ended {sol.status}")
    return sol.objective
