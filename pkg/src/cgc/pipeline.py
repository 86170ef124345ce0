"""End-to-end solve: assemble, initialise, minimise, extract models."""

from __future__ import annotations

from .optimizer import OptimizerOptions, init_state, minimize_flat
from .solver import CgcObjective, CgcProblem, CgcSolution


def solve(p: CgcProblem, opts: OptimizerOptions | None = None, init="observed_mean",
          objective: CgcObjective | None = None) -> CgcSolution:
    """Minimise the assembled objective of ``p``.

    ``init`` is an init strategy name or a ready :class:`SolveState`.
    """
    obj = objective if objective is not None else CgcObjective(p)
    state0 = init_state(p, init) if isinstance(init, str) else init
    res = minimize_flat(obj, obj.pack(state0), opts)
    state = obj.unpack(res.x)
    return CgcSolution(
        state=state,
        models=obj.extract_models(res.x),
        objective_trace=[e.objective for e in res.trace.entries if e.accepted],
        termination=res.termination.value,
        terms=obj.terms(res.x),
        trace=res.trace,
    )
