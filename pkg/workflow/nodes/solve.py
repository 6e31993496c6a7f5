"""
Solve node: dispatches the validated instance to the matching solver.
"""

import logging
from datetime import datetime
from typing import Any, Dict

from src.utils import settings
from workflow.core.access import no_access_baseline, solve_access
from workflow.core.continuum import (
    ContinuousProblem,
    convergence_study,
    dyadic_discretize,
    make_function,
    polynomial_density,
    solve_level,
)
from workflow.core.iron import CostModel, iron, optimal_q, principal_value
from workflow.core.mech import ContractSpec, GoodsSpec, contracting_solution, goods_mechanism
from workflow.core.sosd import JointDistribution, dominates, ds_factorization, survival_complement
from workflow.nodes import record_error

logger = logging.getLogger(__name__)


def _solver_options(options: Dict[str, Any]) -> Dict[str, Any]:
    return {"tol": options.get("tol"), "max_sweeps": options.get("max_sweeps")}


def _phi(options: Dict[str, Any]) -> str:
    return options.get("phi") or settings.section("iron").get("phi", "quadratic")


def _level(options: Dict[str, Any], fallback: int) -> int:
    return int(options.get("n") or fallback)


def solve_iron(state: Dict[str, Any]) -> Dict[str, Any]:
    instance, grid, options = state["instance"], state["grid"], state["options"]
    alpha = state["arrays"]["alpha"]
    cost = instance.cost or CostModel()
    result = iron(alpha, grid, phi=_phi(options), options=settings.iron_options(**_solver_options(options)))
    q = optimal_q(result.alpha_bar, cost)
    return {"ironing": result, "cost": cost, "q": q, "value": principal_value(alpha, q, cost, grid)}


def solve_access_rights(state: Dict[str, Any]) -> Dict[str, Any]:
    instance, grid, options = state["instance"], state["grid"], state["options"]
    alphas = state["arrays"]["alphas"]
    cost = instance.cost or CostModel()
    result = solve_access(alphas, grid, cost, settings.access_options(**_solver_options(options)))
    baseline, baseline_value = no_access_baseline(alphas, grid, cost, settings.iron_options(**_solver_options(options)))
    return {"access": result, "cost": cost, "baseline": baseline, "baseline_value": baseline_value}


def _discretize_all(specs, dimension: int, level: int, name: str):
    grid, arrays = None, []
    for i, spec in enumerate(specs):
        problem = ContinuousProblem(dimension=dimension, alpha_fn=make_function(spec.as_dict(), dimension),
                                    level=level, name=f"{name}[{i}]")
        grid, values = dyadic_discretize(problem, settings.continuum_options())
        arrays.append(values)
    return grid, arrays


def solve_goods(state: Dict[str, Any]) -> Dict[str, Any]:
    instance, options = state["instance"], state["options"]
    cost = instance.cost or CostModel()
    if instance.continuum is not None:
        spec_in = instance.continuum
        level = _level(options, spec_in.level)
        grid, values = _discretize_all(spec_in.values, spec_in.dimension, level, "values")
        revenues = None
        if spec_in.marginal_revenues is not None:
            _, revenues = _discretize_all(spec_in.marginal_revenues, spec_in.dimension, level, "marginal_revenues")
        state["grid"] = grid
    else:
        grid = state["grid"]
        values = state["arrays"]["values"]
        revenues = state["arrays"].get("marginal_revenues")

    spec = GoodsSpec(values=values, grid=grid, cost=cost, marginal_revenues=revenues)
    with_access = bool(options.get("with_access", False))
    outcome = goods_mechanism(
        spec,
        with_access=with_access,
        phi=_phi(options),
        iron_options=settings.iron_options(**_solver_options(options)),
        access_options=settings.access_options(**_solver_options(options)),
    )
    return {"mechanism": outcome, "spec": spec, "with_access": with_access}


def solve_contract(state: Dict[str, Any]) -> Dict[str, Any]:
    instance, grid, options = state["instance"], state["grid"], state["options"]
    spec = ContractSpec(costs=state["arrays"]["costs"], grid=grid, production=instance.production)
    outcome = contracting_solution(spec, phi=_phi(options), iron_options=settings.iron_options(**_solver_options(options)))
    return {"mechanism": outcome, "spec": spec}


def solve_sosd(state: Dict[str, Any]) -> Dict[str, Any]:
    grid, options = state["grid"], state["options"]
    tol = float(options.get("tol") or settings.section("majorize").get("tol", 1e-9))
    g_dist = JointDistribution(grid=grid, pmf=state["arrays"]["g"])
    f_dist = JointDistribution(grid=grid, pmf=state["arrays"]["f"])
    solution = {
        "g": g_dist,
        "f": f_dist,
        "g_bar": survival_complement(g_dist),
        "f_bar": survival_complement(f_dist),
        "first_order": dominates(g_dist, f_dist, "first", tol=tol),
        "second_order": dominates(g_dist, f_dist, "second", tol=tol),
    }
    requested = options.get("order")
    if requested:
        solution["requested_order"] = requested
    if grid.n_agents == 1:
        solution["factorization"] = ds_factorization(solution["f_bar"], solution["g_bar"], tol=tol)
    return solution


def _dyadic_problem(instance, level: int) -> ContinuousProblem:
    densities = None
    if instance.densities is not None:
        densities = [polynomial_density(coefs) for coefs in instance.densities]
    spec = instance.function.as_dict()
    return ContinuousProblem(
        dimension=instance.dimension,
        alpha_fn=make_function(spec, instance.dimension),
        level=level,
        densities=densities,
        name=spec.get("name", "polynomial"),
    )


def solve_dyadic(state: Dict[str, Any]) -> Dict[str, Any]:
    instance, options = state["instance"], state["options"]
    continuum_options = settings.continuum_options()
    iron_options = settings.iron_options(**_solver_options(options))
    levels = options.get("levels")
    if levels:
        problem = _dyadic_problem(instance, levels[0])
        rows, solutions = convergence_study(problem, levels, continuum_options, iron_options)
    else:
        level = _level(options, settings.section("continuum").get("level", 5))
        problem = _dyadic_problem(instance, level)
        rows, solutions = [], [solve_level(problem, continuum_options, iron_options, phi=_phi(options))]
    finest = solutions[-1]
    state["grid"] = finest.grid
    return {"problem": problem.at_level(finest.level), "levels": solutions, "convergence": rows, "finest": finest,
            "ironing": finest.result}


SOLVERS = {
    "iron": solve_iron,
    "access": solve_access_rights,
    "goods": solve_goods,
    "contract": solve_contract,
    "sosd": solve_sosd,
    "dyadic": solve_dyadic,
}


def solve_node(state: Dict[str, Any]) -> Dict[str, Any]:
    start_time = datetime.now()
    logger.info(f"=== SOLVE NODE STARTED - {state['source']} ===")

    try:
        state["current_stage"] = "solve"
        mode = state["instance"].mode
        state["solution"] = SOLVERS[mode](state)

        mechanism = state["solution"].get("mechanism")
        if mechanism is not None:
            state["warnings"].extend(mechanism.warnings)

        processing_time = (datetime.now() - start_time).total_seconds()
        state["processing_time"]["solve"] = processing_time
        state["messages"].append(f"Solve completed in {processing_time:.2f}s - mode {mode}")
        logger.info(f"=== SOLVE NODE COMPLETED - {processing_time:.2f}s ===")
        return state

    except Exception as e:
        logger.error(f"Error in solve node: {str(e)}", exc_info=True)
        return record_error(state, "solve", e)
