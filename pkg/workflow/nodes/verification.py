"""
Verification node: independent checks on every solver output.
Failed checks do not stop the pipeline; they mark the result unverified.
"""

import logging
from datetime import datetime
from typing import Any, Dict

import numpy as np

from src.utils import settings
from workflow.core.access import verify_access
from workflow.core.continuum import (
    KINKS,
    SampleSpec,
    cell_center_mask,
    divergence_residual,
    example3_alpha_bar,
    example3_lambda,
    sup_error_on,
)
from workflow.core.errors import IronkitError
from workflow.core.iron import verify_ironing
from workflow.core.majorize import majorizes
from workflow.core.mech import verify_ic_ir
from workflow.core.reports import VerificationReport
from workflow.core.sosd import utility_battery
from workflow.nodes import record_error

logger = logging.getLogger(__name__)


def _method(options: Dict[str, Any], grid) -> str:
    if options.get("method"):
        return options["method"]
    majorize = settings.section("majorize")
    if grid.size > int(majorize.get("exact_limit", 256)):
        return "transfers"
    return majorize.get("method", "oracle")


def _check_tol() -> float:
    return float(settings.section("iron").get("check_tol", 1e-6))


def verify_iron_mode(state: Dict[str, Any]) -> Dict[str, VerificationReport]:
    solution = state["solution"]
    report = verify_ironing(state["arrays"]["alpha"], solution["ironing"], state["grid"],
                            mode=_method(state["options"], state["grid"]), cost=solution["cost"], tol=_check_tol())
    return {"ironing": report}


def verify_access_mode(state: Dict[str, Any]) -> Dict[str, VerificationReport]:
    solution = state["solution"]
    report = verify_access(state["arrays"]["alphas"], solution["access"], state["grid"],
                           cost=solution["cost"], tol=_check_tol())
    return {"access": report}


def verify_mechanism_mode(state: Dict[str, Any]) -> Dict[str, VerificationReport]:
    solution = state["solution"]
    spec, outcome = solution["spec"], solution["mechanism"]
    reports = {"incentives": verify_ic_ir(spec, outcome, tol=float(settings.section("mech").get("ic_tol", 1e-8)))}
    if outcome.warnings:
        reports["incentives"].extras["advisory"] = True
        reports["incentives"].notes.append("Own-type monotonicity fails, so incentive checks are advisory")
    if outcome.kind == "goods":
        solver_mr = spec.marginal_revenues if spec.marginal_revenues is not None else outcome.virtual_values
        if outcome.access is not None:
            reports["access"] = verify_access(solver_mr, outcome.access, spec.grid, cost=spec.cost, tol=_check_tol())
        else:
            reports["ironing"] = verify_ironing(sum(solver_mr), outcome.ironing, spec.grid,
                                                mode=_method(state["options"], spec.grid), cost=spec.cost, tol=_check_tol())
    else:
        reports["ironing"] = verify_ironing(-outcome.virtual_values, outcome.ironing, spec.grid,
                                            mode=_method(state["options"], spec.grid), tol=_check_tol())
    return reports


def verify_sosd_mode(state: Dict[str, Any]) -> Dict[str, VerificationReport]:
    solution, options = state["solution"], state["options"]
    sosd = settings.section("sosd")
    battery = utility_battery(
        solution["g"], solution["f"],
        family=sosd.get("family", "cobb_douglas"),
        count=int(options.get("count") or sosd.get("count", 100)),
        seed=int(options.get("seed") if options.get("seed") is not None else sosd.get("seed", 0)),
        tol=float(sosd.get("battery_tol", 1e-10)),
        dominance=solution["second_order"],
    )

    report = VerificationReport(subject="dominance")
    try:
        flow = majorizes(solution["g_bar"], solution["f_bar"], state["grid"], method="flow")
        report.add("oracle_flow_agree", flow.verdict == solution["second_order"].verdict, value=flow.residual)
    except IronkitError as e:
        report.fail("oracle_flow_agree", e)
    if solution["first_order"].verdict and solution["second_order"].verdict is False:
        mean_gap = abs(float(np.sum(state["grid"].f * (solution["g_bar"] - solution["f_bar"]))))
        report.notes.append(f"First-order dominance without second-order: survival complements differ in mean by {mean_gap:.3e}")
    factorization = solution.get("factorization")
    if factorization is not None:
        report.add("factorization_matches_dominance", factorization.feasible == solution["second_order"].verdict)
    return {"utility_battery": battery, "dominance": report}


def _example3_closed_form(solution: Dict[str, Any]) -> VerificationReport:
    finest = solution["finest"]
    report = VerificationReport(subject="closed_form")
    grid = finest.grid
    lower = cell_center_mask(grid, lambda *x: sum(x) <= 0.9)
    upper = cell_center_mask(grid, lambda *x: sum(x) >= 1.1)
    ironed = finest.result.alpha_bar
    flat_error = sup_error_on(ironed, lambda *x: np.full(np.shape(x[0]), 0.5), grid, lower)
    report.add("constant_on_lower_triangle", flat_error <= 0.05, value=flat_error, tolerance=0.05)
    quad_error = sup_error_on(ironed, example3_alpha_bar, grid, upper)
    report.add("quadratic_above_kink", quad_error <= 0.05, value=quad_error, tolerance=0.05)
    return report


def verify_dyadic_mode(state: Dict[str, Any]) -> Dict[str, VerificationReport]:
    solution = state["solution"]
    finest = solution["finest"]
    reports = {"ironing": verify_ironing(finest.alpha, finest.result, finest.grid,
                                         mode=_method(state["options"], finest.grid), tol=_check_tol())}
    problem = solution["problem"]
    if problem.name == "example3" and problem.dimension == 2:
        reports["divergence"] = divergence_residual(
            problem, example3_alpha_bar, [example3_lambda(0), example3_lambda(1)],
            SampleSpec(kink=KINKS["example3"]), settings.continuum_options(),
        )
        reports["closed_form"] = _example3_closed_form(solution)
    return reports


VERIFIERS = {
    "iron": verify_iron_mode,
    "access": verify_access_mode,
    "goods": verify_mechanism_mode,
    "contract": verify_mechanism_mode,
    "sosd": verify_sosd_mode,
    "dyadic": verify_dyadic_mode,
}


def verification_node(state: Dict[str, Any]) -> Dict[str, Any]:
    start_time = datetime.now()
    logger.info(f"=== VERIFICATION NODE STARTED - {state['source']} ===")

    try:
        state["current_stage"] = "verification"
        reports = VERIFIERS[state["instance"].mode](state)
        state["reports"] = reports
        state["verified"] = all(report.passed or report.extras.get("advisory") for report in reports.values())

        failed = {name: report.failed_checks() for name, report in reports.items() if not report.passed}
        if failed:
            logger.warning(f"Verification failed: {failed}")

        processing_time = (datetime.now() - start_time).total_seconds()
        state["processing_time"]["verification"] = processing_time
        state["messages"].append(
            f"Verification completed in {processing_time:.2f}s - "
            f"{sum(r.passed for r in reports.values())}/{len(reports)} reports passed"
        )
        logger.info(f"=== VERIFICATION NODE COMPLETED - {processing_time:.2f}s ===")
        return state

    except Exception as e:
        logger.error(f"Error in verification node: {str(e)}", exc_info=True)
        return record_error(state, "verification", e)
