"""
Semiconjugation CLI handler
Builds the set-valued semiconjugacy for a perturbed map and checks the stability contract
"""

from typing import Optional

from app.models.schemas import StepStatus
from app.services.runner import ScenarioRunner

STEP = "semiconj"

# Global runner (will be set by main.py)
runner: Optional[ScenarioRunner] = None


def register(subparsers, parents):
    parser = subparsers.add_parser(STEP, parents=parents, help="set-valued semiconjugacy and stability contract")
    parser.set_defaults(handler=handle)
    return parser


def handle() -> StepStatus:
    status, report = runner.run_step(STEP)
    if status.status == "error":
        return status
    stability = report["stability"]
    print("📊 Stability contract:")
    print(f"   samples: {report['semiconjugation']['samples']}")
    print(f"   C0 bound: {stability['c0_bound']:.4g} (eps' {stability['eps_prime']:.4g})")
    print(f"   step inclusion defect: {stability['step_inclusion_defect']:.3g} (cell {stability['step_tol']:.3g})")
    if stability['map_distance'] is not None:
        print(f"   d_C0(f, g): <= {stability['map_distance'][1]:.4g} (delta {stability['delta']})")
    print(f"   valuation defect: {stability['valuation_defect']:.3g}")
    print(f"   continuity: {'✅' if stability['continuity_ok'] else '❌'}")
    print(f"   sweep: {'✅' if stability['sweep'].get('passed', True) else '❌'}")
    return status
