"""
Quotient CLI handler
Induced map on the leaf space and transfer of shadowing to it
"""

from typing import Optional

from app.models.schemas import StepStatus
from app.services.runner import ScenarioRunner

STEP = "quotient"

# Global runner (will be set by main.py)
runner: Optional[ScenarioRunner] = None


def register(subparsers, parents):
    parser = subparsers.add_parser(STEP, parents=parents, help="quotient dynamics and shadowing transfer")
    parser.set_defaults(handler=handle)
    return parser


def handle() -> StepStatus:
    status, report = runner.run_step(STEP)
    if status.status == "error":
        return status
    transfer = report["transfer"]
    ok = sum(1 for row in transfer["trials"] if row["passed"])
    print("📊 Quotient transfer:")
    print(f"   commuting defect: {report['system']['commuting_defect']:.3g}")
    print(f"   trials passed: {ok} / {len(transfer['trials'])} (bound {transfer['bound']:.4g})")
    return status
