"""
Chain-Recurrence CLI handler
Runs the cr-set pipeline: chain graph, recurrent cells and periodic-leaf certificates
"""

from typing import Optional

from app.models.schemas import StepStatus
from app.services.runner import ScenarioRunner

STEP = "cr-set"

# Global runner (will be set by main.py)
runner: Optional[ScenarioRunner] = None


def register(subparsers, parents):
    parser = subparsers.add_parser(STEP, parents=parents, help="chain-recurrent cells and periodic-leaf certificates")
    parser.set_defaults(handler=handle)
    return parser


def handle() -> StepStatus:
    """Run cr-set on the injected runner and print a summary"""
    status, report = runner.run_step(STEP)
    if status.status == "error":
        return status
    recurrence = report["recurrence"]
    print("📊 Chain recurrence:")
    print(f"   recurrent cells: {recurrence['recurrent_cells']} / {recurrence['total_cells']}")
    print(f"   recurrent components: {recurrence['recurrent_components']}")
    certificates = report["certificates"]
    print(f"   certificates: {certificates['certified']} ok ({certificates['fresh']} fresh), "
          f"{len(report['certificate_failures'])} failed")
    density = report["periodic_density"]
    if density is not None:
        print(f"   periodic density gap: {density['max_gap']:.4g} (eps {density['eps']})")
    if recurrence["resolution_limited"]:
        print("⚠️ Result is resolution-limited")
    return status
