"""
Expansivity CLI handler
Scans expansivity constants for non-separating pairs of foliated orbits
"""

from typing import Optional

from app.models.schemas import StepStatus
from app.services.runner import ScenarioRunner

STEP = "expansivity-scan"

# Global runner (will be set by main.py)
runner: Optional[ScenarioRunner] = None


def register(subparsers, parents):
    parser = subparsers.add_parser(STEP, parents=parents, help="plaque expansivity violation search")
    parser.set_defaults(handler=handle)
    return parser


def handle() -> StepStatus:
    status, report = runner.run_step(STEP)
    if status.status == "error":
        return status
    print("📊 Expansivity scan:")
    for row in report["searches"]:
        print(f"   e={row['e']}: {row['result']} (viable pairs {row['viable_pairs']}, tried {row['candidates_tried']})")
    estimate = report.get("estimate")
    if estimate is not None:
        if "e" in estimate and "table" in estimate and estimate.get("certified", True):
            print(f"   certified e: {estimate['e']:.4g} at N={estimate['horizon']}")
        else:
            print("⚠️ Uniform expansivity estimate not certified")
    return status
