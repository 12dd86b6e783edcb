"""
Shadowing CLI handler
Shadows random (or configured) pseudo-orbits and compares with the hyperbolic oracle
"""

from typing import Optional

from app.models.schemas import StepStatus
from app.services.runner import ScenarioRunner

STEP = "shadow"

# Global runner (will be set by main.py)
runner: Optional[ScenarioRunner] = None


def register(subparsers, parents):
    parser = subparsers.add_parser(STEP, parents=parents, help="finite shadowing by foliated orbits")
    parser.set_defaults(handler=handle)
    return parser


def handle() -> StepStatus:
    status, report = runner.run_step(STEP)
    if status.status == "error":
        return status
    trials = report["trials"]
    shadowed = [row for row in trials if row["shadowed"]]
    print("📊 Shadowing:")
    print(f"   shadowed: {len(shadowed)} / {len(trials)}")
    if shadowed:
        print(f"   max offset: {max(row['max_offset'] for row in shadowed):.4g} (eps {report['eps']})")
    if report["exact_bound"] is not None and shadowed:
        print(f"   max exact gap: {max(row['exact_gap'] for row in shadowed):.4g} (bound {report['exact_bound']:.4g})")
    if any(row.get("resolution_limited") for row in trials):
        print("⚠️ Some trials are resolution-limited")
    return status
