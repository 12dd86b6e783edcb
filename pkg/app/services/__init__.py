"""
Numeric services and the scenario runner
"""
