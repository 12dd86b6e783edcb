"""
Pydantic scenario and report models
"""
