"""
CLI subcommand handlers package
"""
