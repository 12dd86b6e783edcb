"""
Utils package for foliashadow
"""
