"""
Makes the tests importable as timbrewm.tests
"""
