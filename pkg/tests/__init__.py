"""
Test package for FrugalHop.
"""
