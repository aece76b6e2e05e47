"""
Tools package for FrugalHop.
Contains the HTTP request helpers and file output helpers.
"""
