"""
FrugalHop package - budgeted multi-hop retrieval, stopping rewards and QA metrics.
"""

__version__ = '0.1.0'
