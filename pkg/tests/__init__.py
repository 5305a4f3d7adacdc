"""
Debiased ATE Tests Package
"""
