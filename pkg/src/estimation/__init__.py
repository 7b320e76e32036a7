"""
Estimation package - bilinear kernels, ADMM stages và centralized oracles
"""
