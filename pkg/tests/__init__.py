"""Test package for the D-RBSE estimator"""
