"""Distributed robust bilinear state estimation (D-RBSE)"""
