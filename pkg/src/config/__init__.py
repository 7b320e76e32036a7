"""Configuration package - CLI command configs"""
