"""Tools package - CLI commands, registry and factory"""
