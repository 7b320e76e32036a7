"""Handlers package - CLI front end"""
