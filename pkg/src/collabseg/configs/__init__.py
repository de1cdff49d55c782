"""Packaged experiment profiles."""
