"""Integration tests requiring real API credentials.

Run with: pytest tests/integration/ --run-slow
"""
