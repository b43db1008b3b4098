"""MCP tools exposing the analysis reports."""
