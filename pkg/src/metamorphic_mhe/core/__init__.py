"""Command line entry point and MCP server."""
