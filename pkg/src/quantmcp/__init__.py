"""Financial data tools served over newline-delimited JSON-RPC.

The package wires schema-described tools (historical retrieval, quotes,
summary statistics) to pluggable data providers, normalizes everything into
canonical per-day records, and keeps credentials, rate limits, and caching
server-side. See README.md for the wire protocol, config format, and CLI.
"""

__version__ = "0.1.0"
