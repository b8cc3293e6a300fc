"""Allow running as: python -m mono_gbdt <subcommand>"""
from mono_gbdt.cli import main
main()
