"""python -m ablmta entry point."""
from .cli import main

main()
