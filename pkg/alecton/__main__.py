"""Module entrypoint for `python -m alecton`."""

from alecton.cli import main

if __name__ == "__main__":
    raise SystemExit(main())
