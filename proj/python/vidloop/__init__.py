"""Python bindings for the vidloop core."""

from ._vidloop import *  # noqa: F401,F403
from ._vidloop import __doc__  # noqa: F401


def main() -> None:
    import sys

    from ._vidloop import cli

    code, out, err = cli(sys.argv[1:])
    sys.stdout.write(out)
    sys.stderr.write(err)
    raise SystemExit(code)
