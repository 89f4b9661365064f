import sys

from .server import serve


def main() -> int:
    serve()
    return 0


if __name__ == "__main__":
    sys.exit(main())
