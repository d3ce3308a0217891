import sys

from . import load_config, serve


def entry() -> int:
    if len(sys.argv) != 2 or sys.argv[1] in ("-h", "--help"):
        print("usage: python -m tta_adapter <config.json>", file=sys.stderr)
        return 2
    try:
        config = load_config(sys.argv[1])
    except (OSError, ValueError) as exc:
        print(f"tta-adapter: {exc}", file=sys.stderr)
        return 2
    return serve(config)


if __name__ == "__main__":
    sys.exit(entry())
