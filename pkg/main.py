import sys

sys.path.insert(0, "src")

from binprop.cli import main


if __name__ == "__main__":
    sys.exit(main())
