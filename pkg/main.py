import sys

from speechaudit_hub.cli.interface import main

if __name__ == "__main__":
    sys.exit(main())
