"""
Entry point for the perforated backpropagation toolkit

    python main.py train --config configs/two_spirals.json --cycles 0
    python main.py sweep --config configs/two_spirals.json
    python main.py cost --hourly 0.31 --tps 1581885
"""

import sys

from app.cli.commands import run_command

if __name__ == "__main__":
    sys.exit(run_command(sys.argv[1:]))
