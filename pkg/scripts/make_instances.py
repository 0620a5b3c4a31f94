"""Regenerate the pinned MDP files in data/."""

from pathlib import Path

from qnpg.instances import PINNED
from qnpg.mdp import save_mdp

if __name__ == "__main__":
    out = Path(__file__).resolve().parent.parent / "data"
    out.mkdir(exist_ok=True)
    for name, build in PINNED.items():
        save_mdp(build(), out / f"{name}.json")
        print(out / f"{name}.json")
