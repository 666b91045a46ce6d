"""Regenerate the demo hitlist from the demo world."""

from pathlib import Path

from anycensus.netsim import SimWorld

DEMO = Path(__file__).resolve().parents[1] / "src" / "anycensus" / "data" / "demo"

world = SimWorld.load(DEMO / "world.yaml")
with open(DEMO / "hitlist-v4.txt", "w", encoding="utf-8") as fh:
    fh.write("# prefix address\n")
    for t in world.hitlist():
        fh.write(f"{t.prefix} {t.address}\n")
