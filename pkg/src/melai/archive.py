"""Controller archive: best controller per robot type."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from .controller import ElmanController
from .cppn_neat import StructuralError
from .morphogen import RobotType


@dataclass
class ArchiveCell:
    controller: ElmanController
    task_performance: float
    generation_inserted: int = 0
    generation_updated: int = 0


class ArchiveStats(NamedTuple):
    count: int
    mean_f: float | None
    best_f: float | None


def compatibility(f_c: float, f_l: float) -> float:
    return 1.0 - abs(f_c - f_l)


class ControllerArchive:
    def __init__(self):
        self.cells: dict[RobotType, ArchiveCell] = {}
        self.lookups = 0

    def __len__(self) -> int:
        return len(self.cells)

    def __contains__(self, rtype) -> bool:
        return RobotType(*rtype) in self.cells

    def lookup(self, rtype) -> ElmanController | None:
        self.lookups += 1
        cell = self.cells.get(RobotType(*rtype))
        return None if cell is None else cell.controller.copy()

    def stored_performance(self, rtype) -> float | None:
        cell = self.cells.get(RobotType(*rtype))
        return None if cell is None else cell.task_performance

    def update(self, rtype, controller: ElmanController, f: float, generation: int = 0) -> str:
        """Store ``controller`` if its cell is empty or ``f`` beats the incumbent."""
        rtype = RobotType(*rtype)
        if not controller.matches(rtype):
            raise StructuralError(f"controller for {tuple(controller.robot_type)} offered to cell {tuple(rtype)}")
        if not math.isfinite(f):
            raise ValueError("task performance must be finite")
        cell = self.cells.get(rtype)
        if cell is None:
            self.cells[rtype] = ArchiveCell(controller.copy(), float(f), generation, generation)
            return "inserted"
        if f > cell.task_performance:
            cell.controller = controller.copy()
            cell.task_performance = float(f)
            cell.generation_updated = generation
            return "replaced"
        return "kept"

    def stats(self) -> ArchiveStats:
        if not self.cells:
            return ArchiveStats(0, None, None)
        fs = [c.task_performance for c in self.cells.values()]
        return ArchiveStats(len(fs), sum(fs) / len(fs), max(fs))

    def copy(self) -> "ControllerArchive":
        other = ControllerArchive()
        other.cells = {k: ArchiveCell(c.controller.copy(), c.task_performance, c.generation_inserted,
                                      c.generation_updated) for k, c in self.cells.items()}
        return other

    # checkpoint: a "cell" header line followed by the controller text, per cell

    def to_text(self) -> str:
        out = [f"controller-archive 1 {len(self.cells)}\n"]
        for rtype in sorted(self.cells):
            c = self.cells[rtype]
            s, w, j = rtype
            out.append(f"cell {s} {w} {j} {c.task_performance!r} {c.generation_inserted} {c.generation_updated}\n")
            out.append(c.controller.to_text())
        return "".join(out)

    @classmethod
    def from_text(cls, text: str) -> "ControllerArchive":
        lines = text.splitlines()
        head = lines[0].split()
        if head[:2] != ["controller-archive", "1"]:
            raise ValueError("not a controller archive checkpoint")
        arch = cls()
        for i in range(int(head[2])):
            cell, header, params = lines[1 + 3 * i: 4 + 3 * i]
            parts = cell.split()
            rtype = RobotType(*map(int, parts[1:4]))
            ctrl = ElmanController.from_text(header + "\n" + params)
            if not ctrl.matches(rtype):
                raise StructuralError(f"checkpoint cell {tuple(rtype)} holds a mismatched controller")
            arch.cells[rtype] = ArchiveCell(ctrl, float(parts[4]), int(parts[5]), int(parts[6]))
        return arch

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "ControllerArchive":
        with open(path) as fh:
            return cls.from_text(fh.read())
