"""Run outputs: CSV tables, legacy VTK snapshots, the run manifest and a gnuplot script."""

import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from conefrac.core.errors import ConeFracError
from conefrac.core.logging import get_structlog_logger
from conefrac.services.energy import CSV_COLUMNS, LedgerRow
from conefrac.services.mesh import FracturedMesh
from conefrac.services.stepper import StepRecord

logger = get_structlog_logger(__name__)

FLOAT_FORMAT = "%.12e"

# Cell type of the 6-node quadratic triangle in the VTK legacy format.
VTK_QUADRATIC_TRIANGLE = 22

DAMAGE_COLUMNS = ("interface", "gauss", "d", "delta", "s1", "s2")
LOAD_DEFLECTION_COLUMNS = ("step", "time_s", "deflection_m", "load_N")


class OutputWriterError(ConeFracError):
    """Run outputs could not be written."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, "OUTPUT_ERROR", 1, details)


class OutputWriter:
    """Writes every output family of a run below one directory."""

    def __init__(self, base_path: Union[str, Path] = "out"):
        self.base_path = Path(base_path)
        try:
            self.base_path.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise OutputWriterError(f"Failed to create output directory {self.base_path}: {e}")
        self.written: List[Path] = []

    def _path(self, filename: str) -> Path:
        return self.base_path / filename

    def _write_table(self, filename: str, columns: Sequence[str], rows: np.ndarray, int_columns: int) -> Path:
        """CSV with ``int_columns`` leading integer columns, the rest in FLOAT_FORMAT."""
        path = self._path(filename)
        fmt = ["%d"] * int_columns + [FLOAT_FORMAT] * (len(columns) - int_columns)
        rows = np.asarray(rows, dtype=float).reshape(-1, len(columns))
        try:
            np.savetxt(path, rows, fmt=fmt, delimiter=",", header=",".join(columns), comments="")
        except OSError as e:
            raise OutputWriterError(f"Failed to write {filename}: {e}", {"path": str(path)})
        self.written.append(path)
        return path

    def _write_text(self, filename: str, text: str) -> Path:
        path = self._path(filename)
        try:
            path.write_text(text, encoding="utf-8")
        except OSError as e:
            raise OutputWriterError(f"Failed to write {filename}: {e}", {"path": str(path)})
        self.written.append(path)
        return path

    def write_energies(self, rows: Iterable[LedgerRow]) -> Path:
        """energies.csv, one line per half-step."""
        table = np.array([r.values() for r in rows], dtype=float)
        return self._write_table("energies.csv", CSV_COLUMNS, table, int_columns=1)

    def write_damage(self, record: StepRecord, n_g: int) -> Path:
        """damage_<step>.csv: interface, gauss index, d, delta, s1, s2 per Gauss point."""
        n_i = len(record.d)
        index = np.arange(n_i)
        table = np.column_stack(
            [
                index // n_g if n_g else index,
                index % n_g if n_g else index,
                record.d,
                record.effective_opening,
                record.openings[:, 0],
                record.openings[:, 1],
            ]
        )
        return self._write_table(f"damage_{record.step}.csv", DAMAGE_COLUMNS, table, int_columns=2)

    def write_snapshot(self, record: StepRecord, fmesh: FracturedMesh) -> Path:
        """snapshot_<step>.vtk: legacy ASCII unstructured grid with displacement and velocity point data."""
        n, m = fmesh.n_nodes, fmesh.n_elements
        u = record.u.reshape(n, 2)
        v = record.v.reshape(n, 2)
        lines = [
            "# vtk DataFile Version 3.0",
            f"conefrac step {record.step} t={record.time:.12e}",
            "ASCII",
            "DATASET UNSTRUCTURED_GRID",
            f"POINTS {n} double",
        ]
        lines += [f"{x:.12e} {y:.12e} 0" for x, y in fmesh.nodes]
        lines.append(f"CELLS {m} {7 * m}")
        lines += ["6 " + " ".join(str(int(k)) for k in element) for element in fmesh.elements]
        lines.append(f"CELL_TYPES {m}")
        lines += [str(VTK_QUADRATIC_TRIANGLE)] * m
        lines.append(f"POINT_DATA {n}")
        for name, field in (("displacement", u), ("velocity", v)):
            lines.append(f"VECTORS {name} double")
            lines += [f"{a:.12e} {b:.12e} 0" for a, b in field]
        return self._write_text(f"snapshot_{record.step}.vtk", "\n".join(lines) + "\n")

    def write_load_deflection(self, points: Iterable[Tuple[int, float, float, float]]) -> Path:
        """load_deflection.csv: step, time, monitored deflection, summed reaction."""
        table = np.array(list(points), dtype=float)
        return self._write_table("load_deflection.csv", LOAD_DEFLECTION_COLUMNS, table, int_columns=1)

    def write_manifest(self, config: Dict[str, Any], extra: Optional[Dict[str, Any]] = None) -> Path:
        """run_manifest.json echoing every configuration value."""
        payload = {"config": config, **(extra or {})}
        text = json.dumps(payload, indent=2, sort_keys=True, default=str)
        return self._write_text("run_manifest.json", text + "\n")

    def emit_plots(self, has_load_deflection: bool) -> Path:
        """plots.gp drawing the energy balance and, when present, the load-deflection curve."""
        energy_columns = {name: k + 1 for k, name in enumerate(CSV_COLUMNS)}
        script = [
            "set datafile separator ','",
            "set key autotitle columnhead",
            "set terminal pngcairo size 1000,700",
            "",
            "set output 'energies.png'",
            "set xlabel 'time (s)'",
            "set ylabel 'energy (J)'",
            "plot 'energies.csv' using {t}:{ke} with lines, \\".format(
                t=energy_columns["time_s"], ke=energy_columns["KE_J"]
            ),
            "     '' using {t}:{se} with lines, \\".format(t=energy_columns["time_s"], se=energy_columns["SE_J"]),
            "     '' using {t}:(${rec}+${dis}) with filledcurves y1=0 title 'FE_dis', \\".format(
                t=energy_columns["time_s"], rec=energy_columns["FE_rec_J"], dis=energy_columns["FE_dis_J"]
            ),
            "     '' using {t}:{rec} with filledcurves y1=0 title 'FE_rec', \\".format(
                t=energy_columns["time_s"], rec=energy_columns["FE_rec_J"]
            ),
            "     '' using {t}:(${bc}+${c}+${ext}) with lines lw 2 title 'work', \\".format(
                t=energy_columns["time_s"],
                bc=energy_columns["W_bc_J"],
                c=energy_columns["W_contact_J"],
                ext=energy_columns["W_ext_J"],
            ),
            "     '' using {t}:(${ke}+${se}+${rec}+${dis}) with lines lw 2 title 'stored'".format(
                t=energy_columns["time_s"],
                ke=energy_columns["KE_J"],
                se=energy_columns["SE_J"],
                rec=energy_columns["FE_rec_J"],
                dis=energy_columns["FE_dis_J"],
            ),
        ]
        if has_load_deflection:
            script += [
                "",
                "set output 'load_deflection.png'",
                "set xlabel 'deflection (m)'",
                "set ylabel 'load (N)'",
                "plot 'load_deflection.csv' using 3:4 with linespoints",
            ]
        return self._write_text("plots.gp", "\n".join(script) + "\n")
