"""Plot specification: a small YAML file naming inputs, kind, and output."""

import glob as globmod
from dataclasses import dataclass, field
from pathlib import Path

import yaml

KINDS = ("loss_curves", "scaling", "trajectory_compare")


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class PlotSpec:
    """One figure to render.

    inputs: glob pattern for the data files (runrecords for loss_curves and
    scaling, trajectory CSVs for trajectory_compare).
    horizons: for kind=scaling, the horizon value behind each matched file,
    in sorted-filename order.
    """

    inputs: str
    kind: str
    out: str
    logx: bool = False
    logy: bool = False
    horizons: tuple = ()
    reference: str = None
    title: str = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(
                f"kind must be one of {', '.join(KINDS)}, got {self.kind!r}"
            )
        if not self.inputs:
            raise SpecError("inputs glob must be non-empty")
        if not self.out:
            raise SpecError("out path must be non-empty")

    def matched_files(self):
        files = sorted(globmod.glob(self.inputs))
        if not files:
            raise SpecError(f"inputs glob {self.inputs!r} matched no files")
        if self.kind == "scaling":
            if len(self.horizons) != len(files):
                raise SpecError(
                    f"scaling needs one horizon per input: "
                    f"{len(self.horizons)} horizons for {len(files)} files"
                )
        return files


def load_spec(path):
    path = Path(path)
    if not path.exists():
        raise SpecError(f"spec file not found: {path}")
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise SpecError("spec root must be a mapping")
    known = {
        "inputs", "kind", "out", "logx", "logy", "horizons", "reference",
        "title",
    }
    unknown = set(raw) - known
    if unknown:
        raise SpecError(f"unknown spec fields: {', '.join(sorted(unknown))}")
    for req in ("inputs", "kind", "out"):
        if req not in raw:
            raise SpecError(f"spec is missing required field {req!r}")
    return PlotSpec(
        inputs=str(raw["inputs"]),
        kind=str(raw["kind"]),
        out=str(raw["out"]),
        logx=bool(raw.get("logx", False)),
        logy=bool(raw.get("logy", False)),
        horizons=tuple(float(h) for h in raw.get("horizons", ())),
        reference=raw.get("reference"),
        title=raw.get("title"),
    )
