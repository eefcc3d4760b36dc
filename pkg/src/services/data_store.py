"""File formats: node data CSV, network config JSON, result and summary JSON."""

from __future__ import annotations

import hashlib
import json
import re
from pathlib import Path
from typing import Any, TypeVar

import numpy as np
from pydantic import BaseModel, ValidationError

from src.exceptions import ConfigParseError, InvalidDataError, NetworkValidationError
from src.models import NetworkConfigFile, NetworkModel, NoiseModel, RationalTF
from src.services.network import DataRecord, validate

Model = TypeVar("Model", bound=BaseModel)

SEED_LINE = re.compile(r"^#\s*seed=(\S+)\s*$")


# ---------------------------------------------------------------------------
# Node data


def data_header(L: int) -> str:
    return ",".join(["t", *(f"w{k}" for k in range(1, L + 1)), *(f"r{k}" for k in range(1, L + 1))])


def write_data_csv(record: DataRecord, path: str | Path) -> Path:
    """`# seed=S`, then `t,w1..wL,r1..rL`; %.17g keeps floats exact."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    seed = "none" if record.seed is None else str(record.seed)
    table = np.column_stack([np.arange(record.N), record.w, record.r])
    np.savetxt(
        path,
        table,
        fmt="%.17g",
        delimiter=",",
        header=f"# seed={seed}\n{data_header(record.L)}",
        comments="",
    )
    return path


def read_data_csv(path: str | Path) -> DataRecord:
    path = Path(path)
    with path.open() as fh:
        first = fh.readline().strip()
        header = fh.readline().strip()
    match = SEED_LINE.match(first)
    if not match:
        raise InvalidDataError(f"{path}:1: expected '# seed=...' line, got {first!r}")
    seed = None if match.group(1) == "none" else int(match.group(1))

    columns = header.split(",")
    L = (len(columns) - 1) // 2
    if L < 1 or columns != data_header(L).split(","):
        raise InvalidDataError(f"{path}:2: header must be {data_header(max(L, 1))!r}")

    table = np.loadtxt(path, delimiter=",", skiprows=2, ndmin=2)
    if table.shape[1] != 1 + 2 * L:
        raise InvalidDataError(f"{path}: rows have {table.shape[1]} fields, expected {1 + 2 * L}")
    return DataRecord(w=table[:, 1 : 1 + L].copy(), r=table[:, 1 + L :].copy(), seed=seed)


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# Network config


def _line_of(text: str, key: Any) -> int | None:
    needle = f'"{key}"'
    for lineno, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return lineno
    return None


def _describe(error: dict, text: str, path: Path) -> str:
    loc = ".".join(str(part) for part in error["loc"])
    lineno = _line_of(text, error["loc"][-1]) if error["loc"] else None
    where = f"{path}:{lineno}" if lineno else str(path)
    if error["type"] == "extra_forbidden":
        return f"{where}: unknown key '{error['loc'][-1]}' at {loc}"
    return f"{where}: {loc}: {error['msg']}"


def parse_network_config(path: str | Path) -> NetworkModel:
    """Parse and validate a network JSON file."""
    path = Path(path)
    text = path.read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigParseError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None
    try:
        config = NetworkConfigFile.model_validate(raw)
    except ValidationError as e:
        raise ConfigParseError("; ".join(_describe(err, text, path) for err in e.errors())) from None

    violations: list[str] = []
    modules: dict[tuple[int, int], RationalTF] = {}
    for entry in config.modules:
        key = (entry.to, entry.from_)
        if key in modules:
            violations.append(f"duplicate module G_{entry.to}{entry.from_}")
            continue
        try:
            modules[key] = RationalTF.from_coeffs(entry.num, entry.den)
        except ValidationError as e:
            violations.append(f"module G_{entry.to}{entry.from_}: {e.errors()[0]['msg']}")

    noise: dict[int, NoiseModel] = {}
    for entry in config.noise:
        try:
            noise[entry.node] = NoiseModel(
                H=RationalTF.from_coeffs(entry.num, entry.den), variance=entry.variance
            )
        except ValidationError as e:
            violations.append(f"noise model H_{entry.node}: {e.errors()[0]['msg']}")
    if violations:
        raise NetworkValidationError(violations)

    net = NetworkModel(L=config.L, modules=modules, noise=noise, references=tuple(config.references))
    report = validate(net)
    if not report.valid:
        raise NetworkValidationError(report.violations)
    return net


def network_to_config(net: NetworkModel) -> NetworkConfigFile:
    return NetworkConfigFile(
        L=net.L,
        modules=[
            {"from": k, "to": j, "num": list(g.num.coeffs), "den": list(g.den.coeffs)}
            for (j, k), g in sorted(net.modules.items(), key=lambda item: (item[0][1], item[0][0]))
        ],
        noise=[
            {"node": j, "num": list(n.H.num.coeffs), "den": list(n.H.den.coeffs), "variance": n.variance}
            for j, n in sorted(net.noise.items())
        ],
        references=list(net.references),
    )


def write_network_config(net: NetworkModel, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(network_to_config(net).model_dump(by_alias=True), indent=2) + "\n")
    return path


# ---------------------------------------------------------------------------
# Results


class JsonStore:
    """Write and read pydantic documents as indented JSON."""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def save(self, document: BaseModel) -> Path:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(document.model_dump(mode="json"), indent=2) + "\n")
        return self.path

    def load(self, model: type[Model]) -> Model:
        return model.model_validate_json(self.path.read_text())
