"""
Experiment configuration (YAML, one section per pipeline stage).

Polynomials are written as ``{monomial label: coefficient}`` maps using the
dictionary's labels, e.g. ``{x: 4, "x^3": -1}`` or ``{x: 3, "y^2": -1}``.
"""
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import yaml

from .nonlocal_pde import Domain, Grid
from .polydict import build_basis, from_terms
from .stoch_sim import LevySpec, SdeModel


class ConfigError(ValueError):
    pass


@dataclass
class ModelSection:
    dim: int = 1
    mode: str = "brownian"
    drift: list = field(default_factory=list)
    sigma1: list = field(default_factory=list)
    sigma2: list | None = None
    alpha: float = 1.0
    c: float = 1.0


@dataclass
class SimulationSection:
    M: int = 1000
    dt: float = 0.01
    domain: list = field(default_factory=lambda: [[-1.0, 1.0]])
    seed: int = 0
    scheme: str = "grid"
    small_jump_cutoff: float | None = None


@dataclass
class DictionarySection:
    max_degree: int = 3
    svd_cutoff: float = 1e-10
    n_batches: int = 10


@dataclass
class IdentificationSection:
    p2: list | None = None
    auto_p2: bool = False
    clamp_factor: float = 10.0
    display_threshold: float = 0.05


@dataclass
class PdeSection:
    domain: list | None = None
    target: str = "right"
    nodes: list | None = None


@dataclass
class OutputSection:
    directory: str = "out"
    snapshot_format: str = "npz"
    svg: bool = True


_SECTIONS = {
    "model": ModelSection,
    "simulation": SimulationSection,
    "dictionary": DictionarySection,
    "identification": IdentificationSection,
    "pde": PdeSection,
    "outputs": OutputSection,
}


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    model: ModelSection = field(default_factory=ModelSection)
    simulation: SimulationSection = field(default_factory=SimulationSection)
    dictionary: DictionarySection = field(default_factory=DictionarySection)
    identification: IdentificationSection = field(default_factory=IdentificationSection)
    pde: PdeSection = field(default_factory=PdeSection)
    outputs: OutputSection = field(default_factory=OutputSection)

    # ------------------------------------------------------------------ I/O
    @classmethod
    def from_dict(cls, data, lines=None):
        lines = lines or {}
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a mapping")
        kwargs = {}
        for key, value in data.items():
            if key == "name":
                kwargs["name"] = str(value)
                continue
            if key not in _SECTIONS:
                raise ConfigError(_where(lines, (key,)) + f"unknown section {key!r}")
            section = _SECTIONS[key]
            allowed = {f.name for f in fields(section)}
            value = value or {}
            for k in value:
                if k not in allowed:
                    raise ConfigError(_where(lines, (key, k)) + f"unknown key {key}.{k}")
            kwargs[key] = section(**value)
        cfg = cls(**kwargs)
        cfg.validate(lines)
        return cfg

    def to_dict(self):
        return asdict(self)

    def render(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    @classmethod
    def parse(cls, text):
        try:
            node = yaml.compose(text)
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML: {exc}") from exc
        return cls.from_dict(data or {}, _line_map(node))

    @classmethod
    def load(cls, path):
        """Load a YAML file, or a bundled config by name (e.g. ``double_well``)."""
        p = Path(path)
        if not p.exists():
            bundled = resources.files("levykoop") / "configs" / f"{Path(str(path)).stem}.yaml"
            if bundled.is_file():
                return cls.parse(bundled.read_text())
            raise ConfigError(f"config file {path} not found")
        return cls.parse(p.read_text())

    def dump(self, path):
        Path(path).write_text(self.render())

    # ------------------------------------------------------------ checks
    def validate(self, lines=None):
        lines = lines or {}
        m, s, dct, ident = self.model, self.simulation, self.dictionary, self.identification

        def fail(path, msg):
            raise ConfigError(_where(lines, path) + msg)

        if m.mode not in ("brownian", "levy"):
            fail(("model", "mode"), f"mode must be 'brownian' or 'levy', got {m.mode!r}")
        if m.dim < 1:
            fail(("model", "dim"), "dim must be >= 1")
        if len(m.drift) != m.dim:
            fail(("model", "drift"), f"expected {m.dim} drift polynomials, got {len(m.drift)}")
        if len(m.sigma1) != m.dim:
            fail(("model", "sigma1"), f"expected {m.dim} sigma1 polynomials, got {len(m.sigma1)}")
        if m.mode == "levy":
            if not 0 < m.alpha < 2:
                fail(("model", "alpha"), "alpha must lie in (0, 2)")
            if not m.c > 0:
                fail(("model", "c"), "c must be positive")
            if m.sigma2 is not None and len(m.sigma2) != m.dim:
                fail(("model", "sigma2"), f"expected {m.dim} sigma2 values")
        if not s.dt > 0:
            fail(("simulation", "dt"), "dt must be positive")
        if s.M < 1:
            fail(("simulation", "M"), "M must be >= 1")
        if len(s.domain) != m.dim:
            fail(("simulation", "domain"), f"domain needs {m.dim} intervals")
        if s.scheme not in ("grid", "uniform"):
            fail(("simulation", "scheme"), "scheme must be 'grid' or 'uniform'")
        if dct.max_degree < 2:
            fail(("dictionary", "max_degree"), "max_degree must be >= 2")
        if m.mode == "levy":
            p2 = ident.p2
            if p2 is None and not ident.auto_p2:
                fail(("identification", "p2"), "levy mode needs p2 (degree of sigma1) per coordinate")
            if p2 is not None:
                if len(p2) != m.dim:
                    fail(("identification", "p2"), f"expected {m.dim} entries")
                if any(2 * int(p) > dct.max_degree for p in p2):
                    fail(("identification", "p2"), "2*p2 must not exceed dictionary.max_degree")
        if self.pde.domain is not None and len(self.pde.domain) != m.dim:
            fail(("pde", "domain"), f"domain needs {m.dim} intervals")
        if self.pde.nodes is not None and len(self.pde.nodes) != m.dim:
            fail(("pde", "nodes"), f"nodes needs {m.dim} entries")
        if self.outputs.snapshot_format not in ("npz", "csv"):
            fail(("outputs", "snapshot_format"), "snapshot_format must be 'npz' or 'csv'")
        try:
            self.true_model()
        except (KeyError, ValueError) as exc:
            fail(("model",), str(exc))

    # ------------------------------------------------------- derived objects
    @property
    def basis(self):
        return build_basis(self.model.dim, self.dictionary.max_degree)

    def true_model(self):
        m = self.model
        basis = self.basis
        levy = None
        sigma2 = None
        if m.mode == "levy":
            levy = LevySpec(m.alpha, m.c, self.simulation.seed, self.simulation.small_jump_cutoff)
            sigma2 = m.sigma2 if m.sigma2 is not None else [1.0] * m.dim
        return SdeModel([from_terms(basis, t or {}) for t in m.drift],
                        [from_terms(basis, t or {}) for t in m.sigma1], sigma2, levy)

    def pde_domain(self):
        bounds = self.pde.domain if self.pde.domain is not None else self.simulation.domain
        return Domain(bounds, self.pde.target)

    def pde_grid(self):
        if self.pde.nodes is None:
            return None
        return Grid(tuple(self.pde.nodes))


def _where(lines, path):
    for k in range(len(path), 0, -1):
        if path[:k] in lines:
            return f"line {lines[path[:k]]}: "
    return f"{'.'.join(path)}: " if path else ""


def _line_map(node, prefix=()):
    out = {}
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            path = prefix + (key_node.value,)
            out[path] = key_node.start_mark.line + 1
            out.update(_line_map(value_node, path))
    return out
