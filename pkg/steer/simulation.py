"""Synthetic datasets for demos and tests

Ambiguous cases get latent difficulties jitter-stratified on [-0.5, 0.5],
so a persona's mean rating tracks its latent bias once rounding averages
out. Unambiguous cases sit far enough beyond the scale ends that every
persona within the safety margin answers them correctly.
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Union

import numpy as np

from .core_model import Case, CaseSplit, OrdinalScale, Persona
from .errors import DomainError
from .run_store import read_json, write_cases, write_json, write_personas
from .synthetic_backend import SyntheticPanel


@dataclass
class SimulatedDataset:
    cases: List[Case]
    personas: List[Persona]
    panel: SyntheticPanel


def persona_prompt(persona_id: str, latent: float) -> str:
    return (
        f"You are synthetic rater {persona_id}. You weigh every case with a steady "
        f"offset of {latent:.3f} scale units."
    )


def simulate_dataset(n_cases: int = 50, n_personas: int = 8, seed: int = 7,
                     ambiguous_fraction: float = 0.7, spacing: float = 0.2,
                     safety_margin: float = 1.5, scale: OrdinalScale = OrdinalScale(),
                     noise_sd: float = 0.0) -> SimulatedDataset:
    if n_cases < 2:
        raise DomainError(f"n_cases={n_cases} must be >= 2")
    if n_personas < 1:
        raise DomainError(f"n_personas={n_personas} must be >= 1")
    if not 0.0 < ambiguous_fraction < 1.0:
        raise DomainError(f"ambiguous_fraction={ambiguous_fraction} must lie in (0, 1)")
    n_ambiguous = min(max(int(round(ambiguous_fraction * n_cases)), 1), n_cases - 1)
    n_safety = n_cases - n_ambiguous

    rng = np.random.default_rng(seed)
    jitter = rng.uniform(0.0, 1.0, size=n_ambiguous)
    theta = [-0.5 + (i + jitter[i]) / n_ambiguous for i in range(n_ambiguous)]
    rng.shuffle(theta)

    offset = (scale.k_levels - 1) / 2.0 + safety_margin
    anchors = []
    for i in range(n_safety):
        level = 1 if i % 2 == 0 else scale.k_levels
        anchors.append(level)
        theta.append(-offset if level == 1 else offset)

    shift = math.fsum(theta) / len(theta)
    theta = [t - shift for t in theta]

    cases: List[Case] = []
    latent_theta: Dict[str, float] = {}
    for i, t in enumerate(theta):
        case_id = f"case-{i + 1:04d}"
        latent_theta[case_id] = t
        if i < n_ambiguous:
            cases.append(Case(case_id, f"Synthetic ambiguous presentation {i + 1}.", CaseSplit.AMBIGUOUS))
        else:
            level = anchors[i - n_ambiguous]
            cases.append(Case(
                case_id, f"Synthetic clear-cut presentation {i + 1}.", CaseSplit.UNAMBIGUOUS, level,
            ))

    latent_u: Dict[str, float] = {}
    personas: List[Persona] = []
    for j in range(n_personas):
        persona_id = f"seed-{j + 1:02d}"
        u = (j - (n_personas - 1) / 2.0) * spacing
        latent_u[persona_id] = u
        personas.append(Persona(persona_id, persona_prompt(persona_id, u)))

    panel = SyntheticPanel(scale, latent_theta, latent_u, noise_sd, seed)
    return SimulatedDataset(cases, personas, panel)


def write_dataset(dataset: SimulatedDataset, out_dir: Union[str, Path]) -> Dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "cases": out / "cases.jsonl",
        "seed_personas": out / "seed_personas.jsonl",
        "latent": out / "latent.json",
    }
    write_cases(paths["cases"], dataset.cases)
    write_personas(paths["seed_personas"], dataset.personas)
    write_json(paths["latent"], dataset.panel.to_dict())
    return paths


def load_panel(path: Union[str, Path], noise_sd: float = None) -> SyntheticPanel:
    """SyntheticPanel from latent.json; noise_sd overrides the stored value."""
    data = read_json(path)
    return SyntheticPanel(
        scale=OrdinalScale.from_dict(data["scale"]),
        latent_theta={k: float(v) for k, v in data["latent_theta"].items()},
        latent_u={k: float(v) for k, v in data["latent_u"].items()},
        noise_sd=float(data["noise_sd"]) if noise_sd is None else noise_sd,
        seed=int(data["seed"]),
    )
