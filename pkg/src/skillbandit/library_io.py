"""Versioned text checkpoints for skill libraries.

Line-oriented and diffable, like the environment format.  Floats are
written with repr so a save/load round trip is exact.
"""
from __future__ import annotations

import numpy as np

from .environment import Transform, UnitEffect
from .skills import Arm, LearnerConfig, PrimitiveStep, Skill, SkillLibrary, SkillStep

FORMAT_HEADER = "# skillbandit library format 1"

_CONFIG_FIELDS = (
    "epsilon", "delta", "gamma", "max_window", "max_depth",
    "windows_per_episode", "reg_c", "model_min_samples",
    "model_refit_every", "model_max_fit", "probe_size",
)
_INT_FIELDS = {"max_window", "max_depth", "windows_per_episode",
               "model_min_samples", "model_refit_every", "model_max_fit",
               "probe_size"}


class LibraryFormatError(ValueError):
    """Malformed library file; message names the offending line."""


def _bits(state) -> str:
    return "".join(str(int(round(float(b)))) for b in state)


def _effect_token(effect: UnitEffect) -> str:
    return f"{effect.dim}={int(effect.transform)}"


def _parse_effect_token(token: str, line_no: int) -> UnitEffect:
    try:
        dim_s, val_s = token.split("=")
        return UnitEffect(int(dim_s), Transform(int(val_s)))
    except ValueError:
        raise LibraryFormatError(
            f"line {line_no}: bad effect token {token!r}") from None


def save_library(lib: SkillLibrary, path) -> None:
    lines = [FORMAT_HEADER, f"DIM {lib.dim}"]
    cfg = lib.config
    lines.append("CONFIG " + " ".join(
        f"{name}={getattr(cfg, name)!r}" for name in _CONFIG_FIELDS))
    for effect, skill in lib.skills.items():
        lines.append(f"SKILL {_effect_token(effect)}")
        for arm in skill.arms:
            lines.append(
                f"ARM tries={arm.n_tries} succ={arm.n_success} "
                f"seeded={int(arm.seeded)} fitted_at={arm.fitted_at}")
            for step in arm.steps:
                if isinstance(step, PrimitiveStep):
                    lines.append(f"STEP act {step.action_id}")
                else:
                    lines.append(f"STEP skill {_effect_token(step.effect)}")
            for state, label in arm.samples:
                lines.append(f"SAMPLE {_bits(state)} {label}")
            model = arm.model
            if model is not None:
                lines.append(
                    "MODEL "
                    f"bandwidth={model.bandwidth!r} reg_c={model.reg_c!r} "
                    f"bias={model.bias!r} platt_a={model.platt_a!r} "
                    f"platt_b={model.platt_b!r} "
                    f"warned={int(model.platt_warned)}")
                for row, coef in zip(model.support_states, model.dual_coefs):
                    lines.append(f"SV {_bits(row)} {float(coef)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_kv(body: str, line_no: int) -> dict[str, str]:
    out = {}
    for token in body.split():
        if "=" not in token:
            raise LibraryFormatError(
                f"line {line_no}: expected key=value, got {token!r}")
        key, _, value = token.partition("=")
        out[key] = value
    return out


def _state_from_bits(bits: str, dim: int, line_no: int) -> np.ndarray:
    if len(bits) != dim or set(bits) - {"0", "1"}:
        raise LibraryFormatError(
            f"line {line_no}: expected {dim} bits, got {bits!r}")
    return np.frombuffer(bits.encode(), dtype=np.uint8) - ord("0")


def load_library(path) -> SkillLibrary:
    with open(path) as fh:
        raw_lines = fh.read().splitlines()

    lib: SkillLibrary | None = None
    dim: int | None = None
    config: LearnerConfig | None = None
    skill: Skill | None = None
    arm: Arm | None = None
    arm_meta: dict[str, str] = {}
    steps: list = []
    pending_samples: list = []
    model_kv: dict[str, str] | None = None
    sv_states: list = []
    sv_coefs: list = []

    def finish_arm(line_no: int) -> None:
        nonlocal arm, model_kv
        if arm is None and not steps:
            return
        if not steps:
            raise LibraryFormatError(f"line {line_no}: ARM without STEP lines")
        built = Arm(tuple(steps), seeded=arm_meta.get("seeded") == "1")
        built.n_tries = int(arm_meta.get("tries", 0))
        built.n_success = int(arm_meta.get("succ", 0))
        built.fitted_at = int(arm_meta.get("fitted_at", 0))
        built.samples = list(pending_samples)
        if model_kv is not None:
            from .success_model import SuccessModel

            if not sv_states:
                raise LibraryFormatError(
                    f"line {line_no}: MODEL without SV lines")
            model = SuccessModel(
                support_states=np.asarray(sv_states, dtype=np.float64),
                dual_coefs=np.asarray(sv_coefs, dtype=np.float64),
                bias=float(model_kv["bias"]),
                bandwidth=float(model_kv["bandwidth"]),
                reg_c=float(model_kv["reg_c"]),
            )
            if model_kv.get("platt_a", "None") != "None":
                model.platt_a = float(model_kv["platt_a"])
                model.platt_b = float(model_kv["platt_b"])
            model.platt_warned = model_kv.get("warned") == "1"
            built.model = model
        if skill is None:
            raise LibraryFormatError(f"line {line_no}: ARM outside SKILL")
        skill.add(built)
        arm = None
        model_kv = None
        steps.clear()
        pending_samples.clear()
        sv_states.clear()
        sv_coefs.clear()
        arm_meta.clear()

    for line_no, raw in enumerate(raw_lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        keyword, _, body = line.partition(" ")
        body = body.strip()
        if keyword == "DIM":
            dim = int(body)
        elif keyword == "CONFIG":
            kv = _parse_kv(body, line_no)
            kwargs = {}
            for key, value in kv.items():
                if key not in _CONFIG_FIELDS:
                    raise LibraryFormatError(
                        f"line {line_no}: unknown config field {key!r}")
                kwargs[key] = int(value) if key in _INT_FIELDS else float(value)
            config = LearnerConfig(**kwargs)
        elif keyword == "SKILL":
            finish_arm(line_no)
            if lib is None:
                if dim is None:
                    raise LibraryFormatError(
                        f"line {line_no}: SKILL before DIM")
                lib = SkillLibrary(dim, config)
            effect = _parse_effect_token(body, line_no)
            skill = Skill(effect)
            lib.skills[effect] = skill
        elif keyword == "ARM":
            finish_arm(line_no)
            arm_meta.update(_parse_kv(body, line_no))
            arm = object()  # marks an open arm block
        elif keyword == "STEP":
            kind, _, rest = body.partition(" ")
            if kind == "act":
                steps.append(PrimitiveStep(int(rest)))
            elif kind == "skill":
                steps.append(SkillStep(_parse_effect_token(rest, line_no)))
            else:
                raise LibraryFormatError(
                    f"line {line_no}: unknown step kind {kind!r}")
        elif keyword == "SAMPLE":
            bits, _, label = body.partition(" ")
            if dim is None:
                raise LibraryFormatError(f"line {line_no}: SAMPLE before DIM")
            pending_samples.append(
                (_state_from_bits(bits, dim, line_no), int(label)))
        elif keyword == "MODEL":
            model_kv = _parse_kv(body, line_no)
        elif keyword == "SV":
            bits, _, coef = body.partition(" ")
            if dim is None:
                raise LibraryFormatError(f"line {line_no}: SV before DIM")
            sv_states.append(
                _state_from_bits(bits, dim, line_no).astype(np.float64))
            sv_coefs.append(float(coef))
        else:
            raise LibraryFormatError(
                f"line {line_no}: unknown keyword {keyword!r}")

    finish_arm(len(raw_lines) + 1)
    if lib is None:
        if dim is None:
            raise LibraryFormatError("missing DIM line")
        lib = SkillLibrary(dim, config)
    return lib
