"""
Текстовый формат модели POMDP (построчный, UTF-8, '#' начинает комментарий):

    discount: <real>
    states: <name>+
    actions: <name>+
    observations: <name>+
    start: <real>+                  # |S| чисел, начальный belief
    T: <action> : <s> : <s'> <prob>
    O: <s> : <o> <prob>
    R: <s> : <action> <reward>

'*' на месте действия или состояния означает «все». Неуказанные вероятности
и награды равны 0, при отсутствии start берётся равномерный belief.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from utils.errors import ModelValidationError
from utils.pomdp_model import Pomdp, validate

logger = logging.getLogger(__name__)

UNOBSERVABLE_HINT = (
    "rewards must be observable: states that the agent cannot tell apart "
    "must share rewards (unobservable rewards are not supported)"
)

HEADER_KEYS = ("discount", "states", "actions", "observations", "start")


def _indices(token: str, names: Sequence[str], what: str, line_no: int) -> List[int]:
    token = token.strip()
    if token == "*":
        return list(range(len(names)))
    try:
        return [names.index(token)]
    except ValueError:
        raise ModelValidationError([f"line {line_no}: unknown {what} '{token}'"]) from None


def _number(token: str, line_no: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise ModelValidationError([f"line {line_no}: '{token}' is not a number"]) from None


def parse_pomdp(text: str, name: str = "pomdp", check: bool = True) -> Pomdp:
    """
    Разбирает текст модели.

    Параметры:
        text: содержимое файла.
        name: имя модели (для сообщений об ошибках).
        check: запускать ли validate и отклонять некорректные модели.

    Возвращает:
        Pomdp.

    Исключения:
        ModelValidationError — синтаксические ошибки и нарушения инвариантов.
    """
    header: Dict[str, List[str]] = {}
    entries = []

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, rest = line.partition(":")
        key = key.strip()
        if not sep:
            raise ModelValidationError([f"line {line_no}: expected 'key: value'"], source=name)
        if key in HEADER_KEYS:
            header[key] = rest.split()
        elif key in ("T", "O", "R"):
            entries.append((line_no, key, rest))
        else:
            raise ModelValidationError([f"line {line_no}: unknown key '{key}'"], source=name)

    missing = [k for k in ("discount", "states", "actions", "observations") if k not in header]
    if missing:
        raise ModelValidationError([f"missing header(s): {', '.join(missing)}"], source=name)

    states = header["states"]
    actions = header["actions"]
    observations = header["observations"]
    n_s, n_a, n_o = len(states), len(actions), len(observations)

    transition = np.zeros((n_a, n_s, n_s))
    obs_fn = np.zeros((n_s, n_o))
    reward = np.zeros((n_s, n_a))

    for line_no, key, rest in entries:
        parts = rest.split(":")
        expected_parts = 3 if key == "T" else 2
        if len(parts) != expected_parts:
            raise ModelValidationError([f"line {line_no}: malformed {key} entry"], source=name)
        # Последняя часть: «<имя> <число>»
        tail = parts[-1].split()
        if len(tail) != 2:
            raise ModelValidationError([f"line {line_no}: malformed {key} entry"], source=name)
        value = _number(tail[1], line_no)

        if key == "T":
            a_idx = _indices(parts[0], actions, "action", line_no)
            s_idx = _indices(parts[1], states, "state", line_no)
            t_idx = _indices(tail[0], states, "state", line_no)
            transition[np.ix_(a_idx, s_idx, t_idx)] = value
        elif key == "O":
            s_idx = _indices(parts[0], states, "state", line_no)
            o_idx = _indices(tail[0], observations, "observation", line_no)
            obs_fn[np.ix_(s_idx, o_idx)] = value
        else:
            s_idx = _indices(parts[0], states, "state", line_no)
            a_idx = _indices(tail[0], actions, "action", line_no)
            reward[np.ix_(s_idx, a_idx)] = value

    if "start" in header:
        start = np.array([_number(x, 0) for x in header["start"]])
        if start.shape != (n_s,):
            raise ModelValidationError(
                [f"start has {start.size} entries, expected {n_s}"], source=name
            )
    else:
        start = np.full(n_s, 1.0 / n_s)

    if len(header["discount"]) != 1:
        raise ModelValidationError(["discount expects one number"], source=name)

    model = Pomdp(
        states=states,
        actions=actions,
        observations=observations,
        transition=transition,
        reward=reward,
        obs_fn=obs_fn,
        initial_belief=start,
        discount=_number(header["discount"][0], 0),
        name=name,
    )

    if check:
        violations = validate(model)
        if violations:
            if any(v.startswith("unobservable rewards") for v in violations):
                violations.append(UNOBSERVABLE_HINT)
            raise ModelValidationError(violations, source=name)
    return model


def load_pomdp(path: Union[str, Path], check: bool = True) -> Pomdp:
    """Загружает модель из файла и (по умолчанию) отклоняет некорректные модели."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    model = parse_pomdp(text, name=path.stem, check=check)
    logger.debug("loaded %s: |S|=%d |A|=%d |Z|=%d", path, model.n_states, model.n_actions, model.n_observations)
    return model


def dump_pomdp(model: Pomdp, comment: Optional[str] = None) -> str:
    """
    Сериализует модель в текстовый формат.

    Записываются только ненулевые вероятности и награды; числа выводятся через
    repr, чтобы повторная загрузка давала ту же модель бит в бит.
    """
    lines = []
    if comment:
        lines += [f"# {c}" for c in comment.splitlines()]
    lines.append(f"discount: {model.discount!r}")
    lines.append("states: " + " ".join(model.states))
    lines.append("actions: " + " ".join(model.actions))
    lines.append("observations: " + " ".join(model.observations))
    lines.append("start: " + " ".join(repr(float(x)) for x in model.initial_belief))
    lines.append("")

    for a, s, t in zip(*np.nonzero(model.transition)):
        p = float(model.transition[a, s, t])
        lines.append(f"T: {model.actions[a]} : {model.states[s]} : {model.states[t]} {p!r}")
    for s, o in zip(*np.nonzero(model.obs_fn)):
        p = float(model.obs_fn[s, o])
        lines.append(f"O: {model.states[s]} : {model.observations[o]} {p!r}")
    for s, a in zip(*np.nonzero(model.reward)):
        r = float(model.reward[s, a])
        lines.append(f"R: {model.states[s]} : {model.actions[a]} {r!r}")
    return "\n".join(lines) + "\n"


def save_pomdp(model: Pomdp, path: Union[str, Path], comment: Optional[str] = None) -> Path:
    path = Path(path)
    path.write_text(dump_pomdp(model, comment=comment), encoding="utf-8")
    return path
