"""Raw table candidates: a live vision-language endpoint or a noise oracle.

``vlm_sample`` speaks the de facto chat-completions wire shape (one user
message carrying the prompt plus a base64 image data URL) so any compatible
server works. ``simulated_sample`` perturbs a known ground-truth table with
a parametric noise model and is fully deterministic per (seed, draw_index),
which makes batch runs schedule-independent and gives the test suite an
end-to-end oracle.
"""

from __future__ import annotations

import base64
import os
import random
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
import requests

from .tables import NormalizedTable, format_value

DEFAULT_PROMPT = (
    "Here is an image of a chart.\n"
    "Please extract the numerical data it represents and return it in TSV "
    "(tab-separated values) format with appropriate headers.\n"
    "Copy the headers exactly as they are in the image.\n"
    "IMPORTANT: For the TSV, use tab (\\t) as the separator.\n"
    "Remember: The sole output should be the TSV table surrounded by "
    "```tsv ```. Nothing else."
)

_BACKOFF_BASE_S = 1.0

# Labels for spurious rows: alien enough that similarity to any real chart
# label stays far below the clustering threshold, so pruning (not luck) is
# what has to remove them.
SPURIOUS_LABELS = (
    "xqzjvk",
    "wvqxzj",
    "jkxqwz",
    "zvxkqj",
    "qwjzxv",
    "kxjzqw",
    "vzqxwk",
    "xjwqkz",
)

_TYPO_CHARS = "abcdefghijklmnopqrstuvwxyz0123456789"


class SamplerError(RuntimeError):
    """Base class for sampling failures."""


class TransportError(SamplerError):
    """Network failure, timeout, or server error after retries."""


class AuthError(SamplerError):
    """Credentials rejected (401/403) or absent; never retried."""


class RateLimited(SamplerError):
    """429 persisted through all retries."""


class MalformedResponse(SamplerError):
    """The endpoint answered but returned no usable text choice."""


@dataclass(frozen=True)
class SamplerConfig:
    """Connection and prompt settings for a chat-completions endpoint."""

    endpoint_url: str = ""
    model_id: str = ""
    temperature: float = 0.0
    api_key_env: str = "VLM_API_KEY"
    request_timeout: float = 60.0
    max_retries: int = 3
    prompt_text: str = DEFAULT_PROMPT

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass(frozen=True)
class NoiseModel:
    """Parametric table corruption driving the simulated sampler.

    ``value_noise_rel`` is the sigma of multiplicative Gaussian noise on
    values; the ``p_*`` fields are independent corruption probabilities.
    ``p_outlier`` multiplies a value by ``outlier_factor`` to model gross
    misreads. Output is a pure function of (truth, seed, draw_index).
    """

    value_noise_rel: float = 0.0
    p_drop_row: float = 0.0
    p_drop_col: float = 0.0
    p_extra_row: float = 0.0
    p_label_typo: float = 0.0
    p_transpose: float = 0.0
    p_cell_blank: float = 0.0
    p_ragged: float = 0.0
    p_outlier: float = 0.0
    outlier_factor: float = 10.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.value_noise_rel < 0:
            raise ValueError("value_noise_rel must be >= 0")
        for name in (
            "p_drop_row",
            "p_drop_col",
            "p_extra_row",
            "p_label_typo",
            "p_transpose",
            "p_cell_blank",
            "p_ragged",
            "p_outlier",
        ):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")


def _image_mime(image_bytes: bytes) -> str:
    if image_bytes[:8] == b"\x89PNG\r\n\x1a\n":
        return "image/png"
    if image_bytes[:2] == b"\xff\xd8":
        return "image/jpeg"
    return "image/png"


def vlm_sample(
    image_bytes: bytes,
    cfg: SamplerConfig,
    *,
    session: requests.Session | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> str:
    """Request one table extraction for a chart image.

    Retries transport errors and 429/5xx with exponential backoff (base 1s,
    doubling, jittered) up to ``cfg.max_retries``; 401/403 fail immediately.

    Returns the assistant text of the first choice.
    """
    api_key = os.environ.get(cfg.api_key_env)
    if not api_key:
        raise AuthError(f"environment variable {cfg.api_key_env} is not set")
    payload = {
        "model": cfg.model_id,
        "temperature": cfg.temperature,
        "messages": [
            {
                "role": "user",
                "content": [
                    {"type": "text", "text": cfg.prompt_text},
                    {
                        "type": "image_url",
                        "image_url": {
                            "url": "data:%s;base64,%s"
                            % (_image_mime(image_bytes), base64.b64encode(image_bytes).decode("ascii"))
                        },
                    },
                ],
            }
        ],
    }
    headers = {"Authorization": f"Bearer {api_key}"}
    http = session if session is not None else requests.Session()

    last_error: SamplerError | None = None
    for attempt in range(cfg.max_retries + 1):
        if attempt:
            delay = _BACKOFF_BASE_S * (2 ** (attempt - 1))
            sleep(delay + random.uniform(0, 0.25 * delay))
        try:
            resp = http.post(
                cfg.endpoint_url, json=payload, headers=headers, timeout=cfg.request_timeout
            )
        except requests.RequestException as exc:
            last_error = TransportError(f"request failed: {exc}")
            continue
        if resp.status_code in (401, 403):
            raise AuthError(f"endpoint rejected credentials (HTTP {resp.status_code})")
        if resp.status_code == 429:
            last_error = RateLimited("rate limited (HTTP 429)")
            continue
        if resp.status_code >= 500:
            last_error = TransportError(f"server error (HTTP {resp.status_code})")
            continue
        if resp.status_code != 200:
            raise TransportError(f"unexpected HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"no text choice in response: {exc}") from exc
        if not isinstance(content, str):
            raise MalformedResponse(f"choice content is {type(content).__name__}, not text")
        return content
    assert last_error is not None
    raise last_error


def _apply_typo(label: str, rng: np.random.Generator) -> str:
    op = rng.integers(0, 3)
    pos = int(rng.integers(0, max(1, len(label))))
    ch = _TYPO_CHARS[int(rng.integers(0, len(_TYPO_CHARS)))]
    if op == 0 and label:  # substitute
        return label[:pos] + ch + label[pos + 1 :]
    if op == 1:  # insert
        return label[:pos] + ch + label[pos:]
    if label:  # delete
        return label[:pos] + label[pos + 1 :]
    return ch


def simulated_sample(truth: NormalizedTable, nm: NoiseModel, draw_index: int) -> str:
    """Emit one corrupted TSV reply for a known ground-truth table.

    Corruption order: value noise, gross outliers, blanked cells, label
    typos, row/column drops, spurious row, transpose, ragged rows. At least
    one row and one column always survive dropping so the output stays a
    parseable table.
    """
    rng = np.random.default_rng((nm.seed, draw_index))
    row_labels = list(truth.row_labels)
    col_labels = list(truth.col_labels)
    grid: list[list[float | None]] = [list(row) for row in truth.values]

    if nm.value_noise_rel > 0:
        for row in grid:
            for j, v in enumerate(row):
                if v is not None:
                    row[j] = v * (1.0 + float(rng.normal(0.0, nm.value_noise_rel)))
    if nm.p_outlier > 0:
        for row in grid:
            for j, v in enumerate(row):
                if v is not None and rng.random() < nm.p_outlier:
                    row[j] = v * nm.outlier_factor
    if nm.p_cell_blank > 0:
        for row in grid:
            for j in range(len(row)):
                if rng.random() < nm.p_cell_blank:
                    row[j] = None
    if nm.p_label_typo > 0:
        row_labels = [
            _apply_typo(lab, rng) if rng.random() < nm.p_label_typo else lab for lab in row_labels
        ]
        col_labels = [
            _apply_typo(lab, rng) if rng.random() < nm.p_label_typo else lab for lab in col_labels
        ]
    if nm.p_drop_row > 0:
        keep = [i for i in range(len(row_labels)) if rng.random() >= nm.p_drop_row]
        if not keep:
            keep = [0]
        row_labels = [row_labels[i] for i in keep]
        grid = [grid[i] for i in keep]
    if nm.p_drop_col > 0:
        keep = [j for j in range(len(col_labels)) if rng.random() >= nm.p_drop_col]
        if not keep:
            keep = [0]
        col_labels = [col_labels[j] for j in keep]
        grid = [[row[j] for j in keep] for row in grid]
    if nm.p_extra_row > 0 and rng.random() < nm.p_extra_row:
        label = SPURIOUS_LABELS[int(rng.integers(0, len(SPURIOUS_LABELS)))]
        present = [v for row in grid for v in row if v is not None]
        lo, hi = (min(present), max(present)) if present else (0.0, 100.0)
        row_labels.append(label)
        grid.append([float(rng.uniform(lo, hi if hi > lo else lo + 1.0)) for _ in col_labels])
    if nm.p_transpose > 0 and rng.random() < nm.p_transpose:
        grid = [list(col) for col in zip(*grid)]
        row_labels, col_labels = col_labels, row_labels

    lines = ["\t".join([""] + col_labels)]
    for label, row in zip(row_labels, grid):
        cells = [label] + [format_value(v) for v in row]
        if nm.p_ragged > 0 and rng.random() < nm.p_ragged:
            if rng.random() < 0.5 and len(cells) > 2:
                cells = cells[:-1]
            else:
                cells = cells + [""]
        lines.append("\t".join(cells))
    return "```tsv\n" + "\n".join(lines) + "\n```"


def make_simulated_sampler(truth: NormalizedTable, nm: NoiseModel) -> Callable[[int], str]:
    """Bind a truth table and noise model into a run_ensemble-compatible sampler."""

    def sample(draw_index: int) -> str:
        return simulated_sample(truth, nm, draw_index)

    return sample
