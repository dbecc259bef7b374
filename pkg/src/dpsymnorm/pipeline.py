"""One-pass ingestion and assembly of the private release set.

Each repetition instance owns a full-stream CountSketch, an AMS sketch, a
nested subsampler and one CountSketch per substream level j = 0..s.  At
release time the instance publishes

* a noisy L2 estimate, from which every level gets a label (high, medium
  or low) and a witness substream j,
* a noisy top-K list from the full sketch (the coordinate partition),
* noisy frequencies of heavy coordinates (high levels),
* rescaled level sizes counted in the witness substreams (medium, low).

Norm queries only read this output; see ``norms.query``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable

import numpy as np

from .hashing import Subsampler
from .levels import CaseThresholds, case_table, levels_of
from .params import LOW_COUNT_SENSITIVITY, DerivedParams, PublicParams, derive
from .privacy import BudgetLedger, LaplaceNoise, priv_threshold_release, priv_top_k_release
from .sketch import AmsSketch, CountSketch, top_by_value

RELEASE_VERSION = 1
CHUNK = 1 << 16


def _hash_rng(seed: int, instance: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(instance, 0xC5))
    return np.random.Generator(np.random.Philox(ss))


class InstanceState:
    def __init__(self, pub: PublicParams, d: DerivedParams, rng: np.random.Generator, gamma: float):
        self.gamma = gamma
        self.full = CountSketch(pub.n, d.rows, d.full_width, rng)
        self.ams = AmsSketch(pub.n, d.ams_reps, rng)
        self.sampler = Subsampler.random(pub.n, d.s, d.subsample_degree, rng)
        self.subs = [CountSketch(pub.n, d.rows, w, rng) for w in d.sub_widths]

    def update(self, keys: np.ndarray, counts: np.ndarray) -> None:
        self.full.update_many(keys, counts)
        self.ams.update_many(keys, counts)
        depth = self.sampler.depth(keys)
        for j, cs in enumerate(self.subs):
            sel = depth >= j
            if not sel.any():
                break
            cs.update_many(keys[sel], counts[sel])


class Pipeline:
    """Streaming state for all instances.

    ``pin_noise`` replaces every Laplace draw by 0 (test mode).  ``same_seeds``
    gives every instance the hashes, boundary and noise of instance 0.
    """

    def __init__(self, pub: PublicParams, seed: int, pin_noise: bool = False, same_seeds: bool = False):
        self.pub = pub
        self.seed = int(seed)
        self.pin_noise = pin_noise
        self.same_seeds = same_seeds
        self.derived = derive(pub, self.seed)
        d = self.derived
        self.gammas = [d.gammas[0] if same_seeds else g for g in d.gammas]
        self.instances = [
            InstanceState(pub, d, _hash_rng(self.seed, 0 if same_seeds else t), self.gammas[t])
            for t in range(d.r_instances)
        ]
        self.updates = 0
        self._released = False

    @property
    def thresholds(self) -> CaseThresholds:
        return CaseThresholds.from_derived(self.derived)

    def ingest(self, item: int) -> None:
        self.ingest_many([item])

    def ingest_many(self, items) -> None:
        items = np.asarray(items, dtype=np.int64).ravel()
        if items.size == 0:
            return
        if items.min() < 0 or items.max() >= self.pub.n:
            raise ValueError(f"stream item outside [0, {self.pub.n})")
        if self.updates + items.size > self.pub.m:
            raise ValueError(f"stream longer than the declared bound m={self.pub.m}")
        keys, counts = np.unique(items, return_counts=True)
        for inst in self.instances:
            inst.update(keys, counts.astype(np.int64))
        self.updates += int(items.size)

    def ingest_counts(self, keys, counts) -> None:
        """Ingest ``counts[t]`` updates of ``keys[t]``; same state as the expanded stream."""
        keys = np.asarray(keys, dtype=np.int64).ravel()
        counts = np.asarray(counts, dtype=np.int64).ravel()
        if keys.shape != counts.shape or (counts.size and counts.min() < 0):
            raise ValueError("counts must be nonnegative and match keys")
        if keys.size and (keys.min() < 0 or keys.max() >= self.pub.n):
            raise ValueError(f"stream item outside [0, {self.pub.n})")
        total = int(counts.sum())
        if self.updates + total > self.pub.m:
            raise ValueError(f"stream longer than the declared bound m={self.pub.m}")
        keys, inverse = np.unique(keys, return_inverse=True)
        counts = np.bincount(inverse, weights=counts, minlength=keys.size).astype(np.int64)
        for inst in self.instances:
            inst.update(keys, counts)
        self.updates += total

    def ingest_stream(self, chunks: Iterable) -> "Pipeline":
        for chunk in chunks:
            self.ingest_many(chunk)
        return self

    def _noise(self, scale, t, component, sub=0) -> LaplaceNoise:
        key = 0 if self.same_seeds else t
        return LaplaceNoise.keyed(scale, self.seed, key, component, sub, pinned=self.pin_noise)

    def noisy_f2(self, t: int) -> tuple[float, float]:
        """(noisy L2 estimate, F2 estimate used for labelling) for one instance."""
        d = self.derived
        z = self.instances[t].ams.estimate() + self._noise(d.noise_scale_f2, t, "f2").sample()
        return z, max(z, 1.0) ** 2

    def level_labels(self, t: int, f2_hat: float) -> list[tuple[str, int]]:
        d = self.derived
        return case_table(d.ell, f2_hat, self.thresholds, d.xi, self.gammas[t])

    def rescale(self, j: int) -> float:
        return 2.0**j / (1.0 + self.pub.knob("c_div") * self.pub.alpha)

    def _window_counts(self, t: int, j: int, values: np.ndarray, wanted: list[int]) -> dict[int, int]:
        counts = dict.fromkeys(wanted, 0)
        pos = values[values > 0]
        if pos.size:
            lv, c = np.unique(levels_of(pos, self.derived.xi, self.gammas[t]), return_counts=True)
            for i, k in zip(lv.tolist(), c.tolist()):
                if i in counts:
                    counts[i] = k
        return counts

    def low_window_counts(self, t: int, f2_hat: float) -> dict[tuple[int, int], int]:
        """Exact-rounded level counts for every low level in its witness substream,
        before noise and rescaling.  Keyed by (level, j)."""
        labels = self.level_labels(t, f2_hat)
        inst = self.instances[t]
        out: dict[tuple[int, int], int] = {}
        for j in range(self.derived.s + 1):
            wanted = [i for i, (lab, w) in enumerate(labels) if lab == "low" and w == j]
            if not wanted:
                continue
            members = inst.sampler.members(j, self.pub.n)
            est = np.rint(inst.subs[j].estimate(members)).astype(np.float64) if members.size else np.zeros(0)
            for i, c in self._window_counts(t, j, est, wanted).items():
                out[(i, j)] = c
        return out

    def release_instance(self, t: int) -> tuple[dict, int]:
        d, pub = self.derived, self.pub
        inst = self.instances[t]
        gamma = self.gammas[t]
        z, f2_hat = self.noisy_f2(t)
        labels = self.level_labels(t, f2_hat)

        eps_part = d.component_epsilon("partition")
        part = priv_top_k_release(
            inst.full, d.k_partition, d.eta_partition, eps_part / 2,
            self._noise(2.0 / (d.eta_partition * eps_part / 2), t, "partition"),
        )
        partition = []
        for k, v in part.items:
            band = "low"
            if v > 0:
                lv = int(levels_of([v], d.xi, gamma)[0])
                band = labels[lv][0] if lv < len(labels) else "high"
            partition.append([k, v, band])

        high = priv_threshold_release(
            inst.full, z, d.eta_high, d.nu, d.noise_scale_high,
            self._noise(d.noise_scale_high, t, "high"),
            capacity=d.k_high, exclusion=pub.knob("c_excl"),
        )

        medium_js = sorted({j for lab, j in labels if lab == "medium"})
        med_scale = d.noise_scale_med * max(len(medium_js), 1)
        medium = []
        for j in medium_js:
            wanted = [i for i, (lab, w) in enumerate(labels) if lab == "medium" and w == j]
            members = inst.sampler.members(j, pub.n)
            src = self._noise(med_scale, t, "medium", j)
            noisy = inst.subs[j].estimate(members).astype(np.float64) + src.sample(members.size)
            keep = noisy > d.t2
            kept = top_by_value(members[keep], noisy[keep], d.k_med)
            vals = np.array([v for _, v in kept], dtype=np.float64)
            for i, c in sorted(self._window_counts(t, j, vals, wanted).items()):
                if c:
                    medium.append([i, self.rescale(j) * c, j])

        low = []
        # the floor is relative to the noise actually added, so pinned noise has none
        floor = 0.0 if self.pin_noise else pub.knob("c_floor") * d.noise_scale_low * np.log(d.ell + 1)
        for (i, j), c in sorted(self.low_window_counts(t, f2_hat).items(), key=lambda kv: (kv[0][1], kv[0][0])):
            noise = self._noise(d.noise_scale_low, t, "low", (j << 16) | i).sample()
            noisy = c + noise
            low.append([i, self.rescale(j) * noisy if noisy >= floor else 0.0, j])
        low.sort()

        out = {
            "instance": t,
            "gamma": gamma,
            "f2_noisy": f2_hat,
            "l2_noisy": z,
            "levels": [[i, lab, j] for i, (lab, j) in enumerate(labels)],
            "partition": partition,
            "high": [[k, v] for k, v in high.items],
            "high_threshold": high.threshold,
            "medium": medium,
            "low": low,
        }
        return out, len(medium_js)

    def release(self) -> "ReleaseSet":
        """Publish the release set.  May be called once per pipeline."""
        if self._released:
            raise RuntimeError("this pipeline has already released its statistics")
        d, pub = self.derived, self.pub
        ledger = BudgetLedger(pub.epsilon, pub.delta)
        r = d.r_instances
        instances = []
        for t in range(r):
            out, n_med = self.release_instance(t)
            instances.append(out)
            half = d.budget["partition"] / (2 * r)
            eps_part = d.component_epsilon("partition")
            ledger.add("f2", t, 2.0, d.noise_scale_f2, half)
            ledger.add("partition", t, 2.0 / d.eta_partition, 2.0 / (d.eta_partition * eps_part / 2), half)
            ledger.add("high", t, 2.0 * d.k_high, d.noise_scale_high, d.budget["high"] / r)
            ledger.add("medium", t, 2.0 * d.k_med * n_med, d.noise_scale_med * max(n_med, 1),
                       d.budget["medium"] / r)
            ledger.add("low", t, LOW_COUNT_SENSITIVITY, d.noise_scale_low, d.budget["low"] / r)
        ledger.audit()
        self._released = True
        return ReleaseSet(
            version=RELEASE_VERSION,
            public={"n": pub.n, "m": pub.m, "alpha": pub.alpha, "epsilon": pub.epsilon,
                    "delta": pub.delta, "M": pub.M},
            constants=pub.all_constants(),
            derived=d.as_dict() | {"gammas": list(self.gammas)},
            budget=ledger.to_rows(),
            pinned_noise=self.pin_noise,
            updates=self.updates,
            instances=instances,
        )


@dataclass
class ReleaseSet:
    """Everything published by one run; norm queries read nothing else."""

    version: int
    public: dict
    constants: dict
    derived: dict
    budget: list
    pinned_noise: bool
    updates: int
    instances: list = field(default_factory=list)

    @property
    def ledger(self) -> BudgetLedger:
        return BudgetLedger.from_rows(self.public["epsilon"], self.public["delta"], self.budget)

    def to_dict(self) -> dict:
        return {
            "format": "dpsymnorm-release",
            "version": self.version,
            "public": self.public,
            "constants": self.constants,
            "derived": self.derived,
            "budget": self.budget,
            "pinned_noise": self.pinned_noise,
            "updates": self.updates,
            "instances": self.instances,
        }

    def to_json(self) -> str:
        return json.dumps(_plain(self.to_dict()), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, data: dict) -> "ReleaseSet":
        if data.get("format") != "dpsymnorm-release":
            raise ValueError("not a release set file")
        if data.get("version") != RELEASE_VERSION:
            raise ValueError(f"unsupported release set version {data.get('version')}")
        return cls(data["version"], data["public"], data["constants"], data["derived"], data["budget"],
                   data["pinned_noise"], data["updates"], data["instances"])

    @classmethod
    def from_json(cls, text: str) -> "ReleaseSet":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "ReleaseSet":
        return cls.from_json(Path(path).read_text())


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, Fraction):
        return [obj.numerator, obj.denominator]
    return obj


def run(pub: PublicParams, items, seed: int, pin_noise: bool = False, same_seeds: bool = False) -> ReleaseSet:
    """Ingest a full stream (array or iterable of chunks) and release."""
    pipe = Pipeline(pub, seed, pin_noise=pin_noise, same_seeds=same_seeds)
    if isinstance(items, np.ndarray) or isinstance(items, list):
        items = np.asarray(items, dtype=np.int64)
        chunks = (items[i : i + CHUNK] for i in range(0, items.size, CHUNK))
    else:
        chunks = items
    pipe.ingest_stream(chunks)
    return pipe.release()
