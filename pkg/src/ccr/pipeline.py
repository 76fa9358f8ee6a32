"""End-to-end pipeline orchestration with content-addressed resumability.

Every artifact embeds a metadata block {tool_version, config_hash, seed,
content_sha256, created_at}; a stage is skipped when its output exists, the
stored config hash matches the hash of the stage's current parameters and input
digests, and the body bytes still match their recorded digest. Once any stage
re-runs, all downstream stages re-run. Timestamps live only in the metadata
block and are excluded from all hashes, so identical configs produce
byte-identical artifacts apart from created_at.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path

import yaml

from . import __version__
from .backends import EmbeddingSource, embed_batch, load_adapter, parse_backend_spec
from .corpus import assign_splits, corpus_stats, ingest_corpus, normalize_paragraphs
from .errors import ConfigError, DataError
from .evaluation import benchmark_officials, eval_pm, eval_qic, eval_sts, load_officials
from .pairing import (
    ThresholdConfig,
    compute_thresholds,
    label_pairs,
    load_pairs,
    load_triplets,
    sample_triplets_hard,
    sample_triplets_random,
    sample_validation_pairs,
    title_similarity_matrix,
)
from .scoring import load_dictionary, load_questionnaire, load_scores, score_corpus
from .trainer import TrainConfig, TripletLossConfig, train_adapter
from .wordvec import WordVecTrainConfig, load_vectors, save_vectors, train_word_vectors

log = logging.getLogger(__name__)

STAGE_ORDER = ("ingest", "wordvec", "build_pairs", "sample_triplets", "train_adapter", "score", "evaluate")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_digest(path: str | Path) -> str:
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    return sha256_hex(path.read_bytes())


def stage_hash(stage: str, params: dict, inputs: dict[str, str]) -> str:
    payload = {"stage": stage, "tool_version": __version__, "params": params, "inputs": inputs}
    return sha256_hex(canonical_json(payload).encode("utf-8"))[:16]


def _meta_block(config_hash: str, seed: int, content_sha: str) -> dict:
    return {
        "tool_version": __version__,
        "config_hash": config_hash,
        "seed": seed,
        "content_sha256": content_sha,
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }


def write_artifact_jsonl(path: str | Path, rows: list[dict], config_hash: str, seed: int) -> str:
    """Write a JSONL artifact with a leading _meta line; returns the body digest."""
    body = "".join(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n" for row in rows)
    content_sha = sha256_hex(body.encode("utf-8"))
    meta = _meta_block(config_hash, seed, content_sha)
    Path(path).write_text(json.dumps({"_meta": meta}, sort_keys=True) + "\n" + body, encoding="utf-8")
    return content_sha


def write_artifact_json(path: str | Path, payload: dict, config_hash: str, seed: int) -> str:
    body_sha = sha256_hex(canonical_json(payload).encode("utf-8"))
    out = dict(payload)
    out["_meta"] = _meta_block(config_hash, seed, body_sha)
    Path(path).write_text(json.dumps(out, sort_keys=True, ensure_ascii=False), encoding="utf-8")
    return body_sha


def read_artifact_meta(path: str | Path) -> dict | None:
    """Metadata block of an artifact, or None when absent/unreadable."""
    path = Path(path)
    if not path.exists():
        return None
    try:
        with path.open(encoding="utf-8") as fh:
            first = fh.readline()
        obj = json.loads(first if path.suffix != ".json" else path.read_text(encoding="utf-8"))
        return obj.get("_meta")
    except (json.JSONDecodeError, OSError):
        return None


def artifact_body_digest(path: str | Path) -> str | None:
    """Digest of the artifact body (everything hashed when it was written)."""
    path = Path(path)
    if not path.exists():
        return None
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError:
            return None
        payload.pop("_meta", None)
        return sha256_hex(canonical_json(payload).encode("utf-8"))
    first_newline = text.find("\n")
    if first_newline < 0:
        return None
    first_line = text[: first_newline + 1]
    try:
        head = json.loads(first_line)
    except json.JSONDecodeError:
        return None
    if "_meta" not in head:
        return None
    return sha256_hex(text[first_newline + 1 :].encode("utf-8"))


def artifact_is_current(path: str | Path, expected_hash: str) -> bool:
    meta = read_artifact_meta(path)
    if meta is None:
        return False
    if meta.get("config_hash") != expected_hash or meta.get("tool_version") != __version__:
        return False
    return artifact_body_digest(path) == meta.get("content_sha256")


DEFAULT_CONFIG = {
    "seed": 42,
    "backend": "mock:dim=64,seed=0",
    "normalize": {"min_len": 50, "max_len": 500},
    "split": {"fractions": [0.6, 0.2, 0.2], "stratify_by_title": True},
    "wordvec": {"mode": "load"},
    "thresholds": [10.0, 90.0],
    "sampling": {"mode": "random"},
    "train": {"batch_size": 32, "epochs": 3, "warmup_epochs": 1, "learning_rate": 1e-5, "margin_alpha": 5.0},
    "eval": {"rounds": 5, "pairs_per_round": 200, "qic_folds": 10},
}


def load_config(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return merge_config(raw, apply_env=True)


def merge_config(overrides: dict, apply_env: bool = False) -> dict:
    config = json.loads(json.dumps(DEFAULT_CONFIG))
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(config.get(key), dict):
            config[key].update(value)
        else:
            config[key] = value
    if "paths" not in config or not isinstance(config["paths"], dict):
        raise ConfigError("config needs a 'paths' section")
    paths = config["paths"]
    for key in ("raw", "corpus", "vectors", "pairs", "valid_pairs", "triplets", "adapter", "train_log", "scores", "report"):
        if key not in paths:
            raise ConfigError(f"config paths section is missing {key!r}")
    if apply_env:
        env_backend = os.environ.get("CCR_BACKEND")
        if env_backend:
            config["backend"] = env_backend
    return config


@dataclass
class StageOutcome:
    name: str
    skipped: bool


class PipelineRun:
    """Executes the stage chain over a validated config dict."""

    def __init__(self, config: dict, force: bool = False):
        self.config = merge_config(config)
        config = self.config
        self.force = force
        self.paths = {k: Path(v) if isinstance(v, str) else v for k, v in config["paths"].items()}
        self.seed = int(config["seed"])
        self.backend = parse_backend_spec(config["backend"])
        self.dirty = force
        self.outcomes: list[StageOutcome] = []
        self._records = None
        self._model = None
        self._sims = None

    # -- helpers --------------------------------------------------------

    def _run_stage(self, name: str, out_paths: list[Path], expected: str, action) -> None:
        if not self.dirty and all(artifact_is_current(p, expected) for p in out_paths):
            log.info("stage %-15s skipped (config hash %s matches)", name, expected)
            self.outcomes.append(StageOutcome(name, skipped=True))
            return
        log.info("stage %-15s running", name)
        try:
            action(expected)
        except Exception as exc:
            try:
                wrapped = type(exc)(f"stage {name!r} failed: {exc}")
            except TypeError:
                raise
            raise wrapped from exc
        self.dirty = True
        self.outcomes.append(StageOutcome(name, skipped=False))

    def _records_from_corpus(self):
        if self._records is None:
            self._records = ingest_corpus(self.paths["corpus"])
        return self._records

    def _split(self, name: str):
        return [r for r in self._records_from_corpus() if r.split == name]

    def _wordvec_model(self):
        if self._model is None:
            self._model = load_vectors(self.paths["vectors"])
        return self._model

    def _title_sims(self):
        if self._sims is None:
            self._sims = title_similarity_matrix(self._records_from_corpus(), self._wordvec_model())
        return self._sims

    # -- stages ---------------------------------------------------------

    def stage_ingest(self):
        cfg = self.config
        params = {"normalize": cfg["normalize"], "split": cfg["split"], "seed": self.seed}
        inputs = {"raw": file_digest(self.paths["raw"])}
        expected = stage_hash("ingest", params, inputs)

        def action(config_hash):
            records = ingest_corpus(self.paths["raw"])
            records = normalize_paragraphs(
                records, min_len=int(cfg["normalize"]["min_len"]), max_len=int(cfg["normalize"]["max_len"])
            )
            records = assign_splits(
                records,
                fractions=tuple(cfg["split"]["fractions"]),
                seed=self.seed,
                stratify_by_title=bool(cfg["split"]["stratify_by_title"]),
            )
            write_artifact_jsonl(self.paths["corpus"], [r.to_json() for r in records], config_hash, self.seed)
            self._records = records
            stats = corpus_stats(records)
            log.info(
                "ingest: %d paragraphs, %d works, mean length %.1f",
                stats.n_paragraphs, stats.n_works, stats.mean_char_len,
            )

        self._run_stage("ingest", [self.paths["corpus"]], expected, action)

    def stage_wordvec(self):
        cfg = self.config["wordvec"]
        vectors_path = self.paths["vectors"]
        if cfg.get("mode", "load") == "load":
            # vectors are an input artifact; nothing to produce
            file_digest(vectors_path)
            self.outcomes.append(StageOutcome("wordvec", skipped=True))
            return
        params = {k: v for k, v in cfg.items() if k != "mode"}
        params["seed"] = self.seed
        inputs = {"corpus": artifact_body_digest(self.paths["corpus"]) or ""}
        expected = stage_hash("wordvec", params, inputs)
        meta_path = Path(str(vectors_path) + ".meta.json")

        def current() -> bool:
            if not vectors_path.exists() or not meta_path.exists():
                return False
            try:
                meta = json.loads(meta_path.read_text())
            except json.JSONDecodeError:
                return False
            return meta.get("config_hash") == expected and meta.get("content_sha256") == file_digest(vectors_path)

        if not self.dirty and current():
            log.info("stage %-15s skipped (config hash %s matches)", "wordvec", expected)
            self.outcomes.append(StageOutcome("wordvec", skipped=True))
            return

        log.info("stage %-15s running", "wordvec")
        records = self._records_from_corpus()
        sentences = [r.text.split() if " " in r.text else list(r.text) for r in records]
        train_cfg = WordVecTrainConfig(
            architecture=cfg.get("architecture", "skipgram"),
            dim=int(cfg.get("dim", 300)),
            epochs=int(cfg.get("epochs", 5)),
            window=int(cfg.get("window", 5)),
            negative=int(cfg.get("negative", 5)),
            min_count=int(cfg.get("min_count", 10)),
            seed=self.seed,
        )
        model = train_word_vectors(sentences, train_cfg)
        save_vectors(model, vectors_path)
        meta = _meta_block(expected, self.seed, file_digest(vectors_path))
        meta_path.write_text(json.dumps(meta, sort_keys=True))
        self._model = model
        self.dirty = True
        self.outcomes.append(StageOutcome("wordvec", skipped=False))

    def stage_build_pairs(self):
        cfg = self.config
        params = {"thresholds": cfg["thresholds"], "seed": self.seed}
        inputs = {
            "corpus": artifact_body_digest(self.paths["corpus"]) or "",
            "vectors": file_digest(self.paths["vectors"]),
        }
        expected = stage_hash("build_pairs", params, inputs)

        def action(config_hash):
            sims = self._title_sims()
            lower, upper = cfg["thresholds"]
            thresholds = compute_thresholds(
                list(sims.values()), ThresholdConfig(float(lower), float(upper))
            )
            train_records = self._split("train")
            pair_set = label_pairs(train_records, sims, thresholds)
            rows = [
                {"i": p.id_i, "j": p.id_j, "sim": p.title_sim, "label": p.label}
                for p in pair_set.pairs
            ]
            rows.insert(0, {"thresholds": list(thresholds)})
            write_artifact_jsonl(self.paths["pairs"], rows, config_hash, self.seed)
            valid_records = self._split("valid")
            valid_pairs = sample_validation_pairs(valid_records, sims, seed=self.seed)
            write_artifact_jsonl(
                self.paths["valid_pairs"],
                [{"i": i, "j": j, "sim": s} for i, j, s in valid_pairs],
                config_hash,
                self.seed,
            )
            log.info("build_pairs: %d labeled pairs, %d validation pairs", len(pair_set.pairs), len(valid_pairs))

        self._run_stage("build_pairs", [self.paths["pairs"], self.paths["valid_pairs"]], expected, action)

    def stage_sample_triplets(self):
        cfg = self.config["sampling"]
        params = {"mode": cfg["mode"], "seed": self.seed, "backend": self.config["backend"] if cfg["mode"] == "hard" else None}
        inputs = {
            "pairs": artifact_body_digest(self.paths["pairs"]) or "",
            "corpus": artifact_body_digest(self.paths["corpus"]) or "",
        }
        expected = stage_hash("sample_triplets", params, inputs)

        def action(config_hash):
            pair_set = self._load_labeled_pairs()
            train_records = self._split("train")
            if cfg["mode"] == "random":
                triplets = sample_triplets_random(pair_set, train_records, seed=self.seed)
            elif cfg["mode"] == "hard":
                ids = {r.id for r in train_records}
                source = EmbeddingSource.from_backend(self.backend, train_records)
                vecs = source.vectors([r.id for r in train_records])
                embeddings = {r.id: v for r, v in zip(train_records, vecs)}
                pair_set.pairs = [p for p in pair_set.pairs if p.id_i in ids and p.id_j in ids]
                triplets = sample_triplets_hard(pair_set, embeddings, seed=self.seed)
            else:
                raise ConfigError(f"unknown sampling mode {cfg['mode']!r}")
            write_artifact_jsonl(
                self.paths["triplets"],
                [{"anchor": t.anchor_id, "pos": t.positive_id, "neg": t.negative_id} for t in triplets],
                config_hash,
                self.seed,
            )
            log.info("sample_triplets: %d triplets (%s mode)", len(triplets), cfg["mode"])

        self._run_stage("sample_triplets", [self.paths["triplets"]], expected, action)

    def _load_labeled_pairs(self):
        return load_pairs(self.paths["pairs"])

    def _load_valid_pairs(self):
        out = []
        with Path(self.paths["valid_pairs"]).open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                if "_meta" in obj:
                    continue
                out.append((obj["i"], obj["j"], float(obj["sim"])))
        return out

    def stage_train_adapter(self):
        cfg = self.config["train"]
        params = {"train": cfg, "backend": self.config["backend"], "seed": self.seed}
        inputs = {
            "triplets": artifact_body_digest(self.paths["triplets"]) or "",
            "valid_pairs": artifact_body_digest(self.paths["valid_pairs"]) or "",
            "corpus": artifact_body_digest(self.paths["corpus"]) or "",
        }
        expected = stage_hash("train_adapter", params, inputs)

        def action(config_hash):
            triplets = load_triplets(self.paths["triplets"])
            valid_pairs = self._load_valid_pairs()
            records = self._records_from_corpus()
            source = EmbeddingSource.from_backend(self.backend, records)
            train_cfg = TrainConfig(
                batch_size=int(cfg["batch_size"]),
                epochs=int(cfg["epochs"]),
                warmup_epochs=int(cfg["warmup_epochs"]),
                learning_rate=float(cfg["learning_rate"]),
                seed=self.seed,
            )
            loss_cfg = TripletLossConfig(margin_alpha=float(cfg["margin_alpha"]))
            params_out, reports = train_adapter(triplets, source, train_cfg, loss_cfg, valid_pairs)
            best = max(reports, key=lambda r: (r.pearson, r.spearman))
            payload = {
                "dim_in": params_out.dim_in,
                "dim_out": params_out.dim_out,
                "W": [[float(x) for x in row] for row in params_out.W],
                "b": [float(x) for x in params_out.b],
                "meta": {"seed": self.seed, "config_hash": config_hash, "epoch": best.epoch},
            }
            write_artifact_json(self.paths["adapter"], payload, config_hash, self.seed)
            write_artifact_jsonl(
                self.paths["train_log"],
                [
                    {"epoch": r.epoch, "mean_loss": r.mean_loss, "pearson": r.pearson, "spearman": r.spearman}
                    for r in reports
                ],
                config_hash,
                self.seed,
            )
            log.info("train_adapter: best epoch %d, validation pearson %.4f", best.epoch, best.pearson)

        self._run_stage("train_adapter", [self.paths["adapter"], self.paths["train_log"]], expected, action)

    def _questionnaire_paths(self) -> list[Path]:
        return [Path(p) for p in self.paths.get("questionnaires", [])]

    def _dictionary_paths(self) -> list[Path]:
        return [Path(p) for p in self.paths.get("dictionaries", [])]

    def stage_score(self):
        q_paths = self._questionnaire_paths()
        if not q_paths:
            log.info("stage %-15s skipped (no questionnaires configured)", "score")
            self.outcomes.append(StageOutcome("score", skipped=True))
            return
        params = {"backend": self.config["backend"], "seed": self.seed}
        inputs = {
            "corpus": artifact_body_digest(self.paths["corpus"]) or "",
            "adapter": artifact_body_digest(self.paths["adapter"]) or "",
        }
        for p in q_paths:
            inputs[f"questionnaire:{p.name}"] = file_digest(p)
        expected = stage_hash("score", params, inputs)

        def action(config_hash):
            adapter = load_adapter(self.paths["adapter"])
            test_records = self._split("test")
            rows = []
            for q_path in q_paths:
                questionnaire = load_questionnaire(q_path)
                for s in score_corpus(test_records, questionnaire, self.backend, adapter):
                    rows.append(
                        {"paragraph_id": s.paragraph_id, "construct": s.construct, "method": s.method, "score": s.score}
                    )
            write_artifact_jsonl(self.paths["scores"], rows, config_hash, self.seed)
            log.info("score: %d score records", len(rows))

        self._run_stage("score", [self.paths["scores"]], expected, action)

    def stage_evaluate(self):
        cfg = self.config["eval"]
        q_paths = self._questionnaire_paths()
        d_paths = self._dictionary_paths()
        officials_path = self.paths.get("officials")
        params = {"eval": cfg, "backend": self.config["backend"], "thresholds": self.config["thresholds"], "seed": self.seed}
        inputs = {
            "corpus": artifact_body_digest(self.paths["corpus"]) or "",
            "adapter": artifact_body_digest(self.paths["adapter"]) or "",
            "vectors": file_digest(self.paths["vectors"]),
        }
        for p in q_paths + d_paths:
            inputs[f"file:{p.name}"] = file_digest(p)
        if officials_path:
            inputs["officials"] = file_digest(officials_path)
            inputs["scores"] = artifact_body_digest(self.paths["scores"]) or ""
        expected = stage_hash("evaluate", params, inputs)

        def action(config_hash):
            adapter = load_adapter(self.paths["adapter"])
            test_records = self._split("test")
            sims = self._title_sims()
            reports = {}
            lower, upper = self.config["thresholds"]
            for source_kind in ("random", "threshold"):
                rep = eval_sts(
                    test_records,
                    source_kind,
                    rounds=int(cfg["rounds"]),
                    pairs_per_round=int(cfg["pairs_per_round"]),
                    title_sims=sims,
                    backend=self.backend,
                    adapter=adapter,
                    seed=self.seed,
                    thresholds=ThresholdConfig(float(lower), float(upper)),
                )
                reports[rep.task] = rep.to_dict()
            questionnaires = [load_questionnaire(p) for p in q_paths]
            dictionaries = [load_dictionary(p) for p in d_paths]
            if questionnaires and dictionaries:
                rep = eval_pm(test_records, questionnaires, dictionaries, self.backend, adapter, self._wordvec_model())
                reports[rep.task] = rep.to_dict()
            if len(questionnaires) >= 2:
                texts, labels = [], []
                for c, q in enumerate(questionnaires):
                    for item in q.items:
                        texts.append(item.text)
                        labels.append(c)
                from .backends import apply_adapter_batch

                item_embs = apply_adapter_batch(adapter, embed_batch(self.backend, texts))
                rep = eval_qic(list(item_embs), labels, k=int(cfg["qic_folds"]), seed=self.seed)
                reports[rep.task] = rep.to_dict()
            if officials_path:
                officials = load_officials(officials_path)
                score_rows = load_scores(self.paths["scores"])
                constructs = sorted({s.construct for s in score_rows})
                for construct in constructs:
                    table = {s.paragraph_id: s.score for s in score_rows if s.construct == construct}
                    # officials datasets usually cover more than the scored split;
                    # keep only scored writings, drop officials with none left
                    usable = []
                    dropped = 0
                    for off in officials:
                        covered = tuple(w for w in off.writings if w in table)
                        if covered:
                            usable.append(
                                type(off)(off.author_id, covered, off.attitude_ordinal, off.support_continuous)
                            )
                        else:
                            dropped += 1
                    if dropped:
                        log.warning(
                            "benchmark %s: dropped %d/%d officials with no scored writings",
                            construct, dropped, len(officials),
                        )
                    rep = benchmark_officials(usable, table)
                    reports[f"benchmark:{construct}"] = rep.to_dict()
            write_artifact_json(self.paths["report"], {"reports": reports}, config_hash, self.seed)
            log.info("evaluate: %d reports", len(reports))

        self._run_stage("evaluate", [self.paths["report"]], expected, action)

    def run(self) -> list[StageOutcome]:
        self.stage_ingest()
        self.stage_wordvec()
        self.stage_build_pairs()
        self.stage_sample_triplets()
        self.stage_train_adapter()
        self.stage_score()
        self.stage_evaluate()
        return self.outcomes


def run_pipeline(config: dict, force: bool = False) -> list[StageOutcome]:
    return PipelineRun(config, force=force).run()
