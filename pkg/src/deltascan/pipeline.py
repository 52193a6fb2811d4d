"""Two-phase scan orchestration.

Embed phase: analyze contracts, run the builtin reentrancy detector, merge
external report records, and store block vectors of defective functions in
the ANN index. Detect phase: analyze and embed every function of new
contracts and query the index; no detectors run (that is the whole point of
the cheaper second phase).
"""

from __future__ import annotations

import concurrent.futures
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from .cfg import ContractAnalysis, analyze_contract, enumerate_paths
from .detectors import (DefectClass, detect_bypass_reentrancy, map_report,
                        parse_report_file)
from .encoder import (EmbeddingConfig, Vocabulary, embed_function,
                      load_vocabulary, save_vocabulary, train_vocabulary)
from .encoder.params import init_params
from .errors import EmptyCorpus
from .index import AnnIndex, EntryLabel, IndexEntry, decide_similar, load_index, save_index

logger = logging.getLogger(__name__)

__all__ = ["PipelineConfig", "ScanResult", "cmd_embed", "cmd_detect",
           "cmd_ablate", "read_bytecode_file"]

ABLATION_VARIANTS = (
    ("full", True, True),
    ("no_sequence", False, True),
    ("no_graph", True, False),
    ("no_both", False, False),
)
DEFAULT_THRESHOLDS = (0.01, 0.1, 1.0, 2.0)


@dataclass(frozen=True)
class PipelineConfig:
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    max_paths: int = 64
    threshold: float = 0.1
    index_path: str = "deltascan.idx"
    cache_dir: str = ".deltascan-cache"
    api_base_url: str | None = None
    api_key: str | None = None
    use_sequence: bool = True
    use_graph: bool = True
    allow_no_stages: bool = False
    workers: int = 1
    store_all: bool = False
    ef_search: int = 64

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if self.workers < 1:
            raise ValueError("worker count must be >= 1")
        if self.max_paths < 1:
            raise ValueError("max_paths must be >= 1")
        if not (self.use_sequence or self.use_graph or self.allow_no_stages):
            raise ValueError("at least one encoder stage must be enabled "
                             "(pass allow_no_stages for the ablation variant)")

    @property
    def vocab_path(self) -> str:
        return str(self.index_path) + ".vocab"


@dataclass
class ScanResult:
    contract: str
    source: str
    code_hash: str
    findings: list = field(default_factory=list)
    detector_records: list = field(default_factory=list)
    timings_ms: dict = field(default_factory=dict)
    counters: dict = field(default_factory=dict)
    error: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "contract": self.contract,
            "code_hash": self.code_hash,
            "findings": [
                {
                    "selector": "0x" + f.query_function_id[1].hex()
                    if isinstance(f.query_function_id[1], bytes) else
                    str(f.query_function_id[1]),
                    "defect": f.defect_class.value,
                    "max_block_distance": f.max_block_distance,
                    "matched": {"contract": f.matched_contract,
                                "function": f.matched_function},
                }
                for f in self.findings
            ],
            "timings_ms": self.timings_ms,
            "counters": self.counters,
            **({"error": self.error} if self.error else {}),
        }


def read_bytecode_file(path) -> bytes:
    """Read a bytecode file: hex text (optional 0x prefix) or raw binary."""
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("ascii").strip()
        body = text[2:] if text.startswith(("0x", "0X")) else text
        if body and all(c in "0123456789abcdefABCDEF" for c in body):
            return bytes.fromhex(body if len(body) % 2 == 0 else "0" + body)
    except (UnicodeDecodeError, ValueError):
        pass
    return raw


@dataclass
class _Analyzed:
    name: str
    source: str
    analysis: ContractAnalysis
    paths: dict            # function index -> list of ExecutionPath
    hit_cap: int
    timings_ms: dict


def _analyze_one(name: str, source: str, code: bytes, max_paths: int) -> _Analyzed:
    timings = {}
    t0 = time.perf_counter()
    analysis = analyze_contract(code)
    timings["analysis"] = (time.perf_counter() - t0) * 1e3
    t0 = time.perf_counter()
    paths = {}
    hit_cap = 0
    for i, fn in enumerate(analysis.functions):
        enum = enumerate_paths(fn, max_paths)
        paths[i] = list(enum.paths)
        hit_cap += int(enum.hit_cap)
    timings["paths"] = (time.perf_counter() - t0) * 1e3
    return _Analyzed(name, source, analysis, paths, hit_cap, timings)


def _contract_corpus(analyzed: _Analyzed) -> list:
    corpus = []
    for i, fn in enumerate(analyzed.analysis.functions):
        for path in analyzed.paths[i]:
            corpus.append([ins.opcode.mnemonic
                           for bid in path.blocks
                           for ins in fn.blocks[bid].instructions])
    return corpus


def _load_inputs(inputs) -> tuple:
    """Split input paths into bytecode files and .json report files."""
    bytecode, reports = [], []
    for item in inputs:
        path = Path(item)
        if path.suffix.lower() == ".json":
            reports.append(path)
        else:
            bytecode.append(path)
    return bytecode, reports


def _map_workers(config, work, func):
    if config.workers == 1 or len(work) <= 1:
        return [func(item) for item in work]
    with concurrent.futures.ThreadPoolExecutor(config.workers) as pool:
        return list(pool.map(func, work))


def cmd_embed(config: PipelineConfig, inputs) -> dict:
    """Analyze contracts, gather defect labels, embed defective functions,
    and write the index (plus its vocabulary sidecar)."""
    bytecode_files, report_files = _load_inputs(inputs)
    external_records = []
    report_errors = []
    for path in report_files:
        records, errors = parse_report_file(Path(path).read_bytes())
        external_records.extend(records)
        report_errors.extend(errors)

    failures = {}

    def analyze(path):
        try:
            code = read_bytecode_file(path)
            return _analyze_one(Path(path).stem, str(path), code,
                                config.max_paths)
        except Exception as exc:  # batch never aborts on one contract
            logger.warning("embed: %s failed: %s", path, exc)
            failures[str(path)] = str(exc)
            return None

    analyzed = [a for a in _map_workers(config, bytecode_files, analyze) if a]

    # builtin detector + external report mapping
    selector_maps = {a.name: (a.analysis.program.code_hash,
                              a.analysis.selector_map) for a in analyzed}
    builtin: list = []  # (analyzed, function index, DefectRecord)
    for a in analyzed:
        for i, fn in enumerate(a.analysis.functions):
            for record in detect_bypass_reentrancy(fn, config.max_paths,
                                                   contract_name=a.name):
                builtin.append((a, i, record))
    mapped, unmapped = map_report(external_records, selector_maps)

    corpus = [seq for a in analyzed for seq in _contract_corpus(a)]
    try:
        vocab = train_vocabulary(corpus, config.embedding)
    except EmptyCorpus:
        vocab = Vocabulary({}, config.embedding.word_dim, b"\x00" * 32)
    params = init_params(config.embedding)

    index = AnnIndex(config.embedding.block_dim,
                     ef_construction=200, m=16, seed=config.embedding.seed)

    to_embed: list = []  # (analyzed, fn index, function_ref, DefectClass)
    for a, i, record in builtin:
        fn = a.analysis.functions[i]
        ref = ("0x" + fn.selector.hex()) if fn.selector else record.function_signature
        to_embed.append((a, i, ref, record.defect_class))
    by_selector = {}
    for a in analyzed:
        for i, fn in enumerate(a.analysis.functions):
            if fn.selector is not None:
                by_selector[(a.name, fn.selector)] = (a, i)
    for md in mapped:
        hit = by_selector.get((md.record.contract_name, md.selector))
        if hit is not None:
            to_embed.append((hit[0], hit[1], md.record.function_signature,
                             md.record.defect_class))
    if config.store_all:
        labeled = {(id(a), i) for a, i, _, _ in to_embed}
        for a in analyzed:
            for i, fn in enumerate(a.analysis.functions):
                if (id(a), i) not in labeled and fn.selector is not None:
                    to_embed.append((a, i, "0x" + fn.selector.hex(), None))

    # deterministic insertion order
    to_embed.sort(key=lambda item: (item[0].name, item[1], item[2],
                                    item[3].value if item[3] else ""))
    stored_functions = 0
    embed_ms = 0.0
    seen_functions = set()
    for a, i, ref, defect in to_embed:
        key = (a.name, i, ref, defect)
        if key in seen_functions:
            continue
        seen_functions.add(key)
        fn = a.analysis.functions[i]
        t0 = time.perf_counter()
        emb = embed_function(fn, a.paths[i], vocab, params, config.embedding,
                             use_sequence=config.use_sequence,
                             use_graph=config.use_graph)
        embed_ms += (time.perf_counter() - t0) * 1e3
        defect_class = defect or DefectClass.BypassAuthReentrancy
        for block_id, vec in enumerate(emb.block_vectors):
            label = EntryLabel(a.name, ref, fn.selector or b"",
                               block_id, defect_class)
            index.insert(IndexEntry(0, vec, label))
        stored_functions += 1

    save_index(index, config.index_path)
    save_vocabulary(vocab, config.vocab_path)

    total_analysis = sum(a.timings_ms["analysis"] + a.timings_ms["paths"]
                         for a in analyzed)
    return {
        "contracts_processed": len(analyzed),
        "contracts_failed": failures,
        "functions_stored": stored_functions,
        "vectors_stored": len(index),
        "builtin_findings": len(builtin),
        "mapped_records": len(mapped),
        "unmapped_records": [(r.contract_name, r.function_signature, reason)
                             for r, reason in unmapped],
        "report_schema_errors": [str(e) for e in report_errors],
        "mean_contract_ms": ((total_analysis + embed_ms) / len(analyzed))
        if analyzed else 0.0,
        "paths_truncated_enumerations": sum(a.hit_cap for a in analyzed),
    }


def _load_artifacts(config: PipelineConfig) -> tuple:
    index = load_index(config.index_path)
    vocab = load_vocabulary(config.vocab_path)
    params = init_params(config.embedding)
    return index, vocab, params


def cmd_detect(config: PipelineConfig, inputs, index=None, vocab=None,
               params=None) -> list:
    """Embed every function of each contract and query the index. Returns a
    list of ScanResult. Detectors and report parsing never run here."""
    bytecode_files, _ = _load_inputs(inputs)
    if index is None:
        index, vocab, params = _load_artifacts(config)

    def scan(path) -> ScanResult:
        name = Path(path).stem
        try:
            code = read_bytecode_file(path)
            a = _analyze_one(name, str(path), code, config.max_paths)
        except Exception as exc:
            return ScanResult(name, str(path), "", error=str(exc))
        result = ScanResult(name, str(path),
                            a.analysis.program.code_hash.hex(),
                            timings_ms=dict(a.timings_ms))
        truncated = fallback = 0
        t0 = time.perf_counter()
        embeddings = []
        for i, fn in enumerate(a.analysis.functions):
            if not fn.blocks:
                continue
            emb = embed_function(fn, a.paths[i], vocab, params,
                                 config.embedding,
                                 use_sequence=config.use_sequence,
                                 use_graph=config.use_graph)
            truncated += emb.paths_truncated
            fallback += emb.fallback_blocks
            embeddings.append(emb)
        result.timings_ms["embedding"] = (time.perf_counter() - t0) * 1e3
        t0 = time.perf_counter()
        for emb in embeddings:
            result.findings.extend(decide_similar(
                emb, index, threshold=config.threshold,
                ef_search=config.ef_search))
        result.timings_ms["query"] = (time.perf_counter() - t0) * 1e3
        result.counters = {"paths_truncated": truncated,
                           "fallback_blocks": fallback,
                           "functions_embedded": len(embeddings)}
        return result

    return _map_workers(config, bytecode_files, scan)


def cmd_ablate(config: PipelineConfig, inputs,
               thresholds=DEFAULT_THRESHOLDS) -> dict:
    """Detect under the four encoder variants across a threshold sweep;
    returns finding counts per (variant, threshold)."""
    bytecode_files, _ = _load_inputs(inputs)
    index, vocab, params = _load_artifacts(config)
    table = {}
    for name, use_seq, use_graph in ABLATION_VARIANTS:
        variant_cfg = replace(config, use_sequence=use_seq,
                              use_graph=use_graph, allow_no_stages=True,
                              threshold=max(thresholds))
        results = cmd_detect(variant_cfg, bytecode_files,
                             index=index, vocab=vocab, params=params)
        for threshold in thresholds:
            count = sum(
                1
                for r in results
                for f in r.findings
                if f.max_block_distance <= threshold)
            table[(name, threshold)] = count
    return table
