"""Corpus storage and two-stage dense retrieval.

Stage one scores every document by the inner product between the query vector
and the document key (title + first paragraph) and keeps the best ``k_doc``.
Stage two scores only the paragraphs of the kept documents and returns the
best ``k``. Both stages are flat exhaustive scans; results are ordered by
(score descending, id ascending) so equal scores never reorder between runs.
"""

from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import CorpusInvalid, DimensionMismatch, EmbedFailure, EmptyIndex, StepQAError

INDEX_FORMAT = "stepqa-dense-index"
INDEX_FORMAT_VERSION = 1
EMBED_BATCH = 256


@dataclass(frozen=True)
class Paragraph:
    para_id: str
    doc_id: str
    text: str


@dataclass(frozen=True)
class CorpusDoc:
    doc_id: str
    title: str
    paragraphs: tuple[Paragraph, ...]

    @property
    def key_text(self) -> str:
        return self.title + "\n" + self.paragraphs[0].text


@dataclass(frozen=True)
class RetrievalConfig:
    k_doc: int = 100
    k: int = 10

    def __post_init__(self):
        if int(self.k_doc) < 1 or int(self.k) < 1:
            raise ValueError("k and k_doc must be >= 1")


@dataclass(frozen=True)
class RetrievalHit:
    para_id: str
    doc_id: str
    score: float


def make_doc(doc_id: str, title: str, paragraphs: Sequence) -> CorpusDoc:
    """Build a document; paragraphs may be plain strings or ``{para_id, text}`` mappings."""
    paras = []
    for i, p in enumerate(paragraphs):
        if isinstance(p, Mapping):
            pid, text = str(p.get("para_id") or f"{doc_id}#{i}"), p["text"]
        else:
            pid, text = f"{doc_id}#{i}", p
        paras.append(Paragraph(para_id=pid, doc_id=str(doc_id), text=str(text)))
    return CorpusDoc(doc_id=str(doc_id), title=str(title), paragraphs=tuple(paras))


def validate_corpus(corpus: Sequence[CorpusDoc]) -> None:
    if not corpus:
        raise CorpusInvalid("corpus is empty")
    doc_ids, para_ids = set(), set()
    for doc in corpus:
        if doc.doc_id in doc_ids:
            raise CorpusInvalid(f"duplicate doc_id {doc.doc_id!r}")
        doc_ids.add(doc.doc_id)
        if not doc.paragraphs:
            raise CorpusInvalid(f"document {doc.doc_id!r} has no paragraphs")
        for p in doc.paragraphs:
            if p.para_id in para_ids:
                raise CorpusInvalid(f"duplicate para_id {p.para_id!r}")
            if p.doc_id != doc.doc_id:
                raise CorpusInvalid(f"paragraph {p.para_id!r} claims doc {p.doc_id!r} inside {doc.doc_id!r}")
            if not p.text.strip():
                raise CorpusInvalid(f"paragraph {p.para_id!r} is empty")
            para_ids.add(p.para_id)


def load_corpus(path: str | os.PathLike) -> list[CorpusDoc]:
    """Read line-delimited ``{doc_id, title, paragraphs: [...]}`` records."""
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                docs.append(make_doc(rec["doc_id"], rec.get("title", ""), rec["paragraphs"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise CorpusInvalid(f"{path}:{lineno}: {exc}") from exc
    validate_corpus(docs)
    return docs


def dump_corpus(corpus: Iterable[CorpusDoc]) -> str:
    lines = []
    for d in corpus:
        rec = {
            "doc_id": d.doc_id,
            "title": d.title,
            "paragraphs": [{"para_id": p.para_id, "text": p.text} for p in d.paragraphs],
        }
        lines.append(json.dumps(rec, ensure_ascii=False))
    return "".join(line + "\n" for line in lines)


# --------------------------------------------------------------------------
# scoring primitives

def inner_products(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    # einsum sums each row independently of the other rows, so scoring a
    # subset of rows gives bit-identical values to scoring the full matrix
    return np.einsum("ij,j->i", matrix, query)


def _id_ranks(ids: Sequence[str]) -> np.ndarray:
    order = sorted(range(len(ids)), key=ids.__getitem__)
    ranks = np.empty(len(ids), dtype=np.int64)
    ranks[order] = np.arange(len(ids))
    return ranks


def _select_topk(scores: np.ndarray, ranks: np.ndarray, k: int) -> np.ndarray:
    """Positions of the best ``k`` scores, ordered by (score desc, rank asc)."""
    n = scores.shape[0]
    if k < n:
        kth = np.partition(scores, n - k)[n - k]
        cand = np.flatnonzero(scores >= kth)
    else:
        cand = np.arange(n)
    order = np.lexsort((ranks[cand], -scores[cand]))
    return cand[order[:k]]


@dataclass(frozen=True, eq=False)
class DenseIndex:
    level: str
    ids: tuple[str, ...]
    vectors: np.ndarray
    owners: Optional[tuple[str, ...]] = None  # parent doc_id for paragraph-level entries
    _ranks: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.level not in ("Document", "Paragraph"):
            raise ValueError(f"level must be Document or Paragraph, got {self.level!r}")
        vecs = np.array(self.vectors, dtype=np.float64, copy=True)
        if vecs.ndim != 2 or vecs.shape[0] != len(self.ids):
            raise DimensionMismatch(f"{len(self.ids)} ids but vectors of shape {vecs.shape}")
        if len(set(self.ids)) != len(self.ids):
            raise CorpusInvalid(f"{self.level} index ids are not unique")
        vecs.setflags(write=False)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "vectors", vecs)
        object.__setattr__(self, "_ranks", _id_ranks(self.ids))

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def entries(self) -> list[tuple[str, np.ndarray]]:
        return list(zip(self.ids, self.vectors))

    def header(self) -> dict:
        return {"format": INDEX_FORMAT, "version": INDEX_FORMAT_VERSION, "level": self.level, "dim": self.dim}

    def save(self, path) -> None:
        arrays = {"header": np.array(json.dumps(self.header())), "ids": np.array(self.ids, dtype=str), "vectors": self.vectors}
        if self.owners is not None:
            arrays["owners"] = np.array(self.owners, dtype=str)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "DenseIndex":
        with np.load(path, allow_pickle=False) as z:
            header = _check_header(z["header"])
            owners = tuple(z["owners"].tolist()) if "owners" in z.files else None
            idx = cls(header["level"], tuple(z["ids"].tolist()), z["vectors"], owners)
        if idx.dim != header["dim"] and len(idx):
            raise DimensionMismatch(f"header dim {header['dim']} disagrees with stored vectors ({idx.dim})")
        return idx


def _check_header(raw) -> dict:
    header = json.loads(str(raw))
    if header.get("format") != INDEX_FORMAT:
        raise ValueError(f"not a dense index file (format={header.get('format')!r})")
    if header.get("version") != INDEX_FORMAT_VERSION:
        raise ValueError(f"unsupported index format version {header.get('version')}")
    return header


def brute_force_topk(query_vec, entries: Sequence[tuple[str, np.ndarray]], k: int) -> list[tuple[str, float]]:
    """Exhaustive inner-product ranking over ``entries``; exact top-``min(k, n)``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(query_vec, dtype=np.float64)
    if not entries:
        return []
    ids = [e[0] for e in entries]
    mat = np.stack([np.asarray(e[1], dtype=np.float64) for e in entries])
    if mat.shape[1] != q.shape[0]:
        raise DimensionMismatch(f"query dim {q.shape[0]} vs entry dim {mat.shape[1]}")
    scores = inner_products(mat, q)
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    return [(ids[i], float(scores[i])) for i in order[:k]]


def _embed(embedder, texts: list[str]) -> np.ndarray:
    try:
        parts = [embedder.embed(texts[i:i + EMBED_BATCH]) for i in range(0, len(texts), EMBED_BATCH)]
    except StepQAError as exc:
        raise EmbedFailure(str(exc)) from exc
    return np.concatenate([np.asarray(p, dtype=np.float64) for p in parts])


def build_indexes(corpus: Sequence[CorpusDoc], embedder) -> tuple[DenseIndex, DenseIndex]:
    validate_corpus(corpus)
    doc_vecs = _embed(embedder, [d.key_text for d in corpus])
    paras = [p for d in corpus for p in d.paragraphs]
    para_vecs = _embed(embedder, [p.text for p in paras])
    if doc_vecs.shape[1] != para_vecs.shape[1]:
        raise DimensionMismatch("document and paragraph embeddings disagree on dim")
    doc_index = DenseIndex("Document", tuple(d.doc_id for d in corpus), doc_vecs)
    para_index = DenseIndex(
        "Paragraph", tuple(p.para_id for p in paras), para_vecs, owners=tuple(p.doc_id for p in paras)
    )
    return doc_index, para_index


def _search(query_vec: np.ndarray, doc_index: DenseIndex, para_index: DenseIndex, cfg: RetrievalConfig):
    if len(doc_index) == 0 or len(para_index) == 0:
        raise EmptyIndex("cannot retrieve from an empty index")
    if query_vec.shape[0] != doc_index.dim or doc_index.dim != para_index.dim:
        raise DimensionMismatch("query and index dims disagree")
    keep = _select_topk(inner_products(doc_index.vectors, query_vec), doc_index._ranks, min(cfg.k_doc, len(doc_index)))
    kept_docs = [doc_index.ids[i] for i in keep]
    kept = set(kept_docs)
    rows = np.flatnonzero([o in kept for o in para_index.owners])
    scores = inner_products(para_index.vectors[rows], query_vec)
    best = _select_topk(scores, para_index._ranks[rows], min(cfg.k, rows.shape[0]))
    hits = [
        RetrievalHit(para_id=para_index.ids[rows[j]], doc_id=para_index.owners[rows[j]], score=float(scores[j]))
        for j in best
    ]
    return hits, kept_docs


def retrieve(query: str, doc_index: DenseIndex, para_index: DenseIndex, embedder, cfg: RetrievalConfig = RetrievalConfig()) -> list[RetrievalHit]:
    return retrieve_with_docs(query, doc_index, para_index, embedder, cfg)[0]


def retrieve_with_docs(query, doc_index, para_index, embedder, cfg=RetrievalConfig()):
    """Like :func:`retrieve` but also returns the doc ids kept by stage one, in rank order."""
    if len(doc_index) == 0:
        raise EmptyIndex("document index is empty")
    q = _embed(embedder, [query])[0]
    return _search(q, doc_index, para_index, cfg)


class CorpusIndex:
    """A corpus bundled with its document and paragraph indexes."""

    def __init__(self, corpus: Sequence[CorpusDoc], doc_index: DenseIndex, para_index: DenseIndex):
        self.corpus = list(corpus)
        self.doc_index = doc_index
        self.para_index = para_index
        self._paras = {p.para_id: p for d in self.corpus for p in d.paragraphs}
        if set(self._paras) != set(para_index.ids):
            raise CorpusInvalid("paragraph index does not match the corpus")

    @classmethod
    def build(cls, corpus: Sequence[CorpusDoc], embedder) -> "CorpusIndex":
        return cls(corpus, *build_indexes(corpus, embedder))

    def paragraph(self, para_id: str) -> Paragraph:
        return self._paras[para_id]

    def retrieve(self, query: str, embedder, cfg: RetrievalConfig = RetrievalConfig()) -> list[RetrievalHit]:
        return retrieve(query, self.doc_index, self.para_index, embedder, cfg)

    def save(self, path) -> None:
        header = {"format": INDEX_FORMAT, "version": INDEX_FORMAT_VERSION, "level": "Bundle", "dim": self.doc_index.dim}
        buf = io.BytesIO()
        np.savez(
            buf,
            header=np.array(json.dumps(header)),
            corpus=np.array(dump_corpus(self.corpus)),
            doc_ids=np.array(self.doc_index.ids, dtype=str),
            doc_vectors=self.doc_index.vectors,
            para_ids=np.array(self.para_index.ids, dtype=str),
            para_owners=np.array(self.para_index.owners, dtype=str),
            para_vectors=self.para_index.vectors,
        )
        with open(path, "wb") as fh:
            fh.write(buf.getvalue())

    @classmethod
    def load(cls, path) -> "CorpusIndex":
        with np.load(path, allow_pickle=False) as z:
            header = _check_header(z["header"])
            if header.get("level") != "Bundle":
                raise ValueError("file holds a single index, not a corpus bundle")
            corpus = [
                make_doc(r["doc_id"], r["title"], r["paragraphs"])
                for r in map(json.loads, str(z["corpus"]).splitlines())
            ]
            doc_index = DenseIndex("Document", tuple(z["doc_ids"].tolist()), z["doc_vectors"])
            para_index = DenseIndex(
                "Paragraph", tuple(z["para_ids"].tolist()), z["para_vectors"], owners=tuple(z["para_owners"].tolist())
            )
        return cls(corpus, doc_index, para_index)
