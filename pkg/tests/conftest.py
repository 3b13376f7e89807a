"""Shared fixtures: synthetic corpora, stub embedders, fixture servers."""

from __future__ import annotations

import json
import random
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
import pytest

from tbgraphrag.models import Chunk, canonical_json

CONSONANTS = "bcdfghklmnprstvz"
VOWELS = "aeiou"


def make_chunk(chunk_id: str, text: str, doc_id: str = "doc", heading: str = "",
               position: int = 0) -> Chunk:
    return Chunk(
        chunk_id=chunk_id,
        doc_id=doc_id,
        section_heading=heading,
        text=text,
        token_count=max(1, len(text.split())),
        position=position,
    )


def pseudoword(rng: random.Random) -> str:
    return "".join(
        rng.choice(CONSONANTS) + rng.choice(VOWELS) for _ in range(3)
    )


def make_planted_corpus(n_chunks: int = 200, seed: int = 13):
    """Chunks of pseudoword sentences plus the verbatim middle sentence of each.

    Returns (chunks, queries) where queries maps chunk_id -> one sentence
    that appears verbatim in that chunk and (statistically) nowhere else.
    """
    rng = random.Random(seed)
    vocabulary = sorted({pseudoword(rng) for _ in range(2500)})
    chunks = []
    queries = {}
    for i in range(n_chunks):
        sentences = [
            " ".join(rng.choice(vocabulary) for _ in range(8)) for _ in range(3)
        ]
        chunk_id = f"plant:{i:05d}"
        chunks.append(
            make_chunk(chunk_id, ". ".join(sentences) + ".", doc_id=f"pdoc{i % 20}",
                       heading=f"Section {i}", position=i)
        )
        queries[chunk_id] = sentences[1]
    return chunks, queries


class AxisEmbedder:
    """Deterministic embedder mapping marker words to fixed axes.

    Texts containing a marker word get that axis; everything else lands on
    a shared background axis, so similarities are fully controlled.
    """

    def __init__(self, markers: dict[str, int], dimension: int = 16,
                 name: str = "axis-stub"):
        self.markers = markers
        self.dimension = dimension
        self.name = name

    def embed(self, texts):
        out = np.zeros((len(texts), self.dimension), dtype=np.float64)
        for row, text in enumerate(texts):
            lowered = text.lower()
            hit = False
            for word, axis in self.markers.items():
                if word in lowered:
                    out[row, axis] += 1.0
                    hit = True
            if not hit:
                out[row, self.dimension - 1] += 1.0
            norm = np.linalg.norm(out[row])
            out[row] /= norm
        return out


@pytest.fixture
def tb_chunks() -> list[Chunk]:
    texts = [
        "Rifampicin and isoniazid form the backbone of first-line TB treatment.",
        "Sputum smear microscopy remains widely used where Xpert MTB/RIF is unavailable.",
        "Multidrug-resistant tuberculosis requires bedaquiline-containing regimens.",
        "Night sweats, weight loss and chronic cough suggest pulmonary tuberculosis.",
        "TB/HIV co-infection complicates treatment and requires antiretroviral therapy.",
        "Contact tracing identifies household members needing TB preventive treatment.",
    ]
    return [make_chunk(f"tb:{i:03d}", t, doc_id="guide1", heading=f"S{i}", position=i)
            for i, t in enumerate(texts)]


# ---------------------------------------------------------------------------
# Article XML fixtures

PUBMED_SET_XML = b"""<?xml version="1.0" ?>
<PubmedArticleSet>
  <PubmedArticle>
    <MedlineCitation>
      <PMID>101</PMID>
      <Article>
        <Journal><JournalIssue><PubDate><Year>2025</Year></PubDate></JournalIssue></Journal>
        <ArticleTitle>Tuberculosis incidence trends in South Africa</ArticleTitle>
        <Abstract><AbstractText>Incidence fell modestly between surveys.</AbstractText></Abstract>
      </Article>
    </MedlineCitation>
  </PubmedArticle>
  <PubmedArticle>
    <MedlineCitation>
      <PMID>102</PMID>
      <Article>
        <Journal><JournalIssue><PubDate><Year>2025</Year></PubDate></JournalIssue></Journal>
        <ArticleTitle>Bedaquiline uptake for MDR-TB</ArticleTitle>
        <Abstract><AbstractText>Uptake increased after guideline revision.</AbstractText></Abstract>
      </Article>
    </MedlineCitation>
  </PubmedArticle>
  <PubmedArticle>
    <MedlineCitation>
      <PMID>103</PMID>
      <Article>
        <Journal><JournalIssue><PubDate><Year>2025</Year></PubDate></JournalIssue></Journal>
        <ArticleTitle>TB preventive therapy coverage</ArticleTitle>
        <Abstract><AbstractText>Coverage remains below target.</AbstractText></Abstract>
      </Article>
    </MedlineCitation>
  </PubmedArticle>
</PubmedArticleSet>
"""

JATS_ARTICLE_XML = b"""<?xml version="1.0" ?>
<pmc-articleset>
  <article>
    <front>
      <article-meta>
        <article-id pub-id-type="pmc">7654321</article-id>
        <title-group><article-title>Household transmission of tuberculosis</article-title></title-group>
        <pub-date><year>2025</year></pub-date>
      </article-meta>
    </front>
    <body>
      <sec><title>Introduction</title><p>TB transmission persists in dense settlements.</p></sec>
      <sec><title>Methods</title><p>We enrolled index cases and household contacts.</p></sec>
      <sec><title>Results</title><p>Secondary infection was detected in one fifth of contacts.</p></sec>
      <sec><title>Discussion</title><p>Contact tracing should prioritise shared sleeping spaces.</p></sec>
    </body>
  </article>
</pmc-articleset>
"""

ESEARCH_XML = b"""<?xml version="1.0" ?>
<eSearchResult>
  <Count>3</Count>
  <IdList><Id>101</Id><Id>102</Id><Id>103</Id></IdList>
</eSearchResult>
"""


class _FixtureHandler(BaseHTTPRequestHandler):
    routes: dict = {}

    def _respond(self):
        path = self.path.split("?")[0]
        handler = self.routes.get(path)
        if handler is None:
            self.send_response(404)
            self.end_headers()
            self.wfile.write(b"not found")
            return
        body = ""
        if self.command == "POST":
            length = int(self.headers.get("Content-Length", 0))
            body = self.rfile.read(length).decode("utf-8") if length else ""
        status, content_type, payload = handler(self, body)
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.end_headers()
        self.wfile.write(payload)

    do_GET = _respond
    do_POST = _respond

    def log_message(self, *args):
        pass


@pytest.fixture
def fixture_server():
    """Local HTTP server with per-test routes: path -> fn(handler, body)."""
    routes: dict = {}

    class Handler(_FixtureHandler):
        pass

    Handler.routes = routes
    server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    base_url = f"http://127.0.0.1:{server.server_address[1]}"
    try:
        yield base_url, routes
    finally:
        server.shutdown()
        thread.join(timeout=2)


# ---------------------------------------------------------------------------
# Raw corpus fixtures for CLI / service tests

GUIDELINE_TEXT = """NATIONAL TB MANAGEMENT GUIDELINE 2024

INTRODUCTION
Tuberculosis remains a leading cause of death in South Africa. Early
diagnosis and complete treatment interrupt transmission.

DIAGNOSIS OF TB
Xpert MTB/RIF is the recommended initial diagnostic test. Sputum smear
microscopy and culture remain important for monitoring.

TREATMENT OF DRUG-SUSCEPTIBLE TB
The six month regimen combines isoniazid, rifampicin, pyrazinamide and
ethambutol for two months, then isoniazid and rifampicin for four months.

MANAGEMENT OF MDR-TB
Multidrug-resistant tuberculosis requires bedaquiline, linezolid and
levofloxacin. Drug susceptibility testing guides regimen composition.

TB AND HIV
All TB patients should be tested for HIV. Antiretroviral therapy should
start within two weeks of TB treatment regardless of CD4 count.

ADHERENCE SUPPORT
Directly observed therapy and adherence counselling reduce treatment
failure and relapse. Contact tracing finds undiagnosed cases early.
"""


def write_fixture_inputs(root: Path, n_pmc_sections: int = 20) -> Path:
    """Raw input tree for `ingest`: one guideline txt + one PMC JSON + abstracts."""
    raw = root / "raw"
    raw.mkdir(parents=True, exist_ok=True)
    (raw / "tb_guideline_2024.txt").write_text(GUIDELINE_TEXT, encoding="utf-8")

    sections = [
        {
            "heading": f"Finding {i}",
            "body": (
                f"Cohort {i} showed that adherence support changed outcome "
                f"measure {i} for tuberculosis patients on rifampicin. "
                f"Site identifier token site{i:02d}x marks this section."
            ),
            "order": i,
        }
        for i in range(n_pmc_sections)
    ]
    pmc_doc = {
        "doc_id": "pmc-900001",
        "source_kind": "pmc_fulltext",
        "title": "Adherence interventions for TB care",
        "sections": sections,
        "year": 2025,
        "origin": "pmc",
        "checksum": "0" * 64,
    }
    (raw / "pmc_900001.json").write_text(canonical_json(pmc_doc), encoding="utf-8")

    abstract_doc = {
        "doc_id": "pmid-800001",
        "source_kind": "pubmed_abstract",
        "title": "Sputum culture conversion under bedaquiline",
        "sections": [{
            "heading": "Abstract",
            "body": "Culture conversion at month two predicted treatment success.",
            "order": 0,
        }],
        "year": 2025,
        "origin": "pubmed",
        "checksum": "1" * 64,
    }
    (raw / "pmid_800001.json").write_text(canonical_json(abstract_doc), encoding="utf-8")
    return raw


def write_benchmark_fixture(root: Path) -> Path:
    bench_dir = root / "benchmarks"
    bench_dir.mkdir(parents=True, exist_ok=True)
    items = [
        {
            "question": "Which drug is part of first-line tuberculosis treatment?",
            "options": [
                {"label": "A", "text": "isoniazid"},
                {"label": "B", "text": "aspirin"},
            ],
            "answer": "A",
            "source_benchmark": "fixturebench",
        },
        {
            "question": "What malaria vector control uses bed nets?",
            "answer": "Insecticide treated nets.",
            "source_benchmark": "fixturebench",
        },
        {
            "question": "How long is standard TB treatment?",
            "answer": "Six months.",
            "source_benchmark": "fixturebench",
        },
    ]
    (bench_dir / "fixturebench.json").write_text(json.dumps(items), encoding="utf-8")
    return bench_dir


def write_config_file(root: Path, **overrides) -> Path:
    payload = {"seed": 7, **overrides}
    path = root / "config.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path
