"""E-utilities literature fetch (esearch + efetch) and article XML parsing.

Works against any E-utilities-compatible endpoint; the endpoint URL and
API key come from configuration so tests can point at a local fixture
server. Public-etiquette rate limiting applies: 3 requests/second without
an API key.
"""

from __future__ import annotations

import time
import xml.etree.ElementTree as ET
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import requests

from .models import Section, SourceDocument, content_checksum

DEFAULT_ENDPOINT = "https://eutils.ncbi.nlm.nih.gov/entrez/eutils"
EFETCH_BATCH_SIZE = 100


class FetchError(Exception):
    """Network-level failure after exhausting retries."""

    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempts)")
        self.attempts = attempts


class ArticleParseError(Exception):
    """The response XML could not be interpreted as an article."""


class RateLimiter:
    """Sliding one-second window limiter."""

    def __init__(
        self,
        max_per_second: float,
        clock: Callable[[], float] = time.monotonic,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        self.max_per_second = max_per_second
        self._clock = clock
        self._sleep = sleeper
        self._stamps: deque[float] = deque()

    def acquire(self) -> None:
        now = self._clock()
        while self._stamps and now - self._stamps[0] >= 1.0:
            self._stamps.popleft()
        if len(self._stamps) >= self.max_per_second:
            wait = 1.0 - (now - self._stamps[0])
            if wait > 0:
                self._sleep(wait)
                now = self._clock()
            while self._stamps and now - self._stamps[0] >= 1.0:
                self._stamps.popleft()
        self._stamps.append(now)


class EutilsClient:
    def __init__(
        self,
        endpoint: str = DEFAULT_ENDPOINT,
        api_key: str | None = None,
        max_requests_per_second: float | None = None,
        max_attempts: int = 3,
        backoff_seconds: float = 0.5,
        max_parallel_requests: int = 2,
        timeout_seconds: float = 30.0,
        session: requests.Session | None = None,
    ):
        if max_requests_per_second is None:
            max_requests_per_second = 10.0 if api_key else 3.0
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key
        self.max_attempts = max_attempts
        self.backoff_seconds = backoff_seconds
        self.max_parallel_requests = max_parallel_requests
        self.timeout_seconds = timeout_seconds
        self._limiter = RateLimiter(max_requests_per_second)
        self._session = session or requests.Session()

    def _get(self, path: str, params: dict) -> bytes:
        if self.api_key:
            params = {**params, "api_key": self.api_key}
        url = f"{self.endpoint}/{path}"
        last_error: Exception | None = None
        for attempt in range(1, self.max_attempts + 1):
            self._limiter.acquire()
            try:
                resp = self._session.get(url, params=params, timeout=self.timeout_seconds)
            except requests.RequestException as exc:
                last_error = exc
            else:
                if resp.status_code < 500:
                    resp.raise_for_status()
                    return resp.content
                last_error = requests.HTTPError(f"HTTP {resp.status_code} from {url}")
            if attempt < self.max_attempts:
                time.sleep(self.backoff_seconds * 2 ** (attempt - 1))
        raise FetchError(f"GET {url} failed: {last_error}", attempts=self.max_attempts)

    def esearch(self, db: str, term: str, retmax: int, year: int | None = None) -> list[str]:
        params = {"db": db, "term": term, "retmax": str(retmax)}
        if year is not None:
            params.update(
                {"mindate": str(year), "maxdate": str(year), "datetype": "pdat"}
            )
        data = self._get("esearch.fcgi", params)
        try:
            root = ET.fromstring(data)
        except ET.ParseError as exc:
            raise ArticleParseError(f"malformed esearch response: {exc}") from exc
        return [el.text.strip() for el in root.iter("Id") if el.text and el.text.strip()]

    def efetch(self, db: str, ids: Sequence[str]) -> bytes:
        params = {"db": db, "id": ",".join(ids), "retmode": "xml"}
        return self._get("efetch.fcgi", params)


def fetch_literature(
    query: str,
    year: int | None,
    max_results: int,
    endpoint: str = DEFAULT_ENDPOINT,
    db: str = "pubmed",
    client: EutilsClient | None = None,
) -> list[SourceDocument]:
    """Search and fetch articles; returns documents sorted by doc_id.

    ``db`` selects abstracts ("pubmed") or full text ("pmc"). Batched
    efetch calls run with bounded parallelism; per-article parse errors
    name the offending id.
    """
    if max_results < 1:
        raise ValueError(f"max_results must be >= 1, got {max_results}")
    client = client or EutilsClient(endpoint=endpoint)
    ids = client.esearch(db=db, term=query, retmax=max_results, year=year)[:max_results]
    if not ids:
        return []

    batches = [ids[i:i + EFETCH_BATCH_SIZE] for i in range(0, len(ids), EFETCH_BATCH_SIZE)]
    docs: list[SourceDocument] = []
    with ThreadPoolExecutor(max_workers=client.max_parallel_requests) as pool:
        for batch, payload in zip(batches, pool.map(lambda b: client.efetch(db, b), batches)):
            try:
                root = ET.fromstring(payload)
            except ET.ParseError as exc:
                raise ArticleParseError(
                    f"malformed efetch response for ids {batch[:3]}...: {exc}"
                ) from exc
            for element in _iter_article_elements(root):
                try:
                    docs.append(_parse_article_element(element))
                except ArticleParseError as exc:
                    raise ArticleParseError(f"in batch {batch[:3]}...: {exc}") from exc
    docs.sort(key=lambda d: d.doc_id)
    return docs


def parse_article_xml(data: bytes) -> SourceDocument:
    """Parse one article (PubMed citation or full-text XML) into a document."""
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise ArticleParseError(f"malformed article XML: {exc}") from exc
    elements = list(_iter_article_elements(root))
    if not elements:
        raise ArticleParseError(f"no article element under root <{root.tag}>")
    return _parse_article_element(elements[0])


def _iter_article_elements(root: ET.Element):
    tag = _localname(root.tag)
    if tag in ("PubmedArticle", "article"):
        yield root
        return
    for child in root.iter():
        if _localname(child.tag) in ("PubmedArticle", "article"):
            yield child


def _localname(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _text_of(element: ET.Element | None) -> str:
    if element is None:
        return ""
    return "".join(element.itertext()).strip()


def _parse_article_element(article: ET.Element) -> SourceDocument:
    raw = ET.tostring(article, encoding="utf-8")
    if _localname(article.tag) == "PubmedArticle":
        doc = _parse_pubmed_citation(article)
    else:
        doc = _parse_fulltext_article(article)
    doc.checksum = content_checksum(raw)
    return doc


def _parse_pubmed_citation(article: ET.Element) -> SourceDocument:
    pmid = _text_of(article.find(".//PMID"))
    title = _text_of(article.find(".//ArticleTitle"))
    if not title:
        raise ArticleParseError(f"article pmid={pmid or '?'} has no title element")
    year = None
    year_text = _text_of(article.find(".//JournalIssue/PubDate/Year"))
    if not year_text:
        medline = _text_of(article.find(".//JournalIssue/PubDate/MedlineDate"))
        year_text = medline[:4] if medline[:4].isdigit() else ""
    if year_text.isdigit():
        year = int(year_text)
    abstract_parts = [
        _text_of(el) for el in article.findall(".//Abstract/AbstractText")
    ]
    body = "\n\n".join(p for p in abstract_parts if p)
    doc_id = f"pmid-{pmid}" if pmid else f"pmid-unknown-{content_checksum(title.encode())[:12]}"
    return SourceDocument(
        doc_id=doc_id,
        source_kind="pubmed_abstract",
        title=title,
        sections=[Section(heading="Abstract", body=body, order=0)],
        year=year,
        origin="pubmed",
    )


def _parse_fulltext_article(article: ET.Element) -> SourceDocument:
    meta = article.find(".//front/article-meta")
    title = _text_of(meta.find(".//title-group/article-title")) if meta is not None else ""
    if not title:
        raise ArticleParseError("full-text article has no article-title element")

    pmc_id = ""
    if meta is not None:
        for el in meta.findall("article-id"):
            if el.get("pub-id-type") in ("pmc", "pmcid"):
                pmc_id = _text_of(el)
                break
        else:
            first = meta.find("article-id")
            pmc_id = _text_of(first) if first is not None else ""
    doc_id = f"pmc-{pmc_id}" if pmc_id else f"pmc-unknown-{content_checksum(title.encode())[:12]}"

    year = None
    if meta is not None:
        year_text = _text_of(meta.find(".//pub-date/year"))
        if year_text.isdigit():
            year = int(year_text)

    sections: list[Section] = []
    if meta is not None:
        abstract = meta.find("abstract")
        if abstract is not None:
            sections.append(Section(heading="Abstract", body=_text_of(abstract), order=0))
    body = article.find("body")
    if body is not None:
        for sec in body.findall("sec"):
            heading = _text_of(sec.find("title"))
            paragraphs = [
                _text_of(el) for el in sec.iter() if _localname(el.tag) == "p"
            ]
            sections.append(
                Section(
                    heading=heading,
                    body="\n\n".join(p for p in paragraphs if p),
                    order=len(sections),
                )
            )
    if not sections:
        raise ArticleParseError(f"article {doc_id} has no abstract or body sections")
    return SourceDocument(
        doc_id=doc_id,
        source_kind="pmc_fulltext",
        title=title,
        sections=sections,
        year=year,
        origin="pmc",
    )
