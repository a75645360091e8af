"""Generation layer: context concatenation, prompt templates, readers,
zero-shot answering, generation backends, and the iterative
retrieve-generate loop.

Backends turn an ordered sequence of prompt strings into an equally long,
order-aligned sequence of answer strings. One generate call handles a whole
frame, so backends can batch and tests can count calls. The stub backends
are pure functions for hermetic tests; the HTTP backend speaks an
OpenAI-compatible chat-completions protocol.
"""

from __future__ import annotations

import hashlib
import os
import re
import string
import time
from dataclasses import dataclass
from typing import Callable, Sequence

from .errors import BackendError, MissingField, TemplateError, TypeMismatch
from .frame import Frame, SemType
from .transformer import Signature, Transformer, run, type_check

_PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_]+)\}")


def _substitute(template: str, values: dict[str, str]) -> str:
    # single pass, so placeholder-looking text inside substituted values is
    # never expanded again
    def repl(m: re.Match) -> str:
        name = m.group(1)
        if name not in values:
            raise TemplateError(f"unknown placeholder {{{name}}}")
        return values[name]

    return _PLACEHOLDER_RE.sub(repl, template)


def _check_placeholders(template: str, allowed: set[str], where: str) -> None:
    for m in _PLACEHOLDER_RE.finditer(template):
        if m.group(1) not in allowed:
            raise TemplateError(
                f"unknown placeholder {{{m.group(1)}}} in {where}; "
                f"allowed: {', '.join(sorted(allowed))}"
            )


@dataclass(frozen=True)
class PromptTemplate:
    """Pure-text prompt recipe.

    user_template may use {query} and {context}; context_item_template may
    use {title}, {text} and {ordinal} (1-based). Placeholders are {name}
    sequences of letters and underscores; anything else in braces is left
    verbatim. Unknown placeholders fail here, at construction.
    """

    user_template: str
    system: str = ""
    context_item_template: str = "{text}"
    item_separator: str = "\n\n"

    def __post_init__(self):
        _check_placeholders(self.user_template, {"query", "context"}, "user_template")
        _check_placeholders(
            self.context_item_template,
            {"title", "text", "ordinal"},
            "context_item_template",
        )

    def render_user(self, query: str, context: str = "") -> str:
        return _substitute(self.user_template, {"query": query, "context": context})

    def render_item(self, ordinal: int, fields: dict[str, str]) -> str:
        values = {"title": "", "text": "", "ordinal": str(ordinal)}
        values.update({k: str(v) for k, v in fields.items()})
        return _substitute(self.context_item_template, values)


DEFAULT_RAG_TEMPLATE = PromptTemplate(
    system="You are a question answering assistant. Answer using the context.",
    user_template="Context:\n{context}\n\nQuestion: {query}\nAnswer:",
)

DEFAULT_ZERO_SHOT_TEMPLATE = PromptTemplate(
    system="You are a question answering assistant.",
    user_template="Question: {query}\nAnswer:",
)

DEFAULT_ITERATIVE_TEMPLATE = PromptTemplate(
    system=(
        "Answer step by step. Write one sentence per step and finish with"
        ' "so the answer is" followed by the answer.'
    ),
    user_template="Context:\n{context}\n\nQuestion: {query}\nAnswer:",
)


# -- backends ----------------------------------------------------------------


class Backend:
    """Prompt-in, answer-out generation service.

    generate must return exactly one answer per prompt, order-aligned, and
    must tolerate concurrent calls from independent pipeline runs.
    """

    descriptor: str = "backend"
    max_input_chars: int = 1_000_000

    def generate(self, prompts: Sequence[str], system: str = "") -> list[str]:
        raise NotImplementedError


class StubBackend(Backend):
    """Deterministic offline backend for tests and dry runs.

    Modes:
      echo_query: answer with the text of the last "Question:" line.
      extractive_first_sentence: answer with the first sentence after the
        first "Context:" marker.
      scripted: first (substring, answer) rule whose substring occurs in the
        prompt wins; default_answer otherwise.
    """

    MODES = ("echo_query", "extractive_first_sentence", "scripted")

    def __init__(
        self,
        mode: str = "echo_query",
        script: Sequence[tuple[str, str]] = (),
        default_answer: str = "",
    ) -> None:
        if mode not in self.MODES:
            raise ValueError(f"unknown stub mode {mode!r}; expected one of {self.MODES}")
        self.mode = mode
        self.script = tuple(script)
        self.default_answer = default_answer
        self.descriptor = f"stub:{mode}"
        if mode == "scripted":
            # the script changes the output, so it must be part of the
            # identity that pipeline equality (and prefix sharing) sees
            digest = hashlib.sha256(
                repr((self.script, self.default_answer)).encode()
            ).hexdigest()[:12]
            self.descriptor = f"stub:scripted:{digest}"
        self.calls = 0

    def generate(self, prompts: Sequence[str], system: str = "") -> list[str]:
        self.calls += 1
        return [self._answer(p) for p in prompts]

    def _answer(self, prompt: str) -> str:
        if self.mode == "echo_query":
            question = None
            for line in prompt.splitlines():
                if line.startswith("Question:"):
                    question = line[len("Question:"):].strip()
            return question if question is not None else prompt
        if self.mode == "extractive_first_sentence":
            chunk = prompt.split("Context:", 1)
            text = chunk[1] if len(chunk) == 2 else prompt
            for sentence in re.split(r"[.!?\n]", text):
                if sentence.strip():
                    return sentence.strip()
            return ""
        for substring, answer in self.script:
            if substring in prompt:
                return answer
        return self.default_answer


class HttpBackend(Backend):
    """OpenAI-compatible chat-completions client.

    Sends POST {base_url}/chat/completions with a system and a user message
    per prompt; temperature defaults to 0 for reproducibility. The API key
    is read from the RAGKIT_API_KEY environment variable at call time and
    sent as a bearer token when present. 429 and 5xx responses are retried
    up to max_retries times with exponential backoff (1s, 2s, 4s by
    default); other error statuses fail immediately.
    """

    API_KEY_ENV = "RAGKIT_API_KEY"

    def __init__(
        self,
        model: str,
        base_url: str | None = None,
        temperature: float = 0.0,
        timeout: float = 60.0,
        max_retries: int = 3,
        retry_base_delay: float = 1.0,
        max_input_chars: int = 24_000,
        session=None,
        sleeper: Callable[[float], None] = time.sleep,
    ) -> None:
        self.model = model
        self.base_url = (
            base_url
            or os.environ.get("RAGKIT_BASE_URL")
            or "https://api.openai.com/v1"
        ).rstrip("/")
        self.temperature = temperature
        self.timeout = timeout
        self.max_retries = max_retries
        self.retry_base_delay = retry_base_delay
        self.max_input_chars = max_input_chars
        if session is None:
            import requests

            session = requests.Session()
        self._session = session
        self._sleep = sleeper
        self.descriptor = f"http:{self.model}"

    def generate(self, prompts: Sequence[str], system: str = "") -> list[str]:
        return [self._one(p, system) for p in prompts]

    def _one(self, prompt: str, system: str) -> str:
        url = f"{self.base_url}/chat/completions"
        body = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": prompt},
            ],
            "temperature": self.temperature,
        }
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        attempt = 0
        while True:
            try:
                resp = self._session.post(
                    url, json=body, headers=headers, timeout=self.timeout
                )
            except Exception as exc:
                raise BackendError(f"request to {url} failed: {exc}") from exc
            if resp.status_code == 200:
                return self._extract(resp)
            retryable = resp.status_code == 429 or resp.status_code >= 500
            if retryable and attempt < self.max_retries:
                self._sleep(self.retry_base_delay * (2 ** attempt))
                attempt += 1
                continue
            raise BackendError(
                f"backend returned HTTP {resp.status_code}: {resp.text[:200]}",
                status=resp.status_code,
            )

    def _extract(self, resp) -> str:
        try:
            data = resp.json()
            return data["choices"][0]["message"]["content"]
        except (ValueError, LookupError, TypeError) as exc:
            raise BackendError(f"malformed backend response: {exc}") from exc


# -- context building ---------------------------------------------------------


class Concatenator(Transformer):
    """R -> Qc: per query, renders the top documents into one context string.

    Rows are taken in rank order, up to k_docs (all when None). Each row is
    rendered through the item template, cut to per_doc_char_budget, joined
    by the separator, and the join is cut to total_char_budget. Input rows
    must carry the query column and every field the item template uses
    (attach them upstream with include_fields or attach_text).
    """

    def __init__(
        self,
        k_docs: int | None = None,
        fields: Sequence[str] = ("text",),
        per_doc_char_budget: int = 1500,
        total_char_budget: int = 6000,
        item_template: str | None = None,
        item_separator: str = "\n\n",
    ) -> None:
        if item_template is None:
            item_template = "\n".join("{%s}" % f for f in fields)
        _check_placeholders(item_template, {"title", "text", "ordinal"}, "item_template")
        super().__init__(
            Signature(SemType.R, SemType.QC),
            "concat",
            params=(
                ("k_docs", k_docs),
                ("fields", tuple(fields)),
                ("per_doc_char_budget", per_doc_char_budget),
                ("total_char_budget", total_char_budget),
                ("item_template", item_template),
                ("item_separator", item_separator),
            ),
        )
        self.k_docs = k_docs
        self.fields = tuple(fields)
        self.per_doc_char_budget = per_doc_char_budget
        self.total_char_budget = total_char_budget
        self.item_template = item_template
        self.item_separator = item_separator

    def apply(self, frame: Frame) -> Frame:
        groups: dict[str, list[dict]] = {}
        for row in frame.rows:
            groups.setdefault(row["qid"], []).append(row)
        out = []
        for qid in sorted(groups):
            rows = groups[qid]
            if any("rank" in r for r in rows):
                rows = sorted(rows, key=lambda r: r["rank"])
            if self.k_docs is not None:
                rows = rows[: self.k_docs]
            if "query" not in groups[qid][0]:
                raise MissingField("query", f"result rows for qid {qid!r}")
            items = []
            for ordinal, row in enumerate(rows, start=1):
                values = {"ordinal": str(ordinal)}
                for f in self.fields:
                    if f not in row:
                        raise MissingField(f, f"result row {row['docno']!r}")
                    values[f] = str(row[f])
                values.setdefault("title", "")
                values.setdefault("text", "")
                item = _substitute(self.item_template, values)
                items.append(item[: self.per_doc_char_budget])
            qcontext = self.item_separator.join(items)[: self.total_char_budget]
            out.append(
                {"qid": qid, "query": groups[qid][0]["query"], "qcontext": qcontext}
            )
        return Frame(SemType.QC, out)


def concatenate_context(
    k_docs: int | None = None,
    fields: Sequence[str] = ("text",),
    per_doc_char_budget: int = 1500,
    total_char_budget: int = 6000,
    item_template: str | None = None,
    item_separator: str = "\n\n",
) -> Concatenator:
    return Concatenator(
        k_docs, fields, per_doc_char_budget, total_char_budget,
        item_template, item_separator,
    )


class PromptRenderer(Transformer):
    """Qc -> Qc: adds (or overwrites) a `prompt` column; query and qcontext
    pass through untouched."""

    def __init__(self, template: PromptTemplate) -> None:
        super().__init__(
            Signature(SemType.QC, SemType.QC),
            "prompt",
            params=_template_params(template),
        )
        self.template = template

    def apply(self, frame: Frame) -> Frame:
        rows = []
        for row in frame.rows:
            merged = dict(row)
            merged["prompt"] = self.template.render_user(
                row["query"], row["qcontext"]
            )
            rows.append(merged)
        return Frame(SemType.QC, rows)


def render_prompt(template: PromptTemplate) -> PromptRenderer:
    return PromptRenderer(template)


def _template_params(template: PromptTemplate) -> tuple:
    return (
        ("system", template.system),
        ("user_template", template.user_template),
        ("context_item_template", template.context_item_template),
        ("item_separator", template.item_separator),
    )


def _fit_prompt(template: PromptTemplate, query: str, qcontext: str,
                limit: int) -> str:
    prompt = template.render_user(query, qcontext)
    if len(prompt) <= limit:
        return prompt
    # cut the context tail first; the question and instructions survive
    overhead = len(template.render_user(query, ""))
    allowed = max(0, limit - overhead)
    prompt = template.render_user(query, qcontext[:allowed])
    return prompt[:limit]


class Reader(Transformer):
    """Qc -> A: renders one prompt per row and asks the backend for all of
    them in one generate call.

    Rows are processed in qid order; answers come back aligned, one per row,
    never dropped. Prompts longer than the backend's max_input_chars are
    shortened by truncating the context portion.
    """

    def __init__(self, backend: Backend, template: PromptTemplate | None = None) -> None:
        template = template or DEFAULT_RAG_TEMPLATE
        super().__init__(
            Signature(SemType.QC, SemType.A),
            "reader",
            params=(("backend", backend.descriptor),) + _template_params(template),
        )
        self.backend = backend
        self.template = template

    def apply(self, frame: Frame) -> Frame:
        rows = sorted(frame.rows, key=lambda r: r["qid"])
        prompts = [
            _fit_prompt(self.template, r["query"], r["qcontext"],
                        self.backend.max_input_chars)
            for r in rows
        ]
        if not prompts:
            return Frame(SemType.A, ())
        answers = self.backend.generate(prompts, system=self.template.system)
        answers = list(answers)
        if len(answers) != len(prompts):
            raise BackendError(
                f"backend returned {len(answers)} answers for {len(prompts)} prompts"
            )
        return Frame(
            SemType.A,
            [{"qid": r["qid"], "qanswer": a} for r, a in zip(rows, answers)],
        )


def reader(backend: Backend, template: PromptTemplate | None = None) -> Reader:
    return Reader(backend, template)


class ZeroShot(Transformer):
    """Q -> A: direct answer generation with no retrieved context."""

    def __init__(self, backend: Backend, template: PromptTemplate | None = None) -> None:
        template = template or DEFAULT_ZERO_SHOT_TEMPLATE
        if "{context}" in template.user_template:
            raise TemplateError(
                "zero-shot template must not use {context}; there is none"
            )
        super().__init__(
            Signature(SemType.Q, SemType.A),
            "zero_shot",
            params=(("backend", backend.descriptor),) + _template_params(template),
        )
        self.backend = backend
        self.template = template

    def apply(self, frame: Frame) -> Frame:
        rows = sorted(frame.rows, key=lambda r: r["qid"])
        prompts = [
            _fit_prompt(self.template, r["query"], "", self.backend.max_input_chars)
            for r in rows
        ]
        if not prompts:
            return Frame(SemType.A, ())
        answers = list(self.backend.generate(prompts, system=self.template.system))
        if len(answers) != len(prompts):
            raise BackendError(
                f"backend returned {len(answers)} answers for {len(prompts)} prompts"
            )
        return Frame(
            SemType.A,
            [{"qid": r["qid"], "qanswer": a} for r, a in zip(rows, answers)],
        )


def zero_shot(backend: Backend, template: PromptTemplate | None = None) -> ZeroShot:
    return ZeroShot(backend, template)


# -- iterative retrieval ------------------------------------------------------

DEFAULT_EXIT_PHRASE = "so the answer is"


def phrase_exit(phrase: str = DEFAULT_EXIT_PHRASE) -> Callable[[dict], bool]:
    """Exit predicate: true when the generated step contains the phrase
    (case-insensitive). Carries a stable identity so pipelines using it
    compare equal structurally."""

    lowered = phrase.lower()

    def condition(row: dict) -> bool:
        return lowered in row["qanswer"].lower()

    condition._ragkit_key = ("phrase_exit", lowered)
    return condition


def _strip_answer(text: str) -> str:
    return text.strip().rstrip(string.punctuation + " \t\r\n").strip()


class IterativeRetriever(Transformer):
    """Q -> A: interleaved retrieval and generation.

    Per query: retrieve with the current query text, fold the new top
    documents into an accumulated, docno-deduplicated set (first-seen order),
    build a context from that set, render the prompt with the original
    question and the chain of previously generated sentences, generate one
    continuation, and stop as soon as exit_condition accepts it (or after
    max_iterations). Each later retrieval uses the original question plus
    the latest sentence. The answer is the text after the first exit phrase
    when present, the whole chain otherwise; an `iterations` column reports
    the loop count.
    """

    def __init__(
        self,
        retriever: Transformer,
        backend: Backend,
        template: PromptTemplate | None = None,
        exit_condition: Callable[[dict], bool] | None = None,
        exit_phrase: str = DEFAULT_EXIT_PHRASE,
        max_iterations: int = 4,
        docs_per_iteration: int = 4,
        fields: Sequence[str] = ("text",),
    ) -> None:
        sig = type_check(retriever)
        if sig.input is not SemType.Q or sig.output is not SemType.R:
            raise TypeMismatch(Signature(SemType.Q, SemType.R), sig, "ircot.retriever")
        if max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {max_iterations}")
        template = template or DEFAULT_ITERATIVE_TEMPLATE
        if exit_condition is None:
            exit_condition = phrase_exit(exit_phrase)
        cond_key = getattr(exit_condition, "_ragkit_key", None) or id(exit_condition)
        super().__init__(
            Signature(SemType.Q, SemType.A),
            "ircot",
            params=(
                ("retriever", retriever._key()),
                ("backend", backend.descriptor),
                ("exit", cond_key),
                ("exit_phrase", exit_phrase.lower()),
                ("max_iterations", max_iterations),
                ("docs_per_iteration", docs_per_iteration),
                ("fields", tuple(fields)),
            ) + _template_params(template),
        )
        self.retriever = retriever
        self.backend = backend
        self.template = template
        self.exit_condition = exit_condition
        self.exit_phrase = exit_phrase.lower()
        self.max_iterations = max_iterations
        self.docs_per_iteration = docs_per_iteration
        self.fields = tuple(fields)

    def apply(self, frame: Frame) -> Frame:
        out = []
        for row in sorted(frame.rows, key=lambda r: r["qid"]):
            out.append(self._answer_one(row["qid"], row["query"]))
        return Frame(SemType.A, out)

    def _answer_one(self, qid: str, question: str) -> dict:
        accumulated: list[dict] = []
        seen: set[str] = set()
        chain: list[str] = []
        current_query = question
        iterations = 0
        for _ in range(self.max_iterations):
            iterations += 1
            q = Frame(SemType.Q, [{"qid": qid, "query": current_query}])
            results = run(self.retriever, q)
            rows = list(results.rows)
            if any("rank" in r for r in rows):
                rows = sorted(rows, key=lambda r: r["rank"])
            for r in rows[: self.docs_per_iteration]:
                if r["docno"] not in seen:
                    seen.add(r["docno"])
                    accumulated.append(r)
            context = self._context(accumulated)
            prompt = _fit_prompt(
                self.template, question, context, self.backend.max_input_chars
            )
            if chain:
                prompt = prompt + "\n" + " ".join(chain)
            sentence = list(self.backend.generate([prompt], system=self.template.system))[0]
            chain.append(sentence)
            if self.exit_condition({"qid": qid, "qanswer": sentence}):
                break
            current_query = question + " " + sentence
        full = " ".join(chain)
        pos = full.lower().find(self.exit_phrase)
        if pos >= 0:
            answer = _strip_answer(full[pos + len(self.exit_phrase):])
        else:
            answer = full
        return {"qid": qid, "qanswer": answer, "iterations": iterations}

    def _context(self, accumulated: list[dict]) -> str:
        items = []
        for ordinal, row in enumerate(accumulated, start=1):
            fields = {}
            for f in self.fields:
                if f not in row:
                    raise MissingField(f, f"retrieved row {row['docno']!r}")
                fields[f] = str(row[f])
            items.append(self.template.render_item(ordinal, fields))
        return self.template.item_separator.join(items)


def ircot(
    retriever: Transformer,
    backend: Backend,
    template: PromptTemplate | None = None,
    exit_condition: Callable[[dict], bool] | None = None,
    exit_phrase: str = DEFAULT_EXIT_PHRASE,
    max_iterations: int = 4,
    docs_per_iteration: int = 4,
    fields: Sequence[str] = ("text",),
) -> IterativeRetriever:
    return IterativeRetriever(
        retriever, backend, template, exit_condition, exit_phrase,
        max_iterations, docs_per_iteration, fields,
    )
