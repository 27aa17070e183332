"""Toy two-dialect code corpus for desk-scale cross-language experiments.

Every program family is an abstract function template (statements over
variable slots, operators and constants). A family is instantiated twice with
fresh identifier names, a legal reordering of its independent declarations
and, sometimes, one extra statement, which gives a type-3-like clone pair.
Dialect B renders the very same programs with its keywords swapped through
``keyword_map``.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .corpus import CodeSnippet, TaskExample, POSITIVE, balance_binary

DEFAULT_KEYWORD_MAP = {
    "func": "fn",
    "let": "var",
    "if": "when",
    "else": "otherwise",
    "while": "loop",
    "return": "give",
    "print": "show",
}

IDENTIFIERS = (
    "acc", "alpha", "amount", "base", "beta", "bits", "block", "buf", "carry", "cell",
    "count", "cur", "delta", "depth", "diff", "digit", "edge", "elem", "end", "factor",
    "fee", "flag", "gamma", "gap", "head", "height", "hi", "idx", "item", "key",
    "last", "left", "len", "level", "limit", "lo", "mark", "mid", "mod", "num",
    "offset", "owner", "pos", "prev", "price", "qty", "rate", "rem", "res", "right",
    "root", "score", "seed", "size", "slot", "span", "start", "step", "sum", "supply",
    "tail", "temp", "tick", "token", "total", "val", "value", "weight", "width", "zeta",
)

FUNCTION_NAMES = (
    "add", "apply", "build", "calc", "check", "clamp", "collect", "compute", "count_up",
    "decode", "drain", "encode", "eval", "fold", "gather", "grow", "hash", "mint", "mix",
    "pack", "probe", "reduce", "refund", "scale", "scan", "settle", "shift", "split",
    "stake", "sweep", "swap", "tally", "transfer", "trim", "unpack", "update", "walk",
    "weigh", "wrap", "yield_to",
)

ARITH = ("+", "-", "*", "/", "%")
COMPARE = ("<", ">", "==", "!=", "<=", ">=")


@dataclass
class DialectSpec:
    keyword_map: dict = field(default_factory=lambda: dict(DEFAULT_KEYWORD_MAP))
    grammar_seed: int = 0
    program_count: int = 1000
    functions_per_program: int = 1
    extra_statement_rate: float = 0.5
    family_count: int | None = None

    def __post_init__(self):
        values = list(self.keyword_map.values())
        if len(set(values)) != len(values):
            raise ValueError("keyword_map must be injective")
        for src, dst in self.keyword_map.items():
            if src == dst:
                raise ValueError(f"keyword {src!r} maps to itself")
        clash = (set(values) | set(self.keyword_map)) & (set(IDENTIFIERS) | set(FUNCTION_NAMES))
        if clash:
            raise ValueError(f"keywords collide with identifier pool: {sorted(clash)}")
        if self.program_count < 2 or self.program_count % 2:
            raise ValueError("program_count must be an even number >= 2")
        if self.functions_per_program < 1:
            raise ValueError("functions_per_program must be >= 1")
        if self.family_count is not None and not 1 <= self.family_count <= self.program_count // 2:
            raise ValueError("family_count must lie in [1, program_count / 2]")


@dataclass
class DialectCorpus:
    corpus_a: list[CodeSnippet]
    corpus_b: list[CodeSnippet]
    clone_pairs_a: list[tuple[int, int]]
    clone_pairs_b: list[tuple[int, int]]
    families: list[int]

    def __iter__(self):
        # unpacks as (corpusA, corpusB, clone_pairs_A, clone_pairs_B)
        return iter((self.corpus_a, self.corpus_b, self.clone_pairs_a, self.clone_pairs_b))


# Abstract statements are token lists. Strings are literal tokens; ("kw", name)
# is a keyword rendered per dialect; ("var", k) is variable slot k.

def _kw(name):
    return ("kw", name)


def _var(k):
    return ("var", k)


class _TemplateBuilder:
    def __init__(self, rng: random.Random):
        self.rng = rng

    def const(self):
        return str(self.rng.randint(0, 60))

    def function(self, fn_slot):
        rng = self.rng
        n_params = rng.randint(1, 3)
        params = list(range(n_params))
        defined = list(params)
        next_slot = n_params
        decls, body = [], []

        for _ in range(rng.randint(1, 3)):
            a = _var(rng.choice(params))
            rhs = [a, rng.choice(ARITH), self.const()] if rng.random() < 0.6 else [self.const()]
            decls.append([_kw("let"), _var(next_slot), "="] + rhs + [";"])
            defined.append(next_slot)
            next_slot += 1

        for _ in range(rng.randint(2, 4)):
            kind = rng.choice(("assign", "assign", "if", "while", "print", "let"))
            v = _var(rng.choice(defined))
            if kind == "assign":
                body.append([v, "=", v, rng.choice(ARITH), self.const(), ";"])
            elif kind == "if":
                body.append([_kw("if"), v, rng.choice(COMPARE), self.const(), "{",
                             v, "=", v, rng.choice(ARITH), self.const(), ";", "}",
                             _kw("else"), "{", v, "=", v, rng.choice(ARITH), self.const(), ";", "}"])
            elif kind == "while":
                body.append([_kw("while"), v, rng.choice(COMPARE), self.const(), "{",
                             v, "=", v, rng.choice(ARITH), self.const(), ";", "}"])
            elif kind == "print":
                body.append([_kw("print"), "(", v, ")", ";"])
            else:
                w = _var(rng.choice(defined))
                body.append([_kw("let"), _var(next_slot), "=", v, rng.choice(ARITH), w, ";"])
                defined.append(next_slot)
                next_slot += 1

        ret = [_kw("return"), _var(defined[-1]), rng.choice(ARITH), _var(rng.choice(defined)), ";"]
        header = [_kw("func"), ("fn", fn_slot), "("]
        for i, p in enumerate(params):
            if i:
                header.append(",")
            header.append(_var(p))
        header += [")", "{"]
        return {"header": header, "decls": decls, "body": body, "ret": ret, "slots": next_slot,
                "defined": defined}


def _instantiate(template, rng: random.Random, extra_rate: float):
    names = rng.sample(IDENTIFIERS, template["slots"])
    decls = [list(s) for s in template["decls"]]
    # declarations only read parameters, so any order is legal
    rng.shuffle(decls)
    body = [list(s) for s in template["body"]]
    if rng.random() < extra_rate:
        v = _var(rng.choice(template["defined"]))
        body.insert(rng.randint(0, len(body)), [_kw("print"), "(", v, ")", ";"])
    stmts = [template["header"]] + decls + body + [template["ret"], ["}"]]
    return [_bind(stmt, names) for stmt in stmts]


def _bind(stmt, names):
    out = []
    for tok in stmt:
        if isinstance(tok, tuple) and tok[0] == "var":
            out.append(names[tok[1]])
        else:
            out.append(tok)
    return out


def _render(program, keywords: dict, fn_names: dict) -> str:
    lines = []
    depth = 0
    for fn in program:
        for stmt in fn:
            toks = []
            for tok in stmt:
                if isinstance(tok, tuple):
                    toks.append(keywords[tok[1]] if tok[0] == "kw" else fn_names[tok[1]])
                else:
                    toks.append(tok)
            if toks == ["}"]:
                depth -= 1
            lines.append("    " * depth + " ".join(toks))
            if toks[-1] == "{":
                depth += 1
    return "\n".join(lines)


def generate_dialect_corpus(spec: DialectSpec) -> DialectCorpus:
    """Generate paired dialect corpora plus within-dialect clone pairs.

    Programs come in consecutive pairs: snippets ``2k`` and ``2k + 1`` are two
    instances of the same family and ``clone_pairs_*`` lists those index
    pairs. With ``family_count`` set, families are reused round-robin so that
    each one has many instances. Output depends only on ``spec``.
    """
    rng = random.Random(spec.grammar_seed)
    base_kw = {k: k for k in DEFAULT_KEYWORD_MAP}
    kw_a = dict(base_kw)
    kw_b = {k: spec.keyword_map.get(k, k) for k in base_kw}
    builder = _TemplateBuilder(rng)
    n_pairs = spec.program_count // 2
    n_families = spec.family_count or n_pairs
    templates = [[builder.function(i) for i in range(spec.functions_per_program)] for _ in range(n_families)]

    corpus_a, corpus_b, pairs, families = [], [], [], []
    for k in range(n_pairs):
        family = k % n_families
        for variant in range(2):
            program = [_instantiate(t, rng, spec.extra_statement_rate) for t in templates[family]]
            fn_names = dict(enumerate(rng.sample(FUNCTION_NAMES, spec.functions_per_program)))
            sid = f"f{family}-p{k}-v{variant}"
            corpus_a.append(CodeSnippet(id=f"A-{sid}", language="dialectA",
                                        text=_render(program, kw_a, fn_names)))
            corpus_b.append(CodeSnippet(id=f"B-{sid}", language="dialectB",
                                        text=_render(program, kw_b, fn_names)))
            families.append(family)
        pairs.append((2 * k, 2 * k + 1))
    return DialectCorpus(corpus_a, corpus_b, list(pairs), list(pairs), families)


def family_of(snippet: CodeSnippet) -> int:
    return int(snippet.id.split("-")[1][1:])


def clone_examples(corpus: list[CodeSnippet], pairs: list[tuple[int, int]], seed: int,
                   swap_rate: float = 0.5) -> list[TaskExample]:
    """Balanced clone-detection examples from the given clone pairs.

    Positives are the pairs themselves (order randomized); negatives are
    recombinations across pairs, never joining two programs of one family.
    """
    rng = random.Random(seed)
    positives = []
    family = {}
    for i, j in pairs:
        a, b = corpus[i], corpus[j]
        if rng.random() < swap_rate:
            a, b = b, a
        family[a.text] = family[b.text] = family_of(a)
        positives.append(TaskExample(task="clone_detection", text_a=a.text, text_b=b.text,
                                     label=POSITIVE, language=a.language, origin="synthetic",
                                     id=f"{a.id}|{b.id}"))
    return balance_binary(positives, seed=seed, exclude=lambda ta, tb: family[ta] == family[tb])


def pretraining_documents(corpus: DialectCorpus, seed: int = 0, paired: bool = True) -> list:
    """Unlabeled MLM documents: every program, plus two-program concatenations.

    Half of the concatenations join the two variants of one family, the other
    half join programs of unrelated families, mimicking a code corpus in which
    many programs solve the same problem. No labels are attached.
    """
    rng = random.Random(seed)
    docs: list = [s.text for s in corpus.corpus_a + corpus.corpus_b]
    if not paired:
        return docs
    for snippets, pairs in ((corpus.corpus_a, corpus.clone_pairs_a), (corpus.corpus_b, corpus.clone_pairs_b)):
        for i, j in pairs:
            if rng.random() < 0.5:
                i, j = j, i
            docs.append((snippets[i].text, snippets[j].text))
            k = rng.randrange(len(snippets))
            while corpus.families[k] == corpus.families[i]:
                k = rng.randrange(len(snippets))
            docs.append((snippets[i].text, snippets[k].text))
    return docs
