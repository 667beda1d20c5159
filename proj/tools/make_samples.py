#!/usr/bin/env python3
"""Regenerates the bundled sample datasets under data/.

Corpus and summarization samples are real functions extracted from the
CPython standard library installed on the build machine. Generation,
refinement and defect samples are synthesized from templates in the
Java/C subset that the minilang parser understands.

The output is deterministic for a given Python installation.
"""

import argparse
import ast
import json
import os
import random
import sys
import textwrap

MARKERS = ["OBRACE", "CBRACE", "OBRACK", "CBRACK", "DOLLARTOK", "CARETTOK",
           "TILDETOK", "BTICKTOK", "BSLASHTOK", "VBARTOK", "LANGLETOK",
           "RANGLETOK"]


def iter_functions(path):
    try:
        with open(path, encoding="utf-8") as f:
            source = f.read()
        tree = ast.parse(source)
    except (SyntaxError, UnicodeDecodeError, ValueError):
        return
    lines = source.split("\n")
    lines = [l + "\n" for l in lines[:-1]] + lines[-1:]
    module = os.path.splitext(os.path.basename(path))[0]
    for node in ast.walk(tree):
        if not isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            continue
        if node.decorator_list:
            continue
        start, end = node.lineno - 1, node.end_lineno
        doc = ast.get_docstring(node)
        body_lines = lines[start:end]
        if doc is not None:
            ds = node.body[0]
            cut_from = ds.lineno - 1 - start
            cut_to = ds.end_lineno - start
            body_lines = body_lines[:cut_from] + body_lines[cut_to:]
        code = textwrap.dedent("".join(body_lines)).rstrip("\n")
        if not code.strip() or not code.lstrip().startswith(("def ", "async def ")):
            continue
        n_lines = code.count("\n") + 1
        if n_lines < 8 or n_lines > 80 or len(code) > 3200:
            continue
        if doc is not None:
            doc = doc.strip().split("\n\n")[0].replace("\n", " ").strip()
            doc = " ".join(doc.split())
            if not doc or len(doc) > 200:
                doc = None
        yield {
            "id": f"py-{module}-{node.name}-{node.lineno}",
            "language": "python",
            "code": code,
            "doc": doc,
        }


def collect(stdlib, names, limit, seen):
    out = []
    for name in names:
        path = os.path.join(stdlib, name)
        files = []
        if os.path.isdir(path):
            for root, dirs, fs in os.walk(path):
                dirs.sort()
                dirs[:] = [d for d in dirs if d not in ("test", "tests", "__pycache__")]
                files.extend(os.path.join(root, f) for f in sorted(fs) if f.endswith(".py"))
        elif os.path.isfile(path):
            files.append(path)
        for f in files:
            for rec in iter_functions(f):
                if rec["id"] in seen:
                    continue
                if any(m in rec["code"] for m in MARKERS):
                    continue
                seen.add(rec["id"])
                out.append(rec)
                if len(out) >= limit:
                    return out
    return out


CORPUS_MODULES = [
    "argparse.py", "ast.py", "base64.py", "bisect.py", "calendar.py", "cmd.py",
    "codecs.py", "collections", "configparser.py", "contextlib.py", "copy.py",
    "csv.py", "dataclasses.py", "datetime.py", "difflib.py", "dis.py",
    "enum.py", "filecmp.py", "fileinput.py", "fnmatch.py", "fractions.py",
    "ftplib.py", "functools.py", "genericpath.py", "getopt.py", "gettext.py",
    "glob.py", "gzip.py", "heapq.py", "hmac.py", "imaplib.py", "inspect.py",
    "ipaddress.py", "locale.py", "mailbox.py", "netrc.py", "ntpath.py",
    "operator.py", "optparse.py", "pathlib.py", "pdb.py", "pickle.py",
    "pkgutil.py", "platform.py", "plistlib.py", "posixpath.py", "pprint.py",
    "pydoc.py", "queue.py", "quopri.py", "random.py", "re.py", "reprlib.py",
    "sched.py", "secrets.py", "selectors.py", "shlex.py", "shutil.py",
    "smtplib.py", "socket.py", "socketserver.py", "statistics.py",
    "string.py", "subprocess.py", "tarfile.py", "tempfile.py", "textwrap.py",
    "threading.py", "timeit.py", "tokenize.py", "trace.py", "traceback.py",
    "types.py", "typing.py", "uuid.py", "warnings.py", "wave.py",
    "weakref.py", "zipfile.py",
]
GITHUB_MODULES = ["email", "json", "http", "urllib", "xml"]
SUMMARIZATION_MODULES = ["asyncio", "concurrent", "importlib", "logging", "unittest"]


# ---------------------------------------------------------------------------
# Synthetic Java / C subset.

NAMES = ["count", "total", "value", "index", "result", "size", "limit",
         "offset", "score", "level", "width", "height", "amount", "step"]
FUNCS = ["compute", "update", "check", "scale", "clamp", "accumulate",
         "measure", "adjust", "select", "combine"]


def java_templates(rng):
    a, b, c = rng.sample(NAMES, 3)
    f = rng.choice(FUNCS) + rng.choice(["Value", "Total", "Score", "Size", "Level"])
    k = rng.randint(1, 9)
    return [
        (f"returns the sum of {a} and {b}",
         f"int {f} ( int {a} , int {b} ) {{ return {a} + {b} ; }}"),
        (f"returns the larger of {a} and {b}",
         f"int {f} ( int {a} , int {b} ) {{ if ( {a} > {b} ) {{ return {a} ; }} return {b} ; }}"),
        (f"returns the smaller of {a} and {b}",
         f"int {f} ( int {a} , int {b} ) {{ if ( {a} < {b} ) {{ return {a} ; }} return {b} ; }}"),
        (f"adds {k} to {a} and returns it",
         f"int {f} ( int {a} ) {{ {a} = {a} + {k} ; return {a} ; }}"),
        (f"sums the integers from zero up to {a}",
         f"int {f} ( int {a} ) {{ int {b} = 0 ; int {c} = 0 ; while ( {c} < {a} ) {{ {b} = {b} + {c} ; {c} = {c} + 1 ; }} return {b} ; }}"),
        (f"checks whether {a} is positive",
         f"boolean {f} ( int {a} ) {{ return {a} > 0 ; }}"),
        (f"multiplies {a} by {k} plus {b}",
         f"int {f} ( int {a} , int {b} ) {{ int {c} = {a} * {k} ; return {c} + {b} ; }}"),
        (f"clamps {a} to be at most {b}",
         f"int {f} ( int {a} , int {b} ) {{ if ( {a} > {b} ) {{ {a} = {b} ; }} return {a} ; }}"),
        (f"returns the absolute value of {a}",
         f"int {f} ( int {a} ) {{ if ( {a} < 0 ) {{ return - {a} ; }} return {a} ; }}"),
        (f"counts down {a} by {k} until it reaches {b}",
         f"int {f} ( int {a} , int {b} ) {{ int {c} = 0 ; while ( {a} > {b} ) {{ {a} = {a} - {k} ; {c} = {c} + 1 ; }} return {c} ; }}"),
    ]


def mutate(code, rng):
    toks = code.split(" ")
    swaps = {"+": "-", "-": "+", ">": "<", "<": ">", "*": "+", "0": "1", "1": "0"}
    idx = [i for i, t in enumerate(toks) if t in swaps]
    if not idx:
        return None
    i = rng.choice(idx)
    toks[i] = swaps[toks[i]]
    return " ".join(toks)


def medium_body(rng):
    a, b, c, d = rng.sample(NAMES, 4)
    f = rng.choice(FUNCS) + "All"
    return (f"int {f} ( int {a} , int {b} , int {c} ) {{ int {d} = 0 ; "
            f"while ( {a} < {b} ) {{ if ( {a} > {c} ) {{ {d} = {d} + {a} * 2 ; }} "
            f"else {{ {d} = {d} - 1 ; }} {a} = {a} + 1 ; }} "
            f"if ( {d} < 0 ) {{ {d} = 0 ; }} return {d} + {c} ; }}")


def defect_sample(rng, label):
    a, b = rng.sample(["buf", "src", "dst", "len", "ptr", "data", "n"], 2)
    f = rng.choice(["copy_into", "read_block", "fill_buffer", "parse_header", "store_item"])
    if label:
        body = rng.choice([
            f"char {a} [ 16 ] ; strcpy ( {a} , {b} ) ; return 0 ;",
            f"int {a} = malloc ( {b} ) ; memcpy ( {a} , {b} , 64 ) ; return {a} ;",
            f"int {a} = {b} [ 32 ] ; free ( {b} ) ; free ( {b} ) ; return {a} ;",
        ])
    else:
        body = rng.choice([
            f"char {a} [ 16 ] ; strncpy ( {a} , {b} , 15 ) ; return 0 ;",
            f"if ( {b} == 0 ) {{ return - 1 ; }} int {a} = malloc ( 64 ) ; return {a} ;",
            f"int {a} = {b} + 1 ; if ( {a} > 32 ) {{ {a} = 32 ; }} return {a} ;",
        ])
    return f"int {f} ( char * {b} ) {{ {body} }}"


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        for r in rows:
            f.write(json.dumps(r, ensure_ascii=False, sort_keys=False) + "\n")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data"))
    args = ap.parse_args()
    out = os.path.abspath(args.out)
    stdlib = os.path.dirname(os.__file__)
    os.makedirs(os.path.join(out, "corpus"), exist_ok=True)
    os.makedirs(os.path.join(out, "tasks"), exist_ok=True)

    seen = set()
    corpus = collect(stdlib, CORPUS_MODULES, 1000, seen)
    github = collect(stdlib, GITHUB_MODULES, 200, seen)
    summ = collect(stdlib, SUMMARIZATION_MODULES, 240, seen)
    if len(corpus) < 1000:
        sys.exit(f"only {len(corpus)} corpus functions found")
    write_jsonl(os.path.join(out, "corpus", "codesearchnet_sample.jsonl"), corpus)
    write_jsonl(os.path.join(out, "corpus", "github_sample.jsonl"), github)

    rng = random.Random(20210521)

    summ_rows = [{"id": r["id"], "language": "python", "code": r["code"], "doc": r["doc"]} for r in summ]
    for i in range(40):
        doc, code = rng.choice(java_templates(rng))
        summ_rows.append({"id": f"java-summ-{i}", "language": "java", "code": code,
                          "doc": doc if i % 10 else None})
    write_jsonl(os.path.join(out, "tasks", "summarization.jsonl"), summ_rows)

    gen_rows = []
    for i in range(120):
        nl, code = rng.choice(java_templates(rng))
        row = {"id": f"concode-{i}", "nl": nl, "code": code}
        if i % 3 == 0:
            row["env"] = f"int {rng.choice(NAMES)} ; void reset ( )"
        gen_rows.append(row)
    write_jsonl(os.path.join(out, "tasks", "generation.jsonl"), gen_rows)

    small, medium = [], []
    while len(small) < 100:
        _, fixed = rng.choice(java_templates(rng))
        buggy = fixed if len(small) % 10 == 0 else mutate(fixed, rng)
        if buggy is None:
            continue
        small.append({"id": f"b2f-small-{len(small)}", "buggy": buggy, "fixed": fixed})
    while len(medium) < 60:
        fixed = medium_body(rng)
        buggy = mutate(fixed, rng)
        medium.append({"id": f"b2f-medium-{len(medium)}", "buggy": buggy, "fixed": fixed})
    write_jsonl(os.path.join(out, "tasks", "refinement_small.jsonl"), small)
    write_jsonl(os.path.join(out, "tasks", "refinement_medium.jsonl"), medium)

    defect = []
    for i in range(120):
        label = rng.randint(0, 1)
        defect.append({"id": f"devign-{i}", "code": defect_sample(rng, label), "label": label})
    write_jsonl(os.path.join(out, "tasks", "defect.jsonl"), defect)

    summ_docs = sum(1 for r in summ_rows if r["doc"])
    corpus_docs = sum(1 for r in corpus if r["doc"])
    with open(os.path.join(out, "corpus", "manifest"), "w") as f:
        f.write(f"codesearchnet_sample.jsonl records={len(corpus)} with_doc={corpus_docs}\n")
        f.write(f"github_sample.jsonl records={len(github)} with_doc={sum(1 for r in github if r['doc'])}\n")
    with open(os.path.join(out, "tasks", "manifest"), "w") as f:
        f.write(f"summarization.jsonl records={len(summ_rows)} emitted={summ_docs} skipped={len(summ_rows) - summ_docs}\n")
        f.write(f"generation.jsonl records={len(gen_rows)} emitted={len(gen_rows)} skipped=0\n")
        f.write(f"refinement_small.jsonl records={len(small)} emitted={len(small)} skipped=0\n")
        f.write(f"refinement_medium.jsonl records={len(medium)} emitted={len(medium)} skipped=0\n")
        f.write(f"defect.jsonl records={len(defect)} emitted={len(defect)} skipped=0\n")


if __name__ == "__main__":
    main()
