"""Command-line entry points: ``sip``, ``bench``, ``app`` and ``gen``.

``--role both`` runs the two parties in one process over the in-process
transport. ``--role server`` listens on ``--addr`` (or ``$SSIP_ADDR``)
and ``--role client`` connects to it; both processes must pass the same
``--seed`` so they derive the same session id and dealer seed.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import statistics
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .field import DEFAULT_PRIME, FieldModulus, FixedPointCodec
from .he import BACKENDS
from .protocol.common import BatchConfig, ClientInput, ProtocolConfig, ServerInput
from .protocol.session import build_parties, default_batch, run_protocol
from .transport import ADDR_ENV, metrics_csv_text, tcp_accept, tcp_connect, tcp_listen, write_metrics_csv

log = logging.getLogger("ssip")

PROTOCOL_CHOICES = ("ssip1", "ssip2", "batched")
BENCH_COLUMNS = ("protocol", "n", "t", "repeat", "phase", "bytes", "frames", "rounds", "millis", "status")


class InputFormatError(ValueError):
    pass


def read_pairs(path: str | Path, modulus: FieldModulus) -> list[tuple[str, int]]:
    """Parse ``key:value`` lines; values are integers reduced mod p.

    The value is taken after the last colon, so keys may contain colons.
    Blank lines and lines starting with ``#`` are ignored.
    """
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            key, sep, value = text.rpartition(":")
            if not sep or not key:
                raise InputFormatError(f"{path}:{line_no}: expected key:value, got {text!r}")
            try:
                pairs.append((key, int(value) % modulus.p))
            except ValueError:
                raise InputFormatError(f"{path}:{line_no}: value {value!r} is not an integer") from None
    return pairs


def _fpr(text: str) -> float:
    """Accept ``0.001``, ``1e-9`` or ``2^-30``."""
    text = text.strip()
    try:
        if "^" in text:
            base, exp = text.split("^", 1)
            value = float(base) ** float(exp)
        else:
            value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse false-positive rate {text!r}") from None
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError("false-positive rate must lie in (0, 1)")
    return value


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.replace(" ", "").split(",") if tok]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--protocol", choices=PROTOCOL_CHOICES, default="ssip2")
    p.add_argument("--p", type=int, default=DEFAULT_PRIME, help="field prime")
    p.add_argument("--fraction-bits", type=int, default=12, help="fixed-point fraction bits f")
    p.add_argument("--fpr", type=_fpr, default=2.0**-30, help="Bloom filter false-positive target, e.g. 2^-30")
    p.add_argument("--k", type=int, default=None, help="override the number of filter hash functions")
    p.add_argument("--bins", type=int, default=None, help="batched: number of bins m")
    p.add_argument("--beta", type=int, default=None, help="batched: server bin size")
    p.add_argument("--eta", type=int, default=None, help="batched: client bin size (default 1 cuckoo, ceil(3t/m) two-choice)")
    p.add_argument("--hash-mode", choices=("cuckoo", "two-choice"), default="cuckoo", help="batched: client placement")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--he", choices=sorted(BACKENDS), default="transparent")
    p.add_argument("--ot", choices=("dealer", "crypto"), default="dealer")
    p.add_argument("--out", default=None, help="CSV output path")
    timing = p.add_mutually_exclusive_group()
    timing.add_argument("--timing", dest="timing", action="store_true", default=None, help="record wall-clock millis")
    timing.add_argument("--no-timing", dest="timing", action="store_false", help="write millis=0 for diffable CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssip", description="Two-party secure sparse inner products.")
    parser.add_argument("--version", action="version", version=f"ssip {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sip = sub.add_parser("sip", help="run one S-SIP instance")
    _add_common(sip)
    sip.add_argument("--client-file", help="client key:value pairs")
    sip.add_argument("--server-file", help="server key:value pairs")
    sip.add_argument("--role", choices=("both", "client", "server"), default="both")
    sip.add_argument("--addr", default=None, help=f"host:port for two-process runs (default ${ADDR_ENV} or 127.0.0.1:7700)")
    sip.add_argument("--reveal", action="store_true", help="exchange aggregate shares and print the result")
    sip.add_argument("--timeout", type=float, default=600.0)
    sip.add_argument("--retries", type=int, default=50, help="client connection attempts, 0.1 s apart")

    bench = sub.add_parser("bench", help="cost table over synthetic inputs")
    _add_common(bench)
    bench.add_argument("--protocols", default=None, help="comma list; defaults to --protocol")
    bench.add_argument("--n", dest="n_list", type=_int_list, default=[256, 1024], help="comma list of server sizes")
    bench.add_argument("--t", dest="t_list", type=_int_list, default=[16], help="comma list of client sizes")
    bench.add_argument("--repeats", type=int, default=1)
    bench.add_argument("--overlap", type=float, default=0.5, help="fraction of client keys held by the server")
    bench.add_argument("--capacity", type=int, default=None, help="ssip1: size filters for this many keys")

    app = sub.add_parser("app", help="kNN, logistic regression or naive Bayes over S-SIP")
    app.add_argument("app", choices=("knn", "logreg", "nb"))
    _add_common(app)
    app.set_defaults(protocol="ssip1")
    app.add_argument("--train", help="server corpus (libsvm-like); for nb the table is fitted from it")
    app.add_argument("--model", help="logreg: one libsvm-like line, label = bias, entries = weights")
    app.add_argument("--table", help="nb: libsvm-like lines, label = class, entries = log-weights")
    app.add_argument("--queries", required=True, help="client queries (libsvm-like; labels are ignored)")
    app.add_argument("--k-nn", type=int, default=5)
    app.add_argument("--metrics", default=None, help="transcript metrics CSV path")

    gen = sub.add_parser("gen", help="write a synthetic libsvm-like corpus")
    gen.add_argument("--profile", default="languages-1", help="movies, newsgroups, languages-1, languages-2 or DIM:NNZ")
    gen.add_argument("--docs", type=int, default=100)
    gen.add_argument("--classes", type=int, default=None)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--normalize", action="store_true")
    gen.add_argument("--out", required=True)
    return parser


def protocol_config(args) -> ProtocolConfig:
    modulus = FieldModulus(args.p)
    return ProtocolConfig(
        modulus=modulus, fpr=args.fpr, he=args.he, ot=args.ot, seed=args.seed,
        capacity=getattr(args, "capacity", None), k_override=args.k,
    )


def batch_config(args, t: int | None) -> BatchConfig | None:
    if args.bins is None:
        if t is None:
            return None
        return replace(default_batch(t), beta=args.beta, eta=args.eta, client_hash_mode=args.hash_mode)
    return BatchConfig(m_bins=args.bins, beta=args.beta, eta=args.eta, client_hash_mode=args.hash_mode)


def _timing(args) -> bool:
    # seeded runs default to reproducible CSV; --timing opts back in
    return args.timing if args.timing is not None else args.seed is None


def _emit_metrics(args, rows: list[dict], out=None) -> None:
    out = out or sys.stdout
    if args.out:
        write_metrics_csv(args.out, rows)
    else:
        out.write(metrics_csv_text(rows))


# sip


def cmd_sip(args, out=None) -> int:
    out = out or sys.stdout
    config = protocol_config(args)
    F = config.modulus
    if args.role == "both":
        if args.addr:
            raise InputFormatError("--addr is only valid with --role client or --role server")
        if not (args.client_file and args.server_file):
            raise InputFormatError("--role both needs --client-file and --server-file")
        X = ClientInput.of(read_pairs(args.client_file, F), F)
        Y = ServerInput.of(read_pairs(args.server_file, F), F)
        result = run_protocol(args.protocol, X, Y, config, batch_config(args, len(X)), reveal=args.reveal)
        out.write(f"client_share={result.client_aggregate}\n")
        out.write(f"server_share={result.server_aggregate}\n")
        if args.reveal:
            out.write(f"result={result.value}\n")
        if result.flagged:
            out.write("warning: a client key was a Bloom filter false positive\n")
        _emit_metrics(args, result.metric_rows(_timing(args)), out)
        return 0

    if args.seed is None:
        raise InputFormatError("two-process runs need --seed so both sides derive the same session")
    if args.role == "server":
        if not args.server_file:
            raise InputFormatError("--role server needs --server-file")
        Y = ServerInput.of(read_pairs(args.server_file, F), F)
        _, server, session_id = build_parties(args.protocol, None, Y, config, batch_config(args, None), args.reveal)
        listener = tcp_listen(args.addr)
        host, port = listener.getsockname()[:2]
        log.info("listening on %s:%d", host, port)
        try:
            chan = tcp_accept(listener, session_id, args.timeout)
        finally:
            listener.close()
        party_result = _run_one(server, chan)
        out.write(f"server_share={party_result.aggregate(F.p)}\n")
    else:
        if not args.client_file:
            raise InputFormatError("--role client needs --client-file")
        X = ClientInput.of(read_pairs(args.client_file, F), F)
        client, _, session_id = build_parties(args.protocol, X, None, config, None, args.reveal)
        chan = tcp_connect(args.addr, session_id, retries=args.retries, timeout=args.timeout)
        party_result = _run_one(client, chan)
        out.write(f"client_share={party_result.aggregate(F.p)}\n")
        if args.reveal:
            out.write(f"result={sum(party_result.extra['revealed']) % F.p}\n")
    _emit_metrics(args, party_result.metrics.rows(session_id, _timing(args)), out)
    return 0


def _run_one(party, chan):
    try:
        result = party.run(chan)
    except BaseException as exc:
        chan.abort(f"{type(exc).__name__}")
        raise
    chan.close()
    return result


# bench


def synthetic_instance(n: int, t: int, overlap: float, rng: np.random.Generator, modulus: FieldModulus):
    """Random keys and values with ``round(overlap * t)`` shared keys."""
    shared = min(n, t, int(round(overlap * t)))
    ids = rng.choice(2**40, size=n + t - shared, replace=False)
    client_ids = ids[:t]
    server_ids = np.concatenate([ids[:shared], ids[t:]])
    X = ClientInput.of([(b"k%d" % i, int(v)) for i, v in zip(client_ids, rng.integers(0, modulus.p, size=t))], modulus)
    Y = ServerInput.of([(b"k%d" % i, int(v)) for i, v in zip(server_ids, rng.integers(0, modulus.p, size=n))], modulus)
    return X, Y


def bench_rows(args) -> list[dict]:
    config = protocol_config(args)
    protocols = args.protocols.split(",") if args.protocols else [args.protocol]
    timing = _timing(args)
    rows: list[dict] = []
    for protocol in protocols:
        if protocol not in PROTOCOL_CHOICES:
            raise InputFormatError(f"unknown protocol {protocol!r}")
        for n in args.n_list:
            for t in args.t_list:
                cell: dict[str, list[dict]] = {}
                for rep in range(args.repeats):
                    seed = None if args.seed is None else args.seed + 7919 * rep
                    rng = np.random.default_rng(None if seed is None else [seed, n, t])
                    try:
                        X, Y = synthetic_instance(n, t, args.overlap, rng, config.modulus)
                        result = run_protocol(protocol, X, Y, replace(config, seed=seed), batch_config(args, t))
                    except Exception as exc:  # noqa: BLE001 - reported per cell
                        rows.append(_bench_row(protocol, n, t, rep, "all", None, f"error: {type(exc).__name__}: {exc}"))
                        continue
                    for m in result.metric_rows(timing):
                        row = _bench_row(protocol, n, t, rep, m["phase"], m, "ok")
                        rows.append(row)
                        cell.setdefault(m["phase"], []).append(row)
                for phase_name, reps in cell.items():
                    med = {key: statistics.median(r[key] for r in reps) for key in ("bytes", "frames", "rounds", "millis")}
                    rows.append({
                        "protocol": protocol, "n": n, "t": t, "repeat": "median", "phase": phase_name,
                        **{k: (round(v, 3) if k == "millis" else int(v)) for k, v in med.items()}, "status": "ok",
                    })
    return rows


def _bench_row(protocol, n, t, rep, phase_name, m, status) -> dict:
    if m is None:
        return {"protocol": protocol, "n": n, "t": t, "repeat": rep, "phase": phase_name,
                "bytes": 0, "frames": 0, "rounds": 0, "millis": 0, "status": status}
    return {
        "protocol": protocol, "n": n, "t": t, "repeat": rep, "phase": phase_name,
        "bytes": m["bytes_up"] + m["bytes_down"], "frames": m["frames"], "rounds": m["rounds"],
        "millis": m["millis"], "status": status,
    }


def cmd_bench(args, out=None) -> int:
    out = out or sys.stdout
    rows = bench_rows(args)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    if args.out:
        Path(args.out).write_text(buf.getvalue(), encoding="utf-8")
    else:
        out.write(buf.getvalue())
    return 0


# app


def cmd_app(args, out=None, err=None) -> int:
    out, err = out or sys.stdout, err or sys.stderr
    from .apps import (
        EncodedCorpus,
        LogisticModel,
        NaiveBayesTable,
        fit_naive_bayes,
        knn_oracle,
        knn_pipeline,
        load_sparse,
        logreg_infer,
        logreg_oracle,
        nb_intersect,
        nb_oracle,
        normalize_l2,
        write_predictions_csv,
    )
    from .apps.pipelines import KNN_LEAKAGE, LOGREG_LEAKAGE, NB_LEAKAGE

    config = protocol_config(args)
    codec = FixedPointCodec(args.fraction_bits, config.modulus, max_components=4096, max_magnitude=16.0)
    queries = load_sparse(args.queries)
    rows, metric_rows, agree = [], [], 0

    def query_config(i: int) -> ProtocolConfig:
        return replace(config, seed=None if config.seed is None else config.seed + 1 + i)

    if args.app == "knn":
        if not args.train:
            raise InputFormatError("knn needs --train")
        corpus = load_sparse(args.train)
        encoded = EncodedCorpus([normalize_l2(v) for v in corpus.vectors], codec, config)
        err.write(f"leakage: {KNN_LEAKAGE}\n")
        for i, (q, _) in enumerate(queries.docs):
            pred = knn_pipeline(q, corpus, args.k_nn, args.protocol, query_config(i), codec, encoded)
            for d in pred.neighbours:
                rows.append({"query_id": i, "item": f"doc{d}", "score": f"{pred.scores[d]:.6f}", "label": corpus.labels[d]})
            rows.append({"query_id": i, "item": "prediction", "score": "", "label": pred.label})
            agree += pred.label == knn_oracle(normalize_l2(q), corpus, args.k_nn)
            metric_rows.extend(pred.metric_rows)
    elif args.app == "logreg":
        if not args.model:
            raise InputFormatError("logreg needs --model")
        model_file = load_sparse(args.model)
        if len(model_file) != 1:
            raise InputFormatError("--model must hold exactly one line")
        weights, bias = model_file.docs[0]
        model = LogisticModel(weights, float(bias))
        encoded = EncodedCorpus([weights], codec, config)
        err.write(f"leakage: {LOGREG_LEAKAGE}\n")
        for i, (x, _) in enumerate(queries.docs):
            res = logreg_infer(x, encoded, args.protocol, query_config(i), codec, bias=model.bias)
            rows.append({"query_id": i, "item": "probability", "score": f"{res.probability:.6f}", "label": int(res.probability >= 0.5)})
            agree += abs(res.probability - logreg_oracle(x, model)) <= 0.25 * 2 * max(1, x.nnz) * 2.0**-args.fraction_bits
            metric_rows.extend(res.metric_rows)
    else:
        if args.table:
            tab = load_sparse(args.table)
            table = NaiveBayesTable(tuple(tab.labels), tuple(tab.vectors))
        elif args.train:
            table = fit_naive_bayes(load_sparse(args.train))
        else:
            raise InputFormatError("nb needs --table or --train")
        encoded = EncodedCorpus(list(table.weights), codec, config)
        err.write(f"leakage: {NB_LEAKAGE}\n")
        for i, (x, _) in enumerate(queries.docs):
            res = nb_intersect(x, table, args.protocol, query_config(i), codec, encoded)
            for c, s in zip(table.classes, res.scores):
                rows.append({"query_id": i, "item": f"class{c}", "score": f"{s:.6f}", "label": c})
            rows.append({"query_id": i, "item": "prediction", "score": "", "label": res.label})
            agree += res.label == nb_oracle(x, table)[1]
            metric_rows.extend(res.metric_rows)

    if args.out:
        write_predictions_csv(args.out, rows)
    else:
        w = csv.DictWriter(out, fieldnames=("query_id", "item", "score", "label"), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    if args.metrics:
        timing = _timing(args)
        write_metrics_csv(args.metrics, [dict(r, millis=r["millis"] if timing else 0) for r in metric_rows])
    err.write(f"queries={len(queries)} plaintext_agreement={agree}/{len(queries)}\n")
    return 0


# gen


def cmd_gen(args, out=None) -> int:
    out = out or sys.stdout
    from .apps import custom_profile, profile, save_sparse, synthetic_corpus

    if ":" in args.profile:
        dim, nnz = args.profile.split(":", 1)
        prof = custom_profile(int(dim), float(nnz), args.classes or 2)
    else:
        prof = profile(args.profile)
        if args.classes:
            prof = replace(prof, classes=args.classes)
    corpus = synthetic_corpus(prof, args.docs, np.random.default_rng(args.seed), normalize=args.normalize)
    save_sparse(corpus, args.out)
    out.write(f"wrote {len(corpus)} documents, mean nonzeros {corpus.mean_nnz():.1f}, dim {prof.dim}\n")
    return 0


COMMANDS = {"sip": cmd_sip, "bench": cmd_bench, "app": cmd_app, "gen": cmd_gen}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130
    except Exception as exc:  # noqa: BLE001 - every failure becomes a diagnostic and nonzero exit
        if args.verbose:
            log.exception("command failed")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
